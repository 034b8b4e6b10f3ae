import numpy as np
import pytest
from oracles import random_state
from scipy import stats

from stagegrn.latent import TrajectoryMoments, observed_loglik, sample_latent, supports_collapsed_latent
from stagegrn.model import NOT_REGULATED_INDEX, Dims


def dense_joint(st):
    """Mean and covariance of one person's stacked stage vectors (T*K), built from the noise map."""
    T, K = st.dims.T, st.dims.K
    p = st.params
    mean = np.zeros((T, K))
    # loadings[t] maps the stacked noise (stage-1 draw, then each increment noise) to stage t
    loadings = np.zeros((T, K, T * K))
    mean[0] = p.mu_flat
    loadings[0][:, :K] = np.sqrt(p.sigma1_sq) * np.eye(K)
    for t in range(1, T):
        A = np.eye(K)
        c = np.full(K, p.mu2)
        for k in range(K):
            s = st.parents[t - 1, k]
            if s != NOT_REGULATED_INDEX:
                A[k, s] += st.coef[t - 1, k, 1]
                c[k] = st.coef[t - 1, k, 0]
        mean[t] = A @ mean[t - 1] + c
        loadings[t] = A @ loadings[t - 1]
        loadings[t][:, t * K:(t + 1) * K] += np.sqrt(p.sigma2_sq) * np.eye(K)
    L = loadings.reshape(T * K, T * K)
    return mean.reshape(-1), L @ L.T


def _state(seed, dims=Dims(3, 2, 2, (2, 3, 3)), drop=0):
    rng = np.random.default_rng(seed)
    st = random_state(rng, dims, density=0.6)
    st.observed[:] = False
    for e, t in enumerate(st.death):
        st.observed[e, t - 1] = True
    for _ in range(drop):
        e = int(rng.integers(dims.n_persons))
        st.observed[e, st.death[e] - 1, int(rng.integers(dims.K))] = False
    return st


@pytest.mark.parametrize("seed,drop", [(0, 0), (1, 0), (2, 3), (3, 6)])
def test_observed_loglik_matches_dense_gaussian(seed, drop):
    st = _state(seed, drop=drop)
    mean, cov = dense_joint(st)
    K = st.dims.K
    expected = 0.0
    for e, t in enumerate(st.death):
        cells = (t - 1) * K + np.flatnonzero(st.observed[e, t - 1])
        if cells.size:
            expected += stats.multivariate_normal(mean[cells], cov[np.ix_(cells, cells)]).logpdf(
                st.values[e, t - 1, st.observed[e, t - 1]])
    moments = TrajectoryMoments.build(st.parents, st.coef, st.params)
    assert observed_loglik(st.values, st.observed, st.death, moments) == pytest.approx(expected, abs=1e-9)


def test_partial_rebuild_matches_full_build():
    st = _state(4, dims=Dims(4, 2, 2, (1, 1, 1, 1)))
    full = TrajectoryMoments.build(st.parents, st.coef, st.params)
    st.coef[2, :, 0] += 0.3
    st.parents[2, 0] = 1
    st.coef[2, 0] = (0.1, 0.4)
    again = TrajectoryMoments.build(st.parents, st.coef, st.params)
    reused = TrajectoryMoments.build(st.parents, st.coef, st.params, base=full, from_row=2)
    assert np.allclose(reused.m, again.m) and np.allclose(reused.P, again.P)


@pytest.mark.parametrize("mask", [(True, True, True, True), (True, False, True, False), (False,) * 4])
def test_latent_draws_follow_the_dense_conditional(mask):
    dims = Dims(3, 2, 2, (0, 0, 40_000))
    st = _state(5, dims=dims)
    mask = np.array(mask)
    st.observed[:, 2] = mask
    st.values[:, 2] = st.values[0, 2]  # every person carries the same measurements
    mean, cov = dense_joint(st)
    K = dims.K
    obs_cells = 2 * K + np.flatnonzero(mask)
    lat_cells = np.setdiff1d(np.arange(3 * K), obs_cells)
    if obs_cells.size:
        gain = cov[np.ix_(lat_cells, obs_cells)] @ np.linalg.inv(cov[np.ix_(obs_cells, obs_cells)])
        cond_mean = mean[lat_cells] + gain @ (st.values[0, 2, mask] - mean[obs_cells])
        cond_cov = cov[np.ix_(lat_cells, lat_cells)] - gain @ cov[np.ix_(obs_cells, lat_cells)]
    else:
        cond_mean, cond_cov = mean[lat_cells], cov[np.ix_(lat_cells, lat_cells)]
    moments = TrajectoryMoments.build(st.parents, st.coef, st.params)
    draws = sample_latent(st.values, st.observed, st.death, moments, np.random.default_rng(6))
    flat = draws.reshape(draws.shape[0], -1)[:, lat_cells]
    n = flat.shape[0]
    se = np.sqrt(np.diag(cond_cov) / n)
    assert np.all(np.abs(flat.mean(axis=0) - cond_mean) < 5 * se)
    sd = np.sqrt(np.diag(cond_cov))
    assert np.allclose(np.cov(flat, rowvar=False), cond_cov, atol=0.05 * np.outer(sd, sd).max())
    assert np.array_equal(draws[:, 2][:, mask], st.values[:, 2][:, mask])


def test_collapsed_form_needs_death_stage_measurements_only():
    st = _state(7)
    assert supports_collapsed_latent(st.observed, st.death)
    e = int(np.flatnonzero(st.death == 3)[0])
    st.observed[e, 0, 0] = True
    assert not supports_collapsed_latent(st.observed, st.death)


def test_draws_are_reproducible():
    st = _state(8, drop=2)
    moments = TrajectoryMoments.build(st.parents, st.coef, st.params)
    a = sample_latent(st.values, st.observed, st.death, moments, np.random.default_rng(1))
    b = sample_latent(st.values, st.observed, st.death, moments, np.random.default_rng(1))
    assert np.array_equal(a, b, equal_nan=True)
