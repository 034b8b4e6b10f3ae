import math

import numpy as np
import pytest
from oracles import collapsed_regulated_loglik_quad, random_state
from scipy import stats

from stagegrn.marginals import (
    MultivariateTMarginal,
    TransitionLikelihood,
    null_marginal_loglik,
    regulated_marginal_loglik,
)
from stagegrn.model import Dims, PriorConfig


def _instance(seed, dims=Dims(3, 2, 2, (3, 4, 5)), density=0.5):
    rng = np.random.default_rng(seed)
    st = random_state(rng, dims, density=density)
    t = int(rng.integers(2, dims.T + 1))
    k, s = (int(x) for x in rng.choice(dims.K, size=2, replace=False))
    return st, t, k, s


@pytest.mark.parametrize("seed", range(8))
def test_exact_marginal_matches_adaptive_quadrature(seed):
    st, t, k, s = _instance(seed)
    prior = st.prior
    n_other, c_other = st.others(t)
    y, x = st.increments(t)
    expected = collapsed_regulated_loglik_quad(
        y[:, k], x[:, s], (prior.alpha_a, prior.alpha_b), (prior.V_a, prior.slope_scale), st.params.sigma2_sq,
        prior.coef_ig_shape + n_other[k], prior.coef_ig_scale + 0.5 * c_other[k])
    assert regulated_marginal_loglik(k, s, t, st) == pytest.approx(expected, abs=1e-7)


@pytest.mark.parametrize("seed", range(5))
def test_student_t_form_matches_dense_density(seed):
    st, t, k, s = _instance(100 + seed)
    y, _ = st.increments(t)
    dense = MultivariateTMarginal.for_regulation(st, k, s, t).logpdf(y[:, k])
    assert regulated_marginal_loglik(k, s, t, st, method="student_t") == pytest.approx(dense, abs=1e-8)


def test_dense_t_density_agrees_with_scipy():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 4))
    scale = A @ A.T + np.eye(4)
    loc = rng.normal(size=4)
    y = rng.normal(size=4)
    ours = MultivariateTMarginal(5.0, loc, scale).logpdf(y)
    assert ours == pytest.approx(stats.multivariate_t(loc, scale, df=5.0).logpdf(y), abs=1e-10)
    with pytest.raises(ValueError):
        MultivariateTMarginal(5.0, loc, -scale)


def test_null_marginal_is_gaussian():
    st, t, k, _ = _instance(7)
    y, _ = st.increments(t)
    expected = stats.norm(st.params.mu2, math.sqrt(st.params.sigma2_sq)).logpdf(y[:, k]).sum()
    assert null_marginal_loglik(k, t, st) == pytest.approx(expected, abs=1e-10)


def test_self_regulation_and_unknown_method_are_rejected():
    st, t, k, s = _instance(8)
    with pytest.raises(ValueError):
        regulated_marginal_loglik(k, k, t, st)
    with pytest.raises(ValueError):
        regulated_marginal_loglik(k, s, t, st, method="laplace")


@pytest.mark.parametrize("method", ["exact", "student_t"])
def test_coefficient_density_is_normalised_and_matches_draws(method):
    st, t, k, s = _instance(9, density=0.0)
    lik = TransitionLikelihood(st, t, method=method)
    n_other, c_other = st.others(t)
    n_k, c_k = float(n_other[k]), float(c_other[k])
    rng = np.random.default_rng(1)
    draws = np.array([lik.draw_coefficients(k, s, n_k, c_k, rng) for _ in range(20_000)])
    mean = lik.coefficient_mean(k, s, n_k, c_k)
    sd = draws.std(axis=0)
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 5 * sd / math.sqrt(draws.shape[0]))
    # density integrates to one over a box holding nearly all draws
    lo, hi = np.quantile(draws, [0.0005, 0.9995], axis=0)
    pad = hi - lo
    A, B = np.meshgrid(np.linspace(lo[0] - pad[0], hi[0] + pad[0], 151),
                       np.linspace(lo[1] - pad[1], hi[1] + pad[1], 151), indexing="ij")
    dens = np.exp([[lik.coefficient_logpdf(k, s, n_k, c_k, a, b) for a, b in zip(ra, rb)] for ra, rb in zip(A, B)])
    area = (A[1, 0] - A[0, 0]) * (B[0, 1] - B[0, 0])
    assert dens.sum() * area == pytest.approx(1.0, abs=0.01)


def test_fixed_method_returns_tabulated_coefficients():
    st, t, k, s = _instance(10)
    table = np.random.default_rng(2).normal(size=(st.dims.K, st.dims.K, 2))
    lik = TransitionLikelihood(st, t, method="fixed", coeff_table=table)
    assert lik.draw_coefficients(k, s, 0, 0, np.random.default_rng(0)) == tuple(table[k, s])
    assert lik.coefficient_logpdf(k, s, 0, 0, *table[k, s]) == 0.0


def test_prior_override_is_used():
    st, t, k, s = _instance(11)
    wide, narrow = PriorConfig(V_b=0.5), PriorConfig(V_b=50.0)
    assert regulated_marginal_loglik(k, s, t, st, prior=wide) != regulated_marginal_loglik(k, s, t, st, prior=narrow)
