import math

import numpy as np
import pytest
from criteria import conditional_grid_errors
from oracles import joint_data_logdensity, log_normal, random_state
from scipy import integrate, stats

from stagegrn.conditionals import (
    coeff_conditional_prior,
    coeff_mh_step,
    collapsed_sigma_posterior,
    missing_interior_posterior,
    missing_stage1_posterior,
    missing_terminal_posterior,
    mu2_posterior,
    mu_gr_posterior,
    sigma1_posterior,
    sigma2_posterior,
)
from stagegrn.model import NOT_REGULATED_INDEX, Dims, PriorConfig

DIMS = Dims(3, 2, 2, (2, 3, 3))


def _ig_logpdf(x, shape, scale):
    return stats.invgamma(shape, scale=scale).logpdf(x)


@pytest.mark.parametrize("seed", range(5))
def test_variance_posteriors_match_joint_density_ratios(seed):
    rng = np.random.default_rng(seed)
    st = random_state(rng, DIMS)
    prior = st.prior
    post1, post2 = sigma1_posterior(st), sigma2_posterior(st)

    def joint1(x):
        s = st.copy()
        s.params.sigma1_sq = x
        return joint_data_logdensity(s) + _ig_logpdf(x, prior.p1, prior.q1)

    def joint2(x):
        s = st.copy()
        s.params.sigma2_sq = x
        return joint_data_logdensity(s) + _ig_logpdf(x, prior.p2, prior.q2)

    for lo, hi in [(0.4, 1.7), (0.9, 3.0)]:
        assert post1.logpdf(lo) - post1.logpdf(hi) == pytest.approx(joint1(lo) - joint1(hi), abs=1e-9)
        assert post2.logpdf(lo) - post2.logpdf(hi) == pytest.approx(joint2(lo) - joint2(hi), abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_mean_posteriors_match_joint_density_ratios(seed):
    rng = np.random.default_rng(10 + seed)
    st = random_state(rng, DIMS)
    prior = st.prior
    k = int(rng.integers(DIMS.K))

    def joint_mu(x):
        s = st.copy()
        mu = s.params.mu.reshape(-1).copy()
        mu[k] = x
        s.params.mu = mu.reshape(DIMS.G, DIMS.R)
        return joint_data_logdensity(s) + log_normal(x, prior.c, prior.d)

    def joint_mu2(x):
        s = st.copy()
        s.params.mu2 = x
        return joint_data_logdensity(s) + log_normal(x, prior.c2, prior.d2)

    p, q = mu_gr_posterior(k, st), mu2_posterior(st)
    assert p.logpdf(4.0) - p.logpdf(6.0) == pytest.approx(joint_mu(4.0) - joint_mu(6.0), abs=1e-9)
    assert q.logpdf(-0.5) - q.logpdf(0.7) == pytest.approx(joint_mu2(-0.5) - joint_mu2(0.7), abs=1e-9)


def test_latent_cell_conditionals_match_grid():
    worst = conditional_grid_errors(instances=2, seed=3)
    for name, (dm, dv) in worst.items():
        assert dm < 1e-3 and dv < 1e-3, name


def test_latent_conditionals_reject_misuse():
    st = random_state(np.random.default_rng(4), DIMS)
    e1 = int(np.flatnonzero(st.death == 1)[0])
    with pytest.raises(ValueError):
        missing_stage1_posterior(e1, 0, st)
    e3 = int(np.flatnonzero(st.death == 3)[0])
    with pytest.raises(ValueError):
        missing_interior_posterior(e3, 0, 3, st)
    st.observed[e3, 2, 0] = True
    with pytest.raises(ValueError):
        missing_terminal_posterior(e3, 0, st)


def test_collapsed_coefficient_prior_matches_numerical_integration():
    dims = Dims(3, 1, 3, (1, 1, 1))
    prior = PriorConfig()
    st = random_state(np.random.default_rng(5), dims, density=1.0)
    row, k = 0, 0
    a, b = st.coef[row, k]
    t_b = coeff_conditional_prior("b", k, 2, st.coeffs, st.model, prior)
    sig = collapsed_sigma_posterior(k, 2, st.coeffs, prior)

    def mixture(bb):
        # p(a, b | others) / p(a | others): integrate the Gaussian pair over the shared variance
        def f(s2):
            return (stats.norm(prior.alpha_a, math.sqrt(s2 * prior.V_a)).pdf(a)
                    * stats.norm(prior.alpha_b, math.sqrt(s2 * prior.slope_scale)).pdf(bb)
                    * math.exp(sig.logpdf(s2)))
        return integrate.quad(f, 0, np.inf, limit=200)[0]

    grid = [-1.0, 0.3, 1.5]
    ratio = [math.log(mixture(x)) - math.log(mixture(grid[0])) for x in grid]
    expected = [float(t_b.logpdf(x) - t_b.logpdf(grid[0])) for x in grid]
    assert ratio == pytest.approx(expected, abs=1e-6)


def test_coefficient_update_needs_a_regulation():
    st = random_state(np.random.default_rng(6), DIMS, density=0.0)
    with pytest.raises(ValueError):
        coeff_mh_step(0, 2, st, np.random.default_rng(0))


def test_coefficient_updates_leave_the_conditional_invariant():
    """Long MH run on one (a, b) against a quadrature of the exact conditional."""
    dims = Dims(2, 1, 2, (0, 6))
    st = random_state(np.random.default_rng(7), dims, density=0.0)
    st.parents[0, 0] = 1
    st.coef[0, 0] = (0.0, 0.0)
    rng = np.random.default_rng(8)
    draws = np.empty((40_000, 2))
    for i in range(draws.shape[0]):
        draws[i] = coeff_mh_step(0, 2, st, rng, step_size=(0.8, 0.2))[0]
    draws = draws[2_000:]
    y, x = st.increments(2)
    prior, s2 = st.prior, st.params.sigma2_sq

    sig = collapsed_sigma_posterior(0, 2, st.coeffs, prior)

    def log_post(a, b):
        # Gaussian pair prior with the shared variance integrated out, times the regression likelihood
        lik = -0.5 * np.sum((y[:, 0] - a - b * x[:, 1]) ** 2) / s2
        quad = (a - prior.alpha_a) ** 2 / prior.V_a + (b - prior.alpha_b) ** 2 / prior.slope_scale
        return lik - (sig.shape + 1) * math.log(sig.scale + 0.5 * quad)

    A, B = np.meshgrid(np.linspace(-8, 8, 321), np.linspace(-3, 3, 241), indexing="ij")
    lp = np.vectorize(log_post)(A, B)
    w = np.exp(lp - lp.max())
    w /= w.sum()
    for j, grid in enumerate((A, B)):
        mean = float(np.sum(w * grid))
        sd = math.sqrt(float(np.sum(w * (grid - mean) ** 2)))
        assert draws[:, j].mean() == pytest.approx(mean, abs=0.1 * sd)

