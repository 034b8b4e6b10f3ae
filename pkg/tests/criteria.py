"""Measurements behind the acceptance checks, kept separate so unit tests can reuse them."""

from __future__ import annotations

import math
import time

import numpy as np
from oracles import (
    cell_conditional_moments,
    grid_moments,
    joint_data_logdensity,
    log_normal,
    random_state,
)

from stagegrn.conditionals import (
    missing_interior_posterior,
    missing_stage1_posterior,
    missing_terminal_posterior,
    mu2_posterior,
    mu_gr_posterior,
)
from stagegrn.marginals import null_marginal_loglik, regulated_marginal_loglik
from stagegrn.mcmc import McmcConfig, PcgSampler, enumerate_exact_posterior, run_chain, total_variation
from stagegrn.model import (
    NOT_REGULATED_INDEX,
    Dims,
    GlobalParams,
    PriorConfig,
    RegulationCoefficients,
    RegulatoryModel,
    generate_coefficients,
    generate_network,
    simulate_dataset,
)
from stagegrn.state import ChainState


# -- latent and parameter conditionals on a grid ------------------------------

def conditional_grid_errors(instances: int = 20, seed: int = 20) -> dict[str, tuple[float, float]]:
    """Largest |mean error| and |variance error| of each Gaussian conditional against grid integration."""
    rng = np.random.default_rng(seed)
    dims = Dims(3, 2, 2, (1, 1, 2))
    worst = {name: [0.0, 0.0] for name in ("missing_stage1", "missing_interior", "missing_terminal", "mu_gr", "mu2")}

    def update(name, grid, post):
        worst[name][0] = max(worst[name][0], abs(grid[0] - post.mean))
        worst[name][1] = max(worst[name][1], abs(grid[1] - post.variance))

    for _ in range(instances):
        st = random_state(rng, dims, density=0.7)
        e = int(np.flatnonzero(st.death == 3)[0])
        k = int(rng.integers(dims.K))
        update("missing_stage1", cell_conditional_moments(st, e, 1, k), missing_stage1_posterior(e, k, st))
        update("missing_interior", cell_conditional_moments(st, e, 2, k), missing_interior_posterior(e, k, 2, st))
        st.observed[e, 2, k] = False
        update("missing_terminal", cell_conditional_moments(st, e, 3, k), missing_terminal_posterior(e, k, st))

        prior = st.prior

        def with_mu(x):
            s = st.copy()
            mu = s.params.mu.reshape(-1).copy()
            mu[k] = x
            s.params.mu = mu.reshape(dims.G, dims.R)
            return joint_data_logdensity(s) + log_normal(x, prior.c, prior.d)

        centre = float(np.mean(st.values[:, 0, k]))
        update("mu_gr", grid_moments(with_mu, centre - 8, centre + 8, 8001), mu_gr_posterior(k, st))

        def with_mu2(x):
            s = st.copy()
            s.params.mu2 = x
            return joint_data_logdensity(s) + log_normal(x, prior.c2, prior.d2)

        update("mu2", grid_moments(with_mu2, -8, 8, 8001), mu2_posterior(st))
    return {name: (m, v) for name, (m, v) in worst.items()}


# -- collapsed marginal -------------------------------------------------------

def point_mass_prior(mu2: float, v: float = 2.0) -> PriorConfig:
    """Coefficient prior collapsed onto ``(a, b) = (mu2, 0)``: both prior covariance entries are 1e-10."""
    return PriorConfig(alpha_a=mu2, alpha_b=0.0, V_a=1e-10, V_b=v ** 2 / 1e-10, v=v)


def null_equivalence_error(instances: int = 20, seed: int = 50) -> float:
    """Largest gap between the regulated and unregulated log marginals under :func:`point_mass_prior`.

    Trajectories come from a network with no regulation.  The coefficient
    variance prior has a heavy upper tail, so when a target's increments are
    far from anything the unregulated model could produce, that tail carries
    real mass and the two marginals separate; null-generated data keeps the
    comparison on the ground where the identity holds.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        dims = Dims(3, int(rng.integers(1, 3)), int(rng.integers(2, 4)), tuple(int(x) for x in rng.integers(2, 6, 3)))
        st = random_state(rng, dims, density=0.0)
        st = ChainState(st.dims, st.person_ids, st.death, st.values, st.observed, st.parents, st.coef, st.params,
                        point_mass_prior(st.params.mu2))
        t = int(rng.integers(2, 4))
        k, s = rng.choice(dims.K, size=2, replace=False)
        reg = regulated_marginal_loglik(int(k), int(s), t, st)
        worst = max(worst, abs(reg - null_marginal_loglik(int(k), t, st)))
    return worst


def two_observation_state(seed: int = 3) -> ChainState:
    """Two persons, one transition, a target and its candidate source, every cell known."""
    rng = np.random.default_rng(seed)
    dims = Dims(2, 1, 2, (0, 2))
    values = np.empty((2, 2, 2))
    values[:, 0, :] = rng.normal(5, 1, (2, 2))
    values[:, 1, :] = values[:, 0, :] + rng.normal(0.5, 1, (2, 2))
    observed = np.zeros((2, 2, 2), dtype=bool)
    observed[:, 1, :] = True
    return ChainState(dims, ("A", "B"), np.array([2, 2]), values, observed,
                      np.full((1, 2), NOT_REGULATED_INDEX), np.full((1, 2, 2), np.nan),
                      GlobalParams(np.full((1, 2), 5.0), 1.0, 0.0, 0.8), PriorConfig())


def monte_carlo_marginal(st: ChainState, draws: int = 2_000_000, seed: int = 9) -> tuple[float, float, float]:
    """Closed-form log marginal, Monte Carlo log estimate and its standard error on the log scale."""
    prior = st.prior
    y, x = st.increments(2)
    y, x = y[:, 0], x[:, 1]
    closed = regulated_marginal_loglik(0, 1, 2, st)
    rng = np.random.default_rng(seed)
    sig = prior.coef_ig_scale / rng.gamma(prior.coef_ig_shape, size=draws)
    a = prior.alpha_a + np.sqrt(sig * prior.V_a) * rng.standard_normal(draws)
    b = prior.alpha_b + np.sqrt(sig * prior.slope_scale) * rng.standard_normal(draws)
    s2 = st.params.sigma2_sq
    resid = y[None, :] - a[:, None] - b[:, None] * x[None, :]
    logl = -0.5 * (y.size * math.log(2 * math.pi * s2) + np.sum(resid ** 2, axis=1) / s2)
    top = logl.max()
    w = np.exp(logl - top)
    mean = w.mean()
    se = w.std(ddof=1) / math.sqrt(draws)
    return closed, top + math.log(mean), se / mean


# -- exact enumeration ----------------------------------------------------------

def oracle_total_variation(retained: int = 50_000, seed: int = 4) -> tuple[float, float, int]:
    """TV distance between sampled and enumerated model posteriors with frozen coefficients."""
    rng = np.random.default_rng(seed)
    dims = Dims(2, 2, 2, (0, 12))
    prior = PriorConfig()
    table = rng.normal(0.0, 0.6, (1, dims.K, dims.K, 2))
    truth = generate_network(rng, dims, 0.5)
    coef = np.full((1, dims.K, 2), np.nan)
    for k, s in enumerate(truth.parents[0]):
        if s != NOT_REGULATED_INDEX:
            coef[0, k] = table[0, k, s]
    params = GlobalParams(np.full((2, 2), 5.0), 1.0, 0.0, 1.0)
    ds = simulate_dataset(truth, RegulationCoefficients(dims, coef), params, dims, rng)
    exact = enumerate_exact_posterior(ds, table, params, prior)
    burn = 2_000
    cfg = McmcConfig(n_outer=1, iterations_per_transition=retained + burn, burn_in=burn, method="fixed",
                     update_coefficients=False, update_params=False, update_missing=False, record_joint=True,
                     init="truth", seed=seed)
    start = time.perf_counter()
    summary = run_chain(ds, prior, cfg, coeff_table=table, params=params)
    elapsed = time.perf_counter() - start
    return total_variation(summary.joint_frequencies(), exact), elapsed, summary.n_retained


# -- joint-distribution (Geweke) test ----------------------------------------

def geweke_prior() -> PriorConfig:
    """Coefficient prior with light enough tails that simulated trajectories stay moderate."""
    return PriorConfig(v=6.0, V_b=36.0)


def geweke_names(dims: Dims) -> tuple[str, ...]:
    mus = tuple(f"mu[{g + 1},{r + 1}]" for g in range(dims.G) for r in range(dims.R))
    return mus + ("sigma1_sq", "mu2", "sigma2_sq")


def _statistics(params: GlobalParams) -> tuple[float, ...]:
    return (*params.mu.ravel().tolist(), params.sigma1_sq, params.mu2, params.sigma2_sq)


def _batch_se(x: np.ndarray, batches: int = 50) -> float:
    """Standard error of the mean from non-overlapping batch means."""
    size = x.size // batches
    means = x[: size * batches].reshape(batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(batches))


def geweke_z_scores(iterations: int = 20_000, seed: int = 6,
                    dims: Dims = Dims(3, 2, 2, (2, 2, 2))) -> tuple[dict[str, float], float]:
    """z-scores comparing prior draws of the global parameters with a successive-conditional chain.

    Each chain step regenerates every trajectory from the current network,
    coefficients and parameters, then applies one full sampler sweep with
    one inner iteration per transition.
    """
    from stagegrn.model import default_person_ids, sample_model_prior, sample_params_prior, simulate_values

    prior = geweke_prior()
    rng = np.random.default_rng(seed)
    start = time.perf_counter()

    def draw_theta():
        model = sample_model_prior(rng, dims, prior.model_prior)
        coef = generate_coefficients(rng, model, prior)
        return model, coef, sample_params_prior(rng, dims, prior)

    direct = np.array([_statistics(draw_theta()[2]) for _ in range(iterations)])

    death = np.repeat(np.arange(1, dims.T + 1), dims.n)
    observed = np.broadcast_to((np.arange(dims.T)[None, :] == death[:, None] - 1)[:, :, None],
                               (dims.n_persons, dims.T, dims.K)).copy()
    ids = default_person_ids(dims)
    cfg = McmcConfig(n_outer=1, iterations_per_transition=1, burn_in=0, adapt_steps=False, seed=seed)
    model, coef, params = draw_theta()
    parents, coef_values = np.array(model.parents), np.array(coef.values)
    chain = np.empty_like(direct)
    for i in range(iterations):
        values = simulate_values(RegulatoryModel(dims, parents), RegulationCoefficients(dims, coef_values),
                                 params, death, rng)
        st = ChainState(dims, ids, death, values, observed.copy(), parents, coef_values, params, prior)
        PcgSampler(st, cfg, rng).outer_iteration()
        parents, coef_values, params = st.parents, st.coef, st.params
        chain[i] = _statistics(params)

    z = {}
    for j, name in enumerate(geweke_names(dims)):
        se_direct = direct[:, j].std(ddof=1) / math.sqrt(iterations)
        z[name] = float((chain[:, j].mean() - direct[:, j].mean()) / math.hypot(se_direct, _batch_se(chain[:, j])))
    return z, time.perf_counter() - start
