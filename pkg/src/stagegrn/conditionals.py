"""Full conditionals for latent expression, global parameters and regulation coefficients.

All functions read a :class:`~stagegrn.state.ChainState` and never mutate it,
except the ``sample_*``/``*_mh_step`` helpers that write a fresh draw back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .model import NOT_REGULATED_INDEX, PriorConfig, RegulationCoefficients, RegulatoryModel, TargetId
from .state import ChainState


@dataclass(frozen=True)
class GaussianPosterior:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")

    def logpdf(self, x):
        return -0.5 * (np.log(2 * np.pi * self.variance) + (np.asarray(x) - self.mean) ** 2 / self.variance)

    def sample(self, rng, size=None):
        return self.mean + np.sqrt(self.variance) * rng.standard_normal(size)


@dataclass(frozen=True)
class InverseGammaPosterior:
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError(f"shape and scale must be positive, got {self.shape}, {self.scale}")

    @property
    def mean(self) -> float:
        return self.scale / (self.shape - 1) if self.shape > 1 else np.inf

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return self.shape * np.log(self.scale) - gammaln(self.shape) - (self.shape + 1) * np.log(x) - self.scale / x

    def sample(self, rng, size=None):
        return self.scale / rng.gamma(self.shape, size=size)


@dataclass(frozen=True)
class ScaledStudentT:
    dof: float
    location: float
    scale: float

    def __post_init__(self):
        if not (self.dof > 0 and self.scale > 0):
            raise ValueError(f"dof and scale must be positive, got {self.dof}, {self.scale}")

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.location) / self.scale
        nu = self.dof
        return (gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * np.log(nu * np.pi) - np.log(self.scale)
                - (nu + 1) / 2 * np.log1p(z * z / nu))


# ---------------------------------------------------------------------------
# latent expression

def _dependents(state: ChainState, transition: int, k: int) -> np.ndarray:
    return np.flatnonzero(state.parents[transition - 2] == k)


def _dependent_terms(state: ChainState, transition: int, k: int, idx: np.ndarray):
    """Precision weight and mean contribution from targets regulated by ``k`` over ``transition``.

    Returns ``(sum b^2, sum b * (increment_j - a_j))`` per person in ``idx``.
    """
    row = transition - 2
    deps = _dependents(state, transition, k)
    if deps.size == 0:
        return 0.0, np.zeros(idx.size)
    ab = state.coef[row, deps]
    inc = state.values[idx, row + 1][:, deps] - state.values[idx, row][:, deps]
    return float(np.sum(ab[:, 1] ** 2)), (inc - ab[:, 0]) @ ab[:, 1]


def _check(values, what):
    if np.any(np.isnan(values)):
        raise ValueError(f"missing {what} required by this conditional")


def stage1_conditional(state: ChainState, k: int, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised stage-1 conditional for persons ``idx`` (all with death stage >= 2)."""
    p = state.params
    x1 = state.values[idx, 1, k]
    prev = state.values[idx, 0, :]
    _check(x1, "stage-2 value")
    e_own = state.expected_increment(2, k, prev)
    wb2, dep = _dependent_terms(state, 2, k, idx)
    prec = 1.0 / p.sigma1_sq + (1.0 + wb2) / p.sigma2_sq
    num = p.mu_flat[k] / p.sigma1_sq + (x1 - e_own + dep) / p.sigma2_sq
    return num / prec, np.full(idx.size, 1.0 / prec)


def interior_conditional(state: ChainState, k: int, stage: int, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised conditional at 1-based ``stage`` in ``2..death-1`` for persons ``idx``."""
    s = stage - 1  # 0-based layer
    p = state.params
    before = state.values[idx, s - 1, :]
    here = state.values[idx, s, :]
    after = state.values[idx, s + 1, k]
    _check(before[:, k], "previous-stage value")
    _check(after, "next-stage value")
    e_in = state.expected_increment(stage, k, before)
    e_out = state.expected_increment(stage + 1, k, here)
    wb2, dep = _dependent_terms(state, stage + 1, k, idx)
    eta = 2.0 + wb2
    num = (before[:, k] + e_in) + (after - e_out) + dep
    return num / eta, np.full(idx.size, p.sigma2_sq / eta)


def terminal_conditional(state: ChainState, k: int, stage: int, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unobserved value at the death stage: forward prediction only (prior at stage 1)."""
    p = state.params
    if stage == 1:
        return np.full(idx.size, p.mu_flat[k]), np.full(idx.size, p.sigma1_sq)
    before = state.values[idx, stage - 2, :]
    _check(before[:, k], "previous-stage value")
    return before[:, k] + state.expected_increment(stage, k, before), np.full(idx.size, p.sigma2_sq)


def _one(mean, var) -> GaussianPosterior:
    return GaussianPosterior(float(mean[0]), float(var[0]))


def missing_stage1_posterior(person: int, target, state: ChainState) -> GaussianPosterior:
    k = state.target_index(target)
    if state.death[person] < 2:
        raise ValueError("stage-1 conditional needs a death stage >= 2")
    if state.observed[person, 0, k]:
        raise ValueError("stage-1 value is observed, not latent")
    return _one(*stage1_conditional(state, k, np.array([person])))


def missing_interior_posterior(person: int, target, t_prime: int, state: ChainState) -> GaussianPosterior:
    k = state.target_index(target)
    if not 2 <= t_prime <= state.death[person] - 1:
        raise ValueError(f"stage {t_prime} is not interior for death stage {state.death[person]}")
    return _one(*interior_conditional(state, k, t_prime, np.array([person])))


def missing_terminal_posterior(person: int, target, state: ChainState) -> GaussianPosterior:
    k = state.target_index(target)
    t = int(state.death[person])
    if state.observed[person, t - 1, k]:
        raise ValueError("death-stage value is observed")
    return _one(*terminal_conditional(state, k, t, np.array([person])))


def sample_layer(state: ChainState, stage: int, rng: np.random.Generator, persons: np.ndarray | None = None) -> None:
    """Gibbs-update every latent cell of 1-based ``stage`` (targets in row-major order)."""
    s = stage - 1
    mask = state.death >= stage
    if persons is not None:
        mask &= persons
    has_next = mask & (state.death > stage)
    last = mask & (state.death == stage)
    for k in range(state.dims.K):
        for group, kind in ((has_next, "next"), (last, "last")):
            idx = np.flatnonzero(group & ~state.observed[:, s, k])
            if idx.size == 0:
                continue
            if kind == "last":
                mean, var = terminal_conditional(state, k, stage, idx)
            elif stage == 1:
                mean, var = stage1_conditional(state, k, idx)
            else:
                mean, var = interior_conditional(state, k, stage, idx)
            state.values[idx, s, k] = mean + np.sqrt(var) * rng.standard_normal(idx.size)


def sample_all_missing(state: ChainState, rng: np.random.Generator) -> None:
    """Sweep every latent layer, stages descending."""
    for stage in range(state.dims.T, 0, -1):
        sample_layer(state, stage, rng)


# ---------------------------------------------------------------------------
# global parameters

def mu_posterior_all(state: ChainState, prior: PriorConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    prior = prior or state.prior
    dims = state.dims
    d1 = state.values[:, 0, :]
    n = d1.shape[0]
    c, d = prior.c_flat(dims), prior.d_flat(dims)
    prec = n / state.params.sigma1_sq + 1.0 / d
    num = d1.sum(axis=0) / state.params.sigma1_sq + c / d
    return num / prec, 1.0 / prec


def mu_gr_posterior(target, state: ChainState, prior: PriorConfig | None = None) -> GaussianPosterior:
    k = state.target_index(target)
    mean, var = mu_posterior_all(state, prior)
    return GaussianPosterior(float(mean[k]), float(var[k]))


def sigma1_posterior(state: ChainState, prior: PriorConfig | None = None) -> InverseGammaPosterior:
    prior = prior or state.prior
    resid = state.values[:, 0, :] - state.params.mu_flat
    return InverseGammaPosterior(resid.size / 2.0 + prior.p1, 0.5 * float(np.sum(resid ** 2)) + prior.q1)


def _all_increments(state: ChainState):
    """Yield ``(y, expected, unregulated_mask)`` per transition for all alive persons."""
    for t in state.dims.transitions:
        y, x = state.increments(t)
        if y.shape[0] == 0:
            continue
        row = t - 2
        parents = state.parents[row]
        reg = parents != NOT_REGULATED_INDEX
        e = np.full(y.shape, state.params.mu2)
        if reg.any():
            ab = state.coef[row, reg]
            e[:, reg] = ab[:, 0] + ab[:, 1] * x[:, parents[reg]]
        yield y, e, ~reg


def mu2_posterior(state: ChainState, prior: PriorConfig | None = None) -> GaussianPosterior:
    prior = prior or state.prior
    total, count = 0.0, 0
    for y, _, unreg in _all_increments(state):
        total += float(y[:, unreg].sum())
        count += y.shape[0] * int(unreg.sum())
    s2 = state.params.sigma2_sq
    prec = count / s2 + 1.0 / prior.d2
    return GaussianPosterior((total / s2 + prior.c2 / prior.d2) / prec, 1.0 / prec)


def sigma2_posterior(state: ChainState, prior: PriorConfig | None = None) -> InverseGammaPosterior:
    prior = prior or state.prior
    ss, count = 0.0, 0
    for y, e, _ in _all_increments(state):
        ss += float(np.sum((y - e) ** 2))
        count += y.size
    return InverseGammaPosterior(count / 2.0 + prior.p2, 0.5 * ss + prior.q2)


def sample_params(state: ChainState, rng: np.random.Generator) -> None:
    """One Gibbs pass over the stage-1 means, stage-1 variance, increment mean and increment variance."""
    mean, var = mu_posterior_all(state)
    state.params.mu = (mean + np.sqrt(var) * rng.standard_normal(mean.size)).reshape(state.dims.G, state.dims.R)
    state.params.sigma1_sq = float(sigma1_posterior(state).sample(rng))
    state.params.mu2 = float(mu2_posterior(state).sample(rng))
    state.params.sigma2_sq = float(sigma2_posterior(state).sample(rng))


# ---------------------------------------------------------------------------
# regulation coefficients

def _coef_others(coeffs: RegulationCoefficients, prior: PriorConfig, row: int, k: int) -> tuple[int, float]:
    v = coeffs.values
    q = (v[..., 0] - prior.alpha_a) ** 2 / prior.V_a + (v[..., 1] - prior.alpha_b) ** 2 / prior.slope_scale
    reg = ~np.isnan(q)
    reg[row, k] = False
    return int(reg.sum()), float(q[reg].sum())


def collapsed_sigma_posterior(target, transition: int, coeffs: RegulationCoefficients,
                              prior: PriorConfig) -> InverseGammaPosterior:
    """Shared coefficient variance given every regulation except ``(target, transition)``."""
    k = TargetId(*target).index(coeffs.dims) if not isinstance(target, (int, np.integer)) else int(target)
    n_other, c_other = _coef_others(coeffs, prior, transition - 2, k)
    return InverseGammaPosterior(prior.coef_ig_shape + n_other, prior.coef_ig_scale + 0.5 * c_other)


def coeff_t_prior(which: str, a: float, b: float, n_beta: int, c_other: float, prior: PriorConfig) -> ScaledStudentT:
    dof = prior.v + 2 * n_beta - 1
    base = 4 * prior.v * prior.lam + c_other
    if which == "a":
        big = (b - prior.alpha_b) ** 2 / prior.slope_scale + base
        return ScaledStudentT(dof, prior.alpha_a, float(np.sqrt(big * prior.V_a / dof)))
    if which == "b":
        big = (a - prior.alpha_a) ** 2 / prior.V_a + base
        return ScaledStudentT(dof, prior.alpha_b, float(np.sqrt(big * prior.slope_scale / dof)))
    raise ValueError(f"which must be 'a' or 'b', got {which!r}")


def coeff_conditional_prior(which: str, target, transition: int, coeffs: RegulationCoefficients,
                            model: RegulatoryModel, prior: PriorConfig) -> ScaledStudentT:
    """Student-t prior of ``a`` (or ``b``) given the partner coefficient and all other regulations."""
    dims = model.dims
    k = TargetId(*target).index(dims) if not isinstance(target, (int, np.integer)) else int(target)
    row = transition - 2
    if model.parents[row, k] == NOT_REGULATED_INDEX:
        raise ValueError(f"target {TargetId.from_index(k, dims)} is not regulated over transition {transition}")
    n_other, c_other = _coef_others(coeffs, prior, row, k)
    a, b = coeffs.values[row, k]
    return coeff_t_prior(which, a, b, n_other + 1, c_other, prior)


def regression_loglik(stats, a, b, s2):
    """Gaussian log-likelihood of ``y = a + b x + noise`` up to a constant, from raw sums.

    ``stats = (n, sum y, sum x, sum x^2, sum x y, sum y^2)``.
    """
    n, sy, sx, sxx, sxy, syy = stats
    return -0.5 * (syy + n * a * a + b * b * sxx - 2 * a * sy - 2 * b * sxy + 2 * a * b * sx) / s2


def regression_stats(state: ChainState, transition: int, k: int, s: int):
    y, x = state.increments(transition)
    yk, xs = y[:, k], x[:, s]
    return (yk.size, yk.sum(), xs.sum(), xs @ xs, xs @ yk, yk @ yk)


def coeff_mh_update(a: float, b: float, stats, s2: float, n_other: int, c_other: float, prior: PriorConfig,
                    rng: np.random.Generator, step_size=(0.3, 0.3)):
    """Random-walk MH on ``a`` then ``b`` against the t conditional prior times the Gaussian likelihood.

    Returns ``(a, b, accepted_a, accepted_b)``.
    """
    step_a, step_b = (step_size, step_size) if np.isscalar(step_size) else step_size
    va, vb = prior.V_a, prior.slope_scale
    base = 4 * prior.v * prior.lam + c_other
    dof = prior.v + 2 * n_other + 1
    half = 0.5 * (dof + 1)
    cur_ll = regression_loglik(stats, a, b, s2)
    # the t log-density ratio only needs the kernel: -(dof + 1)/2 log(1 + z^2 / dof)
    da = a - prior.alpha_a
    db = b - prior.alpha_b
    scale_sq = (db * db / vb + base) * va
    prop = a + step_a * rng.standard_normal()
    dp = prop - prior.alpha_a
    prop_ll = regression_loglik(stats, prop, b, s2)
    log_r = -half * (np.log1p(dp * dp / scale_sq) - np.log1p(da * da / scale_sq)) + prop_ll - cur_ll
    acc_a = bool(np.log(rng.random()) < log_r)
    if acc_a:
        a, da, cur_ll = prop, dp, prop_ll
    scale_sq = (da * da / va + base) * vb
    prop = b + step_b * rng.standard_normal()
    dp = prop - prior.alpha_b
    prop_ll = regression_loglik(stats, a, prop, s2)
    log_r = -half * (np.log1p(dp * dp / scale_sq) - np.log1p(db * db / scale_sq)) + prop_ll - cur_ll
    acc_b = bool(np.log(rng.random()) < log_r)
    if acc_b:
        b = prop
    return float(a), float(b), acc_a, acc_b


def coeff_mh_step(target, transition: int, state: ChainState, rng: np.random.Generator, step_size=(0.3, 0.3)):
    """One MH update of ``a`` then ``b`` for a regulation; writes the result into ``state``.

    Returns ``((a, b), (accepted_a, accepted_b))``.
    """
    k = state.target_index(target)
    row = transition - 2
    s = state.parents[row, k]
    if s == NOT_REGULATED_INDEX:
        raise ValueError("coefficient update requested for an unregulated target")
    n_other, c_other = _coef_others(state.coeffs, state.prior, row, k)
    a, b = state.coef[row, k]
    a, b, acc_a, acc_b = coeff_mh_update(a, b, regression_stats(state, transition, k, s),
                                         state.params.sigma2_sq, n_other, c_other, state.prior, rng, step_size)
    state.coef[row, k] = (a, b)
    return (a, b), (acc_a, acc_b)
