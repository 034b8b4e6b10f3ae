"""Metropolis-within-partially-collapsed-Gibbs sampler over regulatory networks.

One outer iteration visits every transition.  For each transition it runs
``L`` model moves (add, delete or swap a regulation, scored with the
coefficients integrated out), each followed by a random-walk refresh of the
coefficients of that transition, and then resamples the latent layer just
before the transition.  The outer iteration ends with conjugate updates of
the global parameters and a sweep over every latent layer.

Configuration columns follow the ``(K, K + 1)`` convention of
:mod:`stagegrn.marginals`: column 0 is "not regulated", column ``1 + s`` is
regulation by source ``s``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.stats import multivariate_t

from .conditionals import coeff_mh_update, sample_all_missing, sample_layer, sample_params
from .model import (
    MOVES,
    NOT_REGULATED_INDEX,
    Dims,
    ExpressionDataset,
    GlobalParams,
    OperationMatrix,
    PriorConfig,
    RegulationCoefficients,
    RegulatoryModel,
    TargetId,
    classify,
    config_log_prior,
)
from .latent import ObservedCohorts, TrajectoryMoments, sample_latent, supports_collapsed_latent, vary_regulation
from .marginals import TransitionLikelihood, config_loglik
from .state import ChainState

ADD, DELETE, SWAP = range(3)
_FIT_STEP = 1e-3  # finite-difference step for the Laplace fit


@dataclass
class McmcConfig:
    """Run schedule and sampler switches.

    ``burn_in`` counts inner iterations per transition (default: a quarter of
    ``n_outer * iterations_per_transition``).  The ``update_*`` switches
    freeze blocks of the state, which the oracle tests rely on.
    """

    n_outer: int = 50
    iterations_per_transition: int = 200
    burn_in: int | None = None
    thinning: int = 1
    seed: int = 0
    op_matrix: OperationMatrix = field(default_factory=OperationMatrix)
    mh_step_sizes: tuple[float, float] = (0.3, 0.3)
    adapt_steps: bool = True
    method: str = "exact"
    update_coefficients: bool = True
    update_params: bool = True
    update_missing: bool = True
    init: str = "mean"
    record_joint: bool = False
    model_moves: bool = True
    cell_moves: int = 1
    exchange_moves: int | None = None
    cell_flatten: float = 0.3
    cell_uniform: float = 0.05
    fit_iterations: int = 3
    fit_dof: float = 5.0

    def __post_init__(self):
        if self.n_outer < 1 or self.iterations_per_transition < 1:
            raise ValueError("n_outer and iterations_per_transition must be positive")
        if self.cell_moves < 0:
            raise ValueError("cell_moves must be >= 0")
        if not 0 < self.cell_flatten <= 1 or not 0 <= self.cell_uniform < 1:
            raise ValueError("cell_flatten must lie in (0, 1] and cell_uniform in [0, 1)")
        if self.exchange_moves is not None and self.exchange_moves < 0:
            raise ValueError("exchange_moves must be >= 0")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.burn_in is None:
            self.burn_in = self.total_inner // 4
        if not 0 <= self.burn_in < self.total_inner:
            raise ValueError(f"burn_in must lie in [0, {self.total_inner}), got {self.burn_in}")
        self.mh_step_sizes = tuple(float(x) for x in self.mh_step_sizes)

    @property
    def total_inner(self) -> int:
        return self.n_outer * self.iterations_per_transition

    def retained(self, inner: int) -> bool:
        return inner >= self.burn_in and (inner - self.burn_in) % self.thinning == 0


@dataclass
class ChainSummary:
    """Retained configuration counts, parameter traces and acceptance diagnostics."""

    dims: Dims
    counts: np.ndarray  # (T-1, K, K+1) int
    n_retained: int
    param_trace: dict[str, np.ndarray]
    acceptance: dict[str, float]
    step_sizes: tuple[float, float]
    joint_counts: dict[tuple, int] | None = None

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / max(self.n_retained, 1)

    @property
    def param_means(self) -> dict[str, np.ndarray | float]:
        out = {}
        for name, trace in self.param_trace.items():
            out[name] = trace.mean(axis=0) if trace.size else np.nan
        return out

    def joint_frequencies(self) -> dict[tuple, float]:
        if self.joint_counts is None:
            raise ValueError("joint model counts were not recorded")
        total = sum(self.joint_counts.values())
        return {m: c / total for m, c in self.joint_counts.items()}


# ---------------------------------------------------------------------------
# proposal machinery

def _draw(rng: np.random.Generator, logw: np.ndarray) -> tuple[int, float]:
    """Index drawn proportionally to ``exp(logw)`` and its log probability."""
    top = logw.max()
    p = np.exp(logw - top)
    total = p.sum()
    i = int(rng.choice(p.size, p=p / total))
    return i, float(logw[i] - top - np.log(total))


def _lse(a: np.ndarray, axis=None):
    """Log-sum-exp that tolerates all ``-inf`` slices (result ``-inf``)."""
    top = np.max(a, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - top), axis=axis, keepdims=True)) + top
    return out.squeeze() if axis is None else np.squeeze(out, axis=axis)


def _log_share(logw: np.ndarray, i: int) -> float:
    """Log of ``exp(logw[i]) / sum(exp(logw))``."""
    return float(logw[i] - _lse(logw))


@dataclass
class _Tables:
    """Configuration log-posteriors of one transition and the selection weights derived from them."""

    logpost: np.ndarray  # (K, K+1) unnormalised
    parents: np.ndarray  # (K,)

    def __post_init__(self):
        self.log_norm = _lse(self.logpost, axis=1)
        K = self.parents.size
        cur = self.parents + 1
        masked = self.logpost.copy()
        masked[np.arange(K), cur] = -np.inf
        # log(1 - p(current configuration)): weight of a target for Add (current = none) or Delete/Swap
        self.leave = _lse(masked, axis=1) - self.log_norm
        self.unregulated = np.flatnonzero(self.parents == NOT_REGULATED_INDEX)
        self.regulated = np.flatnonzero(self.parents != NOT_REGULATED_INDEX)

    def source_weights(self, k: int, exclude: int | None = None) -> np.ndarray:
        w = self.logpost[k, 1:].copy()
        if exclude is not None:
            w[exclude] = -np.inf
        return w

    def log_target_prob(self, move: int, k: int) -> float:
        cands = self.unregulated if move == ADD else self.regulated
        pos = int(np.searchsorted(cands, k))
        return _log_share(self.leave[cands], pos)

    def log_source_prob(self, k: int, s: int, exclude: int | None = None) -> float:
        return _log_share(self.source_weights(k, exclude), s)


@dataclass
class Proposal:
    move: int
    target: int
    old_source: int
    new_source: int
    log_forward: float


def propose_move(tables: _Tables, move: int, rng: np.random.Generator, log_move_prob: float = 0.0):
    """Draw a target and source for ``move``; ``None`` when the move is impossible from this model."""
    if move == ADD:
        cands = tables.unregulated
        if cands.size == 0:
            return None
    else:
        cands = tables.regulated
        if cands.size == 0:
            return None
    weights = tables.leave[cands]
    if not np.isfinite(weights).any():
        return None
    i, lp_target = _draw(rng, weights)
    k = int(cands[i])
    old = int(tables.parents[k])
    if move == DELETE:
        return Proposal(move, k, old, NOT_REGULATED_INDEX, log_move_prob + lp_target)
    w = tables.source_weights(k, exclude=old if move == SWAP else None)
    if not np.isfinite(w).any():
        return None
    s, lp_source = _draw(rng, w)
    return Proposal(move, k, old, s, log_move_prob + lp_target + lp_source)


def _selection_tables(state: ChainState, transition: int, lik: TransitionLikelihood):
    n_other, c_other = state.others(transition)
    ll = config_loglik(lik, state, n_other, c_other)
    return _Tables(ll + state.log_prior, state.parents[transition - 2].copy()), n_other, c_other


def _move_for(state_or_row: np.ndarray, op: OperationMatrix) -> np.ndarray:
    return np.asarray(op.row(classify(state_or_row)))


def propose_add(state: ChainState, transition: int, rng: np.random.Generator,
                lik: TransitionLikelihood | None = None):
    """Candidate model with one more regulation, and the log probability of selecting it."""
    return _propose_public(state, transition, rng, ADD, lik)


def propose_delete(state: ChainState, transition: int, rng: np.random.Generator,
                   lik: TransitionLikelihood | None = None):
    """Candidate model with one regulation removed, and the log probability of selecting it."""
    return _propose_public(state, transition, rng, DELETE, lik)


def propose_swap(state: ChainState, transition: int, rng: np.random.Generator,
                 lik: TransitionLikelihood | None = None):
    """Candidate model with one regulation's source replaced, and the log selection probability."""
    return _propose_public(state, transition, rng, SWAP, lik)


def _propose_public(state, transition, rng, move, lik):
    lik = lik or TransitionLikelihood(state, transition)
    tables, _, _ = _selection_tables(state, transition, lik)
    prop = propose_move(tables, move, rng)
    if prop is None:
        raise ValueError(f"no admissible {MOVES[move]} move from the current model")
    return state.model.with_parent(transition, prop.target, prop.new_source), prop.log_forward


def coefficient_log_prior(n_regulations: int, quad_total, prior: PriorConfig):
    """Joint log prior of all coefficient pairs with their shared variance integrated out.

    ``quad_total`` may be an array, giving one value per entry.
    """
    shape, scale = prior.coef_ig_shape, prior.coef_ig_scale
    n = n_regulations
    out = (-n * np.log(2 * np.pi) - 0.5 * n * np.log(prior.V_a * prior.slope_scale)
           + shape * np.log(scale) - gammaln(shape) + gammaln(shape + n)
           - (shape + n) * np.log(scale + 0.5 * np.asarray(quad_total, dtype=float)))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# sampler

class PcgSampler:
    """Stateful driver for one chain; all randomness flows through ``rng``."""

    def __init__(self, state: ChainState, config: McmcConfig, rng: np.random.Generator,
                 coeff_table: np.ndarray | None = None):
        if config.method == "fixed" and coeff_table is None:
            raise ValueError("the fixed method needs a coefficient table of shape (T-1, K, K, 2)")
        self.state = state
        self.config = config
        self.rng = rng
        self.coeff_table = coeff_table
        self.steps = list(config.mh_step_sizes)
        self.move_tries = np.zeros(3, dtype=np.int64)
        self.move_accepts = np.zeros(3, dtype=np.int64)
        self.coef_tries = np.zeros(2, dtype=np.int64)
        self.coef_accepts = np.zeros(2, dtype=np.int64)
        self._window = np.zeros((2, 2), dtype=np.int64)  # per coordinate: tries, accepts
        self.inner = np.zeros(state.dims.T - 1, dtype=np.int64)
        self.exchange_tries = 0
        self.cell_tries = self.cell_accepts = self.cell_changes = 0
        self.exchange_accepts = 0
        self.collapsed = (config.update_missing and config.method == "exact"
                          and supports_collapsed_latent(state.observed, state.death))
        self.cohorts = ObservedCohorts(state.values, state.observed, state.death) if self.collapsed else None

    # -- building blocks -----------------------------------------------------

    def likelihood(self, transition: int) -> TransitionLikelihood:
        table = None if self.coeff_table is None else self.coeff_table[transition - 2]
        return TransitionLikelihood(self.state, transition, method=self.config.method, coeff_table=table)

    def _new_coefficients(self, lik, k, s, n_other, c_other):
        return lik.draw_coefficients(k, s, float(n_other[k]), float(c_other[k]), self.rng)

    def model_mh_step(self, transition: int, lik: TransitionLikelihood) -> bool:
        """One add/delete/swap proposal with its exact Hastings correction."""
        state, rng, op = self.state, self.rng, self.config.op_matrix
        row = transition - 2
        tables, n_other, c_other = _selection_tables(state, transition, lik)
        move_probs = _move_for(tables.parents, op)
        move = int(rng.choice(3, p=move_probs))
        self.move_tries[move] += 1
        prop = propose_move(tables, move, rng, float(np.log(move_probs[move])))
        if prop is None:
            return False
        k, old, new = prop.target, prop.old_source, prop.new_source
        saved = state.coef[row, k].copy()
        state.parents[row, k] = new
        if new == NOT_REGULATED_INDEX:
            state.coef[row, k] = np.nan
        else:
            state.coef[row, k] = self._new_coefficients(lik, k, new, n_other, c_other)
        cand, _, _ = _selection_tables(state, transition, lik)
        rev_probs = _move_for(cand.parents, op)
        if move == ADD:
            rev = np.log(rev_probs[DELETE]) + cand.log_target_prob(DELETE, k)
        elif move == DELETE:
            rev = np.log(rev_probs[ADD]) + cand.log_target_prob(ADD, k) + cand.log_source_prob(k, old)
        else:
            rev = (np.log(rev_probs[SWAP]) + cand.log_target_prob(SWAP, k)
                   + cand.log_source_prob(k, old, exclude=new))
        log_theta = tables.logpost[k, new + 1] - tables.logpost[k, old + 1] + rev - prop.log_forward
        if np.isnan(log_theta):
            raise FloatingPointError("acceptance ratio is NaN")
        if np.log(rng.random()) < log_theta:
            self.move_accepts[move] += 1
            return True
        state.parents[row, k] = old
        state.coef[row, k] = saved
        return False

    def _collapsed_target(self, base: TrajectoryMoments | None = None, from_row: int = 0) -> float:
        """Observed-data log likelihood plus the coefficient prior, latent cells integrated out."""
        st = self.state
        moments = TrajectoryMoments.build(st.parents, st.coef, st.params, base, from_row)
        n, c = st.coef_totals()
        return (self.cohorts.loglik(moments)
                + coefficient_log_prior(n, c, st.prior))

    def _coefficient_proposal(self, row: int, k: int, source: int, start: np.ndarray):
        """Student-t proposal around the observed-data mode of one regulation's ``(a, b)``.

        A few Newton steps with finite-difference derivatives, started from
        ``start``; the result depends only on the rest of the state, so the
        forward and reverse proposals of a move agree.  ``None`` when the
        curvature is not negative definite.
        """
        state = self.state
        state.parents[row, k] = source
        base = TrajectoryMoments.build(state.parents, state.coef, state.params)
        prior = state.prior
        n = int(np.count_nonzero(state.parents != NOT_REGULATED_INDEX))
        q = state.coef_deviations()
        c_other = float(q.sum() - q[row, k])
        h = _FIT_STEP
        e = np.eye(2) * h
        offsets = np.array([[0, 0], e[0], e[1], -e[0], -e[1], e[0] + e[1], e[0] - e[1], e[1] - e[0], -e[0] - e[1]])

        def derivatives(theta):
            pts = theta + offsets
            quad = (pts[:, 0] - prior.alpha_a) ** 2 / prior.V_a + (pts[:, 1] - prior.alpha_b) ** 2 / prior.slope_scale
            m, P = vary_regulation(base, state.parents, state.coef, state.params, row, k, pts)
            f = self.cohorts.loglik_batch(m, P) + coefficient_log_prior(n, c_other + quad, prior)
            f0, fp, fm = f[0], f[1:3], f[3:5]
            fpp, fpm, fmp, fmm = f[5:]
            grad = (fp - fm) / (2 * h)
            hess = np.diag((fp - 2 * f0 + fm) / h ** 2)
            hess[0, 1] = hess[1, 0] = (fpp - fpm - fmp + fmm) / (4 * h * h)
            return grad, hess

        theta = np.asarray(start, dtype=float).copy()
        try:
            for _ in range(self.config.fit_iterations):
                grad, hess = derivatives(theta)
                if not np.all(np.linalg.eigvalsh(hess) < 0):
                    return None
                step = -np.linalg.solve(hess, grad)
                norm = np.linalg.norm(step)
                if norm > 1.0:
                    step /= norm
                theta = theta + step
            _, hess = derivatives(theta)
            if not np.all(np.linalg.eigvalsh(hess) < 0):
                return None
            return multivariate_t(loc=theta, shape=np.linalg.inv(-hess), df=self.config.fit_dof)
        except (np.linalg.LinAlgError, FloatingPointError):
            return None

    def cell_step(self, transition: int, k: int) -> bool:
        """Redraw one target's configuration at ``transition`` with latent cells integrated out.

        Latent cells are drawn from their exact conditional under the model
        with this cell's regulation removed.  That draw has the same law under
        the current and the proposed configuration, so it serves as a shared
        auxiliary variable: the configuration is proposed from the table it
        induces, new coefficients from their conditional posterior, and the
        acceptance ratio compares observed-data posteriors.  On acceptance the
        chain's latent cells are redrawn under the new model.
        """
        state, rng = self.state, self.rng
        row = transition - 2
        old = int(state.parents[row, k])
        old_coef = state.coef[row, k].copy()
        current = self._collapsed_target() + state.log_prior[k, old + 1]
        saved_values = state.values
        state.parents[row, k] = NOT_REGULATED_INDEX
        state.coef[row, k] = np.nan
        moments = TrajectoryMoments.build(state.parents, state.coef, state.params)
        state.values = sample_latent(saved_values, state.observed, state.death, moments, rng, self.cohorts)
        aux = self.likelihood(transition)
        n_other, c_other = state.others(transition)
        n_k, c_k = float(n_other[k]), float(c_other[k])
        table = self.config.cell_flatten * (config_loglik(aux, state, n_other, c_other)[k] + state.log_prior[k])
        table = table - _lse(table)
        # imputed increments overstate the evidence, so flatten the table and mix in a uniform share
        admissible = np.isfinite(state.log_prior[k])
        uniform = np.where(admissible, -np.log(admissible.sum()), -np.inf)
        table = np.logaddexp(np.log1p(-self.config.cell_uniform) + table, np.log(self.config.cell_uniform) + uniform)
        new, _ = _draw(rng, table)
        new -= 1
        fwd, rev = table[new + 1], table[old + 1]
        state.values = saved_values
        proposals = {}
        for src in {new, old} - {NOT_REGULATED_INDEX}:
            proposals[src] = self._coefficient_proposal(row, k, src, aux.coefficient_mean(k, src, n_k, c_k))
        if new != NOT_REGULATED_INDEX:
            q = proposals[new]
            if q is None:
                a, b = aux.draw_coefficients(k, new, n_k, c_k, rng)
                fwd += aux.coefficient_logpdf(k, new, n_k, c_k, a, b)
            else:
                a, b = q.rvs(random_state=rng)
                fwd += q.logpdf([a, b])
        if old != NOT_REGULATED_INDEX:
            q = proposals[old]
            rev += (aux.coefficient_logpdf(k, old, n_k, c_k, *old_coef) if q is None else q.logpdf(old_coef))
        state.parents[row, k] = new
        state.coef[row, k] = (a, b) if new != NOT_REGULATED_INDEX else np.nan
        proposed = self._collapsed_target() + state.log_prior[k, new + 1]
        self.cell_tries += 1
        if np.log(rng.random()) < proposed - current + rev - fwd:
            self.cell_accepts += 1
            self.cell_changes += int(new != old)
            moments = TrajectoryMoments.build(state.parents, state.coef, state.params)
            state.values = sample_latent(saved_values, state.observed, state.death, moments, rng, self.cohorts)
            return True
        state.parents[row, k] = old
        state.coef[row, k] = old_coef
        return False

    def exchange_step(self) -> bool:
        """Swap one target's configuration and coefficients between two transitions.

        The proposal is symmetric and leaves both priors unchanged, so the
        observed-data likelihood ratio decides.  Latent cells are redrawn only
        on acceptance, from their exact joint conditional.
        """
        state, rng = self.state, self.rng
        n_rows = state.dims.T - 1
        k = int(rng.integers(state.dims.K))
        r1, r2 = (int(x) for x in rng.choice(n_rows, size=2, replace=False))
        if state.parents[r1, k] == state.parents[r2, k] == NOT_REGULATED_INDEX:
            return False
        self.exchange_tries += 1
        current = self._collapsed_target()
        rows = [r1, r2]
        state.parents[rows, k] = state.parents[rows[::-1], k]
        state.coef[rows, k] = state.coef[rows[::-1], k]
        moments = TrajectoryMoments.build(state.parents, state.coef, state.params)
        proposed = self.cohorts.loglik(moments)
        proposed += coefficient_log_prior(*state.coef_totals(), state.prior)
        if np.log(rng.random()) < proposed - current:
            state.values = sample_latent(state.values, state.observed, state.death, moments, rng, self.cohorts)
            self.exchange_accepts += 1
            return True
        state.parents[rows, k] = state.parents[rows[::-1], k]
        state.coef[rows, k] = state.coef[rows[::-1], k]
        return False

    def refresh_coefficients(self, transition: int, lik: TransitionLikelihood, adapting: bool) -> None:
        """Random-walk MH on every regulation of ``transition``, targets in ascending order."""
        state = self.state
        row = transition - 2
        regs = np.flatnonzero(state.parents[row] != NOT_REGULATED_INDEX)
        if regs.size == 0:
            return
        n_tot, _ = state.coef_totals()
        q = state.coef_deviations()
        c_tot = float(q.sum())
        prior, s2 = state.prior, lik.s2
        for k in regs:
            s = state.parents[row, k]
            a, b = state.coef[row, k]
            c_other = max(c_tot - q[row, k], 0.0)
            a, b, acc_a, acc_b = coeff_mh_update(a, b, lik.regression_stats(k, s), s2, n_tot - 1, c_other,
                                                 prior, self.rng, self.steps)
            state.coef[row, k] = (a, b)
            q_new = (a - prior.alpha_a) ** 2 / prior.V_a + (b - prior.alpha_b) ** 2 / prior.slope_scale
            c_tot += q_new - q[row, k]
            q[row, k] = q_new
            self.coef_tries += 1
            self.coef_accepts += (acc_a, acc_b)
            if adapting:
                self._window[:, 0] += 1
                self._window[:, 1] += (acc_a, acc_b)
        if adapting:
            self._adapt()

    def _adapt(self, batch: int = 50) -> None:
        for j in range(2):
            tries, acc = self._window[j]
            if tries < batch:
                continue
            rate = acc / tries
            if rate < 0.2:
                self.steps[j] *= 0.7
            elif rate > 0.5:
                self.steps[j] *= 1.4
            self._window[j] = 0

    def transition_sweep(self, transition: int, on_step=None) -> None:
        """``L`` model moves with coefficient refreshes, then the layer before the transition."""
        cfg = self.config
        lik = self.likelihood(transition)
        row = transition - 2
        for _ in range(cfg.iterations_per_transition):
            if cfg.model_moves:
                self.model_mh_step(transition, lik)
            if self.collapsed:
                changed = False
                for _ in range(cfg.cell_moves):
                    changed |= self.cell_step(transition, int(self.rng.integers(self.state.dims.K)))
                if changed:
                    lik = self.likelihood(transition)
            if cfg.update_coefficients:
                self.refresh_coefficients(transition, lik, cfg.adapt_steps and self.inner[row] < cfg.burn_in)
            if on_step is not None:
                on_step(transition, int(self.inner[row]))
            self.inner[row] += 1
        if cfg.update_missing:
            sample_layer(self.state, transition - 1, self.rng, persons=self.state.death >= transition)

    def outer_iteration(self, on_step=None) -> None:
        for t in self.state.dims.transitions:
            self.transition_sweep(t, on_step)
        if self.collapsed and self.state.dims.T > 2:
            n = self.config.exchange_moves
            for _ in range(self.state.dims.K if n is None else n):
                self.exchange_step()
        if self.config.update_params:
            sample_params(self.state, self.rng)
        if self.config.update_missing:
            sample_all_missing(self.state, self.rng)

    def acceptance(self) -> dict[str, float]:
        out = {}
        for m, name in enumerate(MOVES):
            out[name] = float(self.move_accepts[m] / self.move_tries[m]) if self.move_tries[m] else float("nan")
        if self.cell_tries:
            out["cell"] = float(self.cell_accepts / self.cell_tries)
            out["cell_change"] = float(self.cell_changes / self.cell_tries)
        if self.exchange_tries:
            out["exchange"] = float(self.exchange_accepts / self.exchange_tries)
        for j, name in enumerate(("coef_a", "coef_b")):
            out[name] = float(self.coef_accepts[j] / self.coef_tries[j]) if self.coef_tries[j] else float("nan")
        return out


def pcg_transition_sweep(state: ChainState, transition: int, rng: np.random.Generator, config: McmcConfig,
                         coeff_table: np.ndarray | None = None) -> ChainState:
    """Run one transition block on ``state`` in place and return it."""
    PcgSampler(state, config, rng, coeff_table).transition_sweep(transition)
    return state


def model_mh_step(state: ChainState, transition: int, rng: np.random.Generator,
                  config: McmcConfig | None = None, coeff_table: np.ndarray | None = None) -> tuple[ChainState, bool]:
    config = config or McmcConfig()
    sampler = PcgSampler(state, config, rng, coeff_table)
    accepted = sampler.model_mh_step(transition, sampler.likelihood(transition))
    return state, accepted


def initial_state(dataset: ExpressionDataset, prior: PriorConfig, config: McmcConfig,
                  coeff_table: np.ndarray | None = None, params: GlobalParams | None = None,
                  model: RegulatoryModel | None = None,
                  coeffs: RegulationCoefficients | None = None) -> ChainState:
    if not np.any(dataset.death_stage >= 2):
        raise ValueError("no person survives past stage 1, so no transition can be estimated")
    dataset = dataset.sorted_by_id()
    if model is not None and coeffs is None and coeff_table is not None:
        values = np.full((dataset.dims.T - 1, dataset.dims.K, 2), np.nan)
        for row in range(dataset.dims.T - 1):
            for k, s in enumerate(model.parents[row]):
                if s != NOT_REGULATED_INDEX:
                    values[row, k] = coeff_table[row, k, s]
        coeffs = RegulationCoefficients(dataset.dims, values)
    return ChainState.from_dataset(dataset, prior, model=model, coeffs=coeffs, params=params, init=config.init)


def run_chain(dataset: ExpressionDataset, prior: PriorConfig, config: McmcConfig,
              coeff_table: np.ndarray | None = None, params: GlobalParams | None = None,
              state: ChainState | None = None, rng: np.random.Generator | None = None) -> ChainSummary:
    """Run a full chain from the empty network and summarise the retained samples.

    ``coeff_table`` (shape ``(T-1, K, K, 2)``) is required by the ``fixed``
    method and supplies the coefficients of every possible regulation.
    """
    if state is None:
        state = initial_state(dataset, prior, config, coeff_table, params)
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    sampler = PcgSampler(state, config, rng, coeff_table)
    dims = state.dims
    counts = np.zeros((dims.T - 1, dims.K, dims.K + 1), dtype=np.int64)
    joint: dict[tuple, int] | None = {} if config.record_joint else None
    cols = np.arange(dims.K)
    retained = [0]

    def record(transition, inner):
        if not config.retained(inner):
            return
        row = transition - 2
        counts[row, cols, state.parents[row] + 1] += 1
        if row == 0:
            retained[0] += 1
        if joint is not None and transition == dims.T:
            key = tuple(int(x) for x in state.parents.ravel())
            joint[key] = joint.get(key, 0) + 1

    traces = {"mu": [], "sigma1_sq": [], "mu2": [], "sigma2_sq": [], "n_regulations": []}
    L = config.iterations_per_transition
    for outer in range(config.n_outer):
        sampler.outer_iteration(record)
        if (outer + 1) * L > config.burn_in:
            p = state.params
            traces["mu"].append(p.mu.copy())
            traces["sigma1_sq"].append(p.sigma1_sq)
            traces["mu2"].append(p.mu2)
            traces["sigma2_sq"].append(p.sigma2_sq)
            traces["n_regulations"].append(int(np.count_nonzero(state.parents != NOT_REGULATED_INDEX)))
    return ChainSummary(
        dims=dims,
        counts=counts,
        n_retained=retained[0],
        param_trace={k: np.asarray(v, dtype=float) for k, v in traces.items()},
        acceptance=sampler.acceptance(),
        step_sizes=tuple(sampler.steps),
        joint_counts=joint,
    )


# ---------------------------------------------------------------------------
# reporting

def extract_network(summary: ChainSummary, min_support: float = 0.15) -> tuple[RegulatoryModel, np.ndarray]:
    """Most frequent configuration per (transition, target), kept when it is a regulation with enough support.

    Ties go to "not regulated", then to the lowest source index.  Returns the
    model and a ``(T-1, K)`` support array (NaN where no edge is reported).
    """
    if not 0.0 <= min_support <= 1.0:
        raise ValueError(f"min_support must lie in [0, 1], got {min_support}")
    best = np.argmax(summary.counts, axis=2)  # first maximum: column 0, then lowest source
    freq = np.take_along_axis(summary.frequencies, best[..., None], axis=2)[..., 0]
    keep = (best > 0) & (freq >= min_support)
    parents = np.where(keep, best - 1, NOT_REGULATED_INDEX)
    support = np.where(keep, freq, np.nan)
    return RegulatoryModel(summary.dims, parents), support


def frequency_table(summary: ChainSummary, transition: int, target) -> dict[str, float]:
    """Nonzero configuration frequencies of one target, keyed by ``"none"`` or the source label ``"g,r"``."""
    dims = summary.dims
    k = target if isinstance(target, (int, np.integer)) else TargetId(*target).index(dims)
    freq = summary.frequencies[transition - 2, k]
    out = {}
    for col in np.flatnonzero(freq > 0):
        label = "none" if col == 0 else str(TargetId.from_index(int(col) - 1, dims))
        out[label] = float(freq[col])
    return out


# ---------------------------------------------------------------------------
# exact enumeration (test oracle)

def _fixed_target_loglik(values: np.ndarray, death: np.ndarray, k: int, source: int, coeff_table: np.ndarray,
                         params: GlobalParams) -> float:
    """Gaussian log-likelihood of target ``k``'s 1->2 increments, summed person by person."""
    total = 0.0
    s2 = params.sigma2_sq
    for e in range(values.shape[0]):
        if death[e] < 2:
            continue
        inc = values[e, 1, k] - values[e, 0, k]
        if source == NOT_REGULATED_INDEX:
            mean = params.mu2
        else:
            a, b = coeff_table[k, source]
            mean = a + b * values[e, 0, source]
        total += -0.5 * (np.log(2 * np.pi * s2) + (inc - mean) ** 2 / s2)
    return total


def enumerate_exact_posterior(dataset: ExpressionDataset, coeff_table: np.ndarray, params: GlobalParams,
                              prior: PriorConfig | None = None, max_models: int = 10 ** 6) -> dict[tuple, float]:
    """Exact posterior over every two-stage model with coefficients fixed at ``coeff_table[k, s]``.

    Uses the complete ``dataset.values`` (latent cells included).  Keys are
    tuples of per-target source indices (-1 = not regulated).
    """
    dims = dataset.dims
    prior = prior or PriorConfig()
    if dims.T != 2:
        raise ValueError("enumeration supports two-stage instances only")
    if dims.K > 4 or dims.K ** dims.K > max_models:
        raise ValueError(f"too many models to enumerate for K={dims.K}")
    if np.isnan(dataset.values[dataset.produced]).any():
        raise ValueError("enumeration needs every produced cell filled")
    table = np.asarray(coeff_table)
    if table.ndim == 4:
        table = table[0]
    log_prior = config_log_prior(dims, prior.model_prior)
    per_target = np.full((dims.K, dims.K + 1), -np.inf)
    for k in range(dims.K):
        for col in range(dims.K + 1):
            if col - 1 == k or not np.isfinite(log_prior[k, col]):
                continue
            per_target[k, col] = log_prior[k, col] + _fixed_target_loglik(
                dataset.values, dataset.death_stage, k, col - 1, table, params)
    models, logp = [], []
    for combo in itertools.product(range(dims.K + 1), repeat=dims.K):
        lp = sum(per_target[k, c] for k, c in enumerate(combo))
        if np.isfinite(lp):
            models.append(tuple(c - 1 for c in combo))
            logp.append(lp)
    logp = np.asarray(logp)
    probs = np.exp(logp - logsumexp(logp))
    return dict(zip(models, probs.tolist()))


def marginal_config_probs(joint: dict[tuple, float], K: int) -> np.ndarray:
    """Per-target configuration marginals ``(K, K + 1)`` of a distribution over two-stage models."""
    out = np.zeros((K, K + 1))
    for model, p in joint.items():
        for k, s in enumerate(model):
            out[k, s + 1] += p
    return out


def total_variation(p: dict[tuple, float], q: dict[tuple, float]) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(m, 0.0) - q.get(m, 0.0)) for m in keys)
