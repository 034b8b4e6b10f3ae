"""Marginal likelihoods of a target's stacked increments under each regulator configuration.

For a regulated target the coefficients ``(a, b)`` are integrated out against
their Gaussian prior and the shared coefficient variance ``s2`` against its
inverse-gamma conditional given every other regulation.  Three evaluation
methods are available:

``exact``
    Gaussian marginal in ``(a, b)`` in closed form, then one-dimensional
    trapezoid quadrature over ``log s2``.  This is the exact collapsed
    marginal (up to quadrature error far below 1e-8).
``student_t``
    The multivariate-t closed form whose scale matrix is
    ``(4 v lam + C) / (v + 2 N) * (sigma2^2 I + X V X')``.
``fixed``
    Plain Gaussian likelihood at coefficients taken from a lookup table; the
    configuration posterior then matches brute-force enumeration with frozen
    coefficients.

All rank-two algebra goes through the 2x2 sufficient statistics of the
scaled design ``W = X diag(sqrt(V_a), sqrt(V_b'))`` so every candidate source
costs O(1) after one O(n K^2) pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import gammaln, logsumexp

from .model import PriorConfig
from .state import ChainState

METHODS = ("exact", "student_t", "fixed")
LOG_2PI = float(np.log(2 * np.pi))


def _target(state: ChainState, target) -> int:
    return state.target_index(target)


# ---------------------------------------------------------------------------
# reference implementations (dense linear algebra, used directly by tests)

@dataclass(frozen=True)
class MultivariateTMarginal:
    """Multivariate Student-t density ``t_dof(location, scale)``."""

    dof: float
    location: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        scale = np.atleast_2d(np.asarray(self.scale, dtype=float))
        if scale.shape[0] != scale.shape[1] or not np.allclose(scale, scale.T, rtol=1e-10, atol=0):
            raise ValueError("scale matrix must be square and symmetric")
        try:
            cho_factor(scale, lower=True)
        except LinAlgError as exc:
            raise ValueError("scale matrix is not positive definite") from exc
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "location", np.asarray(self.location, dtype=float))

    def logpdf(self, y) -> float:
        y = np.asarray(y, dtype=float)
        n = y.size
        c, low = cho_factor(self.scale, lower=True)
        r = y - self.location
        quad = float(r @ cho_solve((c, low), r))
        logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
        nu = self.dof
        return float(gammaln((nu + n) / 2) - gammaln(nu / 2) - 0.5 * n * np.log(nu * np.pi)
                     - 0.5 * logdet - 0.5 * (nu + n) * np.log1p(quad / nu))

    @classmethod
    def for_regulation(cls, state: ChainState, target, source, transition: int,
                       prior: PriorConfig | None = None) -> "MultivariateTMarginal":
        prior = prior or state.prior
        k, s = _target(state, target), _target(state, source)
        y, x = state.increments(transition)
        X = np.column_stack([np.ones(y.shape[0]), x[:, s]])
        n_other, c_other = state.others(transition)
        nu = prior.v + 2 * n_other[k]
        big = 4 * prior.v * prior.lam + c_other[k]
        V = np.diag([prior.V_a, prior.slope_scale])
        cov = state.params.sigma2_sq * np.eye(y.shape[0]) + X @ V @ X.T
        return cls(nu, X @ np.array([prior.alpha_a, prior.alpha_b]), big / nu * cov)


def null_marginal_loglik(target, transition: int, state: ChainState) -> float:
    """Log-likelihood of a target's increments when it is not regulated."""
    k = _target(state, target)
    y, _ = state.increments(transition)
    r = y[:, k] - state.params.mu2
    s2 = state.params.sigma2_sq
    return float(-0.5 * (r.size * (LOG_2PI + np.log(s2)) + r @ r / s2))


def regulated_marginal_loglik(target, source, transition: int, state: ChainState,
                              prior: PriorConfig | None = None, method: str = "exact") -> float:
    """Collapsed log marginal of a target's increments when ``source`` regulates it."""
    if method not in ("exact", "student_t"):
        raise ValueError(f"method must be 'exact' or 'student_t', got {method!r}")
    if prior is not None and prior is not state.prior:
        state = ChainState(state.dims, state.person_ids, state.death, state.values, state.observed,
                           state.parents, state.coef, state.params, prior)
    k, s = _target(state, target), _target(state, source)
    if k == s:
        raise ValueError("a target cannot regulate itself")
    lik = TransitionLikelihood(state, transition, method=method)
    n_other, c_other = state.others(transition)
    return float(config_loglik(lik, state, n_other, c_other, targets=[k])[0, 1 + s])


# ---------------------------------------------------------------------------
# vectorised engine

def _quad_stats(y, x, prior: PriorConfig):
    """2x2 statistics of ``W`` and residual projections for every (target, source) pair.

    Returns arrays indexed ``[k, s]``: ``S11, S12, S22, g1, g2, rr`` and ``n``.
    """
    n = y.shape[0]
    aa, ab = prior.alpha_a, prior.alpha_b
    va, vb = prior.V_a, prior.slope_scale
    sy = y.sum(axis=0)  # (K,) by target
    syy = np.einsum("ik,ik->k", y, y)
    sx = x.sum(axis=0)  # by source
    sxx = np.einsum("is,is->s", x, x)
    sxy = y.T @ x  # [k, s]
    sum_r = sy[:, None] - n * aa - ab * sx[None, :]
    sum_xr = sxy - aa * sx[None, :] - ab * sxx[None, :]
    rr = (syy[:, None] + n * aa * aa + ab * ab * sxx[None, :] - 2 * aa * sy[:, None]
          - 2 * ab * sxy + 2 * aa * ab * sx[None, :])
    K = y.shape[1]
    S11 = np.full((K, K), n * va)
    S12 = np.broadcast_to(np.sqrt(va * vb) * sx[None, :], (K, K))
    S22 = np.broadcast_to(vb * sxx[None, :], (K, K))
    g1 = np.sqrt(va) * sum_r
    g2 = np.sqrt(vb) * sum_xr
    return n, S11, S12, S22, g1, g2, np.maximum(rr, 0.0)


def _gauss_logf(n, S11, S12, S22, g1, g2, rr, rho, s2):
    """log N(y; X alpha, s2 I + sigma^2 X V X') with ``rho = sigma^2 / s2`` (broadcasts over ``rho``)."""
    det_s = np.maximum(S11 * S22 - S12 * S12, 0.0)
    D = 1.0 + rho * (S11 + S22) + rho * rho * det_s
    red = rho * ((1 + rho * S22) * g1 * g1 - 2 * rho * S12 * g1 * g2 + (1 + rho * S11) * g2 * g2) / D
    quad = np.maximum(rr - red, 0.0)
    return -0.5 * (n * (LOG_2PI + np.log(s2)) + np.log(D) + quad / s2)


class TransitionLikelihood:
    """Per-transition cache of every target's configuration log-likelihoods.

    Data, ``mu2`` and ``sigma2^2`` are frozen at construction; only the
    coefficient-prior summaries ``(N, C)`` of the other regulations vary
    between calls, which is exactly what changes inside a transition sweep.
    """

    def __init__(self, state: ChainState, transition: int, method: str = "exact",
                 coeff_table: np.ndarray | None = None, step: float = 0.25):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
        self.method = method
        self.prior = prior = state.prior
        self.transition = transition
        self.K = K = state.dims.K
        self.s2 = s2 = float(state.params.sigma2_sq)
        y, x = state.increments(transition)
        self.n = n = y.shape[0]
        r0 = y - state.params.mu2
        self.null = -0.5 * (n * (LOG_2PI + np.log(s2)) + np.einsum("ik,ik->k", r0, r0) / s2)
        self.raw = (n, y.sum(axis=0), x.sum(axis=0), np.einsum("is,is->s", x, x), y.T @ x,
                    np.einsum("ik,ik->k", y, y))
        self._self_mask = np.eye(K, dtype=bool)
        if method == "fixed":
            if coeff_table is None:
                raise ValueError("the fixed method needs a coefficient table of shape (K, K, 2)")
            a = coeff_table[..., 0]
            b = coeff_table[..., 1]
            _, sy, sx, sxx, sxy, syy = self.raw
            ss = (syy[:, None] + n * a * a + b * b * sxx[None, :] - 2 * a * sy[:, None]
                  - 2 * b * sxy + 2 * a * b * sx[None, :])
            self.fixed = -0.5 * (n * (LOG_2PI + np.log(s2)) + ss / s2)
            self.coeff_table = coeff_table
            return
        self.stats = _quad_stats(y, x, prior)
        self.det_s = prior.V_a * prior.slope_scale * n * np.sum((x - x.mean(axis=0)) ** 2, axis=0) if n else np.zeros(K)
        if method == "exact":
            self.step = step
            self._build_grid(state)

    def regression_stats(self, k: int, s: int):
        """Raw sums ``(n, sum y, sum x, sum x^2, sum x y, sum y^2)`` of target ``k`` on source ``s``."""
        n, sy, sx, sxx, sxy, syy = self.raw
        return n, sy[k], sx[s], sxx[s], sxy[k, s], syy[k]

    # -- quadrature grid ------------------------------------------------------

    def _build_grid(self, state: ChainState, request=None):
        """Quadrature nodes valid for a box of inverse-gamma shapes and scales.

        The box is centred on the current regulation count and quadratic form
        (or on ``request = (kappa_min, kappa_max, beta_min, beta_max)``) with
        slack, so that a transition sweep rarely needs a rebuild.
        """
        prior = self.prior
        if request is None:
            n_tot, c_tot = state.coef_totals()
            q_max = float(state.coef_deviations().max(initial=0.0))
            k_lo = prior.coef_ig_shape + max(n_tot - 1, 0)
            k_hi = prior.coef_ig_shape + n_tot
            b_lo = prior.coef_ig_scale + 0.5 * max(c_tot - q_max, 0.0)
            b_hi = prior.coef_ig_scale + 0.5 * c_tot
        else:
            k_lo, k_hi, b_lo, b_hi = request
        self.kappa_box = (max(prior.coef_ig_shape, k_lo - 4), k_hi + 4)
        self.beta_box = (prior.coef_ig_scale + (b_lo - prior.coef_ig_scale) / 1.5, 1.5 * b_hi)
        k_lo, k_hi = self.kappa_box
        b_lo, b_hi = self.beta_box
        # the integrand peaks between the inverse-gamma mode and the variance favoured by the data,
        # which is of the order of the squared norm of the scaled least-squares coefficient deviation
        n, S11, S12, S22, g1, g2, rr = self.stats
        det_s = S11 * S22 - S12 * S12
        ok = det_s > 1e-10 * S11 * S22
        with np.errstate(divide="ignore", invalid="ignore"):
            phi1 = np.where(ok, (S22 * g1 - S12 * g2) / det_s, g1 / (S11 + S22))
            phi2 = np.where(ok, (S11 * g2 - S12 * g1) / det_s, g2 / (S11 + S22))
        data_scale = float(np.nanmax(phi1 * phi1 + phi2 * phi2, initial=0.0))
        # tails: the inverse gamma in u decays like exp(-kappa (e^d - 1 - d)) below its mode
        # and like exp(-kappa d) above it; both margins leave less than e^-34 of the mass outside
        below = np.log(34.0 / k_lo + 1.0) + 1.5
        above = 34.0 / k_lo + 2.0
        self.u_lo = np.log(b_lo / k_hi) - below
        self.u_hi = min(max(np.log(b_hi / k_lo), np.log(max(data_scale, 1e-300))) + above, self.u_lo + 80.0)
        # trapezoid error on an analytic peak of width 1/sqrt(kappa) is ~exp(-2 pi^2 / (h^2 kappa))
        h = min(self.step, 1.0 / np.sqrt(k_hi))
        m = int(np.ceil((self.u_hi - self.u_lo) / h)) + 1
        self.u = np.linspace(self.u_lo, self.u_hi, m)
        self.h = (self.u_hi - self.u_lo) / (m - 1)
        wts = np.full(m, self.h)
        wts[0] = wts[-1] = self.h / 2
        self.log_w = np.log(wts)
        rho = np.exp(self.u) / self.s2
        e = lambda a: a[..., None]  # noqa: E731
        self.logf = _gauss_logf(n, e(S11), e(S12), e(S22), e(g1), e(g2), e(rr), rho, self.s2)
        self.logf_max = self.logf.max(axis=-1)
        self.F = np.exp(self.logf - self.logf_max[..., None])

    def _log_ig(self, n_other, c_other):
        """log IG density in ``u = log s2`` (including the Jacobian) plus trapezoid weights, (K', M)."""
        p = self.prior
        kappa = p.coef_ig_shape + np.asarray(n_other, dtype=float)[:, None]
        beta = p.coef_ig_scale + 0.5 * np.asarray(c_other, dtype=float)[:, None]
        u = self.u[None, :]
        return kappa * np.log(beta) - gammaln(kappa) - kappa * u - beta * np.exp(-u) + self.log_w

    # -- evaluation -----------------------------------------------------------

    def config_loglik(self, n_other, c_other, targets=None) -> np.ndarray:
        """Log-likelihood of each configuration, shape ``(len(targets), K + 1)``.

        Column 0 is "not regulated", column ``1 + s`` regulation by ``s``; the
        self column is ``-inf``.  ``n_other``/``c_other`` hold, per target,
        the count and summed prior quadratic form of all other regulations.
        """
        idx = np.arange(self.K) if targets is None else np.asarray(targets, dtype=int)
        n_other = np.asarray(n_other)[idx] if np.size(n_other) == self.K else np.asarray(n_other)
        c_other = np.asarray(c_other)[idx] if np.size(c_other) == self.K else np.asarray(c_other)
        out = np.empty((idx.size, self.K + 1))
        out[:, 0] = self.null[idx]
        if self.method == "fixed":
            reg = self.fixed[idx]
        elif self.method == "student_t":
            reg = self._student_t(idx, n_other, c_other)
        else:
            reg = self._exact(idx, n_other, c_other)
        reg = np.where(self._self_mask[idx], -np.inf, reg)
        out[:, 1:] = reg
        return out

    def _exact(self, idx, n_other, c_other):
        p = self.prior
        kappa = p.coef_ig_shape + np.asarray(n_other, dtype=float)
        beta = p.coef_ig_scale + 0.5 * np.asarray(c_other, dtype=float)
        k_min, k_max, b_min, b_max = kappa.min(), kappa.max(), beta.min(), beta.max()
        if (k_min < self.kappa_box[0] or k_max > self.kappa_box[1]
                or b_min < self.beta_box[0] or b_max > self.beta_box[1]):
            raise _GridTooNarrow((k_min, k_max, b_min, b_max))
        lw = self._log_ig(n_other, c_other)  # (k', M)
        lw_max = lw.max(axis=1)
        w = np.exp(lw - lw_max[:, None])
        with np.errstate(divide="ignore"):
            acc = np.matmul(self.F[idx], w[:, :, None])[..., 0]
            res = np.log(acc) + self.logf_max[idx] + lw_max[:, None]
        bad = ~(acc > 1e-250)
        bad &= ~self._self_mask[idx]
        if bad.any():
            for i, s in zip(*np.nonzero(bad)):
                res[i, s] = logsumexp(self.logf[idx[i], s] + lw[i])
        return res

    def _student_t(self, idx, n_other, c_other):
        n, S11, S12, S22, g1, g2, rr = (a if np.isscalar(a) else a[idx] for a in self.stats)
        p = self.prior
        nu = (p.v + 2 * np.asarray(n_other, dtype=float))[:, None]
        big = (4 * p.v * p.lam + np.asarray(c_other, dtype=float))[:, None]
        rho = 1.0 / self.s2
        det_s = np.maximum(S11 * S22 - S12 * S12, 0.0)
        D = 1.0 + rho * (S11 + S22) + rho * rho * det_s
        red = rho * ((1 + rho * S22) * g1 * g1 - 2 * rho * S12 * g1 * g2 + (1 + rho * S11) * g2 * g2) / D
        q = np.maximum(rr - red, 0.0) / self.s2
        return (gammaln((nu + n) / 2) - gammaln(nu / 2) - 0.5 * n * np.log(np.pi)
                - 0.5 * (n * np.log(self.s2) + np.log(D)) + 0.5 * nu * np.log(big)
                - 0.5 * (nu + n) * np.log(big + q))

    # -- coefficient draws ----------------------------------------------------

    def _coefficient_mixture(self, k: int, s: int, n_other: float, c_other: float):
        """Normalised log weights, means and covariances of the standardised coefficients per sigma^2 node."""
        p = self.prior
        n, S11, S12, S22, g1, g2, _ = (a if np.isscalar(a) else a[k, s] for a in self.stats)
        if self.method == "exact":
            logp = self.logf[k, s] + self._log_ig([n_other], [c_other])[0]
            u_nodes = self.u
        else:
            # the t-form has no explicit grid; integrate on a local one
            kappa = p.coef_ig_shape + n_other
            beta = p.coef_ig_scale + 0.5 * c_other
            u_nodes = np.linspace(np.log(beta) - np.log(kappa + 1) - 8, np.log(beta) + 45, 800)
            rho = np.exp(u_nodes) / self.s2
            logp = (_gauss_logf(n, S11, S12, S22, g1, g2, self.stats[6][k, s], rho, self.s2)
                    - kappa * u_nodes - beta * np.exp(-u_nodes))
        logw = logp - logsumexp(logp)
        rho = np.exp(u_nodes) / self.s2
        # per node: phi ~ N(rho M^{-1} g, s2 rho M^{-1}) with M = I + rho S
        M = np.empty((rho.size, 2, 2))
        M[:, 0, 0], M[:, 0, 1], M[:, 1, 1] = 1 + rho * S11, rho * S12, 1 + rho * S22
        M[:, 1, 0] = M[:, 0, 1]
        return logw, rho, M, np.array([g1, g2])

    def _standardise(self):
        p = self.prior
        return np.array([p.alpha_a, p.alpha_b]), np.sqrt(np.array([p.V_a, p.slope_scale]))

    def draw_coefficients(self, k: int, s: int, n_other: float, c_other: float,
                          rng: np.random.Generator) -> tuple[float, float]:
        """Draw ``(a, b)`` from its conditional posterior given the target's increments.

        With the ``fixed`` method the tabulated coefficients are returned.
        """
        if self.method == "fixed":
            a, b = self.coeff_table[k, s]
            return float(a), float(b)
        logw, rho, M, g = self._coefficient_mixture(k, s, n_other, c_other)
        w = np.exp(logw)
        i = rng.choice(w.size, p=w / w.sum())
        Minv = np.linalg.inv(M[i])
        cov = self.s2 * rho[i] * Minv
        phi = rng.multivariate_normal(rho[i] * Minv @ g, (cov + cov.T) / 2, method="cholesky")
        loc, scale = self._standardise()
        a, b = loc + scale * phi
        return float(a), float(b)

    def coefficient_mean(self, k: int, s: int, n_other: float, c_other: float) -> np.ndarray:
        """Mean of :meth:`draw_coefficients` as an ``(a, b)`` array."""
        if self.method == "fixed":
            return np.asarray(self.coeff_table[k, s], dtype=float)
        logw, rho, M, g = self._coefficient_mixture(k, s, n_other, c_other)
        det_m = M[:, 0, 0] + M[:, 1, 1] - 1 + rho ** 2 * self.det_s[s]
        w = np.exp(logw)
        phi = np.array([np.sum(w * rho * (M[:, 1, 1] * g[0] - M[:, 0, 1] * g[1]) / det_m),
                        np.sum(w * rho * (M[:, 0, 0] * g[1] - M[:, 0, 1] * g[0]) / det_m)])
        loc, scale = self._standardise()
        return loc + scale * phi

    def coefficient_logpdf(self, k: int, s: int, n_other: float, c_other: float, a: float, b: float) -> float:
        """Log density of :meth:`draw_coefficients` at ``(a, b)`` (0 for the ``fixed`` method)."""
        if self.method == "fixed":
            return 0.0
        logw, rho, M, g = self._coefficient_mixture(k, s, n_other, c_other)
        loc, scale = self._standardise()
        phi = (np.array([a, b]) - loc) / scale
        # 1 + rho tr S + rho^2 det S, with det S from centred sums to avoid cancellation
        det_m = M[:, 0, 0] + M[:, 1, 1] - 1 + rho ** 2 * self.det_s[s]
        mean0 = rho * (M[:, 1, 1] * g[0] - M[:, 0, 1] * g[1]) / det_m
        mean1 = rho * (M[:, 0, 0] * g[1] - M[:, 0, 1] * g[0]) / det_m
        d0, d1 = phi[0] - mean0, phi[1] - mean1
        quad = (M[:, 0, 0] * d0 ** 2 + 2 * M[:, 0, 1] * d0 * d1 + M[:, 1, 1] * d1 ** 2) / (self.s2 * rho)
        log_det_cov = 2 * np.log(self.s2 * rho) - np.log(det_m)
        comp = -np.log(2 * np.pi) - 0.5 * log_det_cov - 0.5 * quad
        return float(logsumexp(logw + comp) - np.log(scale).sum())


class _GridTooNarrow(Exception):
    def __init__(self, request):
        super().__init__(f"inverse-gamma parameters {request} fall outside the quadrature box")
        self.request = request


def config_loglik(lik: TransitionLikelihood, state: ChainState, n_other, c_other, targets=None):
    """``lik.config_loglik`` that rebuilds the quadrature grid when the request leaves its box."""
    try:
        return lik.config_loglik(n_other, c_other, targets)
    except _GridTooNarrow as exc:
        lik._build_grid(state, exc.request)
        return lik.config_loglik(n_other, c_other, targets)


def model_config_posterior(target, transition: int, state: ChainState, prior: PriorConfig | None = None,
                           method: str = "exact", coeff_table: np.ndarray | None = None) -> np.ndarray:
    """Posterior over a target's configurations, length ``K + 1`` (0 = not regulated, ``1 + s`` = source ``s``).

    The target's own column is always 0.  Other regulations enter through
    their current coefficients.
    """
    if prior is not None and prior is not state.prior:
        state = ChainState(state.dims, state.person_ids, state.death, state.values, state.observed,
                           state.parents, state.coef, state.params, prior)
    k = _target(state, target)
    lik = TransitionLikelihood(state, transition, method=method, coeff_table=coeff_table)
    n_other, c_other = state.others(transition)
    ll = config_loglik(lik, state, n_other, c_other, targets=[k])[0] + state.log_prior[k]
    return np.exp(ll - logsumexp(ll))


__all__ = [
    "METHODS", "MultivariateTMarginal", "TransitionLikelihood", "config_loglik", "model_config_posterior",
    "null_marginal_loglik", "regulated_marginal_loglik",
]
