"""Latent trajectories integrated out analytically.

Given the model, coefficients and global parameters, each person's stage
vectors form a linear-Gaussian chain

    D_1 ~ N(mu, sigma1^2 I),   D_t = A_t D_{t-1} + c_t + eps_t,   eps_t ~ N(0, sigma2^2 I)

with ``A_t = I + B_t`` (``B_t[k, s] = b`` when ``s`` regulates ``k``) and
``c_t[k]`` equal to ``a`` or ``mu2``.  When measurements exist only at the
death stage, this gives the observed-data likelihood in closed form and an
exact joint draw of every latent cell (backward sampling from the measured
stage).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .model import NOT_REGULATED_INDEX, GlobalParams

_LOG_2PI = float(np.log(2 * np.pi))


def supports_collapsed_latent(observed: np.ndarray, death: np.ndarray) -> bool:
    """True when no cell before a person's death stage is measured."""
    T = observed.shape[1]
    before = np.arange(T)[None, :] < (death[:, None] - 1)
    return not np.any(observed & before[:, :, None])


@dataclass
class TrajectoryMoments:
    """Marginal means ``m[t]`` and covariances ``P[t]`` of the stage vectors (index ``t`` is stage ``t + 1``)."""

    A: np.ndarray  # (T-1, K, K)
    m: np.ndarray  # (T, K)
    P: np.ndarray  # (T, K, K)

    @classmethod
    def build(cls, parents: np.ndarray, coef: np.ndarray, params: GlobalParams,
              base: "TrajectoryMoments | None" = None, from_row: int = 0) -> "TrajectoryMoments":
        """Propagate moments through every transition.

        With ``base``, transitions before ``from_row`` are taken to be
        unchanged and their moments are reused.
        """
        n_rows, K = parents.shape
        T = n_rows + 1
        if base is None:
            from_row = 0
            A = np.broadcast_to(np.eye(K), (n_rows, K, K)).copy()
            m = np.empty((T, K))
            P = np.empty((T, K, K))
            m[0] = params.mu_flat
            P[0] = params.sigma1_sq * np.eye(K)
        else:
            A, m, P = base.A.copy(), base.m.copy(), base.P.copy()
        noise = params.sigma2_sq * np.eye(K)
        for row in range(from_row, n_rows):
            A[row] = np.eye(K)
            c = np.full(K, params.mu2)
            regs = np.flatnonzero(parents[row] != NOT_REGULATED_INDEX)
            A[row, regs, parents[row, regs]] += coef[row, regs, 1]
            c[regs] = coef[row, regs, 0]
            m[row + 1] = A[row] @ m[row] + c
            P[row + 1] = A[row] @ P[row] @ A[row].T + noise
            P[row + 1] = 0.5 * (P[row + 1] + P[row + 1].T)
        return cls(A, m, P)


@dataclass
class _Cohort:
    stage: int
    mask: np.ndarray
    idx: np.ndarray
    mean: np.ndarray  # sample mean of the measured cells
    scatter: np.ndarray  # centred scatter matrix of the measured cells


class ObservedCohorts:
    """Persons grouped by death stage and measurement pattern, with their sufficient statistics."""

    def __init__(self, values: np.ndarray, observed: np.ndarray, death: np.ndarray):
        keys: dict[tuple, list[int]] = {}
        for e, t in enumerate(death):
            keys.setdefault((int(t), observed[e, t - 1].tobytes()), []).append(e)
        self.cohorts = []
        for (t, _), members in sorted(keys.items()):
            idx = np.asarray(members)
            mask = np.array(observed[idx[0], t - 1])
            x = values[idx, t - 1][:, mask]
            mean = x.mean(axis=0)
            self.cohorts.append(_Cohort(t, mask, idx, mean, (x - mean).T @ (x - mean)))
        full = [c for c in self.cohorts if c.mask.all()]
        self._partial = [c for c in self.cohorts if c.mask.any() and not c.mask.all()]
        self._stages = np.array([c.stage - 1 for c in full], dtype=np.int64)
        self._n = np.array([c.idx.size for c in full], dtype=float)
        K = values.shape[2]
        self._means = np.array([c.mean for c in full]).reshape(len(full), K)
        self._scatters = np.array([c.scatter for c in full]).reshape(len(full), K, K)
        self._const = float(-0.5 * self._n.sum() * values.shape[2] * _LOG_2PI)

    def loglik(self, moments: TrajectoryMoments) -> float:
        """Log density of all measured cells with every latent cell integrated out."""
        return float(self.loglik_batch(moments.m[None], moments.P[None])[0])

    def loglik_batch(self, m: np.ndarray, P: np.ndarray) -> np.ndarray:
        """:meth:`loglik` for a stack of moments, ``m`` of shape ``(B, T, K)`` and ``P`` of ``(B, T, K, K)``."""
        total = np.full(m.shape[0], self._const)
        if self._stages.size:
            Ps = P[:, self._stages]
            _, logdet = np.linalg.slogdet(Ps)
            Pinv = np.linalg.inv(Ps)
            diff = self._means[None] - m[:, self._stages]
            quad = (np.einsum("bfij,fji->bf", Pinv, self._scatters)
                    + self._n * np.einsum("bfi,bfij,bfj->bf", diff, Pinv, diff))
            total -= 0.5 * np.sum(self._n * logdet + quad, axis=1)
        for c in self._partial:
            n, d = c.idx.size, int(c.mask.sum())
            cov = P[:, c.stage - 1][:, c.mask][:, :, c.mask]
            diff = c.mean - m[:, c.stage - 1][:, c.mask]
            L = np.linalg.cholesky(cov)
            Linv = np.linalg.inv(L)
            z = np.einsum("bij,bj->bi", Linv, diff)
            quad = np.einsum("bij,jk,bik->b", Linv, c.scatter, Linv) + n * np.sum(z * z, axis=1)
            logdet = 2 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
            total -= 0.5 * (n * (d * _LOG_2PI + logdet) + quad)
        return total


def vary_regulation(base: TrajectoryMoments, parents: np.ndarray, coef: np.ndarray, params: GlobalParams,
                    row: int, k: int, thetas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Moments with the ``(a, b)`` of target ``k`` at ``row`` replaced by each row of ``thetas``.

    ``parents[row, k]`` names the source.  ``base`` must agree with
    ``parents`` and ``coef`` everywhere except that one pair.  Returns
    stacked means ``(B, T, K)`` and covariances ``(B, T, K, K)``.
    """
    thetas = np.asarray(thetas, dtype=float)
    B, K = thetas.shape[0], parents.shape[1]
    m = np.repeat(base.m[None], B, axis=0)
    P = np.repeat(base.P[None], B, axis=0)
    noise = params.sigma2_sq * np.eye(K)
    A = np.repeat(base.A[row][None], B, axis=0)
    A[:, k, parents[row, k]] = thetas[:, 1]
    c = np.full((B, K), params.mu2)
    regs = np.flatnonzero(parents[row] != NOT_REGULATED_INDEX)
    c[:, regs] = coef[row, regs, 0]
    c[:, k] = thetas[:, 0]
    for r in range(row, parents.shape[0]):
        if r > row:
            A = base.A[r]
            c = np.full(K, params.mu2)
            regs = np.flatnonzero(parents[r] != NOT_REGULATED_INDEX)
            c[regs] = coef[r, regs, 0]
        m[:, r + 1] = (A @ m[:, r, :, None])[..., 0] + c
        nxt = A @ P[:, r] @ np.swapaxes(A, -1, -2) + noise
        P[:, r + 1] = 0.5 * (nxt + np.swapaxes(nxt, -1, -2))
    return m, P


def observed_loglik(values: np.ndarray, observed: np.ndarray, death: np.ndarray,
                    moments: TrajectoryMoments) -> float:
    """Log density of all measured cells with every latent cell integrated out."""
    return ObservedCohorts(values, observed, death).loglik(moments)


def _backward_factors(moments: TrajectoryMoments):
    """Gain ``G_j`` and Cholesky factor of ``Cov(D_j | D_{j+1})`` for each stage ``j`` below the last."""
    out = []
    for j in range(moments.A.shape[0]):
        A, Pj, Pn = moments.A[j], moments.P[j], moments.P[j + 1]
        cross = A @ Pj  # Cov(D_{j+1}, D_j)
        G = cho_solve(cho_factor(Pn), cross).T
        cov = Pj - G @ cross
        out.append((G, np.linalg.cholesky(0.5 * (cov + cov.T))))
    return out


def sample_latent(values: np.ndarray, observed: np.ndarray, death: np.ndarray, moments: TrajectoryMoments,
                  rng: np.random.Generator, cohorts: ObservedCohorts | None = None) -> np.ndarray:
    """Exact joint draw of every latent cell; returns a new ``(N, T, K)`` array.

    Groups are visited in sorted (death stage, pattern) order and persons in
    index order, so the draw is a deterministic function of ``rng``.
    """
    out = values.copy()
    back = _backward_factors(moments)
    K = values.shape[2]
    cohorts = cohorts or ObservedCohorts(values, observed, death)
    for c in cohorts.cohorts:
        t, mask, idx = c.stage, c.mask, c.idx
        n = idx.size
        m, P = moments.m[t - 1], moments.P[t - 1]
        last = out[idx, t - 1].copy()
        miss = ~mask
        if miss.any():
            if mask.any():
                f = cho_factor(P[np.ix_(mask, mask)])
                cross = P[np.ix_(miss, mask)]
                mean = m[miss] + cho_solve(f, (last[:, mask] - m[mask]).T).T @ cross.T
                cov = P[np.ix_(miss, miss)] - cross @ cho_solve(f, cross.T)
            else:
                mean = np.broadcast_to(m[miss], (n, int(miss.sum())))
                cov = P[np.ix_(miss, miss)]
            L = np.linalg.cholesky(0.5 * (cov + cov.T))
            last[:, miss] = mean + rng.standard_normal((n, int(miss.sum()))) @ L.T
            out[idx, t - 1] = last
        nxt = last
        for j in range(t - 2, -1, -1):
            G, L = back[j]
            cur = moments.m[j] + (nxt - moments.m[j + 1]) @ G.T + rng.standard_normal((n, K)) @ L.T
            out[idx, j] = cur
            nxt = cur
    return out
