"""Correlation-threshold comparison methods and the imputers they rely on.

Three variants:

* ``P1`` uses measured values only, pairing the stage ``t-1`` and stage ``t``
  death cohorts person by person after sorting each by id.
* ``P2`` correlates complete stage-``t`` columns after mean imputation.
* ``P3`` does the same after iterative random-forest imputation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import RandomForestRegressor

from .model import NOT_REGULATED_INDEX, Dims, ExpressionDataset, RegulatoryModel

THRESHOLD = 0.5
MODES = ("P1", "P2", "P3")


@dataclass(frozen=True, eq=False)
class ImputedTensor:
    """Complete ``(N, T, K)`` values for every person and every stage, including stages after death."""

    dims: Dims
    person_ids: tuple[str, ...]
    death_stage: np.ndarray
    values: np.ndarray
    imputed: np.ndarray  # True where the value was filled in

    def __post_init__(self):
        if np.isnan(self.values).any():
            raise ValueError("an imputed tensor cannot contain missing values")

    @property
    def observed(self) -> np.ndarray:
        return ~self.imputed


def _observed_grid(dataset: ExpressionDataset) -> tuple[np.ndarray, np.ndarray]:
    """Flatten to persons x (stage, target) columns with NaN in every unmeasured cell."""
    N, T, K = dataset.values.shape
    x = np.where(dataset.observed, dataset.values, np.nan).reshape(N, T * K)
    return x, dataset.observed.reshape(N, T * K)


def _column_means(x: np.ndarray, obs: np.ndarray, dims: Dims) -> np.ndarray:
    counts = obs.sum(axis=0)
    if np.any(counts == 0):
        col = int(np.flatnonzero(counts == 0)[0])
        stage, k = divmod(col, dims.K)
        g, r = divmod(k, dims.R)
        raise ValueError(f"no measurement of gene {g + 1}, region {r + 1} at stage {stage + 1}; cannot impute")
    return np.where(obs, x, 0.0).sum(axis=0) / counts


def _tensor(dataset: ExpressionDataset, flat: np.ndarray, obs: np.ndarray) -> ImputedTensor:
    N, T, K = dataset.values.shape
    values = flat.reshape(N, T, K)
    # measured cells are copied back so that no arithmetic can touch them
    values = np.where(dataset.observed, dataset.values, values)
    return ImputedTensor(dataset.dims, dataset.person_ids, dataset.death_stage.copy(), values,
                         ~obs.reshape(N, T, K))


def impute_mean(dataset: ExpressionDataset) -> ImputedTensor:
    """Fill every unmeasured cell with the mean of the measured values of its (stage, target) column."""
    x, obs = _observed_grid(dataset)
    means = _column_means(x, obs, dataset.dims)
    return _tensor(dataset, np.where(obs, x, means[None, :]), obs)


def impute_random_forest(dataset: ExpressionDataset, trees: int = 100, max_iters: int = 10,
                         rng: np.random.Generator | None = None, max_features: str | float = "sqrt") -> ImputedTensor:
    """Iterative random-forest imputation started from the column means.

    Each sweep refits one forest per incomplete column (fewest missing first)
    on the current completed matrix and re-predicts its missing cells.  The
    sweep stops once the relative change of the imputed cells grows, keeping
    the previous completion, or after ``max_iters`` sweeps.  Columns whose
    measured values are constant keep their mean.
    """
    if trees < 1 or max_iters < 1:
        raise ValueError("trees and max_iters must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    x, obs = _observed_grid(dataset)
    means = _column_means(x, obs, dataset.dims)
    current = np.where(obs, x, means[None, :])
    miss = ~obs
    if not miss.any():
        return _tensor(dataset, current, obs)
    n_missing = miss.sum(axis=0)
    order = [int(j) for j in np.argsort(n_missing, kind="stable") if n_missing[j] > 0]
    fittable = [j for j in order if obs[:, j].sum() >= 2 and np.ptp(x[obs[:, j], j]) > 0]
    previous_change = np.inf
    for _ in range(max_iters):
        before = current.copy()
        for j in fittable:
            rows = obs[:, j]
            others = np.delete(current, j, axis=1)
            forest = RandomForestRegressor(n_estimators=trees, max_features=max_features,
                                           random_state=int(rng.integers(2**31 - 1)), n_jobs=1)
            forest.fit(others[rows], current[rows, j])
            current[~rows, j] = forest.predict(others[~rows])
        denom = float(np.sum(current[miss] ** 2))
        change = float(np.sum((current[miss] - before[miss]) ** 2)) / denom if denom > 0 else 0.0
        if change > previous_change:
            current = before
            break
        previous_change = change
    return _tensor(dataset, current, obs)


def pearson_columns(x: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Correlation of ``x`` (length ``n``) with each column of ``Y`` (``n x m``); zero-variance pairs give 0."""
    x = np.asarray(x, dtype=float)
    Y = np.asarray(Y, dtype=float).reshape(x.size, -1)
    if x.size < 2:
        return np.zeros(Y.shape[1])
    xc = x - x.mean()
    Yc = Y - Y.mean(axis=0)
    sx = np.sqrt(xc @ xc)
    sy = np.sqrt(np.einsum("ij,ij->j", Yc, Yc))
    # spreads at rounding level count as constant
    scale = 1e-10 * np.sqrt(x.size)
    flat_x = sx <= scale * np.abs(x).max()
    flat_y = sy <= scale * np.abs(Y).max(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (xc @ Yc) / (sx * sy)
    r = np.where(flat_x | flat_y, 0.0, r)
    return np.clip(r, -1.0, 1.0)


def _decide(r: np.ndarray, k: int, self_included: bool) -> int:
    """Regulator chosen by the threshold rule; ``r[s]`` is the correlation with source ``s``."""
    a = np.abs(r)
    if not self_included:
        a = a.copy()
        a[k] = 0.0
    if np.all(a < THRESHOLD):
        return NOT_REGULATED_INDEX
    best = int(np.argmax(a))
    # the lagged target itself cannot regulate; when it wins, no cross-regulation is declared
    return NOT_REGULATED_INDEX if best == k else best


def _cohort(dataset: ExpressionDataset, stage: int) -> np.ndarray:
    members = np.flatnonzero(dataset.death_stage == stage)
    return members[np.argsort([dataset.person_ids[e] for e in members], kind="stable")]


def _pearson1(dataset: ExpressionDataset) -> RegulatoryModel:
    dims = dataset.dims
    parents = np.full((dims.T - 1, dims.K), NOT_REGULATED_INDEX)
    for t in dims.transitions:
        before, after = _cohort(dataset, t - 1), _cohort(dataset, t)
        n = min(before.size, after.size)
        before, after = before[:n], after[:n]
        prev = dataset.values[before, t - 2]
        prev_obs = dataset.observed[before, t - 2]
        cur = dataset.values[after, t - 1]
        cur_obs = dataset.observed[after, t - 1]
        for k in range(dims.K):
            r = np.zeros(dims.K)
            for s in range(dims.K):
                use = prev_obs[:, s] & cur_obs[:, k]
                r[s] = pearson_columns(cur[use, k], prev[use, s])[0]
            parents[t - 2, k] = _decide(r, k, self_included=True)
    return RegulatoryModel(dims, parents)


def _pearson_complete(tensor: ImputedTensor) -> RegulatoryModel:
    dims = tensor.dims
    parents = np.full((dims.T - 1, dims.K), NOT_REGULATED_INDEX)
    for t in dims.transitions:
        cols = tensor.values[:, t - 1, :]
        for k in range(dims.K):
            parents[t - 2, k] = _decide(pearson_columns(cols[:, k], cols), k, self_included=False)
    return RegulatoryModel(dims, parents)


def pearson_network(data: ExpressionDataset | ImputedTensor, mode: str) -> RegulatoryModel:
    """Estimate a network with the correlation-threshold rule.

    ``P1`` takes an :class:`ExpressionDataset`; ``P2``/``P3`` take the
    corresponding :class:`ImputedTensor`.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "P1":
        if not isinstance(data, ExpressionDataset):
            raise TypeError("P1 works on measured values and needs an ExpressionDataset")
        return _pearson1(data)
    if not isinstance(data, ImputedTensor):
        raise TypeError(f"{mode} needs an ImputedTensor")
    return _pearson_complete(data)


def run_baseline(dataset: ExpressionDataset, mode: str, rng: np.random.Generator | None = None,
                 trees: int = 100, max_iters: int = 10) -> RegulatoryModel:
    """Impute as the mode requires, then apply :func:`pearson_network`."""
    if mode == "P1":
        return pearson_network(dataset, "P1")
    if mode == "P2":
        return pearson_network(impute_mean(dataset), "P2")
    if mode == "P3":
        return pearson_network(impute_random_forest(dataset, trees, max_iters, rng), "P3")
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
