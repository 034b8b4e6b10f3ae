"""Repeated inference on weighted random gene/region subsets of a wide dataset."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .baselines import pearson_columns
from .mcmc import McmcConfig, extract_network, run_chain
from .model import NOT_REGULATED_INDEX, ExpressionDataset, PriorConfig, TargetId
from .report import Edge, NetworkReport, TransitionEdges


@dataclass(frozen=True)
class SubsampleConfig:
    """``N_M`` sub-runs, each on ``G`` of ``N_G`` genes and ``R`` of ``N_R`` regions."""

    N_G: int
    N_R: int
    N_M: int = 10
    G: int = 15
    R: int = 5
    alpha: float = 0.05  # significance level of the per-region change tests

    def __post_init__(self):
        if not (1 <= self.G <= self.N_G and 1 <= self.R <= self.N_R):
            raise ValueError(f"need 1 <= G <= N_G and 1 <= R <= N_R, got G={self.G}, N_G={self.N_G}, "
                             f"R={self.R}, N_R={self.N_R}")
        if self.N_M < 1:
            raise ValueError("N_M must be >= 1")
        if self.G * self.R < 2:
            raise ValueError("a sub-run needs at least two targets")


def _measured(dataset: ExpressionDataset) -> np.ndarray:
    """``(N, G, R)`` death-stage values, NaN where unmeasured."""
    N = dataset.n_persons
    idx = dataset.death_stage - 1
    vals = dataset.values[np.arange(N), idx]
    obs = dataset.observed[np.arange(N), idx]
    return np.where(obs, vals, np.nan).reshape(N, dataset.dims.G, dataset.dims.R)


def gene_correlations(dataset: ExpressionDataset) -> np.ndarray:
    """``G x G`` correlations of the genes' pooled death-stage values over all (person, region) cells."""
    x = _measured(dataset)
    G = dataset.dims.G
    pooled = x.transpose(1, 0, 2).reshape(G, -1)
    cor = np.zeros((G, G))
    for i in range(G):
        for m in range(i + 1, G):
            use = ~np.isnan(pooled[i]) & ~np.isnan(pooled[m])
            cor[i, m] = cor[m, i] = pearson_columns(pooled[i, use], pooled[m, use])[0]
    return cor


def gene_weights(dataset: ExpressionDataset) -> np.ndarray:
    """Sum of each gene's correlations with the other genes, floored at zero."""
    return np.clip(gene_correlations(dataset).sum(axis=1), 0.0, None)


def region_change_pvalues(dataset: ExpressionDataset) -> np.ndarray:
    """Welch-test p-values of stage-``t`` versus stage-1 measurements, shape ``(T-1, G, R)``.

    NaN where either group has fewer than two measurements.
    """
    x = _measured(dataset)
    dims = dataset.dims
    base = x[dataset.death_stage == 1]
    out = np.full((dims.T - 1, dims.G, dims.R), np.nan)
    for t in dims.transitions:
        cur = x[dataset.death_stage == t]
        for g in range(dims.G):
            for r in range(dims.R):
                a, b = cur[:, g, r], base[:, g, r]
                a, b = a[~np.isnan(a)], b[~np.isnan(b)]
                if a.size < 2 or b.size < 2 or (np.ptp(a) == 0 and np.ptp(b) == 0):
                    continue
                out[t - 2, g, r] = stats.ttest_ind(a, b, equal_var=False).pvalue
    return out


def region_weights(dataset: ExpressionDataset, alpha: float = 0.05) -> np.ndarray:
    """Number of significant changes per region, counted over genes and stages."""
    p = region_change_pvalues(dataset)
    return np.sum(np.nan_to_num(p, nan=1.0) <= alpha, axis=(0, 1)).astype(float)


def weighted_subset(rng: np.random.Generator, weights: np.ndarray, size: int) -> np.ndarray:
    """Draw ``size`` distinct indices, each draw proportional to ``weights`` among those left.

    All-zero weights mean uniform sampling; when fewer than ``size`` items have
    positive weight, the rest are filled uniformly from the zero-weight items.
    Returned indices are sorted.
    """
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    if size > w.size:
        raise ValueError(f"cannot draw {size} distinct items from {w.size}")
    positive = np.flatnonzero(w > 0)
    if positive.size == 0:
        return np.sort(rng.choice(w.size, size=size, replace=False))
    take = min(size, positive.size)
    chosen = rng.choice(positive, size=take, replace=False, p=w[positive] / w[positive].sum())
    if take < size:
        rest = np.setdiff1d(np.arange(w.size), positive)
        chosen = np.concatenate([chosen, rng.choice(rest, size=size - take, replace=False)])
    return np.sort(chosen)


@dataclass(frozen=True)
class SubRun:
    run: int
    genes: tuple[int, ...]  # 0-based indices into the full dataset
    regions: tuple[int, ...]
    edges: tuple[tuple[int, TargetId, TargetId, float], ...]  # (stage_to, target, source, support), 1-based labels


def _sub_run(args) -> SubRun:
    dataset, genes, regions, prior, mcmc, min_support, run, seed = args
    sub = dataset.subset(genes, regions)
    summary = run_chain(sub, prior, mcmc, rng=np.random.default_rng(np.random.SeedSequence([seed, run, 1])))
    model, support = extract_network(summary, min_support)
    dims = sub.dims
    edges = []
    for row, t in enumerate(dims.transitions):
        for k in np.flatnonzero(model.parents[row] != NOT_REGULATED_INDEX):
            s = int(model.parents[row, k])
            target = TargetId(genes[k // dims.R] + 1, regions[k % dims.R] + 1)
            source = TargetId(genes[s // dims.R] + 1, regions[s % dims.R] + 1)
            edges.append((t, target, source, float(support[row, k])))
    return SubRun(run, tuple(genes), tuple(regions), tuple(edges))


def merge_runs(runs: list[SubRun], T: int) -> NetworkReport:
    """Union of the sub-run edges.

    Every (transition, target, source) is reported once, with the support of
    each run that found it and their mean as the headline support.  A target
    may appear with several sources when runs disagree.
    """
    found: dict[tuple[int, TargetId, TargetId], list[tuple[int, float]]] = {}
    for r in sorted(runs, key=lambda r: r.run):
        for t, target, source, support in r.edges:
            found.setdefault((t, target, source), []).append((r.run, support))
    transitions = []
    for t in range(2, T + 1):
        keys = sorted(k for k in found if k[0] == t)
        edges = tuple(Edge(target, source, float(np.mean([s for _, s in found[(t, target, source)]])),
                           tuple(found[(t, target, source)]))
                      for _, target, source in keys)
        transitions.append(TransitionEdges(t - 1, t, edges))
    meta = {"runs": [{"run": r.run, "genes": [g + 1 for g in r.genes], "regions": [x + 1 for x in r.regions]}
                     for r in sorted(runs, key=lambda r: r.run)]}
    return NetworkReport(tuple(transitions), {}, meta)


def subsample_runs(dataset: ExpressionDataset, config: SubsampleConfig, mcmc: McmcConfig,
                   prior: PriorConfig | None = None, seed: int = 0, threads: int = 1,
                   min_support: float = 0.15) -> NetworkReport:
    """Weighted subset selection, ``N_M`` independent chains, and a merged edge report."""
    dims = dataset.dims
    if (dims.G, dims.R) != (config.N_G, config.N_R):
        raise ValueError(f"dataset has {dims.G} genes and {dims.R} regions, config expects "
                         f"{config.N_G} and {config.N_R}")
    prior = prior or PriorConfig()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    gw, rw = gene_weights(dataset), region_weights(dataset, config.alpha)
    tasks = []
    for run in range(config.N_M):
        genes = [int(g) for g in weighted_subset(rng, gw, config.G)]
        regions = [int(r) for r in weighted_subset(rng, rw, config.R)]
        tasks.append((dataset, genes, regions, prior, mcmc, min_support, run, seed))
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(tasks))) as pool:
            runs = list(pool.map(_sub_run, tasks))
    else:
        runs = [_sub_run(t) for t in tasks]
    report = merge_runs(runs, dims.T)
    meta = dict(report.meta)
    meta.update(gene_weights=gw, region_weights=rw, seed=seed)
    return NetworkReport(report.transitions, report.params, meta)
