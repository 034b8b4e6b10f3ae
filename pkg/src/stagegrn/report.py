"""Detected-edge reports shared by the inference, baseline and subsampling commands."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mcmc import ChainSummary, extract_network, frequency_table
from .model import NOT_REGULATED_INDEX, RegulatoryModel, TargetId


def edge_string(target: TargetId, source: TargetId, support: float | None) -> str:
    """``"g,r - g,r (xx.xx%)"``; the percentage is omitted when there is no support value."""
    text = f"{target.gene},{target.region} - {source.gene},{source.region}"
    return text if support is None else f"{text} ({100.0 * support:.2f}%)"


@dataclass(frozen=True)
class Edge:
    target: TargetId
    source: TargetId
    support: float | None = None
    runs: tuple[tuple[int, float], ...] = ()  # (sub-run, support) when merged from several chains

    def __str__(self):
        return edge_string(self.target, self.source, self.support)

    def to_dict(self) -> dict:
        out = {
            "target": {"gene": self.target.gene, "region": self.target.region},
            "source": {"gene": self.source.gene, "region": self.source.region},
            "support": self.support,
        }
        if self.runs:
            out["runs"] = [{"run": r, "support": s} for r, s in self.runs]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Edge":
        runs = tuple((int(x["run"]), float(x["support"])) for x in d.get("runs", ()))
        support = d.get("support")
        return cls(TargetId(int(d["target"]["gene"]), int(d["target"]["region"])),
                   TargetId(int(d["source"]["gene"]), int(d["source"]["region"])),
                   None if support is None else float(support), runs)


@dataclass(frozen=True)
class TransitionEdges:
    stage_from: int
    stage_to: int
    edges: tuple[Edge, ...]
    frequencies: dict[str, dict[str, float]] | None = None

    def to_dict(self) -> dict:
        out = {"from": self.stage_from, "to": self.stage_to, "edges": [e.to_dict() for e in self.edges]}
        if self.frequencies is not None:
            out["frequencies"] = self.frequencies
        return out


@dataclass(frozen=True)
class NetworkReport:
    transitions: tuple[TransitionEdges, ...]
    params: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"meta": self.meta, "transitions": [t.to_dict() for t in self.transitions], "params": self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkReport":
        transitions = tuple(
            TransitionEdges(int(t["from"]), int(t["to"]), tuple(Edge.from_dict(e) for e in t["edges"]),
                            t.get("frequencies"))
            for t in d["transitions"])
        return cls(transitions, d.get("params", {}), d.get("meta", {}))

    def model(self, dims) -> RegulatoryModel:
        """The reported edges as a model (one regulator per target; later duplicates are ignored)."""
        parents = np.full((dims.T - 1, dims.K), NOT_REGULATED_INDEX)
        for tr in self.transitions:
            for e in tr.edges:
                k = e.target.index(dims)
                if parents[tr.stage_to - 2, k] == NOT_REGULATED_INDEX:
                    parents[tr.stage_to - 2, k] = e.source.index(dims)
        return RegulatoryModel(dims, parents)

    def table(self) -> str:
        """Tab-separated ``stage transition / edges`` table, one edge string per cell."""
        lines = ["transition\tedges"]
        for tr in self.transitions:
            lines.append(f"{tr.stage_from}->{tr.stage_to}\t" + "\t".join(str(e) for e in tr.edges))
        return "\n".join(lines) + "\n"


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def report_from_model(model: RegulatoryModel, support: np.ndarray | None = None, meta: dict | None = None,
                      params: dict | None = None, frequencies: list | None = None) -> NetworkReport:
    """Edges of ``model`` ordered by target index; ``support[row, k]`` gives each edge's support if known."""
    dims = model.dims
    transitions = []
    for row, t in enumerate(dims.transitions):
        edges = []
        for k in np.flatnonzero(model.parents[row] != NOT_REGULATED_INDEX):
            s = None if support is None else float(support[row, k])
            edges.append(Edge(TargetId.from_index(int(k), dims),
                              TargetId.from_index(int(model.parents[row, k]), dims), s))
        freq = None if frequencies is None else frequencies[row]
        transitions.append(TransitionEdges(t - 1, t, tuple(edges), freq))
    return NetworkReport(tuple(transitions), params or {}, meta or {})


def report_from_summary(summary: ChainSummary, min_support: float = 0.15, meta: dict | None = None) -> NetworkReport:
    """Edges extracted from a chain, with the full configuration frequencies and posterior parameter means."""
    model, support = extract_network(summary, min_support)
    dims = summary.dims
    frequencies = []
    for t in dims.transitions:
        frequencies.append({str(TargetId.from_index(k, dims)): frequency_table(summary, t, k)
                            for k in range(dims.K)})
    params = {name: _jsonable(v) for name, v in summary.param_means.items()}
    meta = dict(meta or {})
    meta.setdefault("retained_samples", int(summary.n_retained))
    meta.setdefault("acceptance", {k: _jsonable(v) for k, v in summary.acceptance.items()})
    return report_from_model(model, support, meta, params, frequencies)
