"""Dataset CSV files and result files (JSON and tab-separated tables)."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .metrics import INDEXES, AggregateMetrics
from .model import Dims, ExpressionDataset
from .report import NetworkReport

CSV_HEADER = ("person_id", "death_stage", "gene", "region", "stage", "value", "observed")
_MISSING = {"", "na", "nan", "null"}


class DatasetFormatError(ValueError):
    """A dataset file that cannot be parsed; the message names the file and line."""


def _fail(path, line: int, msg: str):
    raise DatasetFormatError(f"{path}:{line}: {msg}")


def _int(text: str, name: str, path, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        _fail(path, line, f"{name} must be an integer, got {text!r}")


def load_dataset(path: str | Path, stages: int | None = None) -> ExpressionDataset:
    """Read a long-format CSV with one row per (person, gene, region, stage) cell.

    ``stages`` fixes the number of stages ``T``; by default it is the largest
    death stage in the file.  Gene and region counts are the largest indices
    seen.  Cells without a row are unmeasured.
    """
    path = Path(path)
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise OSError(f"cannot read dataset {path}: {exc.strerror or exc}") from exc
    rows = []
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            _fail(path, 1, f"header must be {','.join(CSV_HEADER)}")
        death_of: dict[str, int] = {}
        seen: set[tuple] = set()
        for line, rec in enumerate(reader, start=2):
            if not rec or all(not x.strip() for x in rec):
                continue
            if len(rec) != len(CSV_HEADER):
                _fail(path, line, f"expected {len(CSV_HEADER)} fields, got {len(rec)}")
            pid, death, gene, region, stage, value, observed = (x.strip() for x in rec)
            if not pid:
                _fail(path, line, "empty person_id")
            death = _int(death, "death_stage", path, line)
            gene = _int(gene, "gene", path, line)
            region = _int(region, "region", path, line)
            stage = _int(stage, "stage", path, line)
            if observed not in ("0", "1"):
                _fail(path, line, f"observed must be 0 or 1, got {observed!r}")
            is_obs = observed == "1"
            if value.lower() in _MISSING:
                if is_obs:
                    _fail(path, line, "observed cell without a value")
                val = math.nan
            else:
                try:
                    val = float(value)
                except ValueError:
                    _fail(path, line, f"value must be a number, got {value!r}")
                if not math.isfinite(val):
                    _fail(path, line, f"value must be finite, got {value!r}")
            if min(death, gene, region, stage) < 1:
                _fail(path, line, "indices and stages are 1-based")
            if stages is not None and (death > stages or stage > stages):
                _fail(path, line, f"stage {max(death, stage)} exceeds the number of stages {stages}")
            if stage > death:
                _fail(path, line, f"stage {stage} is after the death stage {death}")
            if death_of.setdefault(pid, death) != death:
                _fail(path, line, f"person {pid} has death stage {death} here but {death_of[pid]} earlier")
            key = (pid, gene, region, stage)
            if key in seen:
                _fail(path, line, f"duplicate cell person={pid} gene={gene} region={region} stage={stage}")
            seen.add(key)
            rows.append((pid, gene, region, stage, val, is_obs))
    if not rows:
        _fail(path, 2, "no data rows")
    T = stages if stages is not None else max(death_of.values())
    if T < 2:
        _fail(path, 2, "at least two stages are needed")
    G = max(r[1] for r in rows)
    R = max(r[2] for r in rows)
    ids = tuple(death_of)  # first-appearance order
    index = {pid: e for e, pid in enumerate(ids)}
    death = np.array([death_of[p] for p in ids], dtype=np.int64)
    dims = Dims(T, G, R, tuple(int(np.sum(death == t)) for t in range(1, T + 1)))
    values = np.full((len(ids), T, G * R), np.nan)
    observed = np.zeros(values.shape, dtype=bool)
    for pid, gene, region, stage, val, is_obs in rows:
        cell = (index[pid], stage - 1, (gene - 1) * R + (region - 1))
        values[cell] = val
        observed[cell] = is_obs
    return ExpressionDataset(dims, ids, death, values, observed)


def write_dataset(dataset: ExpressionDataset, path: str | Path, include_latent: bool = False) -> None:
    """Write measured cells (and, with ``include_latent``, known unmeasured values) in long CSV form."""
    dims = dataset.dims
    path = Path(path)
    try:
        with path.open("w", newline="") as handle:
            out = csv.writer(handle, lineterminator="\n")
            out.writerow(CSV_HEADER)
            for e, pid in enumerate(dataset.person_ids):
                t_death = int(dataset.death_stage[e])
                for stage in range(1, t_death + 1):
                    for k in range(dims.K):
                        obs = bool(dataset.observed[e, stage - 1, k])
                        val = dataset.values[e, stage - 1, k]
                        if not obs and not (include_latent and not math.isnan(val)):
                            continue
                        out.writerow((pid, t_death, k // dims.R + 1, k % dims.R + 1, stage, repr(float(val)),
                                      int(obs)))
    except OSError as exc:
        raise OSError(f"cannot write dataset {path}: {exc.strerror or exc}") from exc


def _clean(obj):
    """Replace non-finite floats with ``None`` and numpy scalars with Python ones."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def write_text(text: str, path: str | Path) -> None:
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_report(path: str | Path) -> NetworkReport:
    path = Path(path)
    try:
        return NetworkReport.from_dict(json.loads(path.read_text()))
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"{path}: not a network report ({exc})") from exc


_INDEX_LABELS = {"detection": "Detection", "recall": "Recall", "error": "Error", "precision": "Precision",
                 "f1": "F1"}


def _cell(mean: float, var: float) -> str:
    if math.isnan(mean):
        return "NA"
    return f"{mean:.4f} ({var:.4f})"


def metrics_table(results: dict[str, AggregateMetrics], indexes=INDEXES) -> str:
    """Tab-separated table with one row per (transition, index) and one column per method."""
    methods = list(results)
    first = results[methods[0]]
    labels = [str(t) for t in first.transitions] + ["total"]
    lines = ["transition\tindex\t" + "\t".join(methods)]
    for label in labels:
        name = "Total" if label == "total" else f"{int(label) - 1}->{label}"
        for idx in indexes:
            cells = [_cell(results[m].mean[label][idx], results[m].variance[label][idx]) for m in methods]
            lines.append(f"{name}\t{_INDEX_LABELS[idx]}\t" + "\t".join(cells))
    return "\n".join(lines) + "\n"


def write_results(result, path: str | Path, fmt: str = "json") -> None:
    """Write a :class:`NetworkReport` or a ``{method: AggregateMetrics}`` mapping as JSON or TSV."""
    if fmt not in ("json", "tsv"):
        raise ValueError(f"format must be json or tsv, got {fmt!r}")
    if isinstance(result, NetworkReport):
        text = dumps_json(result.to_dict()) if fmt == "json" else result.table()
    elif isinstance(result, dict) and result and all(isinstance(v, AggregateMetrics) for v in result.values()):
        if fmt == "json":
            text = dumps_json({m: {"replicates": a.replicates, "mean": a.mean, "variance": a.variance}
                               for m, a in result.items()})
        else:
            text = metrics_table(result)
    else:
        text = dumps_json(result)
    write_text(text, path)
