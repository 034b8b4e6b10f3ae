"""Domain types and forward simulation for the stage-increment expression model.

Expression of gene ``g`` in region ``r`` at stage 1 is Gaussian around a
per-(gene, region) mean.  Between adjacent stages each (gene, region) pair,
called a *target*, either drifts by an unregulated Gaussian increment or by an
increment whose mean is affine in the previous-stage value of a single source
target.  Persons are observed only at the stage of their death, so earlier
stages are latent.

Index conventions: public identifiers (:class:`TargetId`, stage and transition
numbers) are 1-based.  Internally a target is the flat index
``k = (gene - 1) * R + (region - 1)`` and transition ``t`` (stage ``t-1`` to
stage ``t``) lives at row ``t - 2`` of the per-transition arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple, Union

import numpy as np

NOT_REGULATED_INDEX = -1


@dataclass(frozen=True)
class Dims:
    """Problem size: ``T`` stages, ``G`` genes, ``R`` regions, ``n[t-1]`` persons dying at stage ``t``."""

    T: int
    G: int
    R: int
    n: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "n", tuple(int(x) for x in self.n))
        if self.T < 2:
            raise ValueError(f"need at least 2 stages, got T={self.T}")
        if self.G < 1 or self.R < 1:
            raise ValueError(f"gene and region counts must be positive, got G={self.G}, R={self.R}")
        if len(self.n) != self.T:
            raise ValueError(f"n must have length T={self.T}, got {len(self.n)}")
        if any(x < 0 for x in self.n) or sum(self.n) < 1:
            raise ValueError(f"person counts must be >= 0 with a positive total, got {self.n}")

    @property
    def K(self) -> int:
        return self.G * self.R

    @property
    def n_persons(self) -> int:
        return sum(self.n)

    @property
    def transitions(self) -> range:
        """Destination stages of the stage transitions, ``2..T``."""
        return range(2, self.T + 1)


class TargetId(NamedTuple):
    gene: int
    region: int

    def index(self, dims: Dims) -> int:
        if not (1 <= self.gene <= dims.G and 1 <= self.region <= dims.R):
            raise ValueError(f"target {tuple(self)} outside G={dims.G}, R={dims.R}")
        return (self.gene - 1) * dims.R + (self.region - 1)

    @classmethod
    def from_index(cls, k: int, dims: Dims) -> "TargetId":
        return cls(k // dims.R + 1, k % dims.R + 1)

    def __str__(self):
        return f"{self.gene},{self.region}"


@dataclass(frozen=True)
class NotRegulated:
    pass


@dataclass(frozen=True)
class RegulatedBy:
    source: TargetId


RegulatorAssignment = Union[NotRegulated, RegulatedBy]
NOT_REGULATED = NotRegulated()


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RegulatoryModel:
    """One regulator assignment per (transition, target).

    ``parents[t - 2, k]`` is the flat source index regulating target ``k`` over
    transition ``t``, or ``-1`` when the target is not regulated.  Storing a
    single entry per cell makes "not regulated or exactly one source" hold by
    construction.
    """

    dims: Dims
    parents: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.parents, dtype=np.int64)
        if p.shape != (self.dims.T - 1, self.dims.K):
            raise ValueError(f"parents must have shape {(self.dims.T - 1, self.dims.K)}, got {p.shape}")
        object.__setattr__(self, "parents", _readonly(p))

    @classmethod
    def empty(cls, dims: Dims) -> "RegulatoryModel":
        return cls(dims, np.full((dims.T - 1, dims.K), NOT_REGULATED_INDEX))

    @classmethod
    def from_assignments(cls, dims: Dims, assignments: dict) -> "RegulatoryModel":
        """Build from ``{(transition, TargetId): RegulatorAssignment}``; unlisted cells are not regulated."""
        parents = np.full((dims.T - 1, dims.K), NOT_REGULATED_INDEX)
        for (t, target), assignment in assignments.items():
            if isinstance(assignment, RegulatedBy):
                parents[t - 2, TargetId(*target).index(dims)] = TargetId(*assignment.source).index(dims)
        return cls(dims, parents)

    def assignment(self, transition: int, target: TargetId) -> RegulatorAssignment:
        s = self.parents[transition - 2, TargetId(*target).index(self.dims)]
        if s == NOT_REGULATED_INDEX:
            return NOT_REGULATED
        return RegulatedBy(TargetId.from_index(int(s), self.dims))

    def edges(self, transition: int) -> list[tuple[TargetId, TargetId]]:
        """``(target, source)`` pairs active over ``transition``, in target order."""
        row = self.parents[transition - 2]
        return [
            (TargetId.from_index(k, self.dims), TargetId.from_index(int(s), self.dims))
            for k, s in enumerate(row)
            if s != NOT_REGULATED_INDEX
        ]

    def n_regulations(self) -> int:
        return int(np.count_nonzero(self.parents != NOT_REGULATED_INDEX))

    def with_parent(self, transition: int, k: int, source: int) -> "RegulatoryModel":
        p = np.array(self.parents)
        p[transition - 2, k] = source
        return RegulatoryModel(self.dims, p)

    def __eq__(self, other):
        return (
            isinstance(other, RegulatoryModel)
            and self.dims == other.dims
            and np.array_equal(self.parents, other.parents)
        )

    def __hash__(self):
        return hash((self.dims, self.parents.tobytes()))


@dataclass(frozen=True, eq=False)
class RegulationCoefficients:
    """Intercept/slope ``(a, b)`` per regulated (transition, target); NaN elsewhere."""

    dims: Dims
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.dims.T - 1, self.dims.K, 2):
            raise ValueError(f"coefficient array must have shape {(self.dims.T - 1, self.dims.K, 2)}")
        object.__setattr__(self, "values", _readonly(v))

    @classmethod
    def empty(cls, dims: Dims) -> "RegulationCoefficients":
        return cls(dims, np.full((dims.T - 1, dims.K, 2), np.nan))

    def get(self, transition: int, target: TargetId) -> tuple[float, float] | None:
        a, b = self.values[transition - 2, TargetId(*target).index(self.dims)]
        if np.isnan(a):
            return None
        return float(a), float(b)

    def domain(self) -> np.ndarray:
        """Boolean ``(T-1, K)`` mask of cells carrying coefficients."""
        return ~np.isnan(self.values[..., 0])

    def matches(self, model: RegulatoryModel) -> bool:
        return bool(np.array_equal(self.domain(), model.parents != NOT_REGULATED_INDEX))


@dataclass
class GlobalParams:
    mu: np.ndarray  # (G, R) stage-1 means
    sigma1_sq: float
    mu2: float
    sigma2_sq: float

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        if self.sigma1_sq <= 0 or self.sigma2_sq <= 0:
            raise ValueError("variances must be strictly positive")

    @property
    def mu_flat(self) -> np.ndarray:
        return self.mu.reshape(-1)

    def copy(self) -> "GlobalParams":
        return GlobalParams(self.mu.copy(), float(self.sigma1_sq), float(self.mu2), float(self.sigma2_sq))


@dataclass
class PriorConfig:
    """Hyperparameters; defaults are the simulation settings used for the benchmark."""

    c: float | np.ndarray = 5.0
    d: float | np.ndarray = 0.5
    c2: float = 0.0
    d2: float = 0.5
    p1: float = 3.0
    q1: float = 2.0
    p2: float = 3.0
    q2: float = 2.0
    alpha_a: float = 1.0
    alpha_b: float = 1.0
    V_a: float = 1.0
    V_b: float = 1.0
    v: float = 2.0
    lam: float = 0.05
    model_prior: str = "uniform"  # or "hierarchical"

    def __post_init__(self):
        positives = dict(d2=self.d2, q1=self.q1, q2=self.q2, p1=self.p1, p2=self.p2,
                         V_a=self.V_a, V_b=self.V_b, v=self.v, lam=self.lam)
        for name, value in positives.items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if np.any(np.asarray(self.d) <= 0):
            raise ValueError("d must be positive")
        if self.model_prior not in ("uniform", "hierarchical"):
            raise ValueError(f"unknown model_prior {self.model_prior!r}")

    @property
    def slope_scale(self) -> float:
        """Prior covariance entry of the slope relative to the shared coefficient variance."""
        return self.v ** 2 / self.V_b

    @property
    def coef_ig_shape(self) -> float:
        return self.v / 2.0

    @property
    def coef_ig_scale(self) -> float:
        return 2.0 * self.v * self.lam

    def c_flat(self, dims: Dims) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.c, dtype=float), (dims.G, dims.R)).reshape(-1)

    def d_flat(self, dims: Dims) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.d, dtype=float), (dims.G, dims.R)).reshape(-1)


MODEL_CLASSES = ("no_relationship", "all_regulated", "other")
MOVES = ("add", "delete", "swap")


@dataclass(frozen=True)
class OperationMatrix:
    """Move-type probabilities (add, delete, swap) for each model class."""

    no_relationship: tuple[float, float, float] = (1.0, 0.0, 0.0)
    all_regulated: tuple[float, float, float] = (0.0, 0.8, 0.2)
    other: tuple[float, float, float] = (0.3, 0.4, 0.3)

    def __post_init__(self):
        for name in MODEL_CLASSES:
            row = tuple(float(x) for x in getattr(self, name))
            object.__setattr__(self, name, row)
            if len(row) != 3 or min(row) < 0 or abs(sum(row) - 1.0) > 1e-9:
                raise ValueError(f"row {name} must be 3 nonnegative probabilities summing to 1, got {row}")
        if self.no_relationship[1] != 0 or self.no_relationship[2] != 0:
            raise ValueError("an empty model admits only Add")
        if self.all_regulated[0] != 0:
            raise ValueError("a fully regulated model admits no Add")

    def row(self, model_class: str) -> tuple[float, float, float]:
        return getattr(self, model_class)


def classify(parents_row: np.ndarray) -> str:
    n_reg = int(np.count_nonzero(parents_row != NOT_REGULATED_INDEX))
    if n_reg == 0:
        return "no_relationship"
    if n_reg == parents_row.size:
        return "all_regulated"
    return "other"


@dataclass(frozen=True)
class Person:
    id: str
    death_stage: int
    values: np.ndarray  # (G, R, death_stage)
    observed: np.ndarray


@dataclass(eq=False)
class ExpressionDataset:
    """Per-person expression on a dense ``(N, T, K)`` grid.

    ``values[e, s, k]`` is the stage ``s + 1`` value of target ``k`` for person
    ``e``.  Cells after the death stage are NaN (never produced).  Latent cells
    before the death stage hold the simulated truth when known and NaN
    otherwise; ``observed`` marks the measured cells.
    """

    dims: Dims
    person_ids: tuple[str, ...]
    death_stage: np.ndarray
    values: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        self.person_ids = tuple(str(p) for p in self.person_ids)
        self.death_stage = np.asarray(self.death_stage, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        self.observed = np.asarray(self.observed, dtype=bool)
        N = len(self.person_ids)
        shape = (N, self.dims.T, self.dims.K)
        if self.values.shape != shape or self.observed.shape != shape:
            raise ValueError(f"values/observed must have shape {shape}")
        if self.death_stage.shape != (N,):
            raise ValueError("one death stage per person required")
        if np.any(self.death_stage < 1) or np.any(self.death_stage > self.dims.T):
            raise ValueError("death stages must lie in 1..T")
        if np.any(self.observed & ~self.produced):
            raise ValueError("observation flagged after a person's death stage")
        if np.any(np.isnan(self.values[self.observed])):
            raise ValueError("observed cells must carry values")

    @property
    def n_persons(self) -> int:
        return len(self.person_ids)

    @property
    def produced(self) -> np.ndarray:
        stages = np.arange(self.dims.T)
        return np.broadcast_to((stages[None, :] < self.death_stage[:, None])[:, :, None], self.values.shape)

    @property
    def persons(self) -> Iterator[Person]:
        G, R = self.dims.G, self.dims.R
        for e, pid in enumerate(self.person_ids):
            t = int(self.death_stage[e])
            yield Person(
                pid,
                t,
                self.values[e, :t].T.reshape(G, R, t),
                self.observed[e, :t].T.reshape(G, R, t),
            )

    def sorted_by_id(self) -> "ExpressionDataset":
        """Copy with persons ordered by id, so results do not depend on input row order."""
        order = sorted(range(self.n_persons), key=lambda e: self.person_ids[e])
        return ExpressionDataset(self.dims, tuple(self.person_ids[e] for e in order), self.death_stage[order],
                                 self.values[order], self.observed[order])

    def observed_only(self) -> "ExpressionDataset":
        """Copy with every unobserved cell blanked, as real data would arrive."""
        values = np.where(self.observed, self.values, np.nan)
        return ExpressionDataset(self.dims, self.person_ids, self.death_stage.copy(), values, self.observed.copy())

    def subset(self, genes, regions) -> "ExpressionDataset":
        """Restrict to the given 0-based gene and region indices (in the order given)."""
        genes, regions = list(genes), list(regions)
        ks = [g * self.dims.R + r for g in genes for r in regions]
        dims = Dims(self.dims.T, len(genes), len(regions), self.dims.n)
        return ExpressionDataset(dims, self.person_ids, self.death_stage.copy(),
                                 self.values[:, :, ks].copy(), self.observed[:, :, ks].copy())


# ---------------------------------------------------------------------------
# constraints

def validate_model(model: RegulatoryModel, dims: Dims | None = None) -> list[str]:
    """List constraint violations; an empty list means the model is admissible."""
    dims = dims or model.dims
    violations = []
    if model.parents.shape != (dims.T - 1, dims.K):
        return [f"shape {model.parents.shape} does not match dims {(dims.T - 1, dims.K)}"]
    for row, t in enumerate(dims.transitions):
        for k, s in enumerate(model.parents[row]):
            target = TargetId.from_index(k, dims)
            if s == NOT_REGULATED_INDEX:
                continue
            if not 0 <= s < dims.K:
                violations.append(f"transition {t}, target {target}: source index {s} out of range")
            elif s == k:
                violations.append(f"transition {t}, target {target}: self-regulation")
    return violations


def config_log_prior(dims: Dims, kind: str = "uniform") -> np.ndarray:
    """Log prior over each target's configurations.

    Column 0 is "not regulated", column ``1 + s`` is regulation by source ``s``;
    the target itself gets ``-inf``.  ``uniform`` puts equal mass on all
    ``K`` configurations; ``hierarchical`` picks "not regulated" or a gene
    uniformly, then a region uniformly within that gene.
    """
    K, G, R = dims.K, dims.G, dims.R
    out = np.full((K, K + 1), -np.inf)
    for k in range(K):
        g_k = k // R
        if kind == "uniform":
            out[k, :] = -np.log(K)
        elif kind == "hierarchical":
            genes_with_sources = G if R > 1 else G - 1
            gene_lp = -np.log(1 + genes_with_sources)
            out[k, 0] = gene_lp
            for s in range(K):
                g_s = s // R
                n_regions = R - 1 if g_s == g_k else R
                if n_regions > 0:
                    out[k, 1 + s] = gene_lp - np.log(n_regions)
        else:
            raise ValueError(f"unknown model prior {kind!r}")
        out[k, 1 + k] = -np.inf
    return out


# ---------------------------------------------------------------------------
# generation

def generate_network(rng: np.random.Generator, dims: Dims, density: float) -> RegulatoryModel:
    """Random truth network: each cell is regulated with probability ``density`` by a uniform source."""
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density must lie in [0, 1], got {density}")
    K = dims.K
    parents = np.full((dims.T - 1, K), NOT_REGULATED_INDEX)
    if K < 2:
        return RegulatoryModel(dims, parents)
    regulated = rng.random((dims.T - 1, K)) < density
    # uniform over the K-1 other targets: draw from 0..K-2 and skip self
    draw = rng.integers(0, K - 1, size=(dims.T - 1, K))
    draw = draw + (draw >= np.arange(K)[None, :])
    parents[regulated] = draw[regulated]
    return RegulatoryModel(dims, parents)


def sample_model_prior(rng: np.random.Generator, dims: Dims, kind: str = "uniform") -> RegulatoryModel:
    """Draw every (transition, target) configuration independently from its prior."""
    lp = config_log_prior(dims, kind)
    p = np.exp(lp)
    parents = np.empty((dims.T - 1, dims.K), dtype=np.int64)
    for row in range(dims.T - 1):
        for k in range(dims.K):
            parents[row, k] = rng.choice(dims.K + 1, p=p[k] / p[k].sum()) - 1
    return RegulatoryModel(dims, parents)


def draw_coefficient_pairs(rng: np.random.Generator, size: int, sigma_sq: float, prior: PriorConfig) -> np.ndarray:
    """``size`` independent ``(a, b)`` pairs from the Gaussian prior given the shared variance."""
    sd = np.sqrt(sigma_sq * np.array([prior.V_a, prior.slope_scale]))
    return np.array([prior.alpha_a, prior.alpha_b]) + sd * rng.standard_normal((size, 2))


def generate_coefficients(rng: np.random.Generator, model: RegulatoryModel, prior: PriorConfig) -> RegulationCoefficients:
    """Shared variance from its inverse-gamma prior, then one Gaussian ``(a, b)`` per regulation."""
    dims = model.dims
    values = np.full((dims.T - 1, dims.K, 2), np.nan)
    mask = model.parents != NOT_REGULATED_INDEX
    sigma_sq = prior.coef_ig_scale / rng.gamma(prior.coef_ig_shape)
    values[mask] = draw_coefficient_pairs(rng, int(mask.sum()), sigma_sq, prior)
    return RegulationCoefficients(dims, values)


def sample_params_prior(rng: np.random.Generator, dims: Dims, prior: PriorConfig) -> GlobalParams:
    mu = prior.c_flat(dims) + np.sqrt(prior.d_flat(dims)) * rng.standard_normal(dims.K)
    return GlobalParams(
        mu=mu.reshape(dims.G, dims.R),
        sigma1_sq=prior.q1 / rng.gamma(prior.p1),
        mu2=prior.c2 + np.sqrt(prior.d2) * rng.standard_normal(),
        sigma2_sq=prior.q2 / rng.gamma(prior.p2),
    )


def default_person_ids(dims: Dims) -> tuple[str, ...]:
    width = max(4, len(str(dims.n_persons)))
    return tuple(f"P{e + 1:0{width}d}" for e in range(dims.n_persons))


def simulate_values(model, coeffs, params, death_stage, rng) -> np.ndarray:
    """Complete ``(N, T, K)`` trajectories (NaN after death) from the generative model."""
    dims = model.dims
    N, T, K = len(death_stage), dims.T, dims.K
    death_stage = np.asarray(death_stage)
    values = np.full((N, T, K), np.nan)
    values[:, 0, :] = params.mu_flat + np.sqrt(params.sigma1_sq) * rng.standard_normal((N, K))
    sd2 = np.sqrt(params.sigma2_sq)
    for row in range(T - 1):
        alive = death_stage >= row + 2
        prev = values[alive, row, :]
        parents = model.parents[row]
        mean = np.full(prev.shape, params.mu2)
        reg = parents != NOT_REGULATED_INDEX
        if reg.any():
            ab = coeffs.values[row, reg]
            mean[:, reg] = ab[:, 0] + ab[:, 1] * prev[:, parents[reg]]
        values[alive, row + 1, :] = prev + mean + sd2 * rng.standard_normal(prev.shape)
    return values


def simulate_dataset(model: RegulatoryModel, coeffs: RegulationCoefficients, params: GlobalParams,
                     dims: Dims, rng: np.random.Generator) -> ExpressionDataset:
    """Simulate ``n[t-1]`` persons dying at each stage ``t``; only the death stage is observed.

    Latent earlier stages are kept in ``values`` (flagged unobserved) so that
    imputations can be checked against the truth.
    """
    if model.dims != dims or coeffs.dims != dims:
        raise ValueError("model, coefficients and dims disagree")
    if not coeffs.matches(model):
        raise ValueError("coefficient domain must equal the regulated cells of the model")
    death_stage = np.repeat(np.arange(1, dims.T + 1), dims.n)
    values = simulate_values(model, coeffs, params, death_stage, rng)
    stages = np.arange(dims.T)
    observed = np.broadcast_to((stages[None, :] == death_stage[:, None] - 1)[:, :, None], values.shape).copy()
    return ExpressionDataset(dims, default_person_ids(dims), death_stage, values, observed)
