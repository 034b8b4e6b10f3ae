"""Mutable sampler state: data with current imputations, model, coefficients, parameters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    NOT_REGULATED_INDEX,
    Dims,
    ExpressionDataset,
    GlobalParams,
    PriorConfig,
    RegulationCoefficients,
    RegulatoryModel,
    TargetId,
    config_log_prior,
)


@dataclass
class ChainState:
    dims: Dims
    person_ids: tuple[str, ...]
    death: np.ndarray  # (N,) 1-based death stage
    values: np.ndarray  # (N, T, K); latent cells hold current imputations, NaN after death
    observed: np.ndarray  # (N, T, K)
    parents: np.ndarray  # (T-1, K)
    coef: np.ndarray  # (T-1, K, 2), NaN where not regulated
    params: GlobalParams
    prior: PriorConfig

    def __post_init__(self):
        self.log_prior = config_log_prior(self.dims, self.prior.model_prior)

    # -- construction -------------------------------------------------------

    @classmethod
    def from_dataset(
        cls,
        dataset: ExpressionDataset,
        prior: PriorConfig,
        model: RegulatoryModel | None = None,
        coeffs: RegulationCoefficients | None = None,
        params: GlobalParams | None = None,
        init: str = "mean",
    ) -> "ChainState":
        """Start a chain on ``dataset``.

        ``init="mean"`` fills every latent cell with the mean of the observed
        values of that (stage, target); ``init="truth"`` keeps the values
        stored in the dataset (simulation output) and falls back to the mean
        where they are missing.
        """
        dims = dataset.dims
        values = np.array(dataset.values, dtype=float)
        produced = np.array(dataset.produced)
        latent = produced & ~dataset.observed
        if init not in ("mean", "truth"):
            raise ValueError(f"unknown init {init!r}")
        fill = latent if init == "mean" else latent & np.isnan(values)
        if fill.any():
            obs = np.where(dataset.observed, dataset.values, np.nan)
            with np.errstate(invalid="ignore"):
                counts = dataset.observed.sum(axis=0)
                sums = np.nansum(obs, axis=0)
                stage_means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
            # stages nobody observed: borrow the nearest observed stage, then the prior mean
            c = prior.c_flat(dims)
            for k in range(dims.K):
                col = stage_means[:, k]
                if np.all(np.isnan(col)):
                    stage_means[:, k] = c[k]
                    continue
                idx = np.flatnonzero(~np.isnan(col))
                for s in np.flatnonzero(np.isnan(col)):
                    stage_means[s, k] = col[idx[np.argmin(np.abs(idx - s))]]
            values = np.where(fill, stage_means[None, :, :], values)
        model = model or RegulatoryModel.empty(dims)
        if coeffs is None:
            if model.n_regulations():
                raise ValueError("coefficients required for a non-empty initial model")
            coeffs = RegulationCoefficients.empty(dims)
        if not coeffs.matches(model):
            raise ValueError("coefficient domain must equal the regulated cells of the model")
        if params is None:
            params = GlobalParams(
                mu=prior.c_flat(dims).reshape(dims.G, dims.R).copy(),
                sigma1_sq=prior.q1 / max(prior.p1 - 1.0, 1.0),
                mu2=float(prior.c2),
                sigma2_sq=prior.q2 / max(prior.p2 - 1.0, 1.0),
            )
        return cls(
            dims=dims,
            person_ids=dataset.person_ids,
            death=np.array(dataset.death_stage),
            values=values,
            observed=np.array(dataset.observed),
            parents=np.array(model.parents),
            coef=np.array(coeffs.values),
            params=params.copy(),
            prior=prior,
        )

    def copy(self) -> "ChainState":
        return ChainState(
            self.dims, self.person_ids, self.death.copy(), self.values.copy(), self.observed.copy(),
            self.parents.copy(), self.coef.copy(), self.params.copy(), self.prior,
        )

    # -- views --------------------------------------------------------------

    @property
    def model(self) -> RegulatoryModel:
        return RegulatoryModel(self.dims, self.parents)

    @property
    def coeffs(self) -> RegulationCoefficients:
        return RegulationCoefficients(self.dims, self.coef)

    def target_index(self, target) -> int:
        if isinstance(target, (int, np.integer)):
            return int(target)
        return TargetId(*target).index(self.dims)

    def alive(self, transition: int) -> np.ndarray:
        """Persons contributing an increment over ``transition`` (death stage >= transition)."""
        return self.death >= transition

    def increments(self, transition: int) -> tuple[np.ndarray, np.ndarray]:
        """``(y, x)``: increments ``(n, K)`` over ``transition`` and the previous-stage values ``(n, K)``."""
        row = transition - 2
        alive = self.alive(transition)
        x = self.values[alive, row, :]
        y = self.values[alive, row + 1, :] - x
        return y, x

    def expected_increment(self, transition: int, k: int, prev: np.ndarray) -> np.ndarray:
        """Mean of target ``k``'s increment over ``transition`` given previous-stage rows ``prev`` (n, K)."""
        s = self.parents[transition - 2, k]
        if s == NOT_REGULATED_INDEX:
            return np.full(prev.shape[0], self.params.mu2)
        a, b = self.coef[transition - 2, k]
        return a + b * prev[:, s]

    # -- coefficient prior bookkeeping ---------------------------------------

    def coef_deviations(self) -> np.ndarray:
        """Prior quadratic form per regulated cell (0 elsewhere), shape (T-1, K)."""
        p = self.prior
        a = self.coef[..., 0]
        b = self.coef[..., 1]
        q = (a - p.alpha_a) ** 2 / p.V_a + (b - p.alpha_b) ** 2 / p.slope_scale
        return np.where(np.isnan(q), 0.0, q)

    def coef_totals(self) -> tuple[int, float]:
        """Number of regulations and summed quadratic form over all transitions."""
        return int(np.count_nonzero(self.parents != NOT_REGULATED_INDEX)), float(self.coef_deviations().sum())

    def others(self, transition: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-target regulation count and quadratic form of all *other* regulations, shape (K,) each."""
        n_tot, c_tot = self.coef_totals()
        row = transition - 2
        own = self.parents[row] != NOT_REGULATED_INDEX
        q = self.coef_deviations()[row]
        return n_tot - own.astype(int), np.maximum(c_tot - q, 0.0)
