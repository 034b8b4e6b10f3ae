"""Flat ``key = value`` settings shared by the config file and the command line.

Every key has a type and a default.  Files may contain blank lines and ``#``
comments; command-line flags of the same name override file values.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .benchmark import METHODS, BenchConfig
from .mcmc import McmcConfig
from .model import OperationMatrix, PriorConfig
from .subsample import SubsampleConfig


class ConfigError(ValueError):
    """Unknown key or unparsable value."""


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _optional_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none", "auto") else int(text)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(" ", "").split(",") if x)


def _words(text: str) -> tuple[str, ...]:
    return tuple(x for x in text.replace(" ", "").split(",") if x)


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: Any
    help: str


# A default of None means "use the command's own default".
KEYS: tuple[Key, ...] = (
    # prior
    Key("c", float, 5.0, "prior mean of the stage-1 means"),
    Key("d", float, 0.5, "prior variance of the stage-1 means"),
    Key("c2", float, 0.0, "prior mean of the unregulated increment mean"),
    Key("d2", float, 0.5, "prior variance of the unregulated increment mean"),
    Key("p1", float, 3.0, "inverse-gamma shape of the stage-1 variance"),
    Key("q1", float, 2.0, "inverse-gamma scale of the stage-1 variance"),
    Key("p2", float, 3.0, "inverse-gamma shape of the increment variance"),
    Key("q2", float, 2.0, "inverse-gamma scale of the increment variance"),
    Key("alpha_a", float, 1.0, "prior mean of the intercept a"),
    Key("alpha_b", float, 1.0, "prior mean of the slope b"),
    Key("V_a", float, 1.0, "prior variance factor of a"),
    Key("V_b", float, 1.0, "prior variance factor of b"),
    Key("v", float, 2.0, "degrees of freedom of the coefficient variance prior"),
    Key("lam", float, 0.05, "scale of the coefficient variance prior"),
    Key("model_prior", str, "uniform", "configuration prior: uniform or hierarchical"),
    # sampler
    Key("n_outer", int, None, "outer iterations (default 50)"),
    Key("iterations_per_transition", int, None, "inner iterations per transition and outer iteration "
        "(default 200; 40 for benchmark)"),
    Key("burn_in", _optional_int, None, "retained-sample burn-in in inner iterations (default a quarter)"),
    Key("thinning", int, 1, "keep every n-th inner iteration"),
    Key("mh_step_sizes", _floats, (0.3, 0.3), "initial random-walk steps for a and b"),
    Key("adapt_steps", _bool, True, "tune random-walk steps during burn-in"),
    Key("method", str, "exact", "collapsed likelihood: exact, student_t or fixed"),
    Key("init", str, "mean", "initial fill of latent cells: mean or truth"),
    Key("model_moves", _bool, True, "run add/delete/swap moves"),
    Key("cell_moves", int, 1, "single-target moves per inner iteration"),
    Key("exchange_moves", _optional_int, None, "regulator exchanges per outer iteration (default K)"),
    Key("cell_flatten", float, 0.3, "tempering exponent of the single-target proposal table"),
    Key("cell_uniform", float, 0.05, "uniform share of the single-target proposal table"),
    Key("fit_iterations", int, 3, "Newton steps of the coefficient proposal fit"),
    Key("fit_dof", float, 5.0, "degrees of freedom of the coefficient proposal"),
    Key("no_relationship", _floats, (1.0, 0.0, 0.0), "add,delete,swap probabilities for empty rows"),
    Key("all_regulated", _floats, (0.0, 0.8, 0.2), "add,delete,swap probabilities for full rows"),
    Key("other", _floats, (0.3, 0.4, 0.3), "add,delete,swap probabilities otherwise"),
    Key("min_support", float, 0.15, "smallest support of a reported edge"),
    # simulation and benchmark
    Key("replicates", int, 10, "benchmark replicates"),
    Key("G", int, None, "genes (simulate/benchmark: 5) or genes per sub-run (subsample: 15)"),
    Key("R", int, None, "regions (simulate/benchmark: 5) or regions per sub-run (subsample: 5)"),
    Key("T", int, 4, "stages of simulated data"),
    Key("n_t", int, 20, "persons dying at each stage in simulated data"),
    Key("density", float, 0.3, "probability that a simulated target is regulated"),
    Key("methods", _words, METHODS, "benchmark methods"),
    Key("rf_trees", int, 100, "trees per forest in random-forest imputation"),
    Key("rf_max_iters", int, 10, "maximum random-forest imputation sweeps"),
    Key("true_mu", float, 5.0, "simulated stage-1 mean"),
    Key("true_sigma1_sq", float, 1.0, "simulated stage-1 variance"),
    Key("true_mu2", float, 0.0, "simulated unregulated increment mean"),
    Key("true_sigma2_sq", float, 1.0, "simulated increment variance"),
    # subsampling
    Key("N_M", int, 10, "number of sub-runs"),
    Key("alpha", float, 0.05, "significance level of the region change tests"),
    Key("stages", _optional_int, None, "number of stages of a loaded dataset (default: largest death stage)"),
)
KEY_INDEX = {k.name: k for k in KEYS}


def parse_value(name: str, text: str):
    key = KEY_INDEX.get(name)
    if key is None:
        raise ConfigError(f"unknown setting {name!r}")
    try:
        return key.parse(text)
    except ValueError as exc:
        raise ConfigError(f"setting {name}: {exc}") from exc


def read_config(path: str | Path) -> dict[str, Any]:
    """Parse a ``key = value`` file into typed values."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    out = {}
    for n, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        name, value = (x.strip() for x in line.split("=", 1))
        try:
            out[name] = parse_value(name, value)
        except ConfigError as exc:
            raise ConfigError(f"{path}:{n}: {exc}") from exc
    return out


def _invalid_is_config_error(build):
    @functools.wraps(build)
    def wrapper(*args, **kwargs):
        try:
            return build(*args, **kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    return wrapper


class Settings:
    """Resolved settings: explicit values over defaults, with per-command fallbacks."""

    def __init__(self, values: dict[str, Any] | None = None):
        values = dict(values or {})
        unknown = set(values) - set(KEY_INDEX)
        if unknown:
            raise ConfigError(f"unknown settings {sorted(unknown)}")
        self.values = values

    def get(self, name: str, fallback: Any = None):
        if name in self.values:
            return self.values[name]
        default = KEY_INDEX[name].default
        return fallback if default is None else default

    def as_dict(self) -> dict[str, Any]:
        return {k.name: self.get(k.name) for k in KEYS}

    @_invalid_is_config_error
    def prior(self) -> PriorConfig:
        names = ("c", "d", "c2", "d2", "p1", "q1", "p2", "q2", "alpha_a", "alpha_b", "V_a", "V_b", "v", "lam",
                 "model_prior")
        return PriorConfig(**{n: self.get(n) for n in names})

    @_invalid_is_config_error
    def mcmc(self, seed: int, iterations_per_transition: int = 200) -> McmcConfig:
        op = OperationMatrix(self.get("no_relationship"), self.get("all_regulated"), self.get("other"))
        return McmcConfig(
            n_outer=self.get("n_outer", 50),
            iterations_per_transition=self.get("iterations_per_transition", iterations_per_transition),
            burn_in=self.get("burn_in"),
            thinning=self.get("thinning"),
            seed=seed,
            op_matrix=op,
            mh_step_sizes=self.get("mh_step_sizes"),
            adapt_steps=self.get("adapt_steps"),
            method=self.get("method"),
            init=self.get("init"),
            model_moves=self.get("model_moves"),
            cell_moves=self.get("cell_moves"),
            exchange_moves=self.get("exchange_moves"),
            cell_flatten=self.get("cell_flatten"),
            cell_uniform=self.get("cell_uniform"),
            fit_iterations=self.get("fit_iterations"),
            fit_dof=self.get("fit_dof"),
        )

    @_invalid_is_config_error
    def bench(self, seed: int, threads: int) -> BenchConfig:
        return BenchConfig(
            replicates=self.get("replicates"), G=self.get("G", 5), R=self.get("R", 5), T=self.get("T"),
            n_t=self.get("n_t"), density=self.get("density"), methods=self.get("methods"),
            min_support=self.get("min_support"), rf_trees=self.get("rf_trees"),
            rf_max_iters=self.get("rf_max_iters"), true_mu=self.get("true_mu"),
            true_sigma1_sq=self.get("true_sigma1_sq"), true_mu2=self.get("true_mu2"),
            true_sigma2_sq=self.get("true_sigma2_sq"), seed=seed, threads=threads,
            mcmc=self.mcmc(seed, iterations_per_transition=40), prior=self.prior(),
        )

    @_invalid_is_config_error
    def subsample(self, n_genes: int, n_regions: int) -> SubsampleConfig:
        return SubsampleConfig(N_G=n_genes, N_R=n_regions, N_M=self.get("N_M"), G=self.get("G", 15),
                               R=self.get("R", 5), alpha=self.get("alpha"))
