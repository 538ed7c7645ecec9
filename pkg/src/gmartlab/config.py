"""Run configuration: TOML file plus flag overrides, validated before any compute."""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace

from .errors import ConfigError, GmartError
from .model import VolatilityBand, default_strategy_family

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ALL_CHECKS = (
    "identities",
    "quadratic_variation",
    "h_assumption",
    "norm_sandwich",
    "expectation",
    "sublinearity",
    "pde_oracle",
    "tail_truncation",
    "dominated_convergence",
    "ae_identity",
    "lipschitz_image",
    "state_integrand",
    "krylov",
    "local_time",
    "occupation_limit",
    "occupation_formula",
    "growth_set",
    "tanaka",
    "bicontinuity",
)

DEFAULT_TOLERANCES = {
    "identity": 1e-9,
    "mc_se": 3.0,
    "mean_se": 4.0,
    "square": 0.02,
    "neg_square": 0.01,
    "abs": 0.01,
    "pde": 0.01,
    "local_time_rel": 0.02,
    "occupation_limit_frac": 0.05,
    "occupation_formula_rel": 0.05,
    "growth_frac": 0.05,
    "tanaka_residual": 0.02,
    "tail_fraction": 0.01,
    "dominated_fraction": 0.05,
    "ae_identity": 1e-10,
}


@dataclass(frozen=True)
class RunConfig:
    sigma_low: float = 0.5
    sigma_high: float = 1.0
    T: float = 1.0
    seed: int = 42
    k: int = 5
    pivot: float = 0.0
    strict_band: bool = True
    # simulate / expectation / localtime
    steps: int | None = None
    paths: int | None = None
    payoff: str = "square"
    epsilon: float = 0.02
    symmetric: bool = False
    level_spacing: float = 0.02  # in units of sigma_high * sqrt(T)
    level_span: float = 4.0
    # verify datasets
    main_steps: int = 4096
    main_paths: int = 100_000
    fine_steps: int = 16384
    fine_paths: int = 100_000
    sub_paths: int = 10_000
    identity_steps: int = 1024
    identity_paths: int = 2000
    ladder: tuple[int, ...] = (1024, 4096, 16384)
    qv_ladder: tuple[int, ...] = (64, 256, 1024)
    epsilons: tuple[float, ...] = (0.2, 0.1, 0.05)
    moment_order: int = 2
    h0: float = 0.4
    pair_centre: float = 0.0
    krylov_p: float = 2.0
    krylov_lengths: tuple[float, ...] = (1.0, 0.25, 0.0625)
    tail_thresholds: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    pde_dx: float = 0.02
    checks: tuple[str, ...] = ("all",)
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    chunk_paths: int = 256
    out: str = ""

    @property
    def band(self) -> VolatilityBand:
        return VolatilityBand(self.sigma_low, self.sigma_high)

    def family(self):
        return default_strategy_family(self.band, self.k, self.pivot)

    def tol(self, key: str) -> float:
        return float(self.tolerances[key])

    def enabled_checks(self) -> list[str]:
        if "all" in self.checks:
            return list(ALL_CHECKS)
        return list(dict.fromkeys(self.checks))

    def echo(self) -> dict:
        """Fully resolved configuration (reproduces outputs bit-identically)."""
        d = asdict(self)
        d.pop("out")
        for key, value in d.items():
            if isinstance(value, tuple):
                d[key] = list(value)
        return d

    def validate(self) -> "RunConfig":
        try:
            self.band
        except GmartError as exc:
            raise ConfigError(str(exc)) from exc
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ConfigError(f"T must be positive, got {self.T}")
        if isinstance(self.seed, bool) or int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an integer in [0, 2**64), got {self.seed}")
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")
        for name in ("steps", "paths"):
            v = getattr(self, name)
            if v is not None and (int(v) != v or v < 1):
                raise ConfigError(f"{name} must be an integer >= 1, got {v}")
        for name in ("main_steps", "main_paths", "fine_steps", "fine_paths", "sub_paths",
                     "identity_steps", "identity_paths", "chunk_paths"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {v}")
        for name in ("ladder", "qv_ladder"):
            lad = getattr(self, name)
            if len(lad) < 2 or any(b <= a for a, b in zip(lad, lad[1:])) or lad[0] < 1:
                raise ConfigError(f"{name} must be strictly increasing step counts, got {list(lad)}")
        eps = self.epsilons
        if len(eps) < 2 or any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError(f"epsilons must be positive and strictly decreasing, got {list(eps)}")
        for name in ("epsilon", "level_spacing", "level_span", "h0", "pde_dx"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.moment_order < 2:
            raise ConfigError("moment_order must be >= 2")
        if self.krylov_p < 1:
            raise ConfigError("krylov_p must be >= 1")
        th = self.tail_thresholds
        if any(b <= a for a, b in zip(th, th[1:])):
            raise ConfigError("tail_thresholds must be increasing")
        unknown = [c for c in self.checks if c != "all" and c not in ALL_CHECKS]
        if unknown:
            raise ConfigError(f"unknown check(s) {unknown}; valid: all, {', '.join(ALL_CHECKS)}")
        bad_tol = [k for k in self.tolerances if k not in DEFAULT_TOLERANCES]
        if bad_tol:
            raise ConfigError(f"unknown tolerance(s) {bad_tol}")
        return self


_TUPLES = {f.name for f in fields(RunConfig) if str(f.type).startswith("tuple")}
_NAMES = {f.name for f in fields(RunConfig)}


def _coerce(key, value):
    if key in _TUPLES:
        if not isinstance(value, (list, tuple)):
            value = [value]
        return tuple(value)
    return value


def from_mapping(data: dict, base: RunConfig | None = None) -> RunConfig:
    """Build a config from a (possibly nested) mapping; sections are flattened."""
    flat: dict = {}
    for key, value in data.items():
        if isinstance(value, dict) and key != "tolerances":
            flat.update(value)
        else:
            flat[key] = value
    unknown = sorted(set(flat) - _NAMES)
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
    base = base or RunConfig()
    kw = {k: _coerce(k, v) for k, v in flat.items()}
    if "tolerances" in kw:
        tol = dict(base.tolerances)
        tol.update(kw["tolerances"])
        kw["tolerances"] = tol
    try:
        return replace(base, **kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return from_mapping(data)
