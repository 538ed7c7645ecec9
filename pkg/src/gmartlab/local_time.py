"""Local time L_t(a) of a discrete path, two ways.

* Tanaka: L_t(a) = |M_t - a| - |M_0 - a| - sum_{j} sgn(M_j - a) dM_j with
  sgn(0) = -1.  Each step contributes 2|M_{j+1} - a| when it crosses a
  (a in [M_j, M_{j+1}) going up, a in (M_{j+1}, M_j) going down) and 0
  otherwise, which is how the compiled kernels accumulate it.
* Occupation: (1/eps) sum_j 1[a, a+eps)(M_j) sigma_j^2 dt_j, or the
  symmetric window (a-eps, a+eps) with 1/(2 eps).

Fields are stored at a subset of time nodes (``record``) to bound memory.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .calculus import integrate_state, upper_of
from .errors import CoverageError, DiagnosticError, InvalidArgument
from .model import TimeGrid, VolatilityBand
from .paths import PathBundle


def sgn(x):
    """1 for x > 0, -1 for x <= 0."""
    out = np.where(np.asarray(x) > 0, 1.0, -1.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class LevelGrid:
    """Uniform levels a_k = spacing * (first + k), k = 0..count-1."""

    spacing: float
    first: int
    count: int
    levels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not (self.spacing > 0 and math.isfinite(self.spacing)):
            raise InvalidArgument(f"level spacing must be positive, got {self.spacing}")
        if self.count < 1:
            raise InvalidArgument("level grid needs at least one level")
        lv = float(self.spacing) * np.arange(int(self.first), int(self.first) + int(self.count), dtype=float)
        lv.setflags(write=False)
        object.__setattr__(self, "levels", lv)

    @classmethod
    def symmetric(cls, half_width: float, spacing: float) -> "LevelGrid":
        k = int(math.floor(half_width / spacing + 1e-9))
        return cls(float(spacing), -k, 2 * k + 1)

    @property
    def lo(self) -> float:
        return float(self.levels[0])

    @property
    def hi(self) -> float:
        return float(self.levels[-1])

    def __len__(self):
        return self.count

    def index_of(self, a: float) -> int:
        k = int(np.argmin(np.abs(self.levels - a)))
        if abs(self.levels[k] - a) > 1e-9 * max(1.0, abs(a)):
            raise InvalidArgument(f"level {a} is not on the grid")
        return k


def default_levels(band: VolatilityBand, T: float, span: float = 4.0, resolution: float = 0.02) -> LevelGrid:
    """Spacing resolution * sigma_high sqrt(T) over +-span * sigma_high sqrt(T)."""
    scale = band.sigma_high * math.sqrt(T)
    return LevelGrid.symmetric(span * scale, resolution * scale)


def default_record(grid: TimeGrid, max_points: int = 65) -> np.ndarray:
    N = grid.n_steps
    if N + 1 <= max_points:
        return np.arange(N + 1)
    return np.unique(np.round(np.linspace(0, N, max_points)).astype(np.int64))


def _record(grid, record):
    rec = default_record(grid) if record is None else np.asarray(record, dtype=np.int64)
    if rec.ndim != 1 or rec.size == 0 or np.any(np.diff(rec) <= 0) or rec[0] < 0 or rec[-1] > grid.n_steps:
        raise InvalidArgument("record must be increasing node indices within the grid")
    return rec


@dataclass(frozen=True, eq=False)
class LocalTimeField:
    """Per-path local time on levels x recorded time nodes, shape (n_paths, K, R)."""

    levels: LevelGrid
    grid: TimeGrid
    record: np.ndarray = field(repr=False)
    tanaka: np.ndarray | None = field(default=None, repr=False)
    occupation: np.ndarray | None = field(default=None, repr=False)
    epsilon: float | None = None
    symmetric: bool = False

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes[self.record]

    def terminal(self, kind: str = "tanaka") -> np.ndarray:
        """L_T(a) per path and level, shape (n_paths, K)."""
        if self.record[-1] != self.grid.n_steps:
            raise InvalidArgument("field does not record the terminal time")
        arr = getattr(self, kind)
        if arr is None:
            raise InvalidArgument(f"field has no {kind} part")
        return arr[:, :, -1]

    def merged(self, other: "LocalTimeField") -> "LocalTimeField":
        return LocalTimeField(
            self.levels,
            self.grid,
            self.record,
            self.tanaka if self.tanaka is not None else other.tanaka,
            self.occupation if self.occupation is not None else other.occupation,
            self.epsilon if self.epsilon is not None else other.epsilon,
            self.symmetric if self.epsilon is not None else other.symmetric,
        )

    def summary(self) -> dict:
        out: dict = {"levels": [self.levels.lo, self.levels.hi, self.levels.spacing], "epsilon": self.epsilon}
        for kind in ("tanaka", "occupation"):
            arr = getattr(self, kind)
            if arr is not None:
                mean = arr.mean(axis=0)
                out[kind] = {
                    "min": float(arr.min()),
                    "max": float(arr.max()),
                    "mean_min": float(mean.min()),
                    "mean_max": float(mean.max()),
                }
        if self.tanaka is not None and self.occupation is not None:
            d = np.abs(self.tanaka[:, :, -1] - self.occupation[:, :, -1])
            out["discrepancy_T"] = {
                "mean_abs": float(d.mean()),
                "max_abs": float(d.max()),
                "rms": float(np.sqrt(np.mean(d**2))),
            }
        return out

    def to_csv(self, path):
        """Columns level, time, mean_tanaka, mean_occupation, se (of the tanaka mean, else occupation)."""
        n = (self.tanaka if self.tanaka is not None else self.occupation).shape[0]
        means = {}
        for kind in ("tanaka", "occupation"):
            arr = getattr(self, kind)
            means[kind] = None if arr is None else arr.mean(axis=0)
        ref = self.tanaka if self.tanaka is not None else self.occupation
        se = ref.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(ref.shape[1:], np.nan)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "time", "mean_tanaka", "mean_occupation", "se"])
            for k, a in enumerate(self.levels.levels):
                for r, t in enumerate(self.times):
                    w.writerow([
                        repr(float(a)),
                        repr(float(t)),
                        "" if means["tanaka"] is None else repr(float(means["tanaka"][k, r])),
                        "" if means["occupation"] is None else repr(float(means["occupation"][k, r])),
                        repr(float(se[k, r])),
                    ])


def local_time_tanaka(bundle: PathBundle, levels: LevelGrid, record=None) -> LocalTimeField:
    rec = _record(bundle.grid, record)
    out = np.empty((bundle.n_paths, len(levels), rec.size))
    _kernels.tanaka_levels(
        np.ascontiguousarray(bundle.m_values), levels.levels, levels.spacing, rec, out
    )
    return LocalTimeField(levels, bundle.grid, rec, tanaka=out)


def local_time_tanaka_definition(bundle: PathBundle, a: float) -> np.ndarray:
    """|M_t - a| - |M_0 - a| - int_0^t sgn(M - a) dM at every node, shape (n_paths, N+1)."""
    m = bundle.m_values
    return np.abs(m - a) - np.abs(m[:, :1] - a) - integrate_state(lambda x: sgn(x - a), bundle)


def local_time_occupation(
    bundle: PathBundle, levels: LevelGrid, epsilon: float, symmetric: bool = False, record=None
) -> LocalTimeField:
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise InvalidArgument(f"epsilon must be positive, got {epsilon}")
    rec = _record(bundle.grid, record)
    out = np.empty((bundle.n_paths, len(levels), rec.size))
    _kernels.occupation_levels(
        np.ascontiguousarray(bundle.m_values),
        bundle.variance_increments,
        levels.levels,
        levels.spacing,
        float(epsilon),
        bool(symmetric),
        rec,
        out,
    )
    return LocalTimeField(levels, bundle.grid, rec, occupation=out, epsilon=float(epsilon), symmetric=bool(symmetric))


def local_time_field(bundle, levels, epsilon, symmetric=False, record=None) -> LocalTimeField:
    return local_time_tanaka(bundle, levels, record).merged(
        local_time_occupation(bundle, levels, epsilon, symmetric, record)
    )


def tanaka_at(bundle: PathBundle, levels) -> np.ndarray:
    """Terminal Tanaka local time at a few arbitrary levels, shape (n_paths, K)."""
    lv = np.atleast_1d(np.asarray(levels, dtype=float))
    out = np.empty((bundle.n_paths, lv.size))
    _kernels.tanaka_few(np.ascontiguousarray(bundle.m_values), lv, out)
    return out


def occupation_at(bundle: PathBundle, levels, epsilons, symmetric: bool = False) -> np.ndarray:
    """Terminal occupation estimates, shape (n_paths, K, E)."""
    lv = np.atleast_1d(np.asarray(levels, dtype=float))
    eps = np.atleast_1d(np.asarray(epsilons, dtype=float))
    if np.any(eps <= 0):
        raise InvalidArgument("epsilon must be positive")
    out = np.empty((bundle.n_paths, lv.size, eps.size))
    _kernels.occupation_few(np.ascontiguousarray(bundle.m_values), bundle.variance_increments, lv, eps, bool(symmetric), out)
    return out


# --------------------------------------------------------------------------
# checks


def check_coverage(bundle: PathBundle, levels: LevelGrid):
    lo, hi = float(bundle.m_values.min()), float(bundle.m_values.max())
    if lo < levels.lo + levels.spacing or hi > levels.hi - levels.spacing:
        raise CoverageError(
            f"levels [{levels.lo}, {levels.hi}] do not cover the path range [{lo:.4g}, {hi:.4g}] "
            f"with a margin of one spacing"
        )


def occupation_formula_check(bundle: PathBundle, g, levels: LevelGrid, L_T: np.ndarray | None = None) -> np.ndarray:
    """Per-path |lhs - rhs| / |lhs| for sum g(M_j) sigma^2 dt  vs  trapezoid of g(a) L_T(a).

    Paths with lhs = rhs = 0 get 0; lhs = 0 and rhs != 0 gives inf.
    """
    check_coverage(bundle, levels)
    x = bundle.m_values[:, :-1]
    lhs = np.sum(np.asarray(g(x), dtype=float) * bundle.variance_increments, axis=1)
    if L_T is None:
        L_T = local_time_tanaka(bundle, levels, record=[bundle.grid.n_steps]).terminal()
    ga = np.broadcast_to(np.asarray(g(levels.levels), dtype=float), (len(levels),)).copy()
    wts = np.full(len(levels), levels.spacing)
    wts[0] = wts[-1] = 0.5 * levels.spacing
    rhs = L_T @ (ga * wts)
    diff = np.abs(lhs - rhs)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(diff == 0.0, 0.0, diff / np.abs(lhs))
    return rel


@dataclass(frozen=True, eq=False)
class GrowthResult:
    violation: np.ndarray = field(repr=False)  # (n_paths, K)
    total: np.ndarray = field(repr=False)
    eps_band: float

    @property
    def fraction(self) -> np.ndarray:
        """Per path: violating mass over total mass (0 when there is no mass)."""
        v = self.violation.sum(axis=1)
        t = self.total.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(t > 0, v / t, 0.0)


def growth_band(epsilon: float, sigma_high: float, grid: TimeGrid) -> float:
    N = grid.n_steps
    return float(epsilon + 2.0 * sigma_high * math.sqrt(grid.mesh() * math.log(max(N, 2))))


def growth_set_check(
    field_: LocalTimeField,
    bundle: PathBundle,
    estimator: str = "tanaka",
    sigma_high: float | None = None,
    eps_band: float | None = None,
) -> GrowthResult:
    """Mass of dL_t(a) carried by steps with |M_j - a| > eps_band."""
    eps = field_.epsilon if field_.epsilon is not None else field_.levels.spacing
    if eps_band is None:
        s = float(bundle.sigma_used.max()) if sigma_high is None else float(sigma_high)
        eps_band = growth_band(eps, s, bundle.grid)
    mode = {"tanaka": 0, "occupation": 2 if field_.symmetric else 1}.get(estimator)
    if mode is None:
        raise InvalidArgument(f"estimator must be 'tanaka' or 'occupation', got {estimator!r}")
    n, K = bundle.n_paths, len(field_.levels)
    viol = np.empty((n, K))
    total = np.empty((n, K))
    _kernels.growth_violation(
        np.ascontiguousarray(bundle.m_values),
        bundle.variance_increments,
        field_.levels.levels,
        field_.levels.spacing,
        float(eps),
        float(eps_band),
        mode,
        viol,
        total,
    )
    return GrowthResult(viol, total, float(eps_band))


# --------------------------------------------------------------------------
# level regularity (moment scaling of a -> int sgn(M - a) dM)


def level_pairs(h0: float = 0.4, n_gaps: int = 4, centre: float = 0.0):
    gaps = h0 / 2.0 ** np.arange(n_gaps)
    return gaps, centre - gaps / 2, centre + gaps / 2


def pair_moment_samples(bundle: PathBundle, xs, ys, n: int) -> np.ndarray:
    """Per path sup_t |int sgn(M-x) dM - int sgn(M-y) dM|^(2n), shape (n_paths, G)."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    out = np.empty((bundle.n_paths, xs.size))
    _kernels.pair_sup_moments(np.ascontiguousarray(bundle.m_values), xs, ys, float(2 * n), out)
    return out


@dataclass(frozen=True)
class RegularityResult:
    n: int
    gaps: tuple[float, ...]
    moments: tuple[float, ...]
    se: tuple[float, ...]
    labels: tuple[str, ...]
    slope: float
    intercept: float
    calibrated_constant: float
    raw_ok: tuple[bool, ...]

    @property
    def slope_ok(self) -> bool:
        return self.slope >= self.n - 0.5

    @property
    def passed(self) -> bool:
        return self.slope_ok and all(self.raw_ok)


def regularity_from_samples(gaps, samples: dict[str, np.ndarray], n: int) -> RegularityResult:
    """Fit log E^[moment] against log h; calibrate C_n N at the largest gap."""
    if n < 2:
        raise InvalidArgument(f"moment order n must be >= 2, got {n}")
    gaps = np.asarray(gaps, dtype=float)
    if gaps.size < 4:
        raise InvalidArgument("need at least 4 level pairs")
    ups = [upper_of({k: v[:, g] for k, v in samples.items()}) for g in range(gaps.size)]
    mom = np.array([u.value for u in ups])
    if not np.all(np.isfinite(mom)) or np.any(mom <= 0) or np.ptp(np.log(gaps)) == 0:
        raise DiagnosticError(f"degenerate moment fit: moments {mom.tolist()}")
    slope, intercept = np.polyfit(np.log(gaps), np.log(mom), 1)
    k0 = int(np.argmax(gaps))
    C = mom[k0] / gaps[k0] ** n
    raw = tuple(bool(mom[g] <= C * gaps[g] ** n) for g in range(gaps.size))
    return RegularityResult(
        n, tuple(gaps.tolist()), tuple(mom.tolist()), tuple(u.se for u in ups), tuple(u.label for u in ups),
        float(slope), float(intercept), float(C), raw,
    )


def level_regularity_check(bundles, n: int = 2, h0: float = 0.4, n_gaps: int = 4, centre: float = 0.0) -> RegularityResult:
    if isinstance(bundles, PathBundle):
        bundles = [bundles]
    gaps, xs, ys = level_pairs(h0, n_gaps, centre)
    samples = {f"{i}:{b.strategy_label}": pair_moment_samples(b, xs, ys, n) for i, b in enumerate(bundles)}
    return regularity_from_samples(gaps, samples, n)


__all__ = [
    "sgn", "LevelGrid", "LocalTimeField", "default_levels", "default_record", "local_time_tanaka",
    "local_time_tanaka_definition", "local_time_occupation", "local_time_field", "tanaka_at",
    "occupation_at", "occupation_formula_check", "growth_set_check", "GrowthResult", "growth_band",
    "level_pairs", "pair_moment_samples", "regularity_from_samples", "level_regularity_check",
    "RegularityResult", "check_coverage",
]
