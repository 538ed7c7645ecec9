"""Upper and lower expectations over a strategy family, and a G-heat PDE oracle.

The Monte Carlo upper value is the largest per-strategy mean.  Because the
family is finite it bounds the true upper expectation from below; the PDE
solution of  u_t + G(u_xx) = 0,  u(T, .) = phi  gives the reference value of
E^[phi(M_T)] for the full band.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .calculus import mean_se
from .errors import DomainError, InvalidArgument
from .model import StrategyFamily, TimeGrid, VolatilityBand
from .paths import PathBundle, Probe, sweep

FINITE_FAMILY_NOTE = (
    "upper is a maximum over a finite strategy family, hence a lower bound "
    "of the true upper expectation; lower is the matching upper bound of the "
    "true lower expectation"
)


# --------------------------------------------------------------------------
# payoffs


@dataclass(frozen=True)
class Payoff:
    """A payoff phi(M_T) of the terminal value."""

    name: str
    terminal: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    smooth: bool = True

    def __call__(self, bundle: PathBundle) -> np.ndarray:
        x = bundle.terminal
        y = np.asarray(self.terminal(x), dtype=float)
        bad = ~np.isfinite(y)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise DomainError(
                f"payoff {self.name} is not finite on path {bundle.path_offset + i} "
                f"of {bundle.strategy_label} (M_T={float(x[i])!r})"
            )
        return y

    def scaled(self, c: float) -> "Payoff":
        f = self.terminal
        return Payoff(f"{c:g}*{self.name}", lambda x: c * f(x), self.smooth)


def _call(K):
    return Payoff(f"call({K:g})", lambda x: np.maximum(x - K, 0.0), smooth=False)


def _indicator(a, b):
    if not a < b:
        raise InvalidArgument(f"indicator needs a < b, got ({a}, {b})")
    return Payoff(f"indicator({a:g},{b:g})", lambda x: ((x >= a) & (x < b)).astype(float), smooth=False)


PAYOFFS: dict[str, tuple[int, Callable[..., Payoff]]] = {
    "linear": (0, lambda: Payoff("linear", lambda x: np.asarray(x, dtype=float))),
    "square": (0, lambda: Payoff("square", lambda x: np.asarray(x, dtype=float) ** 2)),
    "neg_square": (0, lambda: Payoff("neg_square", lambda x: -(np.asarray(x, dtype=float) ** 2))),
    "abs": (0, lambda: Payoff("abs", np.abs, smooth=False)),
    "sin": (0, lambda: Payoff("sin", np.sin)),
    "call": (1, _call),
    "indicator": (2, _indicator),
}

_PAYOFF_RE = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")


def payoff_names() -> list[str]:
    return ["linear", "square", "neg_square", "abs", "sin", "call(K)", "indicator(a,b)"]


def parse_payoff(text: str) -> Payoff:
    """Parse 'square', 'call(0.2)', 'indicator(0,1)' and so on."""
    m = _PAYOFF_RE.match(text)
    if not m or m.group(1) not in PAYOFFS:
        raise InvalidArgument(f"unknown payoff {text!r}; valid payoffs: {', '.join(payoff_names())}")
    nargs, make = PAYOFFS[m.group(1)]
    raw = [s for s in (m.group(2) or "").split(",") if s.strip()]
    if len(raw) != nargs:
        raise InvalidArgument(f"payoff {m.group(1)} takes {nargs} argument(s), got {len(raw)}")
    try:
        args = [float(s) for s in raw]
    except ValueError as exc:
        raise InvalidArgument(f"bad payoff argument in {text!r}") from exc
    return make(*args)


# --------------------------------------------------------------------------
# estimates


@dataclass(frozen=True)
class EstimateReport:
    upper: float
    lower: float
    upper_se: float
    lower_se: float
    per_strategy: dict[str, dict]
    argmax_label: str
    argmin_label: str
    seed: int
    payoff: str = ""
    note: str = FINITE_FAMILY_NOTE

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def report_from_samples(samples: dict[str, np.ndarray], seed: int, payoff: str = "") -> EstimateReport:
    """Per-strategy mean/SE; upper = max mean, lower = min mean (first label wins ties)."""
    if not samples:
        raise InvalidArgument("no strategy samples")
    per = {}
    for label, x in samples.items():
        x = np.asarray(x, dtype=float)
        if not np.isfinite(x).all():
            i = int(np.flatnonzero(~np.isfinite(x))[0])
            raise DomainError(f"payoff sample {i} of {label} is not finite")
        m, s = mean_se(x)
        per[label] = {"mean": m, "se": s, "n_paths": int(x.shape[0])}
    hi = max(per, key=lambda k: per[k]["mean"])
    lo = min(per, key=lambda k: per[k]["mean"])
    return EstimateReport(
        per[hi]["mean"], per[lo]["mean"], per[hi]["se"], per[lo]["se"], per, hi, lo, int(seed), payoff
    )


def upper_expectation(
    payoff: Payoff | Callable[[PathBundle], np.ndarray],
    family: StrategyFamily,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    *,
    strict: bool = True,
    chunk_paths: int = 256,
    workers: int = 1,
) -> EstimateReport:
    name = getattr(payoff, "name", "payoff")
    res = sweep(family, grid, n_paths, seed, [Probe("x", payoff)], strict=strict,
                chunk_paths=chunk_paths, workers=workers)
    return report_from_samples({k: v["x"] for k, v in res.items()}, seed, name)


def _is_pow2(x: float) -> bool:
    if x <= 0:
        return x == 0
    m, _ = math.frexp(x)
    return m == 0.5


@dataclass(frozen=True)
class SublinearityReport:
    upper_x: float
    upper_y: float
    upper_sum: float
    sum_slack: float
    lam: float
    upper_scaled: float
    constant: float
    upper_constant: float
    upper_min: float
    checks: dict[str, bool]

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def sublinearity_from_samples(
    x: dict[str, np.ndarray], y: dict[str, np.ndarray], seed: int, lam: float = 2.0, constant: float = 1.0
) -> SublinearityReport:
    if lam < 0:
        raise InvalidArgument("homogeneity needs lambda >= 0")
    rx = report_from_samples(x, seed)
    ry = report_from_samples(y, seed)
    rs = report_from_samples({k: x[k] + y[k] for k in x}, seed)
    rl = report_from_samples({k: lam * x[k] for k in x}, seed)
    rmin = report_from_samples({k: np.minimum(x[k], y[k]) for k in x}, seed)
    rc = report_from_samples({k: np.full(x[k].shape[0], float(constant)) for k in x}, seed)
    slack = 3.0 * math.sqrt(rs.upper_se**2 + rx.upper_se**2 + ry.upper_se**2)
    target = lam * rx.upper
    if _is_pow2(lam):
        homog = rl.upper == target
    else:
        homog = abs(rl.upper - target) <= 1e-12 * max(1.0, abs(target))
    checks = {
        "subadditivity": rs.upper <= rx.upper + ry.upper + slack,
        "homogeneity": bool(homog),
        "monotonicity": rmin.upper <= rx.upper and rmin.upper <= ry.upper,
        "constant": abs(rc.upper - constant) <= 1e-12 * max(1.0, abs(constant)) and rc.lower == rc.upper,
    }
    return SublinearityReport(rx.upper, ry.upper, rs.upper, slack, float(lam), rl.upper, float(constant),
                              rc.upper, rmin.upper, checks)


def sublinearity_check(X: Payoff, Y: Payoff, family, grid, n_paths, seed, lam: float = 2.0,
                       constant: float = 1.0, **kw) -> SublinearityReport:
    """Sub-additivity (3 SE), exact homogeneity, monotonicity and constant preservation."""
    res = sweep(family, grid, n_paths, seed, [Probe("x", X), Probe("y", Y)], **kw)
    return sublinearity_from_samples({k: v["x"] for k, v in res.items()},
                                     {k: v["y"] for k, v in res.items()}, seed, lam, constant)


# --------------------------------------------------------------------------
# G-heat equation


@dataclass(frozen=True, eq=False)
class GHeatSolution:
    x: np.ndarray = field(repr=False)
    u0: np.ndarray = field(repr=False)
    dx: float
    dt: float
    time_steps: int
    value: float

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "u0"])
            for a, b in zip(self.x, self.u0):
                w.writerow([repr(float(a)), repr(float(b))])


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


def cell_average(f, x: np.ndarray, dx: float) -> np.ndarray:
    """Average of f over [x - dx/2, x + dx/2] by 5-point Gauss-Legendre."""
    out = np.zeros_like(x)
    for z, w in zip(_GL_NODES, _GL_WEIGHTS):
        out += 0.5 * w * np.asarray(f(x + 0.5 * dx * z), dtype=float)
    return out


def g_heat_profile(
    terminal: Callable[[np.ndarray], np.ndarray],
    band: VolatilityBand,
    T: float,
    dx: float | None = None,
    half_width: float | None = None,
    time_steps: int | None = None,
    mollify: bool = True,
) -> GHeatSolution:
    """Explicit monotone scheme for u_t + G(u_xx) = 0 backward from u(T) = terminal."""
    if not T > 0:
        raise InvalidArgument(f"horizon must be positive, got {T}")
    scale = band.sigma_high * math.sqrt(T)
    need = 6.0 * scale
    half_width = need if half_width is None else float(half_width)
    if half_width < need * (1 - 1e-12):
        raise InvalidArgument(f"space grid must span +-{need:g} (6 sigma_high sqrt(T)), got +-{half_width:g}")
    dx = 0.02 * scale if dx is None else float(dx)
    if not dx > 0:
        raise InvalidArgument("dx must be positive")
    k = int(math.ceil(half_width / dx - 1e-9))
    x = dx * np.arange(-k, k + 1, dtype=float)
    dt_max = dx * dx / (2.0 * band.Lam)
    if time_steps is None:
        time_steps = int(math.ceil(T / dt_max * (1 + 1e-12)))
    dt = T / int(time_steps)
    if dt > dt_max * (1 + 1e-12):
        raise InvalidArgument(
            f"unstable scheme: dt = {dt:.6g} exceeds dx^2/(2 Lambda) = {dt_max:.6g}; "
            f"use at least {int(math.ceil(T / dt_max))} time steps"
        )
    u = cell_average(terminal, x, dx) if mollify else np.asarray(terminal(x), dtype=float).copy()
    if not np.isfinite(u).all():
        raise DomainError("terminal function is not finite on the space grid")
    lam, Lam = band.lam, band.Lam
    d2 = np.empty_like(u)
    inv = 1.0 / (dx * dx)
    for _ in range(int(time_steps)):
        d2[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) * inv
        d2[0] = d2[1]
        d2[-1] = d2[-2]
        u = u + dt * 0.5 * (Lam * np.maximum(d2, 0.0) - lam * np.maximum(-d2, 0.0))
    return GHeatSolution(x, u, dx, dt, int(time_steps), float(u[k]))


def solve_g_heat(terminal, band, T, dx=None, half_width=None, time_steps=None, mollify=True) -> float:
    """u(0, 0), the reference value of E^[terminal(M_T)]."""
    return g_heat_profile(terminal, band, T, dx, half_width, time_steps, mollify).value
