"""Uncertainty model: volatility band, time grids and volatility strategies.

A :class:`StrategyFamily` is a finite stand-in for the set of probability
measures representing the sublinear expectation.  Monte Carlo suprema over a
finite family are therefore *lower* bounds of the true upper expectation; the
PDE solver in :mod:`gmartlab.expectation` supplies reference values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, InvalidArgument


@dataclass(frozen=True)
class VolatilityBand:
    sigma_low: float
    sigma_high: float

    def __post_init__(self):
        lo, hi = float(self.sigma_low), float(self.sigma_high)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise InvalidArgument(f"volatility band must be finite, got [{lo}, {hi}]")
        if lo < 0:
            raise InvalidArgument(f"sigma_low must be >= 0, got {lo}")
        if hi <= 0:
            raise InvalidArgument(f"sigma_high must be > 0, got {hi}")
        if lo > hi:
            raise InvalidArgument(
                f"volatility band [{lo}, {hi}] is inverted: sigma_low > sigma_high"
            )
        object.__setattr__(self, "sigma_low", lo)
        object.__setattr__(self, "sigma_high", hi)

    @property
    def lam(self) -> float:
        """Lower variance bound (the non-degeneracy constant)."""
        return self.sigma_low**2

    @property
    def Lam(self) -> float:
        """Upper variance bound, the constant of assumption (H)."""
        return self.sigma_high**2

    @property
    def degenerate(self) -> bool:
        return self.sigma_low == 0.0

    def G(self, a):
        """Generator G(a) = (Lam * a^+ - lam * a^-) / 2, vectorized."""
        a = np.asarray(a, dtype=float)
        return 0.5 * (self.Lam * np.maximum(a, 0.0) - self.lam * np.maximum(-a, 0.0))

    def admit(self, sigma, strict: bool = True, where: str = "strategy"):
        """Check emitted volatilities against the band; clamp when not strict."""
        sigma = np.asarray(sigma, dtype=float)
        bad = (sigma < self.sigma_low) | (sigma > self.sigma_high) | ~np.isfinite(sigma)
        if not bad.any():
            return sigma
        if strict:
            first = sigma[bad].flat[0]
            raise DomainError(
                f"{where} emitted sigma={float(first)!r} outside band "
                f"[{self.sigma_low}, {self.sigma_high}]"
            )
        if not np.isfinite(sigma).all():
            raise DomainError(f"{where} emitted a non-finite sigma")
        return np.clip(sigma, self.sigma_low, self.sigma_high)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    horizon: float
    n_steps: int
    nodes: np.ndarray = field(repr=False)

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size != self.n_steps + 1:
            raise InvalidArgument("grid needs exactly n_steps + 1 nodes")
        if nodes[0] != 0.0 or nodes[-1] != self.horizon:
            raise InvalidArgument("grid must start at 0 and end at the horizon")
        if np.any(np.diff(nodes) <= 0):
            raise InvalidArgument("grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.nodes)

    def mesh(self) -> float:
        """Largest step, i.e. the mesh of the partition."""
        return float(np.max(self.dt))

    def index_of(self, t: float, rel_tol: float = 0.01) -> int:
        """Node index for time ``t``; must lie within ``rel_tol * mesh`` of a node."""
        from .errors import GridMismatchError

        j = int(np.argmin(np.abs(self.nodes - t)))
        if abs(self.nodes[j] - t) > rel_tol * self.mesh():
            raise GridMismatchError(
                f"time {t} is not on the grid (nearest node {self.nodes[j]})"
            )
        return j

    def same_as(self, other: "TimeGrid") -> bool:
        return self.n_steps == other.n_steps and np.array_equal(self.nodes, other.nodes)


def make_uniform_grid(T: float, N: int) -> TimeGrid:
    T = float(T)
    if not (T > 0 and math.isfinite(T)):
        raise InvalidArgument(f"horizon must be positive, got {T}")
    if int(N) != N or N < 1:
        raise InvalidArgument(f"number of steps must be an integer >= 1, got {N}")
    N = int(N)
    nodes = T * (np.arange(N + 1, dtype=float) / N)
    nodes[-1] = T
    return TimeGrid(T, N, nodes)


# --------------------------------------------------------------------------
# strategies


def _fmt(x: float) -> str:
    return f"{x:g}"


class ControlStrategy:
    """Adapted volatility policy.  Subclasses are immutable dataclasses."""

    label: str

    def static_sigmas(self) -> tuple[float, ...] | None:
        """All values the strategy can emit, when known without simulating."""
        return None


@dataclass(frozen=True)
class Constant(ControlStrategy):
    sigma: float
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "sigma", float(self.sigma))
        if not self.label:
            object.__setattr__(self, "label", f"const({_fmt(self.sigma)})")

    def static_sigmas(self):
        return (self.sigma,)

    def schedule(self, grid: TimeGrid) -> np.ndarray:
        return np.full(grid.n_steps, self.sigma)


@dataclass(frozen=True)
class PiecewiseDeterministic(ControlStrategy):
    """sigma(t) = value of the last schedule entry with time <= t."""

    schedule_points: tuple[tuple[float, float], ...]
    label: str = ""

    def __post_init__(self):
        pts = tuple((float(t), float(s)) for t, s in self.schedule_points)
        if not pts:
            raise InvalidArgument("piecewise schedule is empty")
        times = [t for t, _ in pts]
        if times[0] != 0.0 or any(b <= a for a, b in zip(times, times[1:])):
            raise InvalidArgument("schedule times must start at 0 and increase strictly")
        object.__setattr__(self, "schedule_points", pts)
        if not self.label:
            body = ",".join(f"{_fmt(t)}:{_fmt(s)}" for t, s in pts)
            object.__setattr__(self, "label", f"piecewise({body})")

    def static_sigmas(self):
        return tuple(s for _, s in self.schedule_points)

    def schedule(self, grid: TimeGrid) -> np.ndarray:
        times = np.array([t for t, _ in self.schedule_points])
        values = np.array([s for _, s in self.schedule_points])
        k = np.searchsorted(times, grid.nodes[:-1], side="right") - 1
        return values[k]


@dataclass(frozen=True)
class Feedback(ControlStrategy):
    """State feedback ``rule(t, m) -> sigma`` evaluated on the current value only.

    ``rule`` receives the node time and the vector of current path values and
    must return one volatility per path.  Adaptedness holds by construction.
    """

    rule: Callable[[float, np.ndarray], np.ndarray]
    label: str = "feedback"


@dataclass(frozen=True)
class BangBang(ControlStrategy):
    """sigma = sigma_above if m >= pivot else sigma_below."""

    sigma_above: float
    sigma_below: float
    pivot: float = 0.0
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "sigma_above", float(self.sigma_above))
        object.__setattr__(self, "sigma_below", float(self.sigma_below))
        object.__setattr__(self, "pivot", float(self.pivot))
        if not self.label:
            arrow = "up" if self.sigma_above >= self.sigma_below else "down"
            name = f"bangbang_{arrow}"
            if self.pivot != 0.0:
                name += f"@{_fmt(self.pivot)}"
            object.__setattr__(self, "label", name)

    def static_sigmas(self):
        return (self.sigma_above, self.sigma_below)

    def rule(self, t: float, m: np.ndarray) -> np.ndarray:
        return np.where(m >= self.pivot, self.sigma_above, self.sigma_below)


@dataclass(frozen=True)
class RandomSwitching(ControlStrategy):
    """Volatility alternates between two values at Poisson(intensity) times.

    The switching clock uses its own random stream (``seed_offset``) and is
    independent of the driving noise.
    """

    intensity: float
    sigma_a: float
    sigma_b: float
    seed_offset: int = 1
    label: str = ""

    def __post_init__(self):
        if not (self.intensity >= 0 and math.isfinite(self.intensity)):
            raise InvalidArgument("switch intensity must be finite and >= 0")
        if int(self.seed_offset) != self.seed_offset or self.seed_offset < 1:
            raise InvalidArgument("seed_offset must be an integer >= 1")
        if not self.label:
            object.__setattr__(
                self,
                "label",
                f"switch({_fmt(self.intensity)};{_fmt(self.sigma_a)},{_fmt(self.sigma_b)})",
            )

    def static_sigmas(self):
        return (float(self.sigma_a), float(self.sigma_b))


@dataclass(frozen=True)
class StrategyFamily:
    strategies: tuple[ControlStrategy, ...]
    label: str = "family"
    band: VolatilityBand | None = None

    def __post_init__(self):
        strategies = tuple(self.strategies)
        if not strategies:
            raise InvalidArgument("strategy family must not be empty")
        labels = [s.label for s in strategies]
        if len(set(labels)) != len(labels):
            raise InvalidArgument(f"strategy labels must be unique: {labels}")
        object.__setattr__(self, "strategies", strategies)
        if self.band is not None:
            for s in strategies:
                sig = s.static_sigmas()
                if sig is not None:
                    self.band.admit(sig, strict=True, where=s.label)

    def __iter__(self):
        return iter(self.strategies)

    def __len__(self):
        return len(self.strategies)

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.strategies]

    def extended(self, extra: Sequence[ControlStrategy], label: str | None = None):
        return StrategyFamily(self.strategies + tuple(extra), label or self.label, self.band)


def default_strategy_family(band: VolatilityBand, k: int = 5, pivot: float = 0.0) -> StrategyFamily:
    """k equally spaced constants on the band plus the two bang-bang feedbacks.

    Duplicates (degenerate bands) are removed, so ``[1, 1]`` yields a single
    ``Constant(1)``.
    """
    if int(k) != k or k < 2:
        raise InvalidArgument(f"k must be an integer >= 2, got {k}")
    lo, hi = band.sigma_low, band.sigma_high
    sigmas = np.linspace(lo, hi, int(k))
    sigmas[0], sigmas[-1] = lo, hi
    members: list[ControlStrategy] = []
    for s in sigmas:
        c = Constant(float(s))
        if c not in members:
            members.append(c)
    for above, below in ((hi, lo), (lo, hi)):
        s = Constant(hi) if above == below else BangBang(above, below, pivot)
        if s not in members:
            members.append(s)
    return StrategyFamily(tuple(members), label=f"default(k={int(k)})", band=band)
