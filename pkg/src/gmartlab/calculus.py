"""Stochastic integrals against M and the two integrand norms.

Integrals are left-point sums on the path grid.  Norm estimates use the
plain time measure dt (``m_norm``) or the quadratic-variation measure
sigma^2 dt (``mbar_norm``).  Upper expectations are taken as the maximum
of per-bundle means, one bundle per strategy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, GridMismatchError, InvalidArgument
from .model import TimeGrid
from .paths import PathBundle


@dataclass(frozen=True)
class SimpleProcess:
    """eta = sum_k xi_k 1[t_k, t_{k+1}) with xi_k = rule(t_k, path values up to t_k).

    ``rule`` receives the breakpoint time and the (n_paths, j+1) block of path
    values up to that node, and returns one value per path.  eta vanishes
    outside [t_0, t_K).
    """

    breakpoints: tuple[float, ...]
    rule: Callable[[float, np.ndarray], np.ndarray]

    def __post_init__(self):
        bp = tuple(float(t) for t in self.breakpoints)
        if len(bp) < 2:
            raise InvalidArgument("a simple process needs at least two breakpoints")
        if bp[0] < 0 or any(b <= a for a, b in zip(bp, bp[1:])):
            raise InvalidArgument("breakpoints must be increasing and start at t >= 0")
        object.__setattr__(self, "breakpoints", bp)

    @classmethod
    def constant(cls, value: float, T: float) -> "SimpleProcess":
        return cls((0.0, float(T)), lambda t, m: np.full(m.shape[0], float(value)))

    @classmethod
    def left_point(cls, grid: TimeGrid) -> "SimpleProcess":
        """xi_j = M_{t_j} at every grid node."""
        return cls(tuple(grid.nodes), lambda t, m: m[:, -1])

    def node_indices(self, grid: TimeGrid) -> np.ndarray:
        if self.breakpoints[-1] > grid.horizon + grid.mesh() / 100:
            raise GridMismatchError(f"breakpoint {self.breakpoints[-1]} lies beyond T={grid.horizon}")
        idx = np.array([grid.index_of(t, rel_tol=0.01) for t in self.breakpoints])
        if np.any(np.diff(idx) <= 0):
            raise GridMismatchError("two breakpoints snap to the same grid node")
        return idx

    def values(self, bundle: PathBundle) -> np.ndarray:
        """The integrand on each grid step, shape (n_paths, N)."""
        idx = self.node_indices(bundle.grid)
        eta = np.zeros((bundle.n_paths, bundle.grid.n_steps))
        for k in range(len(idx) - 1):
            j = int(idx[k])
            xi = np.broadcast_to(
                np.asarray(self.rule(float(bundle.grid.nodes[j]), bundle.m_values[:, : j + 1]), dtype=float),
                (bundle.n_paths,),
            )
            if not np.isfinite(xi).all():
                raise DomainError(f"simple process value at t={bundle.grid.nodes[j]} is not finite")
            eta[:, j : int(idx[k + 1])] = xi[:, None]
        return eta


@dataclass(frozen=True)
class StateIntegrand:
    """eta_t = f(M_t) for a Borel f with declared growth |f(x)| <= C (1 + |x|)."""

    f: Callable[[np.ndarray], np.ndarray]
    growth_bound: float = math.inf
    name: str = "f"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        y = np.asarray(self.f(x), dtype=float)
        y = np.broadcast_to(y, x.shape)
        bad = ~np.isfinite(y)
        if bad.any():
            raise DomainError(f"{self.name}(x) is not finite at x={float(x[bad].flat[0])!r}")
        if math.isfinite(self.growth_bound):
            over = np.abs(y) > self.growth_bound * (1.0 + np.abs(x)) * (1 + 1e-12)
            if over.any():
                raise DomainError(
                    f"{self.name} violates its growth bound {self.growth_bound} at x={float(x[over].flat[0])!r}"
                )
        return y

    def values(self, bundle: PathBundle) -> np.ndarray:
        return self(bundle.m_values[:, :-1])


def integrand_values(eta, bundle: PathBundle) -> np.ndarray:
    """Per-step integrand matrix (n_paths, N) from any supported integrand form."""
    if isinstance(eta, (SimpleProcess, StateIntegrand)):
        return eta.values(bundle)
    if callable(eta):
        out = np.asarray(eta(bundle), dtype=float)
    else:
        out = np.asarray(eta, dtype=float)
    return np.broadcast_to(out, (bundle.n_paths, bundle.grid.n_steps))


def _cumulative(eta: np.ndarray, bundle: PathBundle) -> np.ndarray:
    out = np.zeros((bundle.n_paths, bundle.grid.n_steps + 1))
    np.cumsum(eta * bundle.increments, axis=1, out=out[:, 1:])
    return out


def integrate_simple(eta: SimpleProcess, bundle: PathBundle) -> np.ndarray:
    """Cumulative left-point sums sum_{j<k} xi_j (M_{j+1} - M_j), shape (n_paths, N+1)."""
    return _cumulative(eta.values(bundle), bundle)


def integrate_state(f, bundle: PathBundle) -> np.ndarray:
    """Cumulative sum_{j<k} f(M_j) dM_j; non-finite f values raise a DomainError."""
    if not isinstance(f, StateIntegrand):
        f = StateIntegrand(f)
    return _cumulative(f.values(bundle), bundle)


def integrate_terminal(eta, bundle: PathBundle) -> np.ndarray:
    """Integral at T only (no cumulative matrix)."""
    return np.sum(integrand_values(eta, bundle) * bundle.increments, axis=1)


# --------------------------------------------------------------------------
# norms


def _as_bundles(bundles) -> list[PathBundle]:
    if isinstance(bundles, PathBundle):
        return [bundles]
    bundles = list(bundles)
    if not bundles:
        raise InvalidArgument("need at least one bundle")
    return bundles


def _check_p(p: float):
    if not (p >= 1 and math.isfinite(p)):
        raise InvalidArgument(f"norm order p must be >= 1, got {p}")


def path_moment(eta, bundle: PathBundle, p: float, measure: str = "qv") -> np.ndarray:
    """Per path sum_j |eta_j|^p w_j with w = dt (measure='dt') or sigma^2 dt ('qv')."""
    _check_p(p)
    e = np.abs(integrand_values(eta, bundle))
    if p != 1:
        e = e**p
    if measure == "dt":
        return e @ bundle.grid.dt
    if measure == "qv":
        return np.sum(e * bundle.variance_increments, axis=1)
    raise InvalidArgument(f"measure must be 'dt' or 'qv', got {measure!r}")


def mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    mean = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return mean, se


@dataclass(frozen=True)
class UpperEstimate:
    value: float
    se: float
    label: str


def upper_of(samples: dict[str, np.ndarray]) -> UpperEstimate:
    """Max over strategies of the sample mean (first label wins ties)."""
    best = None
    for label, x in samples.items():
        m, s = mean_se(x)
        if best is None or m > best.value:
            best = UpperEstimate(m, s, label)
    if best is None:
        raise InvalidArgument("no samples")
    return best


def _norm(eta, bundles, p, measure):
    _check_p(p)
    samples = {f"{i}:{b.strategy_label}": path_moment(eta, b, p, measure) for i, b in enumerate(_as_bundles(bundles))}
    return max(0.0, upper_of(samples).value) ** (1.0 / p)


def m_norm(eta, bundles, p: float = 2.0) -> float:
    """(max over bundles of mean sum |eta|^p dt)^(1/p)."""
    return _norm(eta, bundles, p, "dt")


def mbar_norm(eta, bundles, p: float = 2.0) -> float:
    """(max over bundles of mean sum |eta|^p sigma^2 dt)^(1/p)."""
    return _norm(eta, bundles, p, "qv")


# --------------------------------------------------------------------------
# convergence checks


@dataclass(frozen=True)
class SequenceResult:
    """Upper estimates along a parameter sequence with their standard errors."""

    params: tuple
    values: tuple[float, ...]
    se: tuple[float, ...]
    labels: tuple[str, ...]

    def nonincreasing(self, n_se: float = 2.0) -> bool:
        v, s = self.values, self.se
        return all(b <= a + n_se * math.hypot(sa, sb) for a, b, sa, sb in zip(v, v[1:], s, s[1:]))

    def strictly_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.values, self.values[1:]))

    def last_fraction(self) -> float:
        if self.values[0] == 0.0:
            return 0.0
        return self.values[-1] / self.values[0]


def sequence_from_samples(params, per_param: Sequence[dict[str, np.ndarray]]) -> SequenceResult:
    ups = [upper_of(d) for d in per_param]
    return SequenceResult(
        tuple(params), tuple(u.value for u in ups), tuple(u.se for u in ups), tuple(u.label for u in ups)
    )


def tail_samples(eta, bundle: PathBundle, p: float, thresholds) -> np.ndarray:
    """Per path and threshold: sum_j |eta_j|^p 1{|eta_j| > N} sigma_j^2 dt_j, shape (n, len(thresholds))."""
    _check_p(p)
    e = np.abs(integrand_values(eta, bundle))
    w = (e**p) * bundle.variance_increments
    return np.stack([np.sum(np.where(e > thr, w, 0.0), axis=1) for thr in thresholds], axis=1)


def tail_truncation_decay(eta, bundles, p: float, thresholds) -> SequenceResult:
    thresholds = tuple(float(t) for t in thresholds)
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise InvalidArgument("thresholds must be increasing")
    per = [{} for _ in thresholds]
    for i, b in enumerate(_as_bundles(bundles)):
        s = tail_samples(eta, b, p, thresholds)
        for k in range(len(thresholds)):
            per[k][f"{i}:{b.strategy_label}"] = s[:, k]
    return sequence_from_samples(thresholds, per)


def difference_samples(f_sequence, f, bundle: PathBundle, p: float = 2.0) -> np.ndarray:
    """Per path and n: sum_j |f_n(M_j) - f(M_j)|^p sigma_j^2 dt_j."""
    x = bundle.m_values[:, :-1]
    base = StateIntegrand(f, name="f")(x)
    w = bundle.variance_increments
    cols = []
    for k, fn in enumerate(f_sequence):
        d = np.abs(StateIntegrand(fn, name=f"f_{k + 1}")(x) - base) ** p
        cols.append(np.sum(d * w, axis=1))
    return np.stack(cols, axis=1)


def dominated_convergence_check(f_sequence, f, bundles, p: float = 2.0, growth_bound: float | None = None) -> SequenceResult:
    """Upper estimates of E[int |f_n(M) - f(M)|^p d<M>] along the sequence."""
    f_sequence = list(f_sequence)
    if growth_bound is not None:
        f_sequence = [StateIntegrand(fn, growth_bound, f"f_{k + 1}") for k, fn in enumerate(f_sequence)]
        f = StateIntegrand(f, growth_bound, "f")
    per = [{} for _ in f_sequence]
    for i, b in enumerate(_as_bundles(bundles)):
        s = difference_samples(f_sequence, f, b, p)
        for k in range(len(f_sequence)):
            per[k][f"{i}:{b.strategy_label}"] = s[:, k]
    return sequence_from_samples(tuple(range(1, len(f_sequence) + 1)), per)


def mollified_sign(n: int):
    """x -> clamp(n x, -1, 1)."""
    return lambda x: np.clip(n * np.asarray(x, dtype=float), -1.0, 1.0)


# --------------------------------------------------------------------------
# Krylov constants


@dataclass(frozen=True)
class KrylovConstants:
    p: float
    qv_mean: float
    qv_se: float
    abs_mean: float
    abs_se: float

    @property
    def C1(self) -> float:
        return self.qv_mean ** ((self.p - 1.0) / self.p)

    @property
    def C2(self) -> float:
        return self.abs_mean

    @property
    def C(self) -> float:
        return self.C1 * self.C2 ** (1.0 / self.p)

    def bound(self, g_lp_norm: float) -> float:
        return self.C * g_lp_norm


def krylov_constants(qv_terminal: dict[str, np.ndarray], abs_terminal: dict[str, np.ndarray], p: float) -> KrylovConstants:
    """C1 = E^[<M>_T]^((p-1)/p), C2 = E^[|M_T - M_0|] from per-strategy samples."""
    _check_p(p)
    q = upper_of(qv_terminal)
    a = upper_of(abs_terminal)
    return KrylovConstants(float(p), q.value, q.se, a.value, a.se)


def krylov_bound(bundles, p: float, g_lp_norm: float) -> float:
    bundles = _as_bundles(bundles)
    k = krylov_constants(
        {f"{i}": b.qv_exact[:, -1] for i, b in enumerate(bundles)},
        {f"{i}": np.abs(b.terminal - b.m_values[:, 0]) for i, b in enumerate(bundles)},
        p,
    )
    return k.bound(g_lp_norm)


def occupation_integral(g, bundle: PathBundle) -> np.ndarray:
    """Per path sum_j |g(M_j)| sigma_j^2 dt_j (left side of the Krylov estimate)."""
    x = bundle.m_values[:, :-1]
    gx = np.abs(np.asarray(g(x), dtype=float))
    if not np.isfinite(gx).all():
        raise DomainError("g is not finite on the sampled path values")
    return np.sum(gx * bundle.variance_increments, axis=1)
