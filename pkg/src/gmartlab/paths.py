"""Discrete paths of M_t = int_0^t sigma_s dW_s under one volatility strategy.

Euler construction on the grid with sigma frozen at the left node:

    M_{j+1} = M_j + sigma(t_j, M_j) * sqrt(t_{j+1} - t_j) * Z_j

``qv_exact`` is the compensator sum sigma_j^2 dt_j, the exact reference for
the quadratic variation; :func:`quadratic_variation_partition` is the
partition sum of squared increments that converges to it.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import CapacityError, InvalidArgument
from .model import (
    BangBang,
    Constant,
    ControlStrategy,
    Feedback,
    PiecewiseDeterministic,
    RandomSwitching,
    StrategyFamily,
    TimeGrid,
    VolatilityBand,
)
from .rng import check_seed, path_normals, path_uniforms

MAX_BUNDLE_BYTES = int(os.environ.get("GMARTLAB_MAX_BUNDLE_BYTES", 2 << 30))


def _frozen(a: np.ndarray) -> np.ndarray:
    if a.flags.writeable:
        a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PathBundle:
    grid: TimeGrid
    m_values: np.ndarray = field(repr=False)
    increments: np.ndarray = field(repr=False)
    qv_exact: np.ndarray = field(repr=False)
    sigma_used: np.ndarray = field(repr=False)
    seed: int = 0
    strategy_label: str = ""
    path_offset: int = 0

    def __post_init__(self):
        n, Np1 = self.m_values.shape
        if Np1 != self.grid.n_steps + 1:
            raise InvalidArgument("m_values does not match the grid")
        for name, shape in (
            ("increments", (n, Np1 - 1)),
            ("qv_exact", (n, Np1)),
            ("sigma_used", (n, Np1 - 1)),
        ):
            if getattr(self, name).shape != shape:
                raise InvalidArgument(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        for name in ("m_values", "increments", "qv_exact", "sigma_used"):
            _frozen(getattr(self, name))

    @property
    def n_paths(self) -> int:
        return self.m_values.shape[0]

    @cached_property
    def variance_increments(self) -> np.ndarray:
        """sigma_j^2 * dt_j, the termwise increments of the exact quadratic variation."""
        return _frozen(self.sigma_used**2 * self.grid.dt)

    @property
    def terminal(self) -> np.ndarray:
        return self.m_values[:, -1]

    def head(self, n: int) -> "PathBundle":
        """The first n paths (path identity is preserved)."""
        return PathBundle(
            self.grid,
            self.m_values[:n],
            self.increments[:n],
            self.qv_exact[:n],
            self.sigma_used[:n],
            self.seed,
            self.strategy_label,
            self.path_offset,
        )

    @classmethod
    def from_increments(cls, grid: TimeGrid, increments, sigma_used, seed=0, label="given") -> "PathBundle":
        """Bundle from prescribed increments (lattice walks, hand-built cases)."""
        increments = np.atleast_2d(np.asarray(increments, dtype=float))
        sigma_used = np.broadcast_to(np.asarray(sigma_used, dtype=float), increments.shape)
        return _assemble(grid, increments, np.ascontiguousarray(sigma_used), seed, label, 0)


def _assemble(grid, raw_increments, sigma, seed, label, offset) -> PathBundle:
    n, N = raw_increments.shape
    m = np.empty((n, N + 1))
    m[:, 0] = 0.0
    np.cumsum(raw_increments, axis=1, out=m[:, 1:])
    qv = np.empty((n, N + 1))
    qv[:, 0] = 0.0
    np.cumsum(sigma**2 * grid.dt, axis=1, out=qv[:, 1:])
    return PathBundle(grid, m, np.diff(m, axis=1), qv, sigma, seed, label, offset)


def _check_capacity(n_paths: int, grid: TimeGrid, max_bytes: int):
    need = 6 * 8 * n_paths * (grid.n_steps + 1)
    if need > max_bytes:
        raise CapacityError(
            f"{n_paths} paths x {grid.n_steps} steps needs ~{need / 2**30:.1f} GiB "
            f"(limit {max_bytes / 2**30:.1f} GiB); use sweep() to stream path chunks"
        )


def simulate_paths(
    strategy: ControlStrategy,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    *,
    band: VolatilityBand | None = None,
    strict: bool = True,
    path_offset: int = 0,
    normals: np.ndarray | None = None,
    max_bytes: int | None = None,
) -> PathBundle:
    """Simulate ``n_paths`` paths (indices path_offset, path_offset+1, ...).

    The result is a deterministic function of (strategy, grid, path indices,
    seed).  ``normals`` may supply the driving noise directly (shape
    (n_paths, N)); otherwise the per-path Philox streams are used.
    """
    if int(n_paths) != n_paths or n_paths < 1:
        raise InvalidArgument(f"n_paths must be an integer >= 1, got {n_paths}")
    n_paths = int(n_paths)
    seed = check_seed(seed)
    _check_capacity(n_paths, grid, MAX_BUNDLE_BYTES if max_bytes is None else max_bytes)
    N = grid.n_steps
    if normals is None:
        z = path_normals(seed, path_offset, n_paths, N)
    else:
        z = np.asarray(normals, dtype=float)
        if z.shape != (n_paths, N):
            raise InvalidArgument(f"normals must have shape {(n_paths, N)}, got {z.shape}")
    sqrt_dt = np.sqrt(grid.dt)

    def admit(sig):
        return sig if band is None else band.admit(sig, strict, where=strategy.label)

    label = strategy.label
    m = np.empty((n_paths, N + 1))
    inc = np.empty((n_paths, N))
    z = np.ascontiguousarray(z)

    if isinstance(strategy, (Constant, PiecewiseDeterministic)):
        sig = admit(strategy.schedule(grid))
        _kernels.scheduled_paths(z, sig * sqrt_dt, m, inc)
        qv_row = np.concatenate(([0.0], np.cumsum(sig**2 * grid.dt)))
        return PathBundle(grid, m, inc, np.broadcast_to(qv_row, (n_paths, N + 1)),
                          np.broadcast_to(sig, (n_paths, N)), seed, label, path_offset)

    qv = np.empty((n_paths, N + 1))
    if isinstance(strategy, BangBang):
        above, below = (float(s) for s in admit(np.array([strategy.sigma_above, strategy.sigma_below])))
        sigma = np.empty((n_paths, N))
        _kernels.bangbang_paths(z, sqrt_dt, grid.dt, strategy.pivot, above, below, m, inc, qv, sigma)
        return PathBundle(grid, m, inc, qv, sigma, seed, label, path_offset)

    if isinstance(strategy, RandomSwitching):
        u = path_uniforms(seed, path_offset, n_paths, N, stream=int(strategy.seed_offset))
        flips = u < -np.expm1(-strategy.intensity * grid.dt)
        parity = (np.cumsum(flips, axis=1) - flips) % 2
        pair = admit(np.array([strategy.sigma_a, strategy.sigma_b], dtype=float))
        sigma = np.where(parity == 0, pair[0], pair[1])
        _kernels.sigma_paths(z, sigma, sqrt_dt, grid.dt, m, inc, qv)
        return PathBundle(grid, m, inc, qv, sigma, seed, label, path_offset)

    if isinstance(strategy, Feedback):
        sigma = np.empty((n_paths, N))
        m[:, 0] = 0.0
        t = grid.nodes
        for j in range(N):
            s = np.broadcast_to(np.asarray(strategy.rule(float(t[j]), m[:, j]), dtype=float), (n_paths,))
            sigma[:, j] = admit(s)
            m[:, j + 1] = m[:, j] + sigma[:, j] * sqrt_dt[j] * z[:, j]
        qv[:, 0] = 0.0
        np.cumsum(sigma**2 * grid.dt, axis=1, out=qv[:, 1:])
        return PathBundle(grid, m, np.diff(m, axis=1), qv, sigma, seed, label, path_offset)

    raise InvalidArgument(f"unsupported strategy type {type(strategy).__name__}")


def quadratic_variation_partition(bundle: PathBundle) -> np.ndarray:
    """Cumulative partition sums sum_{j<k} (M_{t_{j+1}} - M_{t_j})^2, starting at 0."""
    out = np.zeros_like(bundle.m_values)
    np.cumsum(bundle.increments**2, axis=1, out=out[:, 1:])
    return out


def coarsen_normals(z: np.ndarray, factor: int) -> np.ndarray:
    """Brownian-consistent coarsening: sums of ``factor`` fine increments, renormalized."""
    n, N = z.shape
    if N % factor:
        raise InvalidArgument(f"{N} steps are not divisible by {factor}")
    return z.reshape(n, N // factor, factor).sum(axis=2) / np.sqrt(factor)


# --------------------------------------------------------------------------
# streaming over path chunks


@dataclass(frozen=True)
class Probe:
    """A per-path statistic: ``fn(bundle)`` returns an array with one row per path.

    ``n_paths`` restricts the probe to the first n paths of the sweep.
    """

    name: str
    fn: Callable[[PathBundle], np.ndarray]
    n_paths: int | None = None


def sweep(
    family: StrategyFamily | Sequence[ControlStrategy],
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    probes: Iterable[Probe],
    *,
    strict: bool = True,
    chunk_paths: int = 256,
    workers: int = 1,
) -> dict[str, dict[str, np.ndarray]]:
    """Simulate every strategy chunk by chunk and evaluate the probes.

    Each chunk's normals are drawn once and shared by all strategies.  Results
    are concatenated in path order, so they do not depend on ``workers``.
    Returns ``{strategy_label: {probe_name: per_path_array}}``.
    """
    probes = list(probes)
    if len({p.name for p in probes}) != len(probes):
        raise InvalidArgument("probe names must be unique")
    strategies = list(family)
    band = family.band if isinstance(family, StrategyFamily) else None
    seed = check_seed(seed)
    if chunk_paths < 1 or workers < 1:
        raise InvalidArgument("chunk_paths and workers must be >= 1")
    starts = list(range(0, int(n_paths), chunk_paths))

    def task(start):
        size = min(chunk_paths, n_paths - start)
        z = path_normals(seed, start, size, grid.n_steps)
        res = {}
        for s in strategies:
            bundle = simulate_paths(
                s, grid, size, seed, band=band, strict=strict, path_offset=start,
                normals=z, max_bytes=1 << 62,
            )
            row = {}
            for p in probes:
                limit = n_paths if p.n_paths is None else min(p.n_paths, n_paths)
                if limit <= start:
                    continue
                b = bundle if limit >= start + size else bundle.head(limit - start)
                row[p.name] = np.asarray(p.fn(b))
            res[s.label] = row
        return res

    if workers == 1:
        parts = [task(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(task, starts))

    out: dict[str, dict[str, np.ndarray]] = {}
    for s in strategies:
        out[s.label] = {}
        for p in probes:
            pieces = [part[s.label][p.name] for part in parts if p.name in part[s.label]]
            out[s.label][p.name] = np.concatenate(pieces, axis=0)
    return out


def dump_csv(bundle: PathBundle, path, max_rows: int = 5_000_000):
    """Write columns path_id, step, t, M, qv_exact, sigma (sigma empty at the last node)."""
    rows = bundle.n_paths * (bundle.grid.n_steps + 1)
    if rows > max_rows:
        raise CapacityError(f"path dump would have {rows} rows (limit {max_rows})")
    t = bundle.grid.nodes
    N = bundle.grid.n_steps
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "step", "t", "M", "qv_exact", "sigma"])
        for i in range(bundle.n_paths):
            pid = bundle.path_offset + i
            m, q, s = bundle.m_values[i], bundle.qv_exact[i], bundle.sigma_used[i]
            for j in range(N + 1):
                w.writerow([pid, j, repr(float(t[j])), repr(float(m[j])), repr(float(q[j])),
                            repr(float(s[j])) if j < N else ""])
