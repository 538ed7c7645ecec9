"""Per-path counter-based random streams.

Path ``i`` under seed ``s`` always reads the Philox stream keyed by ``(s, i)``,
so its draws do not depend on how many paths are requested, on chunking, or
on the number of workers.  ``stream`` selects an independent sub-stream of the
same key (used by random switching clocks).
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgument

_U64 = 1 << 64


def check_seed(seed) -> int:
    if isinstance(seed, bool) or int(seed) != seed or not (0 <= int(seed) < _U64):
        raise InvalidArgument(f"seed must be an integer in [0, 2**64), got {seed!r}")
    return int(seed)


def path_generator(seed: int, path: int, stream: int = 0) -> np.random.Generator:
    key = (check_seed(seed) << 64) | int(path)
    counter = np.array([0, 0, 0, int(stream)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def path_normals(seed: int, first_path: int, n_paths: int, n_steps: int, stream: int = 0) -> np.ndarray:
    """Standard normals of shape (n_paths, n_steps); row r belongs to path first_path + r."""
    out = np.empty((n_paths, n_steps))
    for r in range(n_paths):
        path_generator(seed, first_path + r, stream).standard_normal(n_steps, out=out[r])
    return out


def path_uniforms(seed: int, first_path: int, n_paths: int, n_steps: int, stream: int) -> np.ndarray:
    out = np.empty((n_paths, n_steps))
    for r in range(n_paths):
        path_generator(seed, first_path + r, stream).random(n_steps, out=out[r])
    return out
