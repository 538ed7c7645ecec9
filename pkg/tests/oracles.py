"""Independent reference computations.

Nothing here imports gmartlab.  Lattice oracles enumerate every path of a
symmetric +-h walk in exact rational arithmetic; closed forms follow from
the extreme constant controls.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction


def sgn(x) -> int:
    # sgn(0) = -1, the left-derivative convention of |x|
    return 1 if x > 0 else -1


def lattice_paths(n_steps: int, h: Fraction = Fraction(1)):
    """All 2^n walks from 0 with steps +-h, as lists of n+1 Fractions."""
    for signs in itertools.product((1, -1), repeat=n_steps):
        m = [Fraction(0)]
        for s in signs:
            m.append(m[-1] + s * h)
        yield m


def tanaka_definition(m, a) -> Fraction:
    """|M_N - a| - |M_0 - a| - sum sgn(M_j - a)(M_{j+1} - M_j)."""
    s = sum(sgn(m[j] - a) * (m[j + 1] - m[j]) for j in range(len(m) - 1))
    return abs(m[-1] - a) - abs(m[0] - a) - s


def tanaka_crossings(m, a) -> Fraction:
    """Same quantity summed step by step: only steps that cross a contribute 2|M_{j+1} - a|."""
    total = Fraction(0)
    for x, y in zip(m, m[1:]):
        if (x > a) != (y > a):
            total += 2 * abs(y - a)
    return total


def call_residual(m, K) -> Fraction:
    """(M_N - K)^+ - (M_0 - K)^+ - sum 1{M_j > K} dM_j - L(K)/2 with the definition L."""
    pos = lambda x: max(x - K, Fraction(0))
    s = sum((1 if m[j] > K else 0) * (m[j + 1] - m[j]) for j in range(len(m) - 1))
    return pos(m[-1]) - pos(m[0]) - s - tanaka_definition(m, K) / 2


def lattice_mean(fn, n_steps: int, h: Fraction = Fraction(1)) -> Fraction:
    paths = list(lattice_paths(n_steps, h))
    return sum((fn(m) for m in paths), Fraction(0)) / len(paths)


def isometry_sides(eta, n_steps: int = 3):
    """E[(sum eta_j dM_j)^2] and E[sum eta_j^2 (dM_j)^2] on the +-1 walk.

    ``eta(m, j)`` may depend on m[: j + 1] only.
    """
    lhs = lattice_mean(lambda m: sum(eta(m, j) * (m[j + 1] - m[j]) for j in range(n_steps)) ** 2, n_steps)
    rhs = lattice_mean(lambda m: sum(eta(m, j) ** 2 * (m[j + 1] - m[j]) ** 2 for j in range(n_steps)), n_steps)
    return lhs, rhs


# closed forms on the band [lo, hi] (constant extreme controls)


def upper_square(lo: float, hi: float, T: float) -> float:
    return hi * hi * T


def lower_square(lo: float, hi: float, T: float) -> float:
    return lo * lo * T


def upper_abs(lo: float, hi: float, T: float) -> float:
    """E^[|M_T|] = sigma_high sqrt(2T/pi); also E^[L_T(0)] for a martingale from 0."""
    return hi * math.sqrt(2.0 * T / math.pi)


def normal_abs_call(sigma: float, T: float, K: float) -> float:
    """E[(sigma W_T - K)^+] for a Brownian motion (Bachelier formula)."""
    s = sigma * math.sqrt(T)
    d = -K / s
    pdf = math.exp(-0.5 * d * d) / math.sqrt(2 * math.pi)
    cdf = 0.5 * (1 + math.erf(d / math.sqrt(2)))
    return s * pdf - K * cdf
