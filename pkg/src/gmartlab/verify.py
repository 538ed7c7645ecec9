"""Theorem-level checks with pass/fail metrics.

Every check declares per-path probes on shared datasets.  A dataset is one
sweep of the whole strategy family on a uniform grid with a given number of
steps; all checks that use that grid read the same paths (probes may be
restricted to a prefix of them).  After the sweeps each check reduces its
per-path samples to metrics.

Upper expectations are maxima of per-strategy means, so every Monte Carlo
"upper" below is a finite-family lower bound of the true value.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .calculus import (
    StateIntegrand,
    difference_samples,
    krylov_constants,
    mean_se,
    mollified_sign,
    occupation_integral,
    path_moment,
    tail_samples,
    upper_of,
)
from .config import ALL_CHECKS, RunConfig
from .errors import ConfigError, GmartError, InvalidArgument
from .expectation import solve_g_heat, sublinearity_from_samples
from .local_time import (
    LevelGrid,
    default_levels,
    growth_set_check,
    level_pairs,
    local_time_field,
    local_time_tanaka,
    occupation_at,
    pair_moment_samples,
    regularity_from_samples,
    sgn,
    tanaka_at,
)
from .model import make_uniform_grid
from .paths import PathBundle, Probe, quadratic_variation_partition, sweep

log = logging.getLogger(__name__)

SCHEMA = "gmartlab.verify/1"


# --------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class Metric:
    value: float
    bound: float | None = None
    relation: str = "<="  # "<=", ">=", "<", "==", "true" or "info"

    @property
    def ok(self) -> bool:
        v, b = self.value, self.bound
        if self.relation == "info":
            return True
        if self.relation == "true":
            return bool(v)
        if isinstance(v, float) and math.isnan(v):
            return False
        return {"<=": v <= b, ">=": v >= b, "<": v < b, "==": v == b}[self.relation]

    def to_dict(self) -> dict:
        return {"value": _jsonable(self.value), "bound": _jsonable(self.bound),
                "relation": self.relation, "ok": self.ok}


def _jsonable(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


@dataclass
class CheckReport:
    name: str
    metrics: dict[str, Metric] = field(default_factory=dict)
    seed: int = 0
    config_echo: dict = field(default_factory=dict, repr=False)
    runtime: float = 0.0
    notes: list[str] = field(default_factory=list)
    error: str | None = None

    @property
    def status(self) -> str:
        if self.error is not None:
            return "error"
        return "pass" if all(m.ok for m in self.metrics.values()) else "fail"

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def add(self, name: str, value, bound=None, relation: str = "<="):
        self.metrics[name] = Metric(value, bound, relation)

    def failures(self) -> list[str]:
        return [k for k, m in self.metrics.items() if not m.ok]

    def to_dict(self, include_runtime: bool = False) -> dict:
        d = {
            "name": self.name,
            "status": self.status,
            "seed": self.seed,
            "statistics": {k: m.to_dict() for k, m in self.metrics.items()},
            "notes": list(self.notes),
            "config_echo": self.config_echo,
        }
        if self.error is not None:
            d["error"] = self.error
        if include_runtime:
            d["runtime"] = self.runtime
        return d


@dataclass
class SuiteResult:
    reports: list[CheckReport]
    config: RunConfig
    dataset_seconds: dict[str, float] = field(default_factory=dict)

    @property
    def status(self) -> str:
        if any(r.status == "error" for r in self.reports):
            return "error"
        return "pass" if all(r.passed for r in self.reports) else "fail"

    def report(self, name: str) -> CheckReport:
        for r in self.reports:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "status": self.status,
            "seed": self.config.seed,
            "config": self.config.echo(),
            "checks": [r.to_dict() for r in sorted(self.reports, key=lambda r: r.name)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def timings(self) -> dict:
        return {
            "datasets": dict(self.dataset_seconds),
            "checks": {r.name: r.runtime for r in self.reports},
        }

    def table(self) -> str:
        lines = [f"{'check':<24} {'status':<6} failing metrics"]
        for r in sorted(self.reports, key=lambda r: r.name):
            bad = r.error or ", ".join(r.failures())
            lines.append(f"{r.name:<24} {r.status:<6} {bad}")
        lines.append(f"suite: {self.status}")
        return "\n".join(lines)


# --------------------------------------------------------------------------
# per-path sample functions (usable on any bundle)


def identity_samples(bundle: PathBundle, levels=(-0.5, 0.0, 0.2, 0.5)) -> np.ndarray:
    """Relative deviations of exact discrete identities, one row per path.

    Columns: telescoping, xi = 1 telescoping, |x - a| Tanaka residual, linearity.
    """
    m = bundle.m_values
    scale = 1.0 + np.max(np.abs(m), axis=1)
    pqv = quadratic_variation_partition(bundle)
    im = np.zeros_like(m)
    np.cumsum(m[:, :-1] * bundle.increments, axis=1, out=im[:, 1:])
    tele = np.max(np.abs(pqv - (m**2 - m[:, :1] ** 2 - 2.0 * im)), axis=1) / scale**2
    ones = np.abs(np.sum(bundle.increments, axis=1) - (m[:, -1] - m[:, 0])) / scale
    L = tanaka_at(bundle, levels)
    tan = np.zeros(bundle.n_paths)
    for k, a in enumerate(levels):
        res = tanaka_residual(bundle, lambda x, a=a: np.abs(x - a), lambda x, a=a: sgn(x - a), [(a, 2.0)],
                              L_atoms=L[:, [k]])
        tan = np.maximum(tan, np.abs(res) / scale)
    eta, zeta = m[:, :-1], sgn(m[:, :-1] - 0.2)
    dm = bundle.increments
    lin = np.abs(np.sum((0.7 * eta - 1.3 * zeta) * dm, axis=1)
                 - (0.7 * np.sum(eta * dm, axis=1) - 1.3 * np.sum(zeta * dm, axis=1))) / scale**2
    return np.stack([tele, ones, tan, lin], axis=1)


def occupation_shape_samples(bundle: PathBundle, levels: LevelGrid, epsilon: float) -> np.ndarray:
    """Columns: min occupation value, min time increment of occupation, min Tanaka value."""
    f = local_time_field(bundle, levels, epsilon)
    occ = f.occupation
    return np.stack([occ.min(axis=(1, 2)), np.diff(occ, axis=2).min(axis=(1, 2)), f.tanaka.min(axis=(1, 2))], axis=1)


def tanaka_residual(bundle: PathBundle, f, f_left, atoms=(), density=None, levels: LevelGrid | None = None,
                    L_atoms=None, L_levels=None) -> np.ndarray:
    """f(M_T) - f(M_0) - sum f'_-(M_j) dM_j - (1/2) int L_T(a) df'_-(a), per path.

    df'_- is given as atoms [(a_k, w_k)] plus an optional density on ``levels``
    (trapezoid).  Local times default to the Tanaka definition; pass L_atoms
    (n, K) and L_levels (n, len(levels)) to substitute another estimator.
    """
    atoms = [(float(a), float(w)) for a, w in atoms]
    if any(w < 0 for _, w in atoms):
        raise InvalidArgument("df'_- has a negative atom: f is not convex")
    m = bundle.m_values
    stoch = np.sum(np.asarray(f_left(m[:, :-1]), dtype=float) * bundle.increments, axis=1)
    lt = np.zeros(bundle.n_paths)
    if atoms:
        if L_atoms is None:
            L_atoms = tanaka_at(bundle, [a for a, _ in atoms])
        lt += L_atoms @ np.array([w for _, w in atoms])
    if density is not None:
        if levels is None:
            raise InvalidArgument("a density needs a level grid")
        d = np.asarray(density(levels.levels), dtype=float) * np.ones(len(levels))
        if np.any(d < 0):
            raise InvalidArgument("df'_- has negative density: f is not convex")
        if L_levels is None:
            L_levels = local_time_tanaka(bundle, levels, record=[bundle.grid.n_steps]).terminal()
        wts = np.full(len(levels), levels.spacing)
        wts[0] = wts[-1] = 0.5 * levels.spacing
        lt += L_levels @ (d * wts)
    fx = np.asarray(f(m[:, [0, -1]]), dtype=float)
    return fx[:, 1] - fx[:, 0] - stoch - 0.5 * lt


def h_pairs(grid) -> list[tuple[int, int]]:
    """(start, end) node pairs for t in {0, T/4, T/2, 3T/4} and s in {T/64, T/8, T/4}."""
    N = grid.n_steps
    out = []
    for t in (0.0, 0.25, 0.5, 0.75):
        for s in (1 / 64, 1 / 8, 1 / 4):
            j0 = int(round(t * N))
            j1 = min(N, int(round((t + s) * N)))
            if j1 > j0 and (j0, j1) not in out:
                out.append((j0, j1))
    return out


def h_samples(bundle: PathBundle) -> np.ndarray:
    """Columns: squared increments then qv_exact increments over h_pairs."""
    pairs = h_pairs(bundle.grid)
    m, q = bundle.m_values, bundle.qv_exact
    sq = [(m[:, j1] - m[:, j0]) ** 2 for j0, j1 in pairs]
    dq = [q[:, j1] - q[:, j0] for j0, j1 in pairs]
    return np.stack(sq + dq, axis=1)


NORM_INTEGRANDS: dict[str, Callable] = {
    "one": lambda b: 1.0,
    "M": lambda b: b.m_values[:, :-1],
    "sinM": lambda b: np.sin(b.m_values[:, :-1]),
    "posM": lambda b: (b.m_values[:, :-1] > 0).astype(float),
}
NORM_ORDERS = (1.0, 2.0, 3.0)


def norm_samples(bundle: PathBundle) -> np.ndarray:
    cols = []
    for eta in NORM_INTEGRANDS.values():
        for p in NORM_ORDERS:
            cols.append(path_moment(eta, bundle, p, "dt"))
            cols.append(path_moment(eta, bundle, p, "qv"))
    return np.stack(cols, axis=1)


def krylov_samples(bundle: PathBundle, lengths) -> np.ndarray:
    """Columns: int 1[0,l](M) d<M> per l, <M>_T, |M_T - M_0|."""
    x = bundle.m_values[:, :-1]
    w = bundle.variance_increments
    cols = [np.sum(((x >= 0) & (x <= l)) * w, axis=1) for l in lengths]
    cols.append(bundle.qv_exact[:, -1])
    cols.append(np.abs(bundle.terminal - bundle.m_values[:, 0]))
    return np.stack(cols, axis=1)


def lipschitz_samples(bundle: PathBundle, coarse=(16, 64, 256, 1024), p: float = 2.0) -> np.ndarray:
    """Columns per coarse n: int |phi(M) - phi(M^n)|^p d<M>, int |M - M^n|^p d<M> (phi = tanh)."""
    x = bundle.m_values[:, :-1]
    phi = np.tanh(x)
    N = bundle.grid.n_steps
    w = bundle.variance_increments
    cols = []
    for n in coarse:
        if N % n:
            raise InvalidArgument(f"{N} steps are not divisible by {n}")
        step = N // n
        # M^n freezes M at the last coarse node; phi(M^n) is the frozen phi(M)
        xn = np.repeat(x[:, ::step], step, axis=1)
        pn = np.repeat(phi[:, ::step], step, axis=1)
        cols.append(np.sum(np.abs(phi - pn) ** p * w, axis=1))
        cols.append(np.sum(np.abs(x - xn) ** p * w, axis=1))
    return np.stack(cols, axis=1)


STATE_FUNCTIONS: dict[str, tuple[Callable, bool]] = {
    "sgn(x-0.2)": (lambda x: sgn(x - 0.2), True),
    "tanh": (np.tanh, True),
    "1[0,inf)": (lambda x: (x >= 0).astype(float), True),
    "1+|x|/2": (lambda x: 1.0 + 0.5 * np.abs(x), False),
}


def state_samples(bundle: PathBundle) -> np.ndarray:
    """Columns: integral at T per state function, then <M>_T."""
    cols = [np.sum(StateIntegrand(f, 1.0, name).values(bundle) * bundle.increments, axis=1)
            for name, (f, _) in STATE_FUNCTIONS.items()]
    cols.append(bundle.qv_exact[:, -1])
    return np.stack(cols, axis=1)


def refinement_samples(bundle: PathBundle, f=np.tanh, levels: int = 3) -> np.ndarray:
    """I_{2n} - I_n at T for partitions n = N / 2^k, k = levels..1, of the same path.

    I_n is the Riemann sum of f(M) dM on every (N/n)-th node of the fine path.
    """
    N = bundle.grid.n_steps
    m = bundle.m_values
    vals = []
    for k in range(levels, -1, -1):
        if N % (1 << k):
            raise InvalidArgument(f"{N} steps are not divisible by {1 << k}")
        x = m[:, :: 1 << k]
        vals.append(np.sum(f(x[:, :-1]) * np.diff(x, axis=1), axis=1))
    return np.stack([vals[i + 1] - vals[i] for i in range(levels)], axis=1)


def occupation_formula_samples(bundle: PathBundle, levels: LevelGrid) -> np.ndarray:
    """Columns: rel. error for g = 1, lhs and rhs for g = 1[0,inf), x^2 residual, <M>_T."""
    from .local_time import check_coverage

    check_coverage(bundle, levels)
    L = local_time_tanaka(bundle, levels, record=[bundle.grid.n_steps]).terminal()
    wts = np.full(len(levels), levels.spacing)
    wts[0] = wts[-1] = 0.5 * levels.spacing
    qv = bundle.qv_exact[:, -1]
    int_L = L @ wts
    pos = (levels.levels >= 0).astype(float)
    x = bundle.m_values[:, :-1]
    lhs_pos = np.sum((x >= 0) * bundle.variance_increments, axis=1)
    rhs_pos = L @ (pos * wts)
    pqv = np.sum(bundle.increments**2, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(int_L == qv, 0.0, np.abs(int_L - qv) / qv)
    return np.stack([rel, lhs_pos, rhs_pos, pqv - int_L, qv], axis=1)


def growth_samples(bundle: PathBundle, levels: LevelGrid, sigma_high: float) -> np.ndarray:
    f = local_time_field(bundle, levels, levels.spacing, record=[bundle.grid.n_steps])
    t = growth_set_check(f, bundle, "tanaka", sigma_high)
    o = growth_set_check(f, bundle, "occupation", sigma_high)
    return np.stack([t.fraction, o.fraction, o.violation.sum(axis=1)], axis=1)


def ladder_epsilon(cfg: RunConfig, N: int) -> float:
    """Occupation window paired with N: eps_min * sqrt(N_max / N)."""
    return cfg.epsilons[-1] * math.sqrt(cfg.ladder[-1] / N)


def tanaka_call_samples(bundle: PathBundle, K: float, eps: float) -> np.ndarray:
    """Columns: call residual with Tanaka L (relative), call residual with occupation L at eps."""
    f = lambda x: np.maximum(x - K, 0.0)
    fl = lambda x: (x > K).astype(float)
    scale = 1.0 + np.max(np.abs(bundle.m_values), axis=1)
    r_def = tanaka_residual(bundle, f, fl, [(K, 1.0)])
    r_occ = tanaka_residual(bundle, f, fl, [(K, 1.0)], L_atoms=occupation_at(bundle, [K], [eps])[:, :, 0])
    return np.stack([np.abs(r_def) / scale, np.abs(r_occ)], axis=1)


# --------------------------------------------------------------------------
# direct bundle-level checks


def _samples(bundles, fn) -> dict[str, np.ndarray]:
    if isinstance(bundles, PathBundle):
        bundles = [bundles]
    return {f"{i}:{b.strategy_label}": fn(b) for i, b in enumerate(bundles)}


def check_tanaka(f, f_left, atoms, bundles, density=None, levels=None, tol: float = 1e-9) -> CheckReport:
    """Residual of the convex Tanaka formula with the Tanaka-definition local time."""
    rep = CheckReport("tanaka")
    s = _samples(bundles, lambda b: np.abs(tanaka_residual(b, f, f_left, atoms, density, levels)))
    worst = max(float(np.mean(v)) for v in s.values())
    rep.add("mean_abs_residual", worst, tol)
    return rep


def check_krylov(g, p: float, bundles, g_lp_norm: float, n_se: float = 3.0) -> CheckReport:
    """E^[int |g(M)| d<M>] <= C1 C2^(1/p) ||g||_p + n_se SE with C1, C2 estimated from the bundles."""
    if not (math.isfinite(g_lp_norm) and g_lp_norm >= 0):
        raise InvalidArgument("||g||_p must be finite: |g|^p is not integrable")
    rep = CheckReport("krylov")
    lhs = upper_of(_samples(bundles, lambda b: occupation_integral(g, b)))
    k = krylov_constants(_samples(bundles, lambda b: b.qv_exact[:, -1]),
                         _samples(bundles, lambda b: np.abs(b.terminal - b.m_values[:, 0])), p)
    rep.add("lhs", lhs.value, k.bound(g_lp_norm) + n_se * lhs.se)
    return rep


def check_norm_sandwich(eta, p: float, bundles, band, tol: float = 1e-9) -> CheckReport:
    rep = CheckReport("norm_sandwich")
    m = upper_of(_samples(bundles, lambda b: path_moment(eta, b, p, "dt"))).value ** (1 / p)
    mb = upper_of(_samples(bundles, lambda b: path_moment(eta, b, p, "qv"))).value ** (1 / p)
    rep.add("upper", mb, band.Lam ** (1 / p) * m * (1 + tol))
    rep.add("lower", mb, band.lam ** (1 / p) * m * (1 - tol), ">=")
    return rep


def check_h_assumption(bundles, band, n_se: float = 4.0, tol: float = 1e-9) -> CheckReport:
    rep = CheckReport("h_assumption")
    for label, s in _samples(bundles, h_samples).items():
        grid = (bundles if isinstance(bundles, PathBundle) else bundles[0]).grid
        _eval_h(rep, label, s, grid, band, n_se, tol)
    return rep


def check_bicontinuity(bundles, n: int = 2, h0: float = 0.4, centre: float = 0.0) -> CheckReport:
    gaps, xs, ys = level_pairs(h0, 4, centre)
    res = regularity_from_samples(gaps, _samples(bundles, lambda b: pair_moment_samples(b, xs, ys, n)), n)
    rep = CheckReport("bicontinuity")
    _eval_regularity(rep, res)
    return rep


def _eval_h(rep, label, s, grid, band, n_se, tol):
    pairs = h_pairs(grid)
    dt = grid.horizon / grid.n_steps
    P = len(pairs)
    worst_sq = -math.inf
    qv_hi, qv_lo = -math.inf, math.inf
    for k, (j0, j1) in enumerate(pairs):
        s_len = (j1 - j0) * dt
        mu, se = mean_se(s[:, k])
        worst_sq = max(worst_sq, (mu - band.Lam * s_len) / se if se > 0 else (0.0 if mu <= band.Lam * s_len else math.inf))
        q = s[:, P + k] / s_len
        qv_hi = max(qv_hi, float(q.max()) / band.Lam)
        if band.lam > 0:
            qv_lo = min(qv_lo, float(q.min()) / band.lam)
    rep.add(f"{label}/increment_excess_se", worst_sq, n_se)
    rep.add(f"{label}/qv_over_Lambda_s", qv_hi, 1 + tol)
    if band.lam > 0:
        rep.add(f"{label}/qv_over_lambda_s", qv_lo, 1 - tol, ">=")


def _eval_regularity(rep, res):
    rep.add("slope", res.slope, res.n - 0.5, ">=")
    for h, mom, ok in zip(res.gaps, res.moments, res.raw_ok):
        rep.add(f"raw_bound_h={h:g}", mom, res.calibrated_constant * h**res.n)
    rep.add("calibrated_CnN", res.calibrated_constant, relation="info")
    rep.add("moments", list(res.moments), relation="info")


# --------------------------------------------------------------------------
# the suite


@dataclass
class Context:
    config: RunConfig

    def __post_init__(self):
        c = self.config
        self.band = c.band
        self.family = c.family()
        self.strategies = {s.label: s for s in self.family}
        self.scale = self.band.sigma_high * math.sqrt(c.T)

    def grid(self, N: int):
        return make_uniform_grid(self.config.T, N)


@dataclass(frozen=True)
class Need:
    steps: int
    probe: Probe


Samples = dict  # probe name -> {strategy label: per-path array}


class Check:
    name: str = ""

    def needs(self, ctx: Context) -> list[Need]:
        return []

    def evaluate(self, ctx: Context, s: Samples, rep: CheckReport):
        raise NotImplementedError

    def probe(self, key: str, steps: int, fn, n_paths=None) -> Need:
        return Need(int(steps), Probe(f"{self.name}/{key}", fn, n_paths))


def _col(d: dict, k: int) -> dict:
    return {label: v[:, k] for label, v in d.items()}


def _worst_mean(d: dict) -> float:
    return max(float(np.mean(v)) for v in d.values())


class Identities(Check):
    name = "identities"

    def needs(self, ctx):
        c = ctx.config
        lv = default_levels(ctx.band, c.T, c.level_span, c.level_spacing)
        return [
            self.probe("exact", c.identity_steps, identity_samples, c.identity_paths),
            self.probe("occupation", c.identity_steps,
                       lambda b: occupation_shape_samples(b, lv, lv.spacing), min(64, c.identity_paths)),
        ]

    def evaluate(self, ctx, s, rep):
        tol = ctx.config.tol("identity")
        ex = s["identities/exact"]
        for k, name in enumerate(("telescoping", "integral_of_one", "tanaka_abs_residual", "linearity")):
            rep.add(name, max(float(v[:, k].max()) for v in ex.values()), tol)
        occ = s["identities/occupation"]
        rep.add("occupation_min", min(float(v[:, 0].min()) for v in occ.values()), 0.0, ">=")
        rep.add("occupation_min_increment", min(float(v[:, 1].min()) for v in occ.values()), 0.0, ">=")
        rep.add("tanaka_min", min(float(v[:, 2].min()) for v in occ.values()), relation="info")


class QuadraticVariation(Check):
    name = "quadratic_variation"

    def needs(self, ctx):
        c = ctx.config
        fn = lambda b: np.abs(np.sum(b.increments**2, axis=1) - b.qv_exact[:, -1])
        return [self.probe(f"N={N}", N, fn, c.identity_paths) for N in c.qv_ladder]

    def evaluate(self, ctx, s, rep):
        lad = ctx.config.qv_ladder
        for label in ctx.strategies:
            seq = [float(np.mean(s[f"{self.name}/N={N}"][label])) for N in lad]
            rep.add(f"{label}/decreasing", all(b < a for a, b in zip(seq, seq[1:])), relation="true")
            rep.add(f"{label}/mean_abs_error", seq, relation="info")


class HAssumption(Check):
    name = "h_assumption"

    def needs(self, ctx):
        return [self.probe("pairs", ctx.config.main_steps, h_samples, ctx.config.sub_paths)]

    def evaluate(self, ctx, s, rep):
        g = ctx.grid(ctx.config.main_steps)
        for label, v in s[f"{self.name}/pairs"].items():
            _eval_h(rep, label, v, g, ctx.band, ctx.config.tol("mean_se"), ctx.config.tol("identity"))


class NormSandwich(Check):
    name = "norm_sandwich"

    def needs(self, ctx):
        return [self.probe("moments", ctx.config.main_steps, norm_samples, ctx.config.identity_paths)]

    def evaluate(self, ctx, s, rep):
        tol = ctx.config.tol("identity")
        d = s[f"{self.name}/moments"]
        col = 0
        for name in NORM_INTEGRANDS:
            for p in NORM_ORDERS:
                m = upper_of(_col(d, col)).value ** (1 / p)
                mb = upper_of(_col(d, col + 1)).value ** (1 / p)
                col += 2
                rep.add(f"{name}/p={p:g}/upper", mb, ctx.band.Lam ** (1 / p) * m * (1 + tol))
                rep.add(f"{name}/p={p:g}/lower", mb, ctx.band.lam ** (1 / p) * m * (1 - tol), ">=")
                if name == "one":
                    rep.add(f"one/p={p:g}/m_norm", abs(m - ctx.config.T ** (1 / p)), tol * max(1.0, m))


def _terminal_payoffs(b):
    x = b.terminal
    return np.stack([x, x**2, -(x**2), np.abs(x), np.sin(x)], axis=1)


class Expectation(Check):
    name = "expectation"

    def needs(self, ctx):
        return [self.probe("payoffs", ctx.config.main_steps, _terminal_payoffs)]

    def evaluate(self, ctx, s, rep):
        c, band = ctx.config, ctx.band
        d = s[f"{self.name}/payoffs"]
        lin = upper_of(_col(d, 0))
        lin_lo = upper_of({k: -v for k, v in _col(d, 0).items()})
        sq = upper_of(_col(d, 1))
        nsq = upper_of(_col(d, 2))
        ab = upper_of(_col(d, 3))
        rep.add("upper_square", abs(sq.value - band.Lam * c.T), c.tol("square"))
        rep.add("lower_square", abs(-nsq.value - band.lam * c.T), c.tol("neg_square"))
        rep.add("upper_abs", abs(ab.value - band.sigma_high * math.sqrt(2 * c.T / math.pi)), c.tol("abs"))
        rep.add("upper_linear_se", abs(lin.value) / lin.se, c.tol("mean_se"))
        rep.add("lower_linear_se", abs(lin_lo.value) / lin_lo.se, c.tol("mean_se"))
        worst = max(abs(m) / se for m, se in (mean_se(v) for v in _col(d, 0).values()))
        rep.add("martingale_mean_se", worst, c.tol("mean_se"))
        rep.add("argmax_square", sq.label, relation="info")
        rep.add("argmin_square", (-nsq.value, nsq.label), relation="info")


class Sublinearity(Check):
    name = "sublinearity"

    def needs(self, ctx):
        return [self.probe("payoffs", ctx.config.main_steps, _terminal_payoffs)]

    def evaluate(self, ctx, s, rep):
        d = s[f"{self.name}/payoffs"]
        cases = [
            ("square+abs", _col(d, 1), _col(d, 3), 2.0, 1.0),
            ("linear+neg", _col(d, 0), {k: -v for k, v in _col(d, 0).items()}, 0.0, -0.5),
            ("abs+sin", _col(d, 3), _col(d, 4), 3.0, 2.5),
        ]
        for name, x, y, lam, const in cases:
            r = sublinearity_from_samples(x, y, ctx.config.seed, lam, const)
            for key, ok in r.checks.items():
                rep.add(f"{name}/{key}", ok, relation="true")
        zero = sublinearity_from_samples(_col(d, 0), {k: -v for k, v in _col(d, 0).items()}, ctx.config.seed)
        rep.add("linear+neg/sum_is_zero", zero.upper_sum, 0.0, "==")


class PdeOracle(Check):
    name = "pde_oracle"

    def needs(self, ctx):
        return [self.probe("payoffs", ctx.config.main_steps, _terminal_payoffs)]

    def evaluate(self, ctx, s, rep):
        c, band = ctx.config, ctx.band
        dx = c.pde_dx * ctx.scale
        tol = c.tol("pde")
        d = s[f"{self.name}/payoffs"]
        closed = {
            "square": (lambda x: x**2, band.Lam * c.T, 1),
            "neg_square": (lambda x: -(x**2), -band.lam * c.T, 2),
            "abs": (np.abs, band.sigma_high * math.sqrt(2 * c.T / math.pi), 3),
        }
        for name, (f, exact, col) in closed.items():
            v1 = solve_g_heat(f, band, c.T, dx=dx)
            v2 = solve_g_heat(f, band, c.T, dx=dx / 2)
            rep.add(f"{name}/refinement_change", abs(v2 - v1), tol)
            rep.add(f"{name}/vs_closed_form", abs(v2 - exact), tol)
            mc = upper_of(_col(d, col))
            rep.add(f"{name}/vs_mc", abs(v2 - mc.value), tol + c.tol("mc_se") * mc.se)
        for name, f, col in (("linear", lambda x: x, 0), ("sin", np.sin, 4)):
            v = [solve_g_heat(f, band, c.T, dx=dx / 2**k) for k in range(3)]
            mc = upper_of(_col(d, col))
            rep.add(f"{name}/mc_upper_le_pde", mc.value, v[-1] + c.tol("mc_se") * mc.se + tol)
            if name == "sin":
                rep.add("sin/scheme_consistency", abs(v[2] - v[1]), abs(v[1] - v[0]), "<")
                rep.add("sin/family_gap", v[-1] - mc.value, relation="info")
            else:
                rep.add("linear/value", abs(v[-1]), 1e-12)


class TailTruncation(Check):
    name = "tail_truncation"

    def needs(self, ctx):
        th = ctx.config.tail_thresholds
        fn = lambda b: np.concatenate([tail_samples(lambda bb: bb.m_values[:, :-1], b, 2.0, th),
                                       tail_samples(lambda bb: np.sin(bb.m_values[:, :-1]), b, 2.0, [1.0])], axis=1)
        return [self.probe("tails", ctx.config.main_steps, fn, ctx.config.sub_paths)]

    def evaluate(self, ctx, s, rep):
        d = s[f"{self.name}/tails"]
        th = ctx.config.tail_thresholds
        ups = [upper_of(_col(d, k)) for k in range(len(th))]
        vals = [u.value for u in ups]
        nonzero = [v for v in vals if v > 0]
        strict = all(b < a for a, b in zip(nonzero, nonzero[1:])) and vals[: len(nonzero)] == nonzero
        rep.add("strictly_decreasing_until_zero", strict, relation="true")
        rep.add("nonincreasing_2se", all(b <= a + 2 * math.hypot(ua.se, ub.se)
                                         for a, b, ua, ub in zip(vals, vals[1:], ups, ups[1:])), relation="true")
        rep.add("last_over_first", vals[-1] / vals[0] if vals[0] else 0.0, ctx.config.tol("tail_fraction"))
        rep.add("values", vals, relation="info")
        rep.add("bounded_above_threshold", _worst_mean(_col(d, len(th))), 0.0, "==")


DOMINATED_N = (1, 2, 4, 8, 16, 32, 64)


class DominatedConvergence(Check):
    name = "dominated_convergence"

    def needs(self, ctx):
        fs = [mollified_sign(n) for n in DOMINATED_N]
        fn = lambda b: np.concatenate([difference_samples(fs, sgn, b, 2.0),
                                       b.qv_exact[:, -1:], np.abs(b.terminal - b.m_values[:, 0])[:, None]], axis=1)
        return [self.probe("diff", ctx.config.main_steps, fn, ctx.config.sub_paths)]

    def evaluate(self, ctx, s, rep):
        c = ctx.config
        d = s[f"{self.name}/diff"]
        K = len(DOMINATED_N)
        ups = [upper_of(_col(d, k)) for k in range(K)]
        vals = [u.value for u in ups]
        p = c.krylov_p
        C = krylov_constants(_col(d, K), _col(d, K + 1), p).C
        for n, u in zip(DOMINATED_N, ups):
            rep.add(f"n={n}/krylov_bound", u.value, C * (2.0 / n) ** (1 / p) + c.tol("mc_se") * u.se)
        rep.add("nonincreasing", all(b <= a for a, b in zip(vals, vals[1:])), relation="true")
        rep.add("last_over_first", vals[-1] / vals[0], c.tol("dominated_fraction"))
        rep.add("values", vals, relation="info")


def _ae_modified(x):
    y = sgn(x)
    x = np.asarray(x)
    return np.where((x == 0.5) | (x == -1.0) | (x == 0.25), 3.0, y)


class AeIdentity(Check):
    name = "ae_identity"

    def needs(self, ctx):
        fn = lambda b: np.concatenate([difference_samples([_ae_modified], sgn, b, 1.0),
                                       difference_samples([_ae_modified], sgn, b, 2.0)], axis=1)
        return [self.probe("diff", ctx.config.main_steps, fn, ctx.config.sub_paths)]

    def evaluate(self, ctx, s, rep):
        d = s[f"{self.name}/diff"]
        for k, p in enumerate((1, 2)):
            rep.add(f"mbar_norm_p={p}", max(0.0, upper_of(_col(d, k)).value) ** (1 / p), ctx.config.tol("ae_identity"))


LIPSCHITZ_COARSE = (16, 64, 256, 1024)


class LipschitzImage(Check):
    name = "lipschitz_image"

    def needs(self, ctx):
        coarse = tuple(n for n in LIPSCHITZ_COARSE if ctx.config.main_steps % n == 0)
        return [self.probe("lip", ctx.config.main_steps, lambda b: lipschitz_samples(b, coarse), ctx.config.sub_paths)]

    def evaluate(self, ctx, s, rep):
        d = s[f"{self.name}/lip"]
        G = next(iter(d.values())).shape[1] // 2
        phi = [upper_of(_col(d, 2 * k)).value for k in range(G)]
        x = [upper_of(_col(d, 2 * k + 1)).value for k in range(G)]
        ratio = max(float(np.max(v[:, 2 * k] / np.where(v[:, 2 * k + 1] > 0, v[:, 2 * k + 1], np.inf)))
                    for v in d.values() for k in range(G))
        rep.add("pathwise_ratio", ratio, 1.0 + ctx.config.tol("identity"))
        rep.add("image_nonincreasing", all(b <= a for a, b in zip(phi, phi[1:])), relation="true")
        rep.add("approx_nonincreasing", all(b <= a for a, b in zip(x, x[1:])), relation="true")
        rep.add("image_norms", phi, relation="info")


class StateIntegrandCheck(Check):
    name = "state_integrand"

    def needs(self, ctx):
        c = ctx.config
        return [
            self.probe("integrals", c.main_steps, state_samples, c.sub_paths),
            self.probe("refinement", c.identity_steps, refinement_samples, c.identity_paths),
        ]

    def evaluate(self, ctx, s, rep):
        n_se = ctx.config.tol("mean_se")
        d = s[f"{self.name}/integrals"]
        names = list(STATE_FUNCTIONS)
        worst = 0.0
        iso = -math.inf
        for v in d.values():
            for k, name in enumerate(names):
                m, se = mean_se(v[:, k])
                worst = max(worst, abs(m) / se)
                if STATE_FUNCTIONS[name][1]:
                    diff = v[:, k] ** 2 - v[:, -1]
                    dm, dse = mean_se(diff)
                    iso = max(iso, dm / dse if dse > 0 else (0.0 if dm <= 0 else math.inf))
        rep.add("martingale_mean_se", worst, n_se)
        rep.add("isometry_excess_se", iso, n_se)
        for label, v in s[f"{self.name}/refinement"].items():
            sd = [float(np.std(v[:, k], ddof=1)) for k in range(v.shape[1])]
            rep.add(f"{label}/refinement_sd_decreasing", all(b < a for a, b in zip(sd, sd[1:])), relation="true")
            rep.add(f"{label}/refinement_sd", sd, relation="info")


class Krylov(Check):
    name = "krylov"

    bump_width = 0.1

    def needs(self, ctx):
        c = ctx.config
        L = c.krylov_lengths
        bump = lambda b: np.stack([occupation_integral(lambda x: np.exp(-0.5 * (x / self.bump_width) ** 2), b),
                                   np.abs(b.terminal - b.m_values[:, 0])], axis=1)
        return [self.probe("occupation", c.main_steps, lambda b: krylov_samples(b, L)),
                self.probe("bump", c.main_steps, bump, c.sub_paths)]

    def evaluate(self, ctx, s, rep):
        c = ctx.config
        p = c.krylov_p
        d = s[f"{self.name}/occupation"]
        L = c.krylov_lengths
        k = krylov_constants(_col(d, len(L)), _col(d, len(L) + 1), p)
        C, C1, c2 = k.C, k.C1, k.C2
        lhs = []
        for k, l in enumerate(L):
            u = upper_of(_col(d, k))
            lhs.append(u.value)
            rep.add(f"indicator_l={l:g}", u.value, C * l ** (1 / p) + c.tol("mc_se") * u.se)
        rep.add("lhs_decreasing", all(b < a for a, b in zip(lhs, lhs[1:])), relation="true")
        # p = 1 needs only C2, estimated on the same prefix as the bump integral
        e = s[f"{self.name}/bump"]
        bump = upper_of(_col(e, 0))
        c2_prefix = upper_of(_col(e, 1)).value
        g_l1 = self.bump_width * math.sqrt(2 * math.pi)
        rep.add("gaussian_bump_p=1", bump.value, c2_prefix * g_l1 + c.tol("mc_se") * bump.se)
        rep.add("C1", C1, relation="info")
        rep.add("C2", c2, relation="info")


LT_LEVELS = (-0.5, 0.0, 0.2, 0.5)


class LocalTime(Check):
    name = "local_time"

    def needs(self, ctx):
        c = ctx.config
        absT = lambda b: np.abs(b.terminal - b.m_values[:, 0])[:, None]
        zero = lambda b: np.concatenate([tanaka_at(b, [0.0]), absT(b)], axis=1)
        other = lambda b: np.concatenate([tanaka_at(b, LT_LEVELS), absT(b)], axis=1)
        return [self.probe("zero", c.fine_steps, zero, c.fine_paths),
                self.probe("levels", c.fine_steps, other, c.sub_paths)]

    def evaluate(self, ctx, s, rep):
        c = ctx.config
        exact = ctx.band.sigma_high * math.sqrt(2 * c.T / math.pi)
        z = s[f"{self.name}/zero"]
        L0 = upper_of(_col(z, 0))
        rep.add("upper_L0_rel_error", abs(L0.value - exact) / exact, c.tol("local_time_rel"))
        rep.add("upper_L0", L0.value, relation="info")
        ab = upper_of(_col(z, 1))
        rep.add("krylov_proof_bound_a=0", L0.value, ab.value + c.tol("mc_se") * math.hypot(L0.se, ab.se))
        d = s[f"{self.name}/levels"]
        ab = upper_of(_col(d, len(LT_LEVELS)))
        for k, a in enumerate(LT_LEVELS):
            if a == 0.0:
                continue
            u = upper_of(_col(d, k))
            rep.add(f"krylov_proof_bound_a={a:g}", u.value, ab.value + c.tol("mc_se") * math.hypot(u.se, ab.se))
        rep.add("min_value", min(float(v[:, 0].min()) for v in z.values()), 0.0, ">=")


class OccupationLimit(Check):
    name = "occupation_limit"

    def needs(self, ctx):
        eps = ctx.config.epsilons

        def fn(b):
            L = tanaka_at(b, [0.0])
            occ = occupation_at(b, [0.0], eps)[:, 0, :]
            return np.concatenate([np.abs(occ - L), L, occ], axis=1)

        return [self.probe("diff", ctx.config.fine_steps, fn, ctx.config.sub_paths)]

    def evaluate(self, ctx, s, rep):
        c = ctx.config
        E = len(c.epsilons)
        d = s[f"{self.name}/diff"]
        seq = [_worst_mean(_col(d, k)) for k in range(E)]
        L0 = upper_of(_col(d, E)).value
        rep.add("decreasing", all(b < a for a, b in zip(seq, seq[1:])), relation="true")
        rep.add("final_fraction_of_L0", seq[-1] / L0, c.tol("occupation_limit_frac"))
        rep.add("mean_abs_difference", seq, relation="info")
        gap = max(abs(float(np.mean(v[:, E + 1 + k]) - np.mean(v[:, E]))) for v in d.values() for k in range(E))
        rep.add("difference_of_means", gap, relation="info")


class OccupationFormula(Check):
    name = "occupation_formula"

    def needs(self, ctx):
        c = ctx.config
        lv = LevelGrid.symmetric(6.0 * ctx.scale, c.level_spacing * ctx.scale)
        return [self.probe("formula", c.fine_steps, lambda b: occupation_formula_samples(b, lv), c.sub_paths)]

    def evaluate(self, ctx, s, rep):
        c = ctx.config
        d = s[f"{self.name}/formula"]
        rep.add("g=1/mean_rel_error", _worst_mean(_col(d, 0)), c.tol("occupation_formula_rel"))
        worst = 0.0
        for label, v in d.items():
            lhs = float(np.mean(v[:, 1]))
            worst = max(worst, abs(lhs - float(np.mean(v[:, 2]))) / lhs)
            if label.startswith("const("):
                hm, hse = mean_se(v[:, 1] - 0.5 * v[:, 4])
                rep.add(f"{label}/half_qv_se", abs(hm) / hse, c.tol("mean_se"))
        rep.add("g=1[0,inf)/rel_error", worst, c.tol("occupation_formula_rel"))
        x2 = max(float(np.mean(np.abs(v[:, 3])) / np.mean(v[:, 4])) for v in d.values())
        rep.add("x2_tanaka_residual_rel", x2, c.tol("occupation_formula_rel"))


class GrowthSet(Check):
    name = "growth_set"

    def needs(self, ctx):
        c = ctx.config
        lv = default_levels(ctx.band, c.T, c.level_span, c.level_spacing)
        return [self.probe("violation", c.fine_steps, lambda b: growth_samples(b, lv, ctx.band.sigma_high), c.identity_paths)]

    def evaluate(self, ctx, s, rep):
        d = s[f"{self.name}/violation"]
        rep.add("tanaka_mean_fraction", _worst_mean(_col(d, 0)), ctx.config.tol("growth_frac"))
        rep.add("occupation_violation", max(float(v[:, 2].max()) for v in d.values()), 0.0, "==")


class Tanaka(Check):
    name = "tanaka"
    strike = 0.2

    def needs(self, ctx):
        c = ctx.config
        return [
            self.probe(f"N={N}", N, lambda b, N=N: tanaka_call_samples(b, self.strike, ladder_epsilon(c, N)), c.sub_paths)
            for N in c.ladder
        ]

    def evaluate(self, ctx, s, rep):
        c = ctx.config
        seq = []
        for N in c.ladder:
            d = s[f"{self.name}/N={N}"]
            rep.add(f"N={N}/definition_residual", max(float(v[:, 0].max()) for v in d.values()), c.tol("identity"))
            seq.append(_worst_mean(_col(d, 1)))
        rep.add("cross_residual_decreasing", all(b < a for a, b in zip(seq, seq[1:])), relation="true")
        rep.add("cross_residual_finest", seq[-1], c.tol("tanaka_residual"))
        rep.add("cross_residual", seq, relation="info")
        rep.add("epsilons", [ladder_epsilon(c, N) for N in c.ladder], relation="info")


class Bicontinuity(Check):
    name = "bicontinuity"

    def needs(self, ctx):
        c = ctx.config
        gaps, xs, ys = level_pairs(c.h0, 4, c.pair_centre)
        return [self.probe("pairs", c.fine_steps, lambda b: pair_moment_samples(b, xs, ys, c.moment_order), c.sub_paths)]

    def evaluate(self, ctx, s, rep):
        c = ctx.config
        gaps, _, _ = level_pairs(c.h0, 4, c.pair_centre)
        res = regularity_from_samples(gaps, s[f"{self.name}/pairs"], c.moment_order)
        _eval_regularity(rep, res)


CHECKS: dict[str, type[Check]] = {
    cls.name: cls
    for cls in (
        Identities, QuadraticVariation, HAssumption, NormSandwich, Expectation, Sublinearity, PdeOracle,
        TailTruncation, DominatedConvergence, AeIdentity, LipschitzImage, StateIntegrandCheck, Krylov,
        LocalTime, OccupationLimit, OccupationFormula, GrowthSet, Tanaka, Bicontinuity,
    )
}
assert tuple(CHECKS) == ALL_CHECKS


def run_suite(config: RunConfig, checks: Sequence[str] | None = None, workers: int = 1) -> SuiteResult:
    """Simulate each dataset once, evaluate every enabled check, return all reports."""
    config.validate()
    names = list(config.enabled_checks() if checks is None else checks)
    if "all" in names:
        names = list(ALL_CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ConfigError(f"unknown check(s) {unknown}; valid: all, {', '.join(ALL_CHECKS)}")
    names = list(dict.fromkeys(names))
    ctx = Context(config)
    echo = config.echo()
    objs = [CHECKS[n]() for n in names]

    by_steps: dict[int, list[Probe]] = {}
    for chk in objs:
        for need in chk.needs(ctx):
            by_steps.setdefault(need.steps, []).append(need.probe)

    samples: Samples = {}
    seconds: dict[str, float] = {}
    for steps in sorted(by_steps):
        probes = by_steps[steps]
        n = max(_default_paths(config, steps) if p.n_paths is None else p.n_paths for p in probes)
        t0 = time.perf_counter()
        log.info("dataset N=%d: %d paths, %d probes", steps, n, len(probes))
        res = sweep(ctx.family, ctx.grid(steps), n, config.seed, probes, strict=config.strict_band,
                    chunk_paths=config.chunk_paths, workers=workers)
        seconds[f"N={steps}"] = time.perf_counter() - t0
        for p in probes:
            samples[p.name] = {label: res[label][p.name] for label in res}

    reports = []
    for chk in objs:
        rep = CheckReport(chk.name, seed=config.seed, config_echo=echo)
        t0 = time.perf_counter()
        try:
            chk.evaluate(ctx, samples, rep)
        except GmartError as exc:
            rep.error = f"{type(exc).__name__}: {exc}"
        rep.runtime = time.perf_counter() - t0
        reports.append(rep)
    return SuiteResult(reports, config, seconds)


def _default_paths(config: RunConfig, steps: int) -> int:
    """Size of probes without a prefix limit: the full dataset for that grid."""
    if steps == config.fine_steps:
        return config.fine_paths
    return config.main_paths
