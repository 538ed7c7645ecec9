"""gmartlab command line: simulate, expectation, localtime, verify.

Exit codes: 0 pass, 1 check failure, 2 usage or configuration error,
3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import replace

import numpy as np

from .calculus import mean_se
from .config import ALL_CHECKS, RunConfig, from_mapping, load_config
from .errors import ConfigError, GmartError, InvalidArgument
from .expectation import parse_payoff, payoff_names, upper_expectation
from .local_time import default_levels, default_record, local_time_field
from .model import make_uniform_grid
from .paths import Probe, dump_csv, simulate_paths, sweep

OUT_ENV = "GMARTLAB_OUT"
log = logging.getLogger("gmartlab")

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# output helpers


@contextmanager
def atomic_open(path: str, mode: str = "w"):
    """Write to a temporary file in the target directory, rename on success."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str, obj) -> None:
    with atomic_open(path) as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_csv_with_echo(path: str, echo: dict, writer) -> None:
    """``writer(tmp_path)`` produces the CSV; a '# config:' line is prepended."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, body = tempfile.mkstemp(prefix=".tmp-body-", dir=d)
    os.close(fd)
    try:
        writer(body)
        with atomic_open(path) as out, open(body, newline="") as src:
            out.write("# config: " + json.dumps(echo, sort_keys=True) + "\n")
            for line in src:
                out.write(line)
    finally:
        os.unlink(body)


def out_dir(args, cfg: RunConfig) -> str:
    return args.out or cfg.out or os.environ.get(OUT_ENV) or "."


# --------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser):
    g = p.add_argument_group("common")
    g.add_argument("--config", help="TOML configuration file (flags override it)")
    g.add_argument("--seed", type=int)
    g.add_argument("--paths", type=int, help="number of paths")
    g.add_argument("--steps", type=int, help="number of time steps N")
    g.add_argument("--T", type=float, dest="T", help="horizon")
    g.add_argument("--sigma-low", type=float, dest="sigma_low")
    g.add_argument("--sigma-high", type=float, dest="sigma_high")
    g.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--strict-band", action=argparse.BooleanOptionalAction, default=None, dest="strict_band",
                   help="reject (rather than clip) volatilities outside the band")
    g.add_argument("--chunk-paths", type=int, dest="chunk_paths")
    g.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gmartlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate the strategy family and summarize <M>")
    _common(p)
    p.add_argument("--dump", action="store_true", help="also write per-strategy path CSVs (size guarded)")
    p.add_argument("--strategy", action="append", help="restrict to these strategy labels")

    p = sub.add_parser("expectation", help="upper/lower expectation of a payoff of M_T")
    _common(p)
    p.add_argument("payoff", nargs="?", help=f"one of: {', '.join(payoff_names())}")

    p = sub.add_parser("localtime", help="local time fields on a level grid")
    _common(p)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--symmetric", action="store_true", default=None)
    p.add_argument("--level-spacing", type=float, dest="level_spacing",
                   help="level spacing in units of sigma_high sqrt(T)")
    p.add_argument("--level-span", type=float, dest="level_span", help="half width in units of sigma_high sqrt(T)")

    p = sub.add_parser("verify", help="run theorem-level checks")
    _common(p)
    p.add_argument("checks", nargs="*", help=f"'all' or any of: {', '.join(ALL_CHECKS)}")
    return ap


_OVERRIDES = ("seed", "paths", "steps", "T", "sigma_low", "sigma_high", "strict_band", "chunk_paths",
              "epsilon", "symmetric", "level_spacing", "level_span")


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    kw = {k: getattr(args, k) for k in _OVERRIDES if getattr(args, k, None) is not None}
    if getattr(args, "payoff", None):
        kw["payoff"] = args.payoff
    if getattr(args, "checks", None):
        kw["checks"] = list(args.checks)
    cfg = from_mapping(kw, cfg) if kw else cfg
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    return cfg.validate()


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args, cfg: RunConfig) -> int:
    if cfg.steps is None or cfg.paths is None:
        raise UsageError("simulate needs --steps and --paths (or steps/paths in the config)")
    family = cfg.family()
    if args.strategy:
        unknown = [s for s in args.strategy if s not in family.labels]
        if unknown:
            raise UsageError(f"unknown strategy {unknown}; valid: {', '.join(family.labels)}")
        family = [s for s in family if s.label in args.strategy]
    grid = make_uniform_grid(cfg.T, cfg.steps)
    probes = [
        Probe("qv_T", lambda b: b.qv_exact[:, -1]),
        Probe("pqv_T", lambda b: np.sum(b.increments**2, axis=1)),
        Probe("M_T", lambda b: b.terminal),
    ]
    res = sweep(family, grid, cfg.paths, cfg.seed, probes, strict=cfg.strict_band,
                chunk_paths=cfg.chunk_paths, workers=args.workers)
    per = {}
    for label, d in res.items():
        row = {}
        for name, x in d.items():
            m, se = mean_se(x)
            row[name] = {"mean": m, "se": se}
        row["qv_T"]["min"] = float(d["qv_T"].min())
        row["qv_T"]["max"] = float(d["qv_T"].max())
        per[label] = row
    echo = cfg.echo()
    summary = {"command": "simulate", "config": echo, "seed": cfg.seed, "per_strategy": per}
    out = out_dir(args, cfg)
    write_json(os.path.join(out, "simulate.json"), summary)
    if args.dump:
        band = cfg.band
        for s in family:
            b = simulate_paths(s, grid, cfg.paths, cfg.seed, band=band, strict=cfg.strict_band)
            write_csv_with_echo(os.path.join(out, f"paths_{_safe(s.label)}.csv"), echo, lambda p, b=b: dump_csv(b, p))
    print(json.dumps({k: v["qv_T"] for k, v in per.items()}, indent=2, sort_keys=True))
    return EXIT_PASS


def cmd_expectation(args, cfg: RunConfig) -> int:
    try:
        payoff = parse_payoff(cfg.payoff)
    except InvalidArgument as exc:
        raise UsageError(str(exc)) from exc
    steps = cfg.steps or 4096
    paths = cfg.paths or 100_000
    cfg = replace(cfg, steps=steps, paths=paths)
    rep = upper_expectation(payoff, cfg.family(), make_uniform_grid(cfg.T, steps), paths, cfg.seed,
                            strict=cfg.strict_band, chunk_paths=cfg.chunk_paths, workers=args.workers)
    d = rep.to_dict()
    d["config"] = cfg.echo()
    write_json(os.path.join(out_dir(args, cfg), "expectation.json"), d)
    print(json.dumps({k: d[k] for k in ("payoff", "upper", "upper_se", "lower", "lower_se", "argmax_label",
                                        "argmin_label")}, indent=2, sort_keys=True))
    return EXIT_PASS


def cmd_localtime(args, cfg: RunConfig) -> int:
    steps = cfg.steps or 4096
    paths = cfg.paths or 1000
    cfg = replace(cfg, steps=steps, paths=paths)
    band = cfg.band
    grid = make_uniform_grid(cfg.T, steps)
    levels = default_levels(band, cfg.T, cfg.level_span, cfg.level_spacing)
    record = default_record(grid)
    k0 = levels.index_of(0.0)
    echo = cfg.echo()
    out = out_dir(args, cfg)
    summary = {"command": "localtime", "config": echo, "seed": cfg.seed, "per_strategy": {}}
    for s in cfg.family():
        b = simulate_paths(s, grid, paths, cfg.seed, band=band, strict=cfg.strict_band)
        f = local_time_field(b, levels, cfg.epsilon, cfg.symmetric, record)
        write_csv_with_echo(os.path.join(out, f"localtime_{_safe(s.label)}.csv"), echo, f.to_csv)
        row = f.summary()
        row["at_zero"] = {kind: mean_se(f.terminal(kind)[:, k0])[0] for kind in ("tanaka", "occupation")}
        summary["per_strategy"][s.label] = row
    write_json(os.path.join(out, "localtime.json"), summary)
    print(json.dumps({label: r["at_zero"] for label, r in summary["per_strategy"].items()}, indent=2, sort_keys=True))
    return EXIT_PASS


def cmd_verify(args, cfg: RunConfig) -> int:
    from .verify import run_suite

    names = cfg.enabled_checks()
    result = run_suite(cfg, names, workers=args.workers)
    out = out_dir(args, cfg)
    with atomic_open(os.path.join(out, "verify.json")) as fh:
        fh.write(result.to_json())
    write_json(os.path.join(out, "timings.json"), result.timings())
    print(result.table())
    if result.status == "error":
        return EXIT_RUNTIME
    return EXIT_PASS if result.status == "pass" else EXIT_FAIL


def _safe(label: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in label).strip("_")


COMMANDS = {"simulate": cmd_simulate, "expectation": cmd_expectation, "localtime": cmd_localtime,
            "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        parser.exit(EXIT_USAGE, f"gmartlab {args.command}: error: {exc}\n")
    except OSError as exc:
        print(f"gmartlab {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except GmartError as exc:
        print(f"gmartlab {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
