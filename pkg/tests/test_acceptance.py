"""Acceptance gate: criteria 1-10 at full scale on the default fixture.

Band [0.5, 1], T = 1, default strategy family (k = 5), seed 42.  The full
suite is simulated once; each criterion reads the metrics it needs and
records one PASS/FAIL line, printed in the terminal summary.
"""

import json
import time

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE_LINES, lattice_bundle
from gmartlab.config import RunConfig
from gmartlab.verify import run_suite, tanaka_call_samples

pytestmark = pytest.mark.slow

SEED = 42


@pytest.fixture(scope="module")
def suite():
    t0 = time.perf_counter()
    res = run_suite(RunConfig(seed=SEED), workers=1)
    res.elapsed = time.perf_counter() - t0
    return res


def record(k: int, ok: bool, detail: str):
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def metrics(suite, name):
    rep = suite.report(name)
    assert rep.error is None, rep.error
    return rep.metrics


def test_criterion_1_exact_identities(suite):
    ids = metrics(suite, "identities")
    ns = metrics(suite, "norm_sandwich")
    names = ["telescoping", "tanaka_abs_residual", "occupation_min", "occupation_min_increment"]
    ok = all(ids[n].ok for n in names) and all(m.ok for m in ns.values())
    worst = max(ids[n].value for n in ("telescoping", "tanaka_abs_residual"))
    sandwich = [m for k, m in ns.items() if k.endswith("upper") or k.endswith("lower")]
    record(1, ok, f"max identity deviation {worst:.2e} (tol 1e-9); sandwich {sum(m.ok for m in sandwich)}"
                  f"/{len(sandwich)} ok; occupation min {ids['occupation_min'].value:g}, "
                  f"min increment {ids['occupation_min_increment'].value:g}")
    assert ok


def test_criterion_2_closed_forms(suite):
    m = metrics(suite, "expectation")
    keys = ["upper_square", "lower_square", "upper_abs", "upper_linear_se"]
    ok = all(m[k].ok for k in keys)
    record(2, ok, f"|E^[M^2]-1|={m['upper_square'].value:.4f} (<=0.02), |-E^[-M^2]-0.25|="
                  f"{m['lower_square'].value:.4f} (<=0.01), |E^|M|-0.7979|={m['upper_abs'].value:.4f} (<=0.01), "
                  f"E^[M]/SE={m['upper_linear_se'].value:.2f} (<=4)")
    assert ok


def test_criterion_3_pde_oracle(suite):
    m = metrics(suite, "pde_oracle")
    keys = [k for k in m if k.split("/")[0] in ("square", "neg_square", "abs")] + ["sin/mc_upper_le_pde"]
    ok = all(m[k].ok for k in keys)
    worst = max(m[f"{n}/vs_closed_form"].value for n in ("square", "neg_square", "abs"))
    record(3, ok, f"max |PDE - closed form| {worst:.2e} (<=0.01); sin: MC upper {m['sin/mc_upper_le_pde'].value:.4f}"
                  f" <= bound {m['sin/mc_upper_le_pde'].bound:.4f}; family gap {m['sin/family_gap'].value:.4f}")
    assert ok


def test_criterion_4_local_time_at_zero(suite):
    m = metrics(suite, "local_time")
    ok = m["upper_L0_rel_error"].ok
    record(4, ok, f"E^[L_1(0)]={m['upper_L0'].value:.4f} vs {oracles.upper_abs(0.5, 1, 1):.4f}, "
                  f"rel err {m['upper_L0_rel_error'].value:.4f} (<=0.02)")
    assert ok


def test_criterion_5_cross_estimator(suite):
    m = metrics(suite, "occupation_limit")
    ok = m["decreasing"].ok and m["final_fraction_of_L0"].ok
    seq = ", ".join(f"{v:.4f}" for v in m["mean_abs_difference"].value)
    record(5, ok, f"mean|tanaka-occupation| over eps 0.2/0.1/0.05: {seq}; decreasing={m['decreasing'].value}; "
                  f"final/E^[L(0)]={m['final_fraction_of_L0'].value:.3f} (<=0.05)")
    assert ok


def test_criterion_6_occupation_formula(suite):
    m = metrics(suite, "occupation_formula")
    ok = m["g=1/mean_rel_error"].ok
    record(6, ok, f"g=1 mean relative error {m['g=1/mean_rel_error'].value:.4f} (<=0.05)")
    assert ok


def test_criterion_7_convex_tanaka(suite):
    m = metrics(suite, "tanaka")
    # brute-force lattice oracle: 12 steps, every path, exact rationals
    from fractions import Fraction

    paths = list(oracles.lattice_paths(12))
    lat = lattice_bundle(12)
    oracle_ok = True
    for K in (Fraction(0), Fraction(1), Fraction(1, 5)):
        exact = np.array([float(oracles.tanaka_definition(p, K)) for p in paths])
        oracle_ok &= all(oracles.call_residual(p, K) == 0 for p in paths)
        from gmartlab.local_time import tanaka_at

        oracle_ok &= bool(np.array_equal(tanaka_at(lat, [float(K)])[:, 0], exact))
        oracle_ok &= bool(tanaka_call_samples(lat, float(K), 0.5)[:, 0].max() < 1e-14)
    ok = m["cross_residual_decreasing"].ok and m["cross_residual_finest"].ok and oracle_ok
    seq = ", ".join(f"{v:.4f}" for v in m["cross_residual"].value)
    record(7, ok, f"mean|residual| over N=2^10/2^12/2^14: {seq}; strictly decreasing="
                  f"{m['cross_residual_decreasing'].value}; finest <= 0.02: {m['cross_residual_finest'].ok}; "
                  f"12-step lattice oracle exact: {oracle_ok}")
    assert ok


def test_criterion_8_krylov(suite):
    m = metrics(suite, "krylov")
    keys = [k for k in m if k.startswith("indicator_l=")]
    ok = all(m[k].ok for k in keys)
    parts = ", ".join(f"l={k.split('=')[1]}: {m[k].value:.4f}<={m[k].bound:.4f}" for k in keys)
    record(8, ok, f"C1={m['C1'].value:.4f} C2={m['C2'].value:.4f}; {parts}")
    assert ok


def test_criterion_9_bicontinuity(suite):
    m = metrics(suite, "bicontinuity")
    raw = [k for k in m if k.startswith("raw_bound_h=")]
    ok = m["slope"].ok and all(m[k].ok for k in raw)
    ratios = ", ".join(f"h={k.split('=')[1]}: {m[k].value / m[k].bound:.2f}" for k in raw)
    record(9, ok, f"slope {m['slope'].value:.3f} (>=1.5); moment/raw bound {ratios}")
    assert ok


REDUCED = dict(main_steps=256, main_paths=4000, fine_steps=1024, fine_paths=4000, sub_paths=2000,
               identity_steps=128, identity_paths=500, ladder=[256, 512, 1024], qv_ladder=[32, 64, 128],
               seed=SEED)


def test_criterion_10_reproducibility(suite, tmp_path):
    from gmartlab.cli import main

    out = [tmp_path / d for d in ("a", "b", "c")]
    cfg = tmp_path / "reduced.toml"
    cfg.write_text("\n".join(f"{k} = {json.dumps(v)}" for k, v in REDUCED.items()) + "\n")
    for d, w in zip(out, (1, 1, 8)):
        main(["verify", "all", "--config", str(cfg), "--seed", str(SEED), "--workers", str(w), "--out", str(d)])
    blobs = [(d / "verify.json").read_bytes() for d in out]
    same_runs = blobs[0] == blobs[1]
    same_workers = blobs[0] == blobs[2]
    within = suite.elapsed <= 600
    ok = same_runs and same_workers and within
    record(10, ok, f"reduced-scale verify all: byte-identical reruns: {same_runs}; workers 1 vs 8 identical: {same_workers}; "
                   f"full suite {suite.elapsed:.0f} s on 1 core (budget 600 s)")
    assert ok
