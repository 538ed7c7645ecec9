import math

import numpy as np
import pytest

from conftest import lattice_bundle
from gmartlab import InvalidArgument, make_uniform_grid
from gmartlab.config import ALL_CHECKS, from_mapping
from gmartlab.errors import ConfigError
from gmartlab.local_time import sgn
from gmartlab.verify import (
    CHECKS,
    CheckReport,
    Metric,
    check_bicontinuity,
    check_h_assumption,
    check_krylov,
    check_norm_sandwich,
    check_tanaka,
    h_pairs,
    identity_samples,
    ladder_epsilon,
    lipschitz_samples,
    refinement_samples,
    run_suite,
)

SMALL = dict(main_steps=64, main_paths=400, fine_steps=256, fine_paths=400, sub_paths=300, identity_steps=64,
             identity_paths=100, ladder=[64, 128, 256], qv_ladder=[16, 32, 64])


@pytest.mark.parametrize("m, ok", [
    (Metric(1.0, 2.0), True), (Metric(3.0, 2.0), False), (Metric(3.0, 2.0, ">="), True),
    (Metric(math.nan, 2.0), False), (Metric(False, None, "true"), False), (Metric("x", None, "info"), True),
    (Metric(0.0, 0.0, "=="), True), (Metric(1.0, 1.0, "<"), False),
])
def test_metric(m, ok):
    assert m.ok is ok


def test_report_status_and_json():
    r = CheckReport("x", seed=1)
    r.add("a", 1.0, 2.0)
    assert r.status == "pass"
    r.add("b", math.inf, 1.0)
    assert r.status == "fail" and r.failures() == ["b"]
    assert r.to_dict()["statistics"]["b"]["value"] == "inf"
    r.error = "DiagnosticError: boom"
    assert r.status == "error"


def test_registry_matches_config():
    assert tuple(CHECKS) == ALL_CHECKS


def test_identity_samples_on_lattice():
    s = identity_samples(lattice_bundle(10))
    assert s.max() < 1e-12


def test_check_tanaka_abs(small_bundles):
    a = 0.3
    r = check_tanaka(lambda x: np.abs(x - a), lambda x: sgn(x - a), [(a, 2.0)], small_bundles)
    assert r.passed, r.metrics


def test_check_krylov_and_norms(small_bundles, band):
    assert check_krylov(lambda x: (np.abs(x) <= 0.5).astype(float), 2.0, small_bundles, 1.0).passed
    with pytest.raises(InvalidArgument):
        check_krylov(lambda x: 1.0, 2.0, small_bundles, math.inf)
    assert check_norm_sandwich(lambda b: b.m_values[:, :-1], 2.0, small_bundles, band).passed


def test_check_h_assumption(small_bundles, band):
    assert check_h_assumption(small_bundles, band).passed


def test_h_pairs_distinct():
    p = h_pairs(make_uniform_grid(1.0, 64))
    assert len(p) == len(set(p)) == 12 and all(0 <= a < b <= 64 for a, b in p)


def test_per_step_increment_bound_small_N(band, family):
    # E[(M_{t+s} - M_t)^2] <= Lam s on every single step, checked where the multiplicity is small
    from gmartlab import simulate_paths

    g = make_uniform_grid(1.0, 8)
    for s in family:
        b = simulate_paths(s, g, 20000, 5, band=band)
        sq = np.mean(b.increments**2, axis=0)
        se = np.std(b.increments**2, axis=0, ddof=1) / math.sqrt(b.n_paths)
        assert (sq <= band.Lam / 8 + 4 * se).all()


def test_lipschitz_samples_termwise(small_bundles):
    s = lipschitz_samples(small_bundles[6], coarse=(16, 64))
    assert (s[:, 0] <= s[:, 1] * (1 + 1e-9)).all() and (s[:, 2] <= s[:, 3] * (1 + 1e-9)).all()
    with pytest.raises(InvalidArgument):
        lipschitz_samples(small_bundles[0], coarse=(3,))


def test_refinement_shrinks(small_bundles):
    d = refinement_samples(small_bundles[4])
    sd = d.std(axis=0)
    assert sd[0] > sd[1] > sd[2]


def test_bicontinuity_slope(small_bundles):
    r = check_bicontinuity([b.head(1000) for b in small_bundles[4:]])
    assert r.metrics["slope"].value > 1.2


def test_ladder_epsilon_pairs_defaults():
    cfg = from_mapping({})
    assert [ladder_epsilon(cfg, n) for n in cfg.ladder] == [0.2, 0.1, 0.05]


def test_suite_validates_before_compute():
    with pytest.raises(ConfigError):
        run_suite(from_mapping({"sigma_low": 2.0}))
    with pytest.raises(ConfigError):
        run_suite(from_mapping({}), checks=["nope"])


def test_empty_suite_passes():
    r = run_suite(from_mapping(SMALL), checks=[])
    assert r.status == "pass" and r.reports == []


def test_small_suite_is_reproducible_and_worker_independent():
    cfg = from_mapping(dict(SMALL, checks=["identities", "expectation", "krylov", "tanaka", "growth_set"]))
    a = run_suite(cfg).to_json()
    b = run_suite(cfg).to_json()
    c = run_suite(cfg, workers=4).to_json()
    assert a == b == c
    assert '"schema": "gmartlab.verify/1"' in a


def test_small_suite_exact_checks_pass():
    cfg = from_mapping(SMALL)
    r = run_suite(cfg, checks=["identities", "norm_sandwich", "ae_identity", "lipschitz_image", "growth_set",
                               "quadratic_variation", "sublinearity", "h_assumption"])
    for rep in r.reports:
        assert rep.passed, (rep.name, rep.failures())
    assert [x.name for x in sorted(r.reports, key=lambda x: x.name)][0] == "ae_identity"
    assert "suite: pass" in r.table()
