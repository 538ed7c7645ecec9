from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import lattice_bundle
from gmartlab import CoverageError, DiagnosticError, InvalidArgument, PathBundle, make_uniform_grid
from gmartlab.local_time import (
    LevelGrid,
    check_coverage,
    default_levels,
    default_record,
    growth_band,
    growth_set_check,
    level_pairs,
    level_regularity_check,
    local_time_field,
    local_time_occupation,
    local_time_tanaka,
    local_time_tanaka_definition,
    occupation_at,
    occupation_formula_check,
    regularity_from_samples,
    sgn,
    tanaka_at,
)
from gmartlab.verify import tanaka_call_samples, tanaka_residual


def test_sgn_convention():
    np.testing.assert_array_equal(sgn(np.array([-1.0, 0.0, 2.0])), [-1, -1, 1])


def test_level_grid():
    lv = LevelGrid.symmetric(1.0, 0.25)
    np.testing.assert_allclose(lv.levels, [-1, -0.75, -0.5, -0.25, 0, 0.25, 0.5, 0.75, 1])
    assert lv.index_of(0.0) == 4
    with pytest.raises(InvalidArgument):
        LevelGrid(0.0, 0, 3)


LATTICE = lattice_bundle(12)
LATTICE_PATHS = list(oracles.lattice_paths(12))


@pytest.mark.parametrize("a", [Fraction(0), Fraction(1), Fraction(-2), Fraction(1, 2), Fraction(3)])
def test_tanaka_kernel_matches_lattice_oracle(a):
    exact = [oracles.tanaka_definition(m, a) for m in LATTICE_PATHS]
    assert exact == [oracles.tanaka_crossings(m, a) for m in LATTICE_PATHS]
    got = tanaka_at(LATTICE, [float(a)])[:, 0]
    np.testing.assert_array_equal(got, np.array([float(x) for x in exact]))
    np.testing.assert_array_equal(local_time_tanaka_definition(LATTICE, float(a))[:, -1], got)


def test_call_residual_oracle_is_exactly_zero():
    K = Fraction(1)
    assert all(oracles.call_residual(m, K) == 0 for m in LATTICE_PATHS)
    res = tanaka_call_samples(LATTICE, float(K), eps=0.5)
    assert res[:, 0].max() == 0.0


def test_call_residual_off_lattice_level():
    # K = 0.2 is never hit: the residual is still exactly zero in rationals
    K = Fraction(1, 5)
    assert all(oracles.call_residual(m, K) == 0 for m in LATTICE_PATHS)
    assert tanaka_call_samples(LATTICE, 0.2, eps=0.5)[:, 0].max() < 1e-14


def test_three_step_expected_local_time():
    n = 3
    assert oracles.lattice_mean(lambda m: oracles.tanaka_definition(m, 0), n) == oracles.lattice_mean(
        lambda m: abs(m[-1]), n)
    b = lattice_bundle(n)
    assert np.mean(tanaka_at(b, [0.0])) == pytest.approx(np.mean(np.abs(b.terminal)), abs=1e-15)


def test_convex_tanaka_with_density(small_bundles):
    # f(x) = x^2: f'' = 2 as a density, no atoms
    b = small_bundles[5]
    lv = LevelGrid.symmetric(6.0, 0.01)
    r = tanaka_residual(b, lambda x: x**2, lambda x: 2 * x, density=lambda a: 2.0, levels=lv)
    assert np.mean(np.abs(r)) < 0.02
    with pytest.raises(InvalidArgument, match="convex"):
        tanaka_residual(b, lambda x: -np.abs(x), lambda x: -sgn(x), [(0.0, -2.0)])


def test_fields_are_nonnegative_and_monotone(small_bundles):
    b = small_bundles[6].head(50)
    lv = default_levels(__import__("gmartlab").VolatilityBand(0.5, 1.0), 1.0, 2.0, 0.05)
    f = local_time_field(b, lv, 0.05, record=default_record(b.grid, 9))
    assert (f.tanaka >= 0).all() and (f.occupation >= 0).all()
    assert (np.diff(f.tanaka, axis=2) >= -1e-12).all()
    assert (np.diff(f.occupation, axis=2) >= 0).all()
    assert f.times[0] == 0.0 and f.times[-1] == 1.0
    s = f.summary()
    assert s["tanaka"]["min"] >= 0 and "discrepancy_T" in s


def test_epsilon_must_be_positive(small_bundles):
    lv = LevelGrid.symmetric(1.0, 0.1)
    with pytest.raises(InvalidArgument):
        local_time_occupation(small_bundles[0], lv, 0.0)
    with pytest.raises(InvalidArgument):
        occupation_at(small_bundles[0], [0.0], [-1.0])


def test_level_grid_field_matches_few_level_kernel(small_bundles):
    b = small_bundles[3].head(100)
    lv = LevelGrid.symmetric(1.0, 0.25)
    f = local_time_tanaka(b, lv, record=[b.grid.n_steps])
    np.testing.assert_allclose(f.terminal(), tanaka_at(b, lv.levels), atol=1e-12)
    o = local_time_occupation(b, lv, 0.1, record=[b.grid.n_steps])
    np.testing.assert_allclose(o.terminal("occupation"), occupation_at(b, lv.levels, [0.1])[:, :, 0], atol=1e-12)


def test_occupation_window_by_hand():
    g = make_uniform_grid(1.0, 4)
    b = PathBundle.from_increments(g, [[0.05, 0.1, -0.3, 0.0]], 1.0)
    # M = 0, .05, .15, -.15, -.15 ; window [0, 0.1): nodes 0 and 1 qualify
    got = occupation_at(b, [0.0], [0.1])[0, 0, 0]
    assert got == pytest.approx(2 * 0.25 / 0.1)


def test_occupation_formula_check(small_bundles):
    b = small_bundles[4].head(200)
    lv = LevelGrid.symmetric(6.0, 0.02)
    rel = occupation_formula_check(b, lambda a: np.ones_like(a), lv)
    assert np.mean(rel) < 0.15
    with pytest.raises(CoverageError):
        check_coverage(b, LevelGrid.symmetric(0.5, 0.1))


def test_growth_set_occupation_is_exact(small_bundles):
    b = small_bundles[5].head(100)
    lv = LevelGrid.symmetric(3.0, 0.05)
    f = local_time_field(b, lv, 0.05, record=[b.grid.n_steps])
    occ = growth_set_check(f, b, "occupation", 1.0)
    assert occ.violation.sum() == 0
    tan = growth_set_check(f, b, "tanaka", 1.0)
    assert tan.eps_band == pytest.approx(growth_band(0.05, 1.0, b.grid))
    assert np.mean(tan.fraction) < 0.05
    with pytest.raises(InvalidArgument):
        growth_set_check(f, b, "nope")


def test_level_pairs():
    gaps, xs, ys = level_pairs(0.4, 4, 0.0)
    np.testing.assert_allclose(gaps, [0.4, 0.2, 0.1, 0.05])
    np.testing.assert_allclose(ys - xs, gaps)


def test_regularity_fit_on_exact_power_law():
    gaps = np.array([0.4, 0.2, 0.1, 0.05])
    res = regularity_from_samples(gaps, {"s": np.tile(3.0 * gaps**2, (5, 1))}, 2)
    assert res.slope == pytest.approx(2.0) and all(res.raw_ok) and res.passed
    with pytest.raises(DiagnosticError):
        regularity_from_samples(gaps, {"s": np.zeros((5, 4))}, 2)
    with pytest.raises(InvalidArgument):
        regularity_from_samples(gaps, {"s": np.ones((5, 4))}, 1)


def test_level_regularity_on_paths(small_bundles):
    res = level_regularity_check(small_bundles[4].head(500), n=2)
    assert res.slope > 1.0


@given(st.lists(st.floats(-1.0, 1.0, allow_nan=False), min_size=1, max_size=40),
       st.floats(-2.0, 2.0, allow_nan=False))
@settings(max_examples=60, deadline=None)
def test_tanaka_kernel_equals_definition(incs, a):
    g = make_uniform_grid(1.0, len(incs))
    b = PathBundle.from_increments(g, [incs], 1.0)
    got = tanaka_at(b, [a])[0, 0]
    ref = local_time_tanaka_definition(b, a)[0, -1]
    assert got >= 0.0
    assert got == pytest.approx(ref, abs=1e-12 * (1 + np.abs(b.m_values).max() * len(incs)))
