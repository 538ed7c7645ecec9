import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gmartlab import (
    BangBang,
    Constant,
    DomainError,
    GridMismatchError,
    InvalidArgument,
    PiecewiseDeterministic,
    RandomSwitching,
    StrategyFamily,
    VolatilityBand,
    default_strategy_family,
    make_uniform_grid,
)


def test_band_constants(band):
    assert band.lam == 0.25 and band.Lam == 1.0
    assert not band.degenerate
    assert VolatilityBand(0.0, 1.0).degenerate


@pytest.mark.parametrize("lo, hi", [(1.0, 0.5), (-0.1, 1.0), (0.0, 0.0), (0.5, math.inf), (math.nan, 1.0)])
def test_band_rejects(lo, hi):
    with pytest.raises(InvalidArgument):
        VolatilityBand(lo, hi)


def test_inverted_band_message_names_band():
    with pytest.raises(InvalidArgument, match=r"\[1.0, 0.5\]"):
        VolatilityBand(1.0, 0.5)


@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_G_is_sublinear_and_monotone(a):
    b = VolatilityBand(0.5, 1.0)
    assert b.G(a) <= 0.5 * b.Lam * max(a, 0.0) + 1e-12
    assert b.G(a + 1.0) >= b.G(a)
    assert b.G(2 * a) == pytest.approx(2 * b.G(a))


def test_admit_strict_and_clamp(band):
    with pytest.raises(DomainError, match="outside band"):
        band.admit([0.4, 0.7])
    np.testing.assert_array_equal(band.admit([0.4, 1.2], strict=False), [0.5, 1.0])
    with pytest.raises(DomainError):
        band.admit([np.nan], strict=False)


def test_uniform_grid():
    g = make_uniform_grid(1.0, 4)
    np.testing.assert_allclose(g.dt, 0.25)
    assert g.nodes[-1] == 1.0 and g.mesh() == 0.25
    assert g.index_of(0.5) == 2
    assert g.index_of(0.5 + 0.001) == 2
    with pytest.raises(GridMismatchError):
        g.index_of(0.4)
    assert g.same_as(make_uniform_grid(1.0, 4)) and not g.same_as(make_uniform_grid(1.0, 8))


@pytest.mark.parametrize("T, N", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, 2.5)])
def test_grid_rejects(T, N):
    with pytest.raises(InvalidArgument):
        make_uniform_grid(T, N)


def test_default_family_labels(band):
    fam = default_strategy_family(band)
    assert fam.labels == ["const(0.5)", "const(0.625)", "const(0.75)", "const(0.875)", "const(1)",
                          "bangbang_up", "bangbang_down"]


def test_degenerate_single_point_band():
    fam = default_strategy_family(VolatilityBand(1.0, 1.0))
    assert fam.labels == ["const(1)"]


def test_family_rejects_out_of_band_member(band):
    with pytest.raises(DomainError):
        StrategyFamily((Constant(0.3),), band=band)
    with pytest.raises(InvalidArgument):
        StrategyFamily((Constant(1.0), Constant(1.0)))
    with pytest.raises(InvalidArgument):
        StrategyFamily(())


def test_piecewise_schedule():
    s = PiecewiseDeterministic(((0.0, 0.5), (0.5, 1.0)))
    np.testing.assert_array_equal(s.schedule(make_uniform_grid(1.0, 4)), [0.5, 0.5, 1.0, 1.0])
    with pytest.raises(InvalidArgument):
        PiecewiseDeterministic(((0.1, 0.5),))


def test_strategy_labels():
    assert BangBang(1.0, 0.5).label == "bangbang_up"
    assert BangBang(0.5, 1.0, pivot=0.3).label == "bangbang_down@0.3"
    assert RandomSwitching(2.0, 0.5, 1.0).label == "switch(2;0.5,1)"
    with pytest.raises(InvalidArgument):
        RandomSwitching(-1.0, 0.5, 1.0)
