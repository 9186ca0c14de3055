import numpy as np
import pytest

from wandering_compacta.compacta import generate
from wandering_compacta.errors import ApproximationStalled, IllConditioned
from wandering_compacta.grid import Disc
from wandering_compacta.rational import (Constant, Piece, PiecewiseTarget, RationalMap,
                                         Translation, certify_error)
from wandering_compacta.runge import runge_approximate


def _ring(inner, outer, res=256):
    return generate("annulus", res, inner=inner, outer=outer)


def _nested_target(res=256):
    """``-3`` on D(-3,1) and on a ring, ``z + 3`` on a disc inside the ring."""
    return PiecewiseTarget([Piece(Disc(-3, 1.0, closed=True), Constant(-3.0), "Delta"),
                            Piece(_ring(0.35, 0.45, res), Constant(-3.0), "R"),
                            Piece(generate("disc", res, radius=0.2), Translation(3.0), "L")])


def test_in_basis_reproduced():
    g = RationalMap([0.5, -1.0, 0.25], [(1.5 + 1j, [0.2, 0.05])])
    A = generate("disc", 128, radius=0.3)
    t = PiecewiseTarget([Piece(A, g, "A")])
    scale = float(np.abs(g(A.points())).max())
    f, c = runge_approximate(t, 1e-6)
    assert c.certified_bound <= 1e-10 * scale
    f, c = runge_approximate(t, 1e-6, pole_sites=[1.5 + 1j], carrier=None)
    assert c.certified_bound <= 1e-10 * scale


def test_pole_between_nested_pieces():
    t = _nested_target()
    f, c = runge_approximate(t, 1e-3)
    assert c.certified_bound <= 1e-3
    r = np.abs(f.locations)
    assert np.any((r > 0.2) & (r < 0.35))
    # maximum modulus: a map without poles in the gap cannot fit both values
    assert not np.all(np.abs(f.coefficients[(r > 0.2) & (r < 0.35)]) == 0)


def test_zero_target_oversampled():
    A = generate("disc", 128, radius=0.1, center=-0.3)
    B = generate("disc", 128, radius=0.1, center=0.3)
    t = PiecewiseTarget([Piece(A, Constant(0.0), "A"), Piece(B, Constant(0.0), "B")])
    f, c = runge_approximate(t, 1e-3)
    dense = certify_error(f, t, density=16, safety=1.0)
    assert dense.sup_estimate <= 1e-3
    assert dense.sup_estimate <= c.certified_bound or c.certified_bound == 0


def test_oversampled_check_within_certificate():
    t = _nested_target()
    f, c = runge_approximate(t, 1e-4)
    dense = certify_error(f, t, density=16, safety=1.0)
    assert dense.sup_estimate <= c.certified_bound


def test_least_squares_pole_discipline():
    g = RationalMap([0.0, 0.0, 1.0], [(0.02, [1.0]), (-0.03j, [0.0, 0.5])])
    t = PiecewiseTarget([Piece(_ring(0.3, 0.4, 128), g, "ring")])
    f, c = runge_approximate(t, 1e-8, pole_sites=[0j], carrier=None)
    assert c.certified_bound <= 1e-8
    assert f.locations.tolist() == [0j]


def test_single_site_in_separating_gap_is_out_of_reach():
    # one pole site between a disc and a ring around it: the geometric rate is set by the
    # Green's function of the gap at its saddle, far too slow for double precision
    t = PiecewiseTarget([Piece(_ring(0.4, 0.5, 128), Constant(-3.0), "R"),
                         Piece(generate("disc", 128, radius=0.08), Translation(3.0), "L")])
    with pytest.raises((IllConditioned, ApproximationStalled)):
        runge_approximate(t, 1e-3, pole_sites=[0.24 + 0j], carrier=None)


def test_stalled_reports_best_bound():
    t = _nested_target(128)
    with pytest.raises(ApproximationStalled) as exc:
        runge_approximate(t, 1e-14, max_rounds=1)
    assert np.isfinite(exc.value.best_bound)
