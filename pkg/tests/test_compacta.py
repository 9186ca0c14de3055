import numpy as np
import pytest
from scipy import ndimage

from wandering_compacta.compacta import (disc_chain, distance_to_unit_circle, generate,
                                         nested_compacta, neighbourhoods, normalize)
from wandering_compacta.errors import EmptyRegion, ResolutionTooCoarse
from wandering_compacta.grid import Frame, GridRegion, rasterize_polylines
from wandering_compacta.rational import RationalMap


def _circle_distance_oracle(K, n=4096):
    """Exhaustive min over all cells of K against dense unit-circle samples."""
    t = 2 * np.pi * np.arange(n) / n
    circle = np.exp(1j * t)
    best = np.inf
    for chunk in np.array_split(K.points(), max(1, K.count // 2000)):
        best = min(best, float(np.abs(chunk[:, None] - circle[None, :]).min()))
    return best


def test_normalize_far_disc():
    K = generate("disc", 64, radius=2.0, center=10.0)
    N, amap = normalize(K)
    assert np.abs(N.points()).max() <= 0.5 + 1 / 64
    assert amap.center == pytest.approx(10.0, abs=1 / 64)
    assert amap.scale > 2


def test_normalize_identity_when_inside():
    K = generate("disc", 128, radius=0.3)
    N, amap = normalize(K)
    assert amap.is_identity() and N is K


def test_normalize_square_outline_distance():
    K = rasterize_polylines([np.array([0, 1, 1 + 1j, 1j])], 256)
    N, _ = normalize(K)
    d = distance_to_unit_circle(N)
    oracle = _circle_distance_oracle(N)
    assert d > 0
    assert d == pytest.approx(oracle, abs=2 * np.pi / 4096 + 1e-12)


def test_normalize_empty():
    with pytest.raises(EmptyRegion):
        normalize(GridRegion(64, 0, 0, np.zeros((3, 3), bool)))


def test_nested_point_discs():
    K = GridRegion.from_points([0j], 256)
    for j in range(3):
        Kj = nested_compacta(K, j, 1.0)
        r = np.abs(Kj.points())
        assert r.max() <= 2.0 ** -(j + 1) + 1e-12
        # every lattice point within the radius is present
        g = np.arange(-140, 141) / 256
        z = (g[None, :] + 1j * g[:, None]).ravel()
        assert np.sum(np.abs(z) <= 2.0 ** -(j + 1)) == Kj.count


def test_nested_K0_in_unit_disc():
    for name in ("annulus", "carpet", "disc"):
        K = generate(name, 256)
        assert np.abs(nested_compacta(K, 0).points()).max() < 1


def test_nested_two_points():
    K = GridRegion.from_points([0.5, -0.5], 256)
    d = _circle_distance_oracle(K)
    assert d == pytest.approx(0.5, abs=1e-3)
    K3 = nested_compacta(K, 3, d)
    comps = K3.components()
    assert len(comps) == 2
    z = K3.frame.padded(4).centers()
    brute = np.minimum(np.abs(z - 0.5), np.abs(z + 0.5)) <= 2.0 ** -4 * d + 1e-9 / 256
    assert brute.sum() == K3.count
    assert np.array_equal(K3.embed(K3.frame.padded(4)), brute)


def test_nested_too_coarse():
    K = GridRegion.from_points([0j], 16)
    with pytest.raises(ResolutionTooCoarse) as exc:
        nested_compacta(K, 4, 0.5)
    assert exc.value.minimal_resolution >= 2 / (2.0 ** -5 * 0.5)


def test_disc_chain():
    D, Delta = disc_chain(-1)
    assert (D.center, D.radius, Delta) == (-3, 1.0, None)
    D0, Delta0 = disc_chain(0)
    assert (D0.center, Delta0.center, Delta0.radius) == (0, -3, 1.0)
    assert D0.distance_to(Delta0) == pytest.approx(1.0)
    D2, Delta2 = disc_chain(2)
    assert (D2.center, Delta2.radius) == (6, 7.0)
    assert D2.distance_to(Delta2) == pytest.approx(1.0)


def test_neighbourhoods_annulus_shell():
    K = generate("annulus", 256)
    d = distance_to_unit_circle(K)
    K0, K1 = nested_compacta(K, 0, d), nested_compacta(K, 1, d)
    nb = neighbourhoods(RationalMap.constant(-3.0), 0, K0, K1)
    frame = Frame.union([K0.frame, nb.L.frame, nb.R.frame]).padded(3)
    k0, k1, L, R = (r.embed(frame) for r in (K0, K1, nb.L, nb.R))
    four = ndimage.generate_binary_structure(2, 1)
    interior = lambda m: ndimage.binary_erosion(m, four)
    assert np.all(interior(L)[k1])          # K_1 inside int(L_0)
    assert np.all(interior(k0)[L])          # L_0 inside int(K_0)
    # distance-transform oracle: L_0 is a shell strictly between K_1 and dK_0
    dist_k1 = ndimage.distance_transform_edt(~k1) / 256
    assert 0 < dist_k1[L].max() < ndimage.distance_transform_edt(~k1)[k0].max() / 256
    assert len(GridRegion.from_frame(frame, L).bounded_complement_components()) == 1
    # R_0 surrounds dK_0 and misses f^0(L_0) = L_0
    assert not np.any(R & L)
    assert np.all(R[K0.boundary().embed(frame)])


def test_generators():
    carpet = generate("carpet", 256)
    assert carpet.interior().is_empty()
    assert len(carpet.components()) == 1
    assert len(generate("points", 128, centers=[0.25, -0.25]).components()) == 2
    ann = generate("annulus", 128)
    assert len(ann.bounded_complement_components()) == 1


def test_region_json_roundtrip():
    K = generate("carpet", 128)
    back = GridRegion.from_json(K.to_json())
    assert np.array_equal(back.mask, K.mask) and back.frame == K.frame
