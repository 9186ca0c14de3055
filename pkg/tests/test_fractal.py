import numpy as np
import pytest

from wandering_compacta import fractal as fr
from wandering_compacta.errors import BadScales, InputError, PlacementOverlap, SizeCap


def _box_count_oracle(arc, scales):
    """Independent box count: every segment sampled at 16 points per finest box."""
    pts = []
    for a, b in zip(arc[:-1], arc[1:]):
        n = max(2, int(np.ceil(abs(b - a) / scales.min() * 16)))
        pts.append(a + (b - a) * np.linspace(0, 1, n))
    pts = np.concatenate(pts)
    x, y = pts.real - pts.real.min(), pts.imag - pts.imag.min()
    counts = [len(set(zip(np.floor(x / d).astype(int).tolist(), np.floor(y / d).astype(int).tolist())))
              for d in scales]
    return np.polyfit(np.log(1 / scales), np.log(counts), 1)[0]


def test_s4_is_a_segment():
    c = fr.koch_curve(fr.CurveSpec.uniform(4.0, 5))
    assert c.n_segments == 4 ** 5
    assert np.allclose(c.vertices.imag, 0, atol=1e-12)
    assert np.allclose(c.vertices.real, np.linspace(0, 1, 4 ** 5 + 1))


def test_classic_koch():
    c = fr.koch_curve(fr.CurveSpec.uniform(3.0, 2, start=0j, end=1 + 0j))
    assert np.allclose(c.vertices[:5], [0, 1 / 9, 1 / 6 + 1j * np.sqrt(3) / 18, 2 / 9, 1 / 3])
    assert c.vertices[8] == pytest.approx(0.5 + 1j * np.sqrt(3) / 6)
    length = np.abs(np.diff(c.vertices)).sum()
    assert length == pytest.approx((4 / 3) ** 2)
    assert fr.local_dimension(c.spec, 0.3) == pytest.approx(np.log(4) / np.log(3))


def test_schedule_and_address():
    assert np.allclose(fr.s_schedule(3.0, 2.5, 1), [3.0, 2.875, 2.75, 2.625])
    c = fr.koch_curve(fr.CurveSpec(1.2, 1.5, 3))
    assert c.address(0b100111) == [2, 1, 3]
    assert c.subarc(0.25, 0.5)[0] == c.vertices[16]


def test_subarc_dimension_increases():
    c = fr.koch_curve(fr.CurveSpec(1.1, 1.6, 8))
    ests = []
    for t0, t1 in ((0.0, 0.2), (0.4, 0.6), (0.8, 1.0)):
        arc = c.subarc(t0, t1)
        bd = fr.box_dimension(arc)
        assert bd.estimate == pytest.approx(_box_count_oracle(arc, bd.scales), abs=0.02)
        lo, hi = fr.local_dimension(c.spec, t0), fr.local_dimension(c.spec, t1)
        assert lo - 0.08 <= bd.estimate <= hi + 0.08
        ests.append(bd.estimate)
    assert ests[0] < ests[1] < ests[2]


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_snowflake_boundary_components(k):
    U, meta = fr.snowflake_domain(k, depth=3, resolution=512, return_meta=True)
    assert meta["disjoint"] and len(meta["intervals"]) == 3 * k
    assert len(U.components()) == 1
    assert len(U.bounded_complement_components()) == k - 1


def test_snowflake_overlap():
    with pytest.raises(PlacementOverlap):
        fr.snowflake_domain(3, depth=2, resolution=256, hole_placements=[(0.02, 0.1), (-0.02, 0.1)])


@pytest.mark.parametrize("name,want", [("disc", (True, True, True)),
                                       ("slit_disc", (False, False, True)),
                                       ("outward_spiral", (True, False, False)),
                                       ("warsaw", (True, True, True))])
def test_classify(name, want):
    c = fr.classify_domain(fr.archetype(name, 256))
    assert c.as_tuple() == want
    if name == "slit_disc":
        assert c.witnesses["interior_of_closure_minus_U"]


def test_input_errors():
    with pytest.raises(BadScales):
        fr.box_dimension(np.array([0, 1 + 0j]), scales=[0.1, 0.05, 0.02])
    with pytest.raises(BadScales):
        fr.box_dimension(np.array([0, 1 + 0j]), scales=[0.1, 0.1, 0.05, 0.02])
    with pytest.raises(SizeCap):
        fr.koch_curve(fr.CurveSpec(1.2, 1.3, 11))
    with pytest.raises(InputError):
        fr.CurveSpec(1.6, 1.2)
    with pytest.raises(InputError):
        fr.archetype("torus")
