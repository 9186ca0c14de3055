import csv
import io
import json
from collections import deque

import numpy as np
import pytest

from wandering_compacta.dynamics import (CAPTURE, OrbitClass, classify_orbits, orbit_csv,
                                         render, separation_indices, verify_boundary_capture,
                                         verify_escape, verify_separation)
from wandering_compacta.errors import (EscapeViolation, InputError,
                                       NotSeparatedWithinComputedStages)
from wandering_compacta.rational import RationalMap


def test_classify_simple_maps():
    o = classify_orbits(RationalMap.constant(-3.0), np.array([5.0, -3.2]), 3)
    assert o.classes.tolist() == [OrbitClass.CAPTURED] * 2 and o.first_step.tolist() == [1, 0]
    o = classify_orbits(RationalMap.translation(3.0), np.array([0.1, 3.2j]), 4)
    assert o.classes.tolist() == [OrbitClass.ESCAPING, OrbitClass.UNDETERMINED]
    o = classify_orbits(RationalMap(poles=[(0.0, [1.0])]), np.array([0j]), 2)
    assert o.classes[0] == OrbitClass.PRE_POLE and o.first_step[0] == 1
    # enters D(-3,1) and leaves again
    o = classify_orbits(RationalMap([0.0, -1.0]), np.array([-3.0]), 2)
    assert o.classes[0] == OrbitClass.UNDETERMINED and o.absorption_failures == 1


def test_escape_and_capture(small_annulus):
    K, f, stages, final = small_annulus
    esc = verify_escape(f, final.K, 2)
    assert esc["passed"] and esc["fraction_inside"] == 1.0
    assert float(esc["step_distances"]["0,2"]) >= 3 * 2 - 2
    cap = verify_boundary_capture(f, stages)
    assert cap["passed"] and cap["K_never_captured"] and cap["closed_disc_passed"]
    assert [p["j"] for p in cap["per_stage"]] == [0, 1]


def test_escape_violation_reported():
    K = __import__("wandering_compacta.compacta", fromlist=["generate"]).generate("disc", 64)
    with pytest.raises(EscapeViolation) as exc:
        verify_escape(RationalMap.constant(-3.0), K, 2)
    assert exc.value.step == 1


def test_K_never_captured_cross_check(small_annulus):
    K, f, stages, final = small_annulus
    orb = f(final.K.points())
    assert np.all(np.abs(orb - CAPTURE.center) >= 1)


def _bfs_separated(Kj, K, z):
    """Independent flood fill of the complement of dK_j from ``z`` on a padded grid."""
    b = Kj.boundary()
    pad = 4
    frame = b.frame.padded(pad)
    wall = b.embed(frame)
    h, w = wall.shape

    def cell(p):
        return (int(round(p.imag * Kj.resolution)) - frame.k0,
                int(round(p.real * Kj.resolution)) - frame.i0)

    start = cell(z)
    if not (0 <= start[0] < h and 0 <= start[1] < w):
        start = (0, 0)
    if wall[start]:
        return False
    seen = np.zeros_like(wall)
    seen[start] = True
    q = deque([start])
    while q:
        r, c = q.popleft()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and not wall[rr, cc] and not seen[rr, cc]:
                seen[rr, cc] = True
                q.append((rr, cc))
    for p in K.points():
        r, c = cell(p)
        if seen[r, c]:
            return False
    return True


def test_separation_oracle(small_annulus):
    K, f, stages, final = small_annulus
    Kn = final.K
    regions = [st.K_j for st in stages]
    d = final.d
    probes = np.array([0j, 0.3 * d + 0.45, 1.5, -0.2 + 0.7j])
    probes = probes[~Kn.contains(probes)]
    got = separation_indices(Kn, regions, probes)
    for z, j in zip(probes, got):
        oracle = next((k for k, Kj in enumerate(regions) if _bfs_separated(Kj, Kn, z)), -1)
        assert j == oracle, z
    assert verify_separation(Kn, regions, 1.5) == 0
    hole = verify_separation(Kn, regions, 0j)
    assert hole == next(k for k, Kj in enumerate(regions) if _bfs_separated(Kj, Kn, 0j))


def test_separation_errors(small_annulus):
    K, f, stages, final = small_annulus
    Kn = final.K
    regions = [st.K_j for st in stages]
    p = Kn.points()[0]
    with pytest.raises(InputError):
        verify_separation(Kn, regions, p)
    step = 1 / Kn.resolution
    near = next(q for q in (p + step, p - step, p + 1j * step, p - 1j * step)
                if not Kn.contains(np.array([q]))[0])
    with pytest.raises(NotSeparatedWithinComputedStages):
        verify_separation(Kn, regions, near)


@pytest.mark.parametrize("window,expect", [((-3.5, -2.5, -0.5, 0.5), "CAPTURED"),
                                           ((-0.6, 0.6, -0.6, 0.6), None),
                                           ((40, 41, 40, 41), None)])
def test_render_windows(small_annulus, tmp_path, window, expect):
    K, f, stages, final = small_annulus
    path = tmp_path / "r.png"
    rgb, orbits, legend = render(f, window, 2, width=40, path=str(path))
    assert rgb.shape == (40, 40, 3) and path.exists()
    side = json.loads((tmp_path / "r.png.legend.json").read_text())
    assert sum(v["pixels"] for v in side["classes"].values()) == 1600
    if expect:
        assert side["classes"][expect]["pixels"] == 1600
    if window[0] == -0.6:
        counts = orbits.counts()
        assert counts["ESCAPING"] > 0 and counts["CAPTURED"] > 0


def test_orbit_csv(small_annulus):
    K, f, stages, final = small_annulus
    z = final.K.points()[0]
    text = orbit_csv(f, np.array([z, -3.0]), 2)
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 6 and rows[0]["class"] == "ESCAPING"
    assert rows[-1]["class"] == "CAPTURED"
    assert abs(complex(float(rows[2]["re"]), float(rows[2]["im"])) - 6) < 1
