"""Finite-horizon checks of escape, boundary capture and separation, plus renders.

``D_-1 = D(-3, 1)`` plays the part of an attracting basin: points that enter
it are "captured" and must stay there for every later computed step.  Points
of ``K`` must follow the chain ``D_0, D_1, ...``.  Julia membership of ``dK``
is witnessed only by the proxy "captured points arbitrarily close to escaping
points"; nothing here decides normality.
"""
from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import (CaptureViolation, EscapeViolation, InputError,
                     NotSeparatedWithinComputedStages)
from .grid import Disc, GridRegion
from .rational import RationalMap, fmt, iterate

__all__ = ["OrbitClass", "Orbits", "classify_orbits", "verify_escape", "verify_boundary_capture",
           "verify_separation", "separation_indices", "render", "orbit_csv", "pole_witness",
           "escape_samples", "PALETTE"]

CAPTURE = Disc(-3.0, 1.0)


class OrbitClass(enum.IntEnum):
    ESCAPING = 0
    CAPTURED = 1
    PRE_POLE = 2
    UNDETERMINED = 3


PALETTE = {
    OrbitClass.ESCAPING: (33, 102, 172),
    OrbitClass.CAPTURED: (244, 165, 60),
    OrbitClass.PRE_POLE: (0, 0, 0),
    OrbitClass.UNDETERMINED: (200, 200, 200),
}

DESCRIPTIONS = {
    OrbitClass.ESCAPING: "orbit follows D_m, D_m+1, ... through the last computed step",
    OrbitClass.CAPTURED: "enters D(-3,1) at the recorded step and stays there",
    OrbitClass.PRE_POLE: "hits a pole at the recorded step",
    OrbitClass.UNDETERMINED: "none of the above within the computed steps",
}


@dataclass(frozen=True)
class Orbits:
    """Per-point classes, first-entry steps (-1 if none) and final positions."""

    points: np.ndarray
    classes: np.ndarray
    first_step: np.ndarray
    final: np.ndarray
    steps: int
    absorption_failures: int

    def counts(self):
        return {c.name: int(np.sum(self.classes == c)) for c in OrbitClass}


def _in_disc(w, center, radius=1.0):
    return np.abs(w - center) < radius


def classify_orbits(f: RationalMap, z, N: int) -> Orbits:
    """Classify the first ``N`` iterates of each point.

    Pre-pole takes precedence, then capture (first entry into ``D(-3,1)``,
    kept only if every later iterate stays inside), then escape along the
    chain ``D_m, D_m+1, ..., D_m+N`` with ``m`` read off ``z``.  Points that
    enter ``D(-3,1)`` and leave it again are counted as absorption failures
    and classified Undetermined.
    """
    z = np.asarray(z, dtype=complex).ravel()
    orb = iterate(f, z, N)
    n = z.size
    cls = np.full(n, OrbitClass.UNDETERMINED, dtype=np.int8)
    first = np.full(n, -1, dtype=np.int64)
    finite = np.isfinite(orb)
    pole = ~finite.all(axis=0)
    first[pole] = np.argmin(finite, axis=0)[pole]
    cls[pole] = OrbitClass.PRE_POLE
    inside = _in_disc(np.where(finite, orb, np.inf), CAPTURE.center)
    entered = inside.any(axis=0) & ~pole
    entry = np.argmax(inside, axis=0)
    steps = np.arange(N + 1)[:, None]
    absorbed = np.all(inside | (steps < entry[None, :]), axis=0)
    cap = entered & absorbed
    cls[cap] = OrbitClass.CAPTURED
    first[cap] = entry[cap]
    m = np.rint(z.real / 3).astype(np.int64)
    chain = 3.0 * (m[None, :] + steps)
    esc = ~pole & ~entered & (m >= 0) & np.all(_in_disc(orb, chain), axis=0)
    cls[esc] = OrbitClass.ESCAPING
    first[esc] = m[esc]
    return Orbits(z, cls, first, orb[-1], N, int(np.sum(entered & ~absorbed)))


def escape_samples(K: GridRegion, density=4):
    """Every cell of ``K`` plus ``density x density`` subsamples of its boundary cells."""
    return np.concatenate([K.points(), K.boundary().subsamples(density)])


def verify_escape(f: RationalMap, K: GridRegion, N: int, density=4, raise_on_failure=True):
    """``|f^j(z) - 3j| < 1`` for all samples of ``K`` and ``0 <= j <= N``.

    Also records the minimum modulus per step (at least ``3j - 1`` and
    nondecreasing from ``j = 1``) and the minimum distance between images at
    distinct steps (at least ``3|m - n| - 2``).
    """
    z = escape_samples(K, density)
    orb = iterate(f, z, N)
    centers = 3.0 * np.arange(N + 1)[:, None]
    dev = np.where(np.isfinite(orb), np.abs(orb - centers), np.inf)
    worst = dev.max(axis=1)
    min_mod = np.abs(orb).min(axis=1)
    report = {
        "samples": int(z.size),
        "steps": N,
        "max_deviation": [fmt(v) for v in worst],
        "margin": fmt(1 - worst.max()),
        "min_modulus": [fmt(v) for v in min_mod],
        "min_modulus_nondecreasing": bool(np.all(np.diff(min_mod[1:]) >= 0)),
        "fraction_inside": float(np.mean(np.all(dev < 1, axis=0))),
    }
    gaps = {}
    for a in range(N + 1):
        for b in range(a + 1, N + 1):
            gaps[f"{a},{b}"] = fmt(_set_distance(orb[a], orb[b]))
    report["step_distances"] = gaps
    bad = np.argwhere(dev >= 1)
    report["passed"] = bad.size == 0
    if bad.size and raise_on_failure:
        step, i = bad[0]
        raise EscapeViolation(f"sample {z[i]:.6g} leaves D_{step} at step {step} "
                              f"(|f^j(z) - 3j| = {dev[step, i]:.6g})", witness=complex(z[i]),
                              step=int(step))
    return report


def _set_distance(a, b):
    """Minimum distance between two point clouds."""
    from scipy.spatial import cKDTree

    tree = cKDTree(np.stack([b.real, b.imag], axis=1))
    d, _ = tree.query(np.stack([a.real, a.imag], axis=1))
    return float(d.min())


def _stage_regions(stages):
    return [getattr(s, "K_j", s) for s in stages]


def verify_boundary_capture(f: RationalMap, stages, N: int | None = None, density=4,
                            raise_on_failure=True, K: GridRegion | None = None):
    """``f^(j+1)(dK_j)`` inside ``D(-3,1)`` and kept there through step ``N``.

    ``stages`` is a sequence of ``K_j`` regions (or objects with a ``K_j``
    attribute) for ``j = 0, 1, ...``; ``N`` defaults to its length.  Also
    checks one step of ``closed D(-3,1)`` and that no cell of ``K`` (taken from
    ``stages[0].K`` when not given) enters ``D(-3,1)``.
    """
    regions = _stage_regions(stages)
    N = len(regions) if N is None else N
    report = {"steps": N, "per_stage": []}
    passed = True
    for j, Kj in enumerate(regions[:N]):
        z = Kj.boundary().subsamples(density) if density > 1 else Kj.boundary().points()
        orb = iterate(f, z, N)
        dist = np.where(np.isfinite(orb[j + 1:]), np.abs(orb[j + 1:] - CAPTURE.center), np.inf)
        worst = dist.max(axis=1)
        ok = bool(np.all(worst < 1))
        report["per_stage"].append({"j": j, "samples": int(z.size),
                                    "max_distance_from_-3": [fmt(v) for v in worst],
                                    "margin": fmt(1 - worst.max()), "passed": ok})
        if not ok:
            passed = False
            if raise_on_failure:
                k, i = np.argwhere(dist >= 1)[0]
                raise CaptureViolation(f"dK_{j} sample {z[i]:.6g} is outside D(-3,1) at step "
                                       f"{j + 1 + k}", witness=complex(z[i]), step=int(j + 1 + k))
    spacing = 1.0 / regions[0].resolution if regions else 1 / 256
    disc = np.concatenate([CAPTURE.boundary_samples(spacing), _disc_lattice(CAPTURE, 4 * spacing)])
    one = np.abs(f(disc) - CAPTURE.center)
    report["closed_disc_margin"] = fmt(1 - one.max())
    report["closed_disc_passed"] = bool(np.all(one < 1))
    K = K if K is not None else getattr(stages[0], "K", None) if len(stages) else None
    if K is not None:
        orb = iterate(f, K.points(), N)
        never = not np.any(_in_disc(orb, CAPTURE.center))
        report["K_never_captured"] = bool(never)
    passed = passed and report["closed_disc_passed"] and report.get("K_never_captured", True)
    report["passed"] = passed
    if not passed and raise_on_failure:
        raise CaptureViolation("closed D(-3,1) leaves D(-3,1) or a cell of K is captured")
    return report


def _disc_lattice(disc: Disc, spacing):
    r = disc.radius
    g = np.arange(-r, r + spacing / 2, spacing)
    z = (g[None, :] + 1j * g[:, None]).ravel()
    z = z[np.abs(z) <= r]
    return disc.center + z


def separation_indices(K: GridRegion, stages, z):
    """Least ``j`` with ``z`` and ``K`` in different components of ``C minus dK_j`` (-1 if none).

    Complements are labelled with 4-connectivity; points outside the labelled
    frame belong to the unbounded component.
    """
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    out = np.full(z.size, -1, dtype=np.int64)
    Kpts = K.points()
    for j, Kj in enumerate(_stage_regions(stages)):
        todo = out < 0
        if not todo.any():
            break
        frame, labels, outer = Kj.boundary().complement_labels()
        r, c = frame.cell_of(Kpts)
        k_labels = set(np.unique(labels[r, c]).tolist())
        r, c = frame.cell_of(z)
        inside = frame.inside(r, c)
        lab = np.full(z.size, outer)
        lab[inside] = labels[r[inside], c[inside]]
        on_boundary = lab == 0
        sep = todo & ~on_boundary & ~np.isin(lab, list(k_labels))
        out[sep] = j
    return out


def verify_separation(K: GridRegion, stages, z) -> int:
    """Least ``j`` such that ``dK_j`` separates ``z`` from ``K`` on the grid."""
    z = complex(z)
    if K.contains(np.array([z]))[0]:
        raise InputError(f"{z} lies in K")
    j = int(separation_indices(K, stages, z)[0])
    if j < 0:
        raise NotSeparatedWithinComputedStages(
            f"{z} is not separated from K by dK_0 ... dK_{len(stages) - 1}", witness=z)
    return j


def render(f: RationalMap, window, N: int, width=400, height=None, path=None):
    """Per-pixel orbit classes over ``window = (xmin, xmax, ymin, ymax)``.

    Returns ``(rgb, orbits, legend)``; with ``path`` the PNG and a
    ``<path>.legend.json`` sidecar are written.
    """
    from PIL import Image

    xmin, xmax, ymin, ymax = map(float, window)
    if height is None:
        height = max(1, int(round(width * (ymax - ymin) / (xmax - xmin))))
    x = xmin + (np.arange(width) + 0.5) * (xmax - xmin) / width
    y = ymax - (np.arange(height) + 0.5) * (ymax - ymin) / height
    z = (x[None, :] + 1j * y[:, None]).ravel()
    orbits = classify_orbits(f, z, N)
    lut = np.array([PALETTE[c] for c in OrbitClass], dtype=np.uint8)
    rgb = lut[orbits.classes].reshape(height, width, 3)
    legend = {"window": [fmt(v) for v in (xmin, xmax, ymin, ymax)], "steps": N,
              "width": width, "height": height,
              "classes": {c.name: {"rgb": list(PALETTE[c]), "meaning": DESCRIPTIONS[c],
                                   "pixels": int(np.sum(orbits.classes == c))}
                          for c in OrbitClass}}
    if path is not None:
        Image.fromarray(rgb, "RGB").save(path)
        with open(f"{path}.legend.json", "w") as fh:
            json.dump(legend, fh, indent=1, sort_keys=True)
    return rgb, orbits, legend


def orbit_csv(f: RationalMap, z, N: int) -> str:
    """CSV rows ``point, step, re, im, class`` for the orbits of ``z``."""
    z = np.asarray(z, dtype=complex).ravel()
    orbits = classify_orbits(f, z, N)
    orb = iterate(f, z, N)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["point", "step", "re", "im", "class"])
    for i in range(z.size):
        name = OrbitClass(orbits.classes[i]).name
        for k in range(N + 1):
            w.writerow([i, k, fmt(orb[k, i].real), fmt(orb[k, i].imag), name])
    return buf.getvalue()


def pole_witness(f: RationalMap, target, samples=64):
    """Poles of ``f`` in the bounded gaps between the grid pieces of ``target``.

    The gaps are the bounded complementary components of the union of the
    grid pieces.  For every witnessed pole the winding number of ``1/f``
    around a small circle must equal its order; the winding number of
    ``1/f`` around each whole gap (poles minus zeros of ``f``) is reported too.
    """
    grids = [p.region for p in target.pieces if isinstance(p.region, GridRegion)]
    union = grids[0].union(*grids[1:]) if len(grids) > 1 else grids[0]
    locs, orders = f.locations, f.orders
    t = 2 * np.pi * np.arange(samples) / samples
    comps = []
    for gap in union.bounded_complement_components():
        inside = gap.contains(locs) if locs.size else np.zeros(0, bool)
        idx = np.nonzero(inside)[0]
        windings = []
        for i in idx:
            others = np.delete(locs, i)
            r = 0.1 * (np.abs(others - locs[i]).min() if others.size else 0.01)
            circ = locs[i] + r * np.exp(1j * t)
            windings.append(_winding(1 / f(circ), 0.0))
        windings = np.array(windings, dtype=int)
        net = _gap_winding(f, gap)
        comps.append({"cells": gap.count, "poles": int(idx.size),
                      "sites": int(idx.size),
                      "max_pole_order": int(orders[idx].max()) if idx.size else 0,
                      "local_windings_match": bool(np.all(windings == orders[idx])),
                      "net_winding_of_1_over_f": net})
    has = bool(comps) and any(c["poles"] >= 1 for c in comps)
    return {"components": comps, "has_pole": has,
            "max_sites_per_component": max((c["sites"] for c in comps), default=0)}


def _winding(w, a):
    v = np.append(w, w[:1]) - a
    return int(np.rint(np.angle(v[1:] / v[:-1]).sum() / (2 * np.pi)))


def _gap_winding(f, gap: GridRegion):
    from skimage.measure import find_contours

    m = np.pad(gap.mask, 2).astype(float)
    total = 0
    for raw in find_contours(m, 0.5, positive_orientation="low"):
        z = (gap.i0 - 2 + raw[:, 1] + 1j * (gap.k0 - 2 + raw[:, 0])) / gap.resolution
        v = np.append(z[:-1], z[:1])
        fine = (v[:-1, None] + (v[1:] - v[:-1])[:, None] * (np.arange(8) / 8)[None, :]).ravel()
        total += _winding(1 / f(fine), 0.0)
    return int(total)
