"""Generalized von Koch arcs, snowflake domains, box counting and a topology classifier.

An arc with target local dimensions ``h1 <= h2`` is built like the von Koch
curve, except that at step ``n`` segment ``j`` of ``gamma_n`` is replaced by
four segments of length ``1 / s_{n,j}`` of its own, with
``s_{n,j} = s1 - j / 4**n * (s1 - s2)`` and ``s_i = 4**(1 / h_i)``.  Local
dimension at parameter ``t`` is ``log 4 / log s(t)``,
``s(t) = s1 - t (s1 - s2)``.

Grid topology model used by ``classify_domain`` (cells as closed unit squares,
``U`` given by its open cells):

* closure: 3x3 dilation, interior of a closed set: 3x3 erosion;
* ``dU = closure(U) - U`` and ``d fill = fill - erode(fill)``;
* open regions use 4-connectivity, complements of closed sets 8-connectivity.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import BadScales, InputError, PlacementOverlap, SizeCap
from .grid import Frame, GridRegion, rasterize_polygons, rasterize_polylines

__all__ = ["CurveSpec", "KochCurve", "koch_curve", "s_schedule", "local_dimension",
           "snowflake_polygons", "snowflake_domain", "BoxDimension", "box_dimension",
           "default_scales", "DomainClass", "classify_domain", "archetype", "ARCHETYPES",
           "FIGURE_TABLE"]

MAX_DEPTH = 10
EIGHT = np.ones((3, 3), dtype=bool)
FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class CurveSpec:
    """Target local dimensions ``h1 <= h2`` in ``[1, 2]``, depth and endpoints."""

    h1: float
    h2: float
    depth: int = 7
    start: complex = 0j
    end: complex = 1 + 0j

    def __post_init__(self):
        if not (1 <= self.h1 <= self.h2 <= 2):
            raise InputError(f"need 1 <= h1 <= h2 <= 2, got h1={self.h1}, h2={self.h2}")
        if self.depth < 0:
            raise InputError("depth must be non-negative")
        if self.start == self.end:
            raise InputError("endpoints must differ")

    @classmethod
    def uniform(cls, s, depth=7, start=0j, end=1 + 0j):
        h = float(np.log(4) / np.log(s))
        return cls(h, h, depth, start, end)

    @property
    def s1(self):
        return 4.0 ** (1.0 / self.h1)

    @property
    def s2(self):
        return 4.0 ** (1.0 / self.h2)

    @property
    def self_intersecting(self):
        """``s = 2`` (``h = 2``) is admitted for display only: the arc fills a triangle."""
        return self.h2 >= 2

    def to_json(self):
        return {"h1": self.h1, "h2": self.h2, "depth": self.depth, "s1": self.s1,
                "s2": self.s2, "start": [self.start.real, self.start.imag],
                "end": [self.end.real, self.end.imag]}


@dataclass(frozen=True)
class KochCurve:
    """Vertices of ``gamma_depth``; segment ``j`` has parameter interval ``[j, j+1] / 4**depth``."""

    spec: CurveSpec
    vertices: np.ndarray

    @property
    def n_segments(self):
        return self.vertices.size - 1

    @property
    def t(self):
        return np.arange(self.vertices.size) / self.n_segments

    def address(self, j):
        """Base-4 digits of segment ``j`` (most significant first)."""
        return [(j >> (2 * k)) & 3 for k in reversed(range(self.spec.depth))]

    def subarc(self, t0, t1):
        """Vertices of ``gamma([t0, t1])`` (to the resolution of the segments)."""
        n = self.n_segments
        a, b = int(np.floor(t0 * n)), int(np.ceil(t1 * n))
        return self.vertices[max(a, 0):min(b, n) + 1]


def s_schedule(s1, s2, n):
    """``s_{n,j}`` for ``j = 0 .. 4**n - 1``."""
    j = np.arange(4 ** n)
    return s1 - j / 4.0 ** n * (s1 - s2)


def local_dimension(spec: CurveSpec, t):
    """``log 4 / log s(t)`` with ``s(t) = s1 - t (s1 - s2)``."""
    s = spec.s1 - np.asarray(t) * (spec.s1 - spec.s2)
    return np.log(4) / np.log(s)


def koch_curve(spec: CurveSpec) -> KochCurve:
    """``gamma_depth`` as ``4**depth + 1`` vertices; every bump points left of the traversal."""
    if spec.depth > MAX_DEPTH:
        raise SizeCap(f"depth {spec.depth} exceeds {MAX_DEPTH} (4^{spec.depth} segments)")
    v = np.array([0j, 1 + 0j])
    for n in range(spec.depth):
        s = s_schedule(spec.s1, spec.s2, n)
        a, b = v[:-1], v[1:]
        u = (b - a) / s
        cos = np.clip((s - 2) / 2, -1, 1)
        rot = cos + 1j * np.sqrt(1 - cos ** 2)
        new = np.empty((a.size, 4), dtype=complex)
        new[:, 0] = a
        new[:, 1] = a + u
        new[:, 2] = a + u + u * rot
        new[:, 3] = b - u
        v = np.append(new.ravel(), v[-1])
    v = spec.start + (spec.end - spec.start) * v
    v[0], v[-1] = spec.start, spec.end
    return KochCurve(spec, v)


# ---------------------------------------------------------------------------
# snowflakes

def _triangle(center, radius, rotation=0.0):
    """Vertices of an equilateral triangle in clockwise order."""
    ang = np.pi / 2 + rotation - 2 * np.pi * np.arange(3) / 3
    return center + radius * np.exp(1j * ang)


def snowflake_polygons(intervals, depth, centers, radii):
    """Closed boundary polygons, three generalized Koch arcs per snowflake.

    Arcs are traversed clockwise, so bumps point away from the snowflake
    center.
    """
    polys = []
    for m, (c, r) in enumerate(zip(centers, radii)):
        tri = _triangle(complex(c), float(r))
        arcs = []
        for side in range(3):
            h1, h2 = intervals[3 * m + side]
            spec = CurveSpec(float(h1), float(h2), depth, tri[side], tri[(side + 1) % 3])
            arcs.append(koch_curve(spec).vertices[:-1])
        polys.append(np.concatenate(arcs))
    return polys


def default_intervals(k, lo=1.05, hi=1.95):
    """``3k`` pairwise disjoint closed subintervals of ``[lo, hi]`` with equal gaps."""
    edges = np.linspace(lo, hi, 6 * k)
    return [(float(edges[2 * i]), float(edges[2 * i + 1])) for i in range(3 * k)]


def _hole_layout(k, radius):
    """Hole centers and circumradii inside the outer snowflake's inscribed disc."""
    inner = radius / 2
    reach = 0.5 + np.sqrt(3) / 2      # extent of a snowflake in units of its circumradius
    if k == 1:
        return [], []
    if k == 2:
        ext = inner / 3
        return [0j], [ext / reach]
    n = k - 1
    sin = np.sin(np.pi / n)
    ext = inner / (2 / sin + 3)
    ring = 2 * ext / sin
    centers = [ring * np.exp(2j * np.pi * i / n) for i in range(n)]
    return centers, [ext / reach] * n


def snowflake_domain(k=1, intervals=None, depth=4, resolution=512, radius=0.5,
                     require_disjoint=False, return_meta=False, hole_placements=None):
    """Domain bounded by an outer snowflake and ``k - 1`` snowflake holes.

    ``intervals`` lists ``3k`` ``(h1, h2)`` pairs (outer snowflake first,
    sides clockwise).  Holes sit on a regular ``(k-1)``-gon with gaps of at
    least one hole diameter, or at ``hole_placements = [(center, radius), ...]``.
    The largest 4-connected set of cells strictly inside and off every
    rasterized arc is returned.
    """
    if k < 1:
        raise InputError("k must be at least 1")
    intervals = default_intervals(k) if intervals is None else [tuple(map(float, iv))
                                                                for iv in intervals]
    if len(intervals) != 3 * k:
        raise InputError(f"need {3 * k} dimension intervals, got {len(intervals)}")
    for h1, h2 in intervals:
        if not 1 <= h1 <= h2 <= 2:
            raise InputError(f"interval [{h1}, {h2}] is not inside [1, 2]")
    srt = sorted(intervals)
    disjoint = all(a[1] < b[0] for a, b in zip(srt[:-1], srt[1:]))
    if require_disjoint and not disjoint:
        raise InputError("dimension intervals are not pairwise disjoint")
    if hole_placements is None:
        hc, hr = _hole_layout(k, radius)
    else:
        if len(hole_placements) != k - 1:
            raise InputError(f"need {k - 1} hole placements")
        hc = [complex(c) for c, _ in hole_placements]
        hr = [float(r) for _, r in hole_placements]
    polys = snowflake_polygons(intervals, depth, [0j] + hc, [radius] + hr)
    _check_placement(polys, resolution)
    outer = rasterize_polygons(polys[:1], resolution)
    curves = rasterize_polylines(polys, resolution)
    mask_frame = outer.frame
    mask = outer.mask & ~curves.embed(mask_frame)
    for hole in polys[1:]:
        mask &= ~rasterize_polygons([hole], resolution).embed(mask_frame)
    lab, _ = ndimage.label(mask, FOUR)
    sizes = np.bincount(lab.ravel())
    sizes[0] = 0
    # fjord pockets cut off by the rasterized arcs are dropped, and stray
    # complement cells without a hole center are filled, so U has k - 1 holes
    U = GridRegion.from_frame(mask_frame, lab == sizes.argmax())
    frame, clab, outer = U.complement_labels()
    r, c = frame.cell_of(np.array(hc, dtype=complex))
    keep = {outer, *clab[r, c].tolist()}
    u = U.embed(frame) | ~np.isin(clab, list(keep)) & (clab > 0)
    U = GridRegion.from_frame(frame, u, f"snowflake_domain(k={k}, depth={depth})")
    if not return_meta:
        return U
    meta = {"k": k, "depth": depth, "intervals": [list(iv) for iv in intervals],
            "disjoint": disjoint, "centers": [[c.real, c.imag] for c in [0j] + hc],
            "radii": [radius] + hr,
            "local_dimension": [{"arc": i, "t0": 0.0, "t1": 1.0,
                                 "h_start": float(local_dimension(CurveSpec(a, b, 0), 0.0)),
                                 "h_end": float(local_dimension(CurveSpec(a, b, 0), 1.0))}
                                for i, (a, b) in enumerate(intervals)]}
    return U, meta


def _check_placement(polys, resolution):
    """Holes must lie inside the outer curve, pairwise apart by more than two cells."""
    from matplotlib.path import Path

    h = 1.0 / resolution
    outer = Path(np.stack([polys[0].real, polys[0].imag], axis=1))
    trees = [cKDTree(np.stack([p.real, p.imag], axis=1)) for p in polys]
    for i, p in enumerate(polys[1:], start=1):
        if not outer.contains_points(np.stack([p.real, p.imag], axis=1)).all():
            raise PlacementOverlap(f"hole {i} is not inside the outer snowflake")
        for jj in range(i):
            d, _ = trees[jj].query(np.stack([p.real, p.imag], axis=1))
            if d.min() <= 2 * h:
                raise PlacementOverlap(f"snowflakes {jj} and {i} are {d.min():.3g} apart")
        for jj in range(1, i):
            inner = Path(np.stack([polys[jj].real, polys[jj].imag], axis=1))
            if inner.contains_points(np.stack([p.real, p.imag], axis=1)).any():
                raise PlacementOverlap(f"holes {jj} and {i} overlap")


# ---------------------------------------------------------------------------
# box counting

@dataclass(frozen=True)
class BoxDimension:
    estimate: float
    residual: float
    scales: np.ndarray
    counts: np.ndarray
    estimator: str = "box counting, least-squares slope of log N(delta) against log(1/delta)"

    def to_json(self):
        return {"estimate": self.estimate, "residual": self.residual,
                "scales": self.scales.tolist(), "counts": self.counts.tolist(),
                "estimator": self.estimator}


def default_scales(arc, n=12, finest_factor=1.0, coarsest_fraction=1 / 8):
    """Geometric scales from an eighth of the diameter down to the median segment length."""
    arc = np.asarray(arc, dtype=complex)
    diam = float(max(np.ptp(arc.real), np.ptp(arc.imag)))
    seg = float(np.median(np.abs(np.diff(arc))))
    lo = max(finest_factor * seg, diam * 2.0 ** -14)
    return np.geomspace(diam * coarsest_fraction, lo, n)


def _densify(arc, step):
    a, b = arc[:-1], arc[1:]
    k = np.maximum(1, np.ceil(np.abs(b - a) / step).astype(int))
    idx = np.repeat(np.arange(a.size), k)
    start = np.cumsum(k) - k
    frac = (np.arange(k.sum()) - np.repeat(start, k)) / np.repeat(k, k)
    return np.append(a[idx] + (b - a)[idx] * frac, arc[-1])


def box_dimension(arc, scales=None) -> BoxDimension:
    """Box-counting dimension of a polyline.

    Occupied boxes are counted on a fixed lattice after sampling the polyline
    at an eighth of the finest scale.
    """
    arc = np.asarray(arc, dtype=complex).ravel()
    if arc.size < 2:
        raise BadScales("need at least two vertices")
    scales = default_scales(arc) if scales is None else np.asarray(scales, dtype=float)
    if scales.ndim != 1 or scales.size < 4 or np.any(~np.isfinite(scales)) or np.any(scales <= 0):
        raise BadScales("need at least four positive finite scales")
    if np.unique(scales).size < scales.size:
        raise BadScales("scales must be distinct")
    pts = _densify(arc, scales.min() / 8)
    origin = complex(pts.real.min(), pts.imag.min())
    x, y = pts.real - origin.real, pts.imag - origin.imag
    counts = []
    for d in scales:
        ij = np.stack([np.floor(x / d), np.floor(y / d)], axis=1).astype(np.int64)
        counts.append(np.unique(ij, axis=0).shape[0])
    counts = np.array(counts)
    X, Y = np.log(1 / scales), np.log(counts)
    slope, icpt = np.polyfit(X, Y, 1)
    residual = float(np.sqrt(np.mean((Y - (slope * X + icpt)) ** 2)))
    return BoxDimension(float(slope), residual, scales, counts)


# ---------------------------------------------------------------------------
# classifier

@dataclass(frozen=True)
class DomainClass:
    regular: bool
    boundary_eq_fill_boundary: bool
    complement_of_closure_connected: bool
    witnesses: dict = field(default_factory=dict)

    def as_tuple(self):
        return (self.regular, self.boundary_eq_fill_boundary, self.complement_of_closure_connected)

    def to_json(self):
        return {"regular": self.regular,
                "boundary_eq_fill_boundary": self.boundary_eq_fill_boundary,
                "complement_of_closure_connected": self.complement_of_closure_connected,
                "model": __doc__.split("Grid topology model")[1].strip().splitlines()[0],
                "witnesses": self.witnesses}


def _cells(frame, mask, limit=200):
    r, c = np.nonzero(mask)
    z = ((frame.i0 + c) + 1j * (frame.k0 + r)) / frame.resolution
    return [[float(v.real), float(v.imag)] for v in z[:limit]]


def classify_domain(U: GridRegion, check_chain=True) -> DomainClass:
    """Regularity, ``dU = d fill(closure U)`` and connectedness of the complement of the closure.

    (1) regular with connected complement implies (2) which implies (3)
    regular; the chain is asserted on every input.  Witness cells are
    returned for ``dU - d fill``, for ``int(closure U) - U`` and for the
    bounded complementary components.
    """
    frame = U.frame.padded(3)
    u = U.embed(frame)
    closure = ndimage.binary_dilation(u, EIGHT)
    regular = bool(np.array_equal(ndimage.binary_erosion(closure, EIGHT, border_value=0), u))
    lab, n = ndimage.label(~closure, EIGHT)
    outer = lab[0, 0]
    fill = lab != outer
    d_u = closure & ~u
    d_fill = fill & ~ndimage.binary_erosion(fill, EIGHT, border_value=0)
    eq = bool(np.array_equal(d_u, d_fill))
    connected = n == 1
    if check_chain:
        assert not (regular and connected) or eq, "(1) holds but (2) fails"
        assert not eq or regular, "(2) holds but (3) fails"
    witnesses = {
        "boundary_minus_fill_boundary": _cells(frame, d_u & ~d_fill),
        "interior_of_closure_minus_U": _cells(
            frame, ndimage.binary_erosion(closure, EIGHT, border_value=0) & ~u),
        "bounded_complement_components": int(n - 1),
        "U_components_4": int(ndimage.label(u, FOUR)[1]),
    }
    return DomainClass(regular, eq, connected, witnesses)


FIGURE_TABLE = {
    "warsaw": (True, True, True),
    "inward_spiral": (True, True, False),
    "outward_spiral": (True, False, False),
    "slit_disc": (False, False, True),
}


def _rects_mask(rects, pad=4):
    """Boolean mask of a union of integer cell rectangles ``(x0, x1, y0, y1)`` (inclusive)."""
    r = np.array(rects)
    x0, x1, y0, y1 = r[:, 0].min() - pad, r[:, 1].max() + pad, r[:, 2].min() - pad, r[:, 3].max() + pad
    m = np.zeros((y1 - y0 + 1, x1 - x0 + 1), dtype=bool)
    for a, b, c, d in rects:
        m[c - y0:d - y0 + 1, a - x0:b - x0 + 1] = True
    return m, x0, y0


def _corridor(vertices, hw):
    rects = []
    for (xa, ya), (xb, yb) in zip(vertices[:-1], vertices[1:]):
        rects.append((min(xa, xb) - hw, max(xa, xb) + hw, min(ya, yb) - hw, max(ya, yb) + hw))
    return rects


def _spiral_path(start, first, lengths):
    """Axis-parallel path turning counterclockwise; ``first`` indexes R, U, L, D."""
    dirs = [(1, 0), (0, 1), (-1, 0), (0, -1)]
    v = [start]
    for i, L in enumerate(lengths):
        dx, dy = dirs[(first + i) % 4]
        x, y = v[-1]
        v.append((x + dx * L, y + dy * L))
    return v


def _region_from_cells(mask, x0, y0, resolution, name):
    ny, nx = mask.shape
    cx, cy = x0 + nx // 2, y0 + ny // 2
    return GridRegion(resolution, x0 - cx, y0 - cy, mask, name).cropped()


def _scale(resolution):
    k = resolution / 512
    hw = max(2, int(round(4 * k)))
    g = max(4, int(round(6 * k)))
    return hw, g, 2 * hw + 1 + g


def _outward_spiral(resolution, turns=4):
    """Spiral corridor from the center outward; its last leg pinches the gap shut.

    The final leg meets the previous turn corner to corner across one
    diagonal cell, so the spiral gap between the turns becomes a bounded
    complementary component while the closure stays regular.
    """
    hw, g, p = _scale(resolution)
    n = 4 * turns + 1
    lengths = [p * (i // 2 + 1) for i in range(n)]
    v = _spiral_path((0, 0), 0, lengths)
    k = n - 1
    cx, cy = v[k - 3]                 # end of segment k - 4 (rightward)
    xs, ys = v[k]
    v[k + 1] = (cx + 2 * hw + 2, ys)
    v.append((cx + 2 * hw + 2, cy - 2 * hw - 2))
    return _rects_mask(_corridor(v, hw))


def _inward_spiral(resolution, turns=4):
    """Spiral corridor whose innermost loop closes around a disc-like pocket.

    The loop starts at a dead end and returns to it corner to corner across
    one diagonal cell; the gap between the turns winds out to the unbounded
    component.
    """
    hw, g, p = _scale(resolution)
    m = 4 * p
    q = 2 * hw + 2
    y1 = -2 * hw - 2
    v = [(0, 0), (m, 0), (m, -m), (-q, -m), (-q, y1), (-q - p, y1)]
    top, right, bottom, left = p, m + p, -m - p, -q - p
    for t in range(turns):
        v.append((left, top))
        v.append((right, top))
        v.append((right, bottom))
        left -= p
        v.append((left, bottom))
        top, right, bottom = top + p, right + p, bottom - p
    return _rects_mask(_corridor(v, hw))


def _warsaw(resolution, xc=None):
    """Region under ``y = sin(1/x)`` for ``xc <= x <= 1`` down to ``y = -1.4``, closed morphologically.

    ``xc`` defaults to where the half period drops below about five cells.
    """
    size = 0.8 * resolution
    if xc is None:
        xc = float(np.sqrt(10.0 / (np.pi * size)))
    n = int(size)
    x = xc + (1 - xc) * (np.arange(n) + 0.5) / n
    y = np.linspace(1.05, -1.45, n)
    X, Y = np.meshgrid(x, y)
    inside = (Y < np.sin(1 / X)) & (Y > -1.4)
    inside[:, 0] = inside[:, -1] = False
    m = np.pad(inside[::-1], 4)
    closed = ndimage.binary_erosion(ndimage.binary_dilation(m, EIGHT), EIGHT, border_value=0)
    lab, _ = ndimage.label(closed, FOUR)
    sizes = np.bincount(lab.ravel())
    sizes[0] = 0
    return lab == sizes.argmax(), 0, 0


def _slit_disc(resolution, radius=0.4):
    n = int(np.ceil(radius * resolution)) + 3
    g = np.arange(-n, n + 1)
    X, Y = np.meshgrid(g, g)
    disc = X ** 2 + Y ** 2 <= (radius * resolution) ** 2
    slit = (Y == 0) & (X >= 0)
    return disc & ~slit, -n, -n


def archetype(name, resolution=512) -> GridRegion:
    """The four domains of the classifier table, or ``disc``."""
    if name == "disc":
        n = int(0.4 * resolution) + 3
        g = np.arange(-n, n + 1)
        X, Y = np.meshgrid(g, g)
        return GridRegion(resolution, -n, -n, X ** 2 + Y ** 2 <= (0.4 * resolution) ** 2, "disc")
    builders = {"warsaw": _warsaw, "inward_spiral": _inward_spiral,
                "outward_spiral": _outward_spiral, "slit_disc": _slit_disc}
    if name not in builders:
        raise InputError(f"unknown archetype '{name}'")
    mask, x0, y0 = builders[name](resolution)
    return _region_from_cells(mask, x0, y0, resolution, name)


ARCHETYPES = tuple(FIGURE_TABLE)
