"""Lattice-aligned planar sets.

Every region lives on the global lattice ``(i + k*1j) / resolution`` for
integers ``i, k``; a cell is identified with its center.  Regions of equal
resolution therefore share cells exactly and can be combined without
resampling.  Compact masks use 8-connectivity and their complements
4-connectivity.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import EmptyRegion, InputError

EIGHT = np.ones((3, 3), dtype=bool)
FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class Disc:
    """Disc ``D(center, radius)``; ``closed`` only matters for reporting."""

    center: complex
    radius: float
    closed: bool = False

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "center", complex(self.center))
        object.__setattr__(self, "radius", float(self.radius))

    def contains(self, z, strict=True):
        d = np.abs(np.asarray(z) - self.center)
        return d < self.radius if strict else d <= self.radius

    def distance_to(self, other: "Disc") -> float:
        return abs(self.center - other.center) - self.radius - other.radius

    def boundary_samples(self, spacing):
        n = max(64, int(np.ceil(2 * np.pi * self.radius / spacing)))
        t = 2 * np.pi * np.arange(n) / n
        return self.center + self.radius * np.exp(1j * t)

    def area(self):
        return np.pi * self.radius ** 2

    def to_json(self):
        return {"center": [self.center.real, self.center.imag],
                "radius": self.radius, "closed": self.closed}


@dataclass(frozen=True)
class Frame:
    """Rectangle of lattice cells: ``nx`` columns from ``i0``, ``ny`` rows from ``k0``."""

    resolution: int
    i0: int
    k0: int
    nx: int
    ny: int

    @property
    def shape(self):
        return (self.ny, self.nx)

    def centers(self):
        h = 1.0 / self.resolution
        x = (self.i0 + np.arange(self.nx)) * h
        y = (self.k0 + np.arange(self.ny)) * h
        return x[None, :] + 1j * y[:, None]

    def index(self, z):
        """Fractional (row, col) coordinates of points ``z``."""
        z = np.asarray(z)
        return (z.imag * self.resolution - self.k0, z.real * self.resolution - self.i0)

    def cell_of(self, z):
        r, c = self.index(z)
        return np.rint(r).astype(np.int64), np.rint(c).astype(np.int64)

    def inside(self, rows, cols):
        return (rows >= 0) & (rows < self.ny) & (cols >= 0) & (cols < self.nx)

    def padded(self, pad):
        return Frame(self.resolution, self.i0 - pad, self.k0 - pad,
                     self.nx + 2 * pad, self.ny + 2 * pad)

    @staticmethod
    def around(points, resolution, pad):
        h = 1.0 / resolution
        points = np.asarray(points)
        i = np.rint(points.real / h)
        k = np.rint(points.imag / h)
        i0, i1 = int(i.min()) - pad, int(i.max()) + pad
        k0, k1 = int(k.min()) - pad, int(k.max()) + pad
        return Frame(resolution, i0, k0, i1 - i0 + 1, k1 - k0 + 1)

    @staticmethod
    def union(frames):
        res = frames[0].resolution
        if any(f.resolution != res for f in frames):
            raise InputError("regions live on lattices of different resolution")
        i0 = min(f.i0 for f in frames)
        k0 = min(f.k0 for f in frames)
        i1 = max(f.i0 + f.nx for f in frames)
        k1 = max(f.k0 + f.ny for f in frames)
        return Frame(res, i0, k0, i1 - i0, k1 - k0)


@dataclass(frozen=True, eq=False)
class GridRegion:
    """Compact set given by a cell mask on the lattice of ``resolution``.

    ``mask[row, col]`` is the cell centered at
    ``((i0 + col) + 1j * (k0 + row)) / resolution``.
    """

    resolution: int
    i0: int
    k0: int
    mask: np.ndarray
    provenance: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        m = np.ascontiguousarray(self.mask, dtype=bool)
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "resolution", int(self.resolution))

    # construction ---------------------------------------------------------
    @classmethod
    def from_frame(cls, frame: Frame, mask, provenance="", crop=True):
        reg = cls(frame.resolution, frame.i0, frame.k0, mask, provenance)
        return reg.cropped() if crop else reg

    @classmethod
    def from_points(cls, points, resolution, provenance=""):
        """Cells containing the given points (nearest lattice cell)."""
        points = np.asarray(points, dtype=complex).ravel()
        if points.size == 0:
            raise EmptyRegion("no points to rasterize")
        frame = Frame.around(points, resolution, 1)
        mask = np.zeros(frame.shape, dtype=bool)
        r, c = frame.cell_of(points)
        mask[r, c] = True
        return cls.from_frame(frame, mask, provenance)

    @classmethod
    def from_predicate(cls, predicate, bbox, resolution, provenance=""):
        """Cells of ``bbox = (xmin, xmax, ymin, ymax)`` whose centers satisfy ``predicate``."""
        xmin, xmax, ymin, ymax = bbox
        i0, i1 = int(np.floor(xmin * resolution)), int(np.ceil(xmax * resolution))
        k0, k1 = int(np.floor(ymin * resolution)), int(np.ceil(ymax * resolution))
        frame = Frame(resolution, i0, k0, i1 - i0 + 1, k1 - k0 + 1)
        mask = np.asarray(predicate(frame.centers()), dtype=bool)
        return cls.from_frame(frame, mask, provenance)

    # basic geometry -------------------------------------------------------
    @property
    def frame(self) -> Frame:
        ny, nx = self.mask.shape
        return Frame(self.resolution, self.i0, self.k0, nx, ny)

    @property
    def cell(self) -> float:
        return 1.0 / self.resolution

    @property
    def bbox(self):
        h = self.cell
        ny, nx = self.mask.shape
        return ((self.i0 - 0.5) * h, (self.i0 + nx - 0.5) * h,
                (self.k0 - 0.5) * h, (self.k0 + ny - 0.5) * h)

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def is_empty(self) -> bool:
        return not self.mask.any()

    def points(self):
        """Centers of member cells in row-major order."""
        if "points" not in self._cache:
            r, c = np.nonzero(self.mask)
            self._cache["points"] = ((self.i0 + c) + 1j * (self.k0 + r)) / self.resolution
        return self._cache["points"]

    def subsamples(self, density, closed=False):
        """``density**2`` regularly spaced points inside every member cell.

        With ``closed`` the lattice has ``density + 1`` points per side and
        includes the cell edges and corners, so every density covers the same
        closed square.
        """
        pts = self.points()
        if closed:
            off = np.linspace(-0.5, 0.5, density + 1)
        else:
            off = (np.arange(density) + 0.5) / density - 0.5
        o = (off[None, :] + 1j * off[:, None]).ravel() * self.cell
        return (pts[:, None] + o[None, :]).ravel()

    def cropped(self, pad=0):
        if not self.mask.any():
            raise EmptyRegion(f"empty region ({self.provenance})")
        rows = np.flatnonzero(self.mask.any(axis=1))
        cols = np.flatnonzero(self.mask.any(axis=0))
        r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
        m = self.mask[r0:r1, c0:c1]
        if pad:
            m = np.pad(m, pad)
        return GridRegion(self.resolution, self.i0 + c0 - pad, self.k0 + r0 - pad, m,
                          self.provenance)

    def embed(self, frame: Frame):
        """Mask of this region inside ``frame`` (cells outside the frame are dropped)."""
        if frame.resolution != self.resolution:
            raise InputError("resolution mismatch")
        out = np.zeros(frame.shape, dtype=bool)
        ny, nx = self.mask.shape
        dr, dc = self.k0 - frame.k0, self.i0 - frame.i0
        r0, c0 = max(dr, 0), max(dc, 0)
        r1, c1 = min(dr + ny, frame.ny), min(dc + nx, frame.nx)
        if r1 > r0 and c1 > c0:
            out[r0:r1, c0:c1] = self.mask[r0 - dr:r1 - dr, c0 - dc:c1 - dc]
        return out

    def contains(self, z):
        """Membership of points by nearest cell."""
        r, c = self.frame.cell_of(z)
        ok = self.frame.inside(r, c)
        out = np.zeros(np.shape(z), dtype=bool)
        out[ok] = self.mask[r[ok], c[ok]]
        return out

    def with_provenance(self, text):
        return GridRegion(self.resolution, self.i0, self.k0, self.mask, text)

    # morphology -----------------------------------------------------------
    def boundary(self):
        if "boundary" not in self._cache:
            m = np.pad(self.mask, 1)
            b = m & ~ndimage.binary_erosion(m, EIGHT, border_value=0)
            self._cache["boundary"] = GridRegion(self.resolution, self.i0 - 1, self.k0 - 1, b,
                                                 f"boundary({self.provenance})").cropped()
        return self._cache["boundary"]

    def interior(self):
        m = np.pad(self.mask, 1)
        inner = ndimage.binary_erosion(m, EIGHT, border_value=0)
        return GridRegion(self.resolution, self.i0 - 1, self.k0 - 1, inner,
                          f"interior({self.provenance})")

    def distance_field(self, pad):
        """Distance (in length units) from every cell of the padded frame to the region."""
        frame = self.frame.padded(pad)
        m = self.embed(frame)
        return frame, ndimage.distance_transform_edt(~m) / self.resolution

    def dilate(self, radius, provenance=None):
        """Closed ``radius``-neighbourhood (cell centers within ``radius`` of a member)."""
        pad = int(np.ceil(radius * self.resolution)) + 2
        frame, d = self.distance_field(pad)
        mask = d <= radius + 1e-9 / self.resolution
        return GridRegion.from_frame(frame, mask, provenance or
                                     f"dilate({self.provenance}, {radius:.6g})")

    def union(self, *others, provenance="union"):
        regs = (self,) + others
        frame = Frame.union([r.frame for r in regs])
        mask = np.zeros(frame.shape, dtype=bool)
        for r in regs:
            mask |= r.embed(frame)
        return GridRegion.from_frame(frame, mask, provenance)

    def minus(self, other, provenance="difference"):
        mask = self.mask & ~other.embed(self.frame)
        return GridRegion(self.resolution, self.i0, self.k0, mask, provenance)

    def intersects(self, other) -> bool:
        return bool((self.mask & other.embed(self.frame)).any())

    def components(self):
        """Connected components (8-connectivity), ordered by first cell."""
        lab, n = ndimage.label(self.mask, EIGHT)
        return [GridRegion(self.resolution, self.i0, self.k0, lab == i + 1,
                           f"component {i} of {self.provenance}").cropped() for i in range(n)]

    def complement_labels(self):
        """Labels of complement cells in a 1-cell padded frame (4-connectivity).

        Returns ``(frame, labels, unbounded_label)``; the unbounded component
        is the one touching the frame edge.
        """
        frame = self.frame.padded(1)
        m = self.embed(frame)
        lab, n = ndimage.label(~m, FOUR)
        return frame, lab, int(lab[0, 0])

    def bounded_complement_components(self):
        frame, lab, outer = self.complement_labels()
        out = []
        for i in range(1, lab.max() + 1):
            if i != outer:
                out.append(GridRegion.from_frame(frame, lab == i, f"hole {len(out)}"))
        return out

    def filled(self):
        frame, lab, outer = self.complement_labels()
        return GridRegion.from_frame(frame, lab != outer, f"fill({self.provenance})")

    def hausdorff(self, other) -> float:
        frame = Frame.union([self.frame, other.frame]).padded(2)
        a, b = self.embed(frame), other.embed(frame)
        da = ndimage.distance_transform_edt(~a)
        db = ndimage.distance_transform_edt(~b)
        return float(max(da[b].max(), db[a].max())) / self.resolution

    def inradius(self) -> float:
        m = np.pad(self.mask, 1)
        return float(ndimage.distance_transform_edt(m).max()) / self.resolution

    # serialization --------------------------------------------------------
    def to_json(self):
        flat = self.mask.ravel().astype(np.int8)
        change = np.flatnonzero(np.diff(np.concatenate([[0], flat, [0]])))
        starts, ends = change[0::2], change[1::2]
        runs = np.stack([starts, ends - starts], axis=1).ravel().tolist()
        ny, nx = self.mask.shape
        return {"resolution": self.resolution, "origin": [self.i0, self.k0],
                "shape": [ny, nx], "runs": runs, "provenance": self.provenance}

    @classmethod
    def from_json(cls, d):
        ny, nx = d["shape"]
        flat = np.zeros(ny * nx, dtype=bool)
        runs = d["runs"]
        for s, n in zip(runs[0::2], runs[1::2]):
            flat[s:s + n] = True
        return cls(d["resolution"], d["origin"][0], d["origin"][1], flat.reshape(ny, nx),
                   d.get("provenance", ""))


def distance_to_frame_field(frame: Frame, mask):
    """Distance (length units) from each frame cell to the cells of ``mask``."""
    return ndimage.distance_transform_edt(~mask) / frame.resolution


def sample_field(frame: Frame, field_, z):
    """Bilinear interpolation of a frame-sampled field at points ``z``."""
    r, c = frame.index(z)
    return ndimage.map_coordinates(field_, [r, c], order=1, mode="nearest")


def rasterize_polylines(polylines, resolution, closed=True, provenance="outline"):
    """Cells met by the segments of the polylines (sampled at a quarter cell)."""
    pts = []
    h = 1.0 / resolution
    for poly in polylines:
        v = np.asarray(poly, dtype=complex)
        if closed:
            v = np.append(v, v[:1])
        for a, b in zip(v[:-1], v[1:]):
            n = max(2, int(np.ceil(abs(b - a) / (0.25 * h))) + 1)
            pts.append(a + (b - a) * np.linspace(0.0, 1.0, n))
    return GridRegion.from_points(np.concatenate(pts), resolution, provenance)


def rasterize_polygons(polygons, resolution, provenance="polygons"):
    """Union of filled polygons (cell centers inside or on an edge)."""
    from matplotlib.path import Path

    allv = np.concatenate([np.asarray(p, dtype=complex) for p in polygons])
    pad = 2.0 / resolution
    bbox = (allv.real.min() - pad, allv.real.max() + pad,
            allv.imag.min() - pad, allv.imag.max() + pad)

    def pred(z):
        inside = np.zeros(z.shape, dtype=bool)
        xy = np.stack([z.real.ravel(), z.imag.ravel()], axis=1)
        for p in polygons:
            v = np.asarray(p, dtype=complex)
            path = Path(np.stack([v.real, v.imag], axis=1), closed=False)
            inside |= path.contains_points(xy).reshape(z.shape)
        return inside

    filled = GridRegion.from_predicate(pred, bbox, resolution, provenance)
    return filled.union(rasterize_polylines(polygons, resolution), provenance=provenance)


def load_polygon_json(path, resolution):
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        polys = data.get("polygons")
        mode = data.get("mode", "fill")
        if polys is None:
            raise InputError(f"{path}: missing field 'polygons'")
    else:
        polys, mode = data, "fill"
    polys = [[complex(x, y) for x, y in p] for p in polys]
    if not polys or any(len(p) < 2 for p in polys):
        raise InputError(f"{path}: polygons need at least two vertices")
    if mode == "outline":
        return rasterize_polylines(polys, resolution, provenance=f"outline:{path}")
    return rasterize_polygons(polys, resolution, provenance=f"polygons:{path}")


def load_png_mask(path, sidecar=None):
    """Monochrome PNG mask with a JSON sidecar ``{"bbox": [...], "resolution": r}``.

    Nonzero pixels are members; row 0 is the top edge of ``bbox``.
    """
    from PIL import Image

    sidecar = sidecar or str(path).rsplit(".", 1)[0] + ".json"
    try:
        with open(sidecar) as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"missing sidecar file {sidecar}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"sidecar {sidecar} is not valid JSON: {exc}") from None
    for key in ("bbox", "resolution"):
        if key not in meta:
            raise InputError(f"sidecar {sidecar} is missing field '{key}'")
    bbox = [float(v) for v in meta["bbox"]]
    if len(bbox) != 4 or bbox[1] <= bbox[0] or bbox[3] <= bbox[2]:
        raise InputError(f"sidecar {sidecar}: field 'bbox' must be [xmin, xmax, ymin, ymax]")
    res = int(meta["resolution"])
    if res <= 0:
        raise InputError(f"sidecar {sidecar}: field 'resolution' must be positive")
    try:
        img = np.asarray(Image.open(path).convert("L")) > 0
    except OSError as exc:
        raise InputError(f"cannot read PNG mask {path}: {exc}") from None
    ny, nx = img.shape
    xmin, xmax, ymin, ymax = bbox

    def pred(z):
        col = np.floor((z.real - xmin) / (xmax - xmin) * nx).astype(int)
        row = np.floor((ymax - z.imag) / (ymax - ymin) * ny).astype(int)
        ok = (col >= 0) & (col < nx) & (row >= 0) & (row < ny)
        out = np.zeros(z.shape, dtype=bool)
        out[ok] = img[row[ok], col[ok]]
        return out

    return GridRegion.from_predicate(pred, bbox, res, f"png:{path}")


def save_png_mask(region: GridRegion, path, sidecar=None):
    from PIL import Image

    img = (region.mask[::-1] * 255).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path)
    sidecar = sidecar or str(path).rsplit(".", 1)[0] + ".json"
    with open(sidecar, "w") as fh:
        json.dump({"bbox": list(region.bbox), "resolution": region.resolution}, fh)
