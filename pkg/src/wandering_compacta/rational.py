"""Rational maps in partial-fraction form, piecewise targets and error certificates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numba

if numba.config.THREADING_LAYER == "default":
    numba.config.THREADING_LAYER = "workqueue"
import numpy as np

from .grid import Disc, Frame, GridRegion

INF = complex(np.inf, 0.0)
_POLE_RADIUS = 8 * np.finfo(float).eps


def fmt(x) -> str:
    """Decimal string with 17 significant digits (exact round trip for doubles)."""
    return format(float(x), ".17g")


def _cfmt(z):
    z = complex(z)
    return [fmt(z.real), fmt(z.imag)]


def _cparse(v):
    return complex(float(v[0]), float(v[1]))


@numba.njit(cache=True, parallel=True, fastmath=False)
def _eval_kernel(z, poly, pc, ps, loc, order, offs, coef, out):
    tiny2 = (8.0 * 2.220446049250313e-16) ** 2
    for i in numba.prange(z.size):
        zr = z[i].real
        zi = z[i].imag
        if not (np.isfinite(zr) and np.isfinite(zi)):
            out[i] = complex(np.inf, 0.0)
            continue
        u = (z[i] - pc) / ps
        acc = 0j
        for k in range(poly.size - 1, -1, -1):
            acc = acc * u + poly[k]
        sr = acc.real
        si = acc.imag
        hit = False
        for p in range(loc.size):
            dr = zr - loc[p].real
            di = zi - loc[p].imag
            dd = dr * dr + di * di
            scale = max(1.0, loc[p].real * loc[p].real + loc[p].imag * loc[p].imag)
            if dd <= tiny2 * scale:
                hit = True
                break
            wr = dr / dd
            wi = -di / dd
            o = offs[p]
            if order[p] == 1:
                cr = coef[o].real
                ci = coef[o].imag
                sr += cr * wr - ci * wi
                si += cr * wi + ci * wr
            else:
                tr = 0.0
                ti = 0.0
                for k in range(order[p] - 1, -1, -1):
                    ar = tr + coef[o + k].real
                    ai = ti + coef[o + k].imag
                    tr = ar * wr - ai * wi
                    ti = ar * wi + ai * wr
                sr += tr
                si += ti
        out[i] = complex(np.inf, 0.0) if hit else complex(sr, si)


class RationalMap:
    """``P((z - c)/s) + sum_p sum_k c_{p,k} / (z - p)^k``.

    ``poly`` is constant-first in the scaled variable ``(z - poly_center)/poly_scale``;
    the default center 0 and scale 1 give ordinary monomials.
    """

    def __init__(self, poly=(0.0,), poles=(), poly_center=0.0, poly_scale=1.0):
        poly = np.atleast_1d(np.asarray(poly, dtype=complex))
        if poly.size == 0:
            poly = np.zeros(1, dtype=complex)
        nz = np.flatnonzero(poly)
        poly = poly[: nz[-1] + 1] if nz.size else poly[:1] * 0
        self.poly = poly
        self.poly_center = complex(poly_center)
        self.poly_scale = float(poly_scale)
        merged = {}
        for p, c in poles:
            p = complex(p)
            c = np.atleast_1d(np.asarray(c, dtype=complex))
            if p in merged:
                a = merged[p]
                n = max(a.size, c.size)
                merged[p] = np.pad(a, (0, n - a.size)) + np.pad(c, (0, n - c.size))
            else:
                merged[p] = c.copy()
        locs, coefs = [], []
        for p, c in merged.items():
            nz = np.flatnonzero(c)
            if nz.size:
                locs.append(p)
                coefs.append(c[: nz[-1] + 1])
        self.locations = np.array(locs, dtype=complex)
        self.orders = np.array([c.size for c in coefs], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.orders)[:-1]]).astype(np.int64) \
            if coefs else np.zeros(0, dtype=np.int64)
        self.coefficients = np.concatenate(coefs) if coefs else np.zeros(0, dtype=complex)
        for a in (self.poly, self.locations, self.orders, self.offsets, self.coefficients):
            a.setflags(write=False)

    # constructors ---------------------------------------------------------
    @classmethod
    def constant(cls, c):
        return cls([c])

    @classmethod
    def translation(cls, c):
        return cls([c, 1.0])

    @classmethod
    def from_arrays(cls, locations, coefficients, poly=(0.0,)):
        """Simple poles ``coefficients[i] / (z - locations[i])`` (fast path)."""
        return cls(poly, zip(np.asarray(locations, dtype=complex),
                             np.asarray(coefficients, dtype=complex)[:, None]))

    # metadata -------------------------------------------------------------
    @property
    def degree(self) -> int:
        """Number of poles counted with multiplicity, including the pole at infinity."""
        return int(self.orders.sum()) + max(0, self.poly.size - 1)

    @property
    def n_poles(self) -> int:
        return int(self.locations.size)

    @property
    def poly_degree(self) -> int:
        return self.poly.size - 1

    def poles(self):
        """List of ``(location, coefficients)`` pairs."""
        return [(p, self.coefficients[o:o + m].copy())
                for p, o, m in zip(self.locations, self.offsets, self.orders)]

    def is_zero(self) -> bool:
        return self.locations.size == 0 and not np.any(self.poly)

    def is_polynomial(self) -> bool:
        return self.locations.size == 0

    # evaluation -----------------------------------------------------------
    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        flat = np.ascontiguousarray(z.ravel())
        out = np.empty_like(flat)
        _eval_kernel(flat, self.poly, self.poly_center, self.poly_scale, self.locations,
                     self.orders, self.offsets, self.coefficients, out)
        return out.reshape(z.shape) if z.ndim else complex(out[0])

    def derivative_fd(self, z, step):
        """Central finite difference along the real axis with the given step."""
        z = np.asarray(z, dtype=complex)
        return (self(z + step) - self(z - step)) / (2 * step)

    # arithmetic -----------------------------------------------------------
    def _poly_in_z(self):
        """Monomial coefficients about 0 (only used when recentering is unavoidable)."""
        if self.poly.size == 1 or (self.poly_center == 0 and self.poly_scale == 1):
            return self.poly
        from numpy.polynomial import polynomial as P

        out = np.zeros(1, dtype=complex)
        base = np.array([-self.poly_center / self.poly_scale, 1 / self.poly_scale])
        power = np.ones(1, dtype=complex)
        for a in self.poly:
            out = P.polyadd(out, a * power)
            power = P.polymul(power, base)
        return out

    def __add__(self, other):
        other = as_rational(other)
        if other.poly.size == 1:
            poly, pc, ps = self.poly.copy(), self.poly_center, self.poly_scale
            poly[0] += other.poly[0]
        elif self.poly.size == 1:
            poly, pc, ps = other.poly.copy(), other.poly_center, other.poly_scale
            poly[0] += self.poly[0]
        elif (self.poly_center, self.poly_scale) == (other.poly_center, other.poly_scale):
            n = max(self.poly.size, other.poly.size)
            poly = np.pad(self.poly, (0, n - self.poly.size)) + np.pad(other.poly, (0, n - other.poly.size))
            pc, ps = self.poly_center, self.poly_scale
        else:
            a, b = self._poly_in_z(), other._poly_in_z()
            n = max(a.size, b.size)
            poly = np.pad(a, (0, n - a.size)) + np.pad(b, (0, n - b.size))
            pc, ps = 0.0, 1.0
        return RationalMap(poly, self.poles() + other.poles(), pc, ps)

    def __neg__(self):
        return RationalMap(-self.poly, [(p, -c) for p, c in self.poles()],
                           self.poly_center, self.poly_scale)

    def __sub__(self, other):
        return self + (-as_rational(other))

    def __eq__(self, other):
        if not isinstance(other, RationalMap):
            return NotImplemented
        return (np.array_equal(self.poly, other.poly) and self.poly_center == other.poly_center
                and self.poly_scale == other.poly_scale
                and np.array_equal(self.locations, other.locations)
                and np.array_equal(self.orders, other.orders)
                and np.array_equal(self.coefficients, other.coefficients))

    __hash__ = object.__hash__

    def __repr__(self):
        return (f"RationalMap(poly_degree={self.poly_degree}, n_poles={self.n_poles}, "
                f"degree={self.degree})")

    # serialization --------------------------------------------------------
    def to_json(self):
        return {
            "poly": [_cfmt(a) for a in self.poly],
            "poly_center": _cfmt(self.poly_center),
            "poly_scale": fmt(self.poly_scale),
            "poles": [{"location": _cfmt(p), "coefficients": [_cfmt(a) for a in c]}
                      for p, c in self.poles()],
            "degree": self.degree,
        }

    @classmethod
    def from_json(cls, d):
        poles = [(_cparse(e["location"]), [_cparse(a) for a in e["coefficients"]])
                 for e in d.get("poles", [])]
        return cls([_cparse(a) for a in d["poly"]], poles,
                   _cparse(d.get("poly_center", ["0", "0"])), float(d.get("poly_scale", "1")))


def as_rational(g) -> RationalMap:
    if isinstance(g, RationalMap):
        return g
    if hasattr(g, "as_rational"):
        return g.as_rational()
    if np.isscalar(g):
        return RationalMap.constant(g)
    raise TypeError(f"cannot interpret {g!r} as a rational map")


def evaluate(f: RationalMap, z):
    """``f(z)``; points within an ulp-scale radius of a pole give ``INF``."""
    return f(z)


def is_infinite(w):
    return ~np.isfinite(np.asarray(w))


def iterate(f: RationalMap, z, n: int):
    """Orbit ``[z, f(z), ..., f^n(z)]``; entries after the first infinity stay infinite.

    For array input the result has shape ``(n + 1,) + z.shape``.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    z = np.asarray(z, dtype=complex)
    orbit = np.empty((n + 1,) + z.shape, dtype=complex)
    orbit[0] = z
    for k in range(n):
        orbit[k + 1] = f(orbit[k])
    return orbit if z.ndim else [complex(w) for w in orbit]


def prepole_step(orbit):
    """First step at which an orbit is infinite (``-1`` when it never is)."""
    orbit = np.asarray(orbit)
    bad = is_infinite(orbit)
    first = np.argmax(bad, axis=0)
    return np.where(bad.any(axis=0), first, -1)


def iterate_final(f: RationalMap, z, n: int):
    """``f^n(z)`` without storing the orbit."""
    w = np.asarray(z, dtype=complex)
    for _ in range(n):
        w = f(w)
    return w


# ---------------------------------------------------------------------------
# target maps

@dataclass(frozen=True)
class Constant:
    c: complex

    def __call__(self, z):
        return np.full(np.shape(z), complex(self.c)) if np.ndim(z) else complex(self.c)

    def as_rational(self):
        return RationalMap.constant(self.c)

    def describe(self):
        return {"kind": "constant", "c": _cfmt(self.c)}


@dataclass(frozen=True)
class Translation:
    c: complex

    def __call__(self, z):
        return np.asarray(z) + complex(self.c)

    def as_rational(self):
        return RationalMap.translation(self.c)

    def describe(self):
        return {"kind": "translation", "c": _cfmt(self.c)}


def describe_map(g):
    if isinstance(g, RationalMap):
        return {"kind": "rational", "n_poles": g.n_poles, "poly_degree": g.poly_degree}
    return g.describe()


@dataclass(frozen=True)
class Piece:
    region: object
    map: object
    name: str = ""

    def area(self):
        if isinstance(self.region, Disc):
            return self.region.area()
        return self.region.count / self.region.resolution ** 2


def _piece_distance(a, b) -> float:
    if isinstance(a, Disc) and isinstance(b, Disc):
        return a.distance_to(b)
    if isinstance(a, Disc):
        a, b = b, a
    if isinstance(b, Disc):
        pts = a.boundary().points()
        return float(np.min(np.abs(pts - b.center)) - b.radius)
    from scipy.spatial import cKDTree

    pa, pb = a.boundary().points(), b.boundary().points()
    tree = cKDTree(np.stack([pb.real, pb.imag], axis=1))
    d, _ = tree.query(np.stack([pa.real, pa.imag], axis=1))
    return float(d.min())


@dataclass
class PiecewiseTarget:
    """Pairwise disjoint pieces, each with its own target map."""

    pieces: list
    separation: float = field(init=False)

    def __post_init__(self):
        self.pieces = list(self.pieces)
        sep = np.inf
        for i in range(len(self.pieces)):
            for k in range(i + 1, len(self.pieces)):
                sep = min(sep, _piece_distance(self.pieces[i].region, self.pieces[k].region))
        self.separation = float(sep)

    @property
    def resolution(self):
        res = [p.region.resolution for p in self.pieces if isinstance(p.region, GridRegion)]
        return max(res) if res else 512

    def describe(self):
        return {"separation": fmt(self.separation),
                "pieces": [{"name": p.name, "map": describe_map(p.map),
                            "region": p.region.to_json()} for p in self.pieces]}


# ---------------------------------------------------------------------------
# certification

@dataclass(frozen=True)
class ErrorCertificate:
    sup_estimate: float
    sample_density: int
    safety_factor: float
    certified_bound: float
    sample_spacing: float
    n_samples: int
    per_piece: tuple = ()

    def to_json(self):
        return {"sup_estimate": fmt(self.sup_estimate), "sample_density": self.sample_density,
                "safety_factor": fmt(self.safety_factor),
                "certified_bound": fmt(self.certified_bound),
                "sample_spacing": fmt(self.sample_spacing), "n_samples": self.n_samples,
                "per_piece": [fmt(v) for v in self.per_piece]}


def piece_samples(region, density=4, resolution=512, interior=True):
    """Sample points of a piece: boundary cells refined ``density``-fold plus member cells.

    Grid pieces stand for unions of closed cells; the refinement of a boundary
    cell spans the whole closed square (edges and corners included).

    Discs are sampled on their boundary circle at spacing ``1/(density*resolution)``
    and on a coarse interior lattice.
    """
    if isinstance(region, Disc):
        spacing = 1.0 / (density * resolution)
        pts = [region.boundary_samples(spacing)]
        if interior:
            for frac in (0.25, 0.5, 0.75):
                inner = Disc(region.center, frac * region.radius)
                pts.append(inner.boundary_samples(32 * spacing))
            pts.append(np.array([region.center]))
        return np.concatenate(pts)
    pts = [region.boundary().subsamples(density, closed=True)]
    if interior:
        pts.append(region.points())
    return np.concatenate(pts)


def certify_error(f: RationalMap, target: PiecewiseTarget, density=4, safety=2.0,
                  interior=True):
    """Sampled sup of ``|f - g|`` over all pieces, times ``safety``.

    The difference ``f - g`` is formed symbolically first, so shared poles
    cancel exactly instead of numerically.
    """
    if safety < 1:
        raise ValueError("safety factor must be >= 1")
    res = target.resolution
    sups, n = [], 0
    for piece in target.pieces:
        diff = f - as_rational(piece.map)
        pts = piece_samples(piece.region, density, res, interior)
        vals = np.abs(diff(pts)) if not diff.is_zero() else np.zeros(pts.size)
        sups.append(float(vals.max()) if vals.size else 0.0)
        n += pts.size
    sup = max(sups) if sups else 0.0
    return ErrorCertificate(sup, density, float(safety), sup * safety, 1.0 / (density * res), n,
                            tuple(sups))
