"""Compact sets K, the nested neighbourhoods K_j and the disc chain D_j, Delta_j."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import EmptyRegion, InputError, PieceOverlap, ResolutionTooCoarse, SeparationTooSmall
from .grid import Disc, Frame, GridRegion, rasterize_polylines
from .rational import RationalMap, iterate_final

__all__ = [
    "Disc", "GridRegion", "AffineMap", "normalize", "distance_to_unit_circle",
    "nested_compacta", "disc_chain", "Neighbourhoods", "neighbourhoods",
    "stage_neighbourhoods", "generate",
]

TARGET_RADIUS = 0.5


@dataclass(frozen=True)
class AffineMap:
    """``z -> (z - center) / scale``."""

    center: complex = 0j
    scale: float = 1.0

    def __call__(self, z):
        return (np.asarray(z) - self.center) / self.scale

    def inverse(self, w):
        return np.asarray(w) * self.scale + self.center

    def is_identity(self):
        return self.center == 0 and self.scale == 1

    def to_json(self):
        from .rational import fmt

        return {"center": [fmt(self.center.real), fmt(self.center.imag)],
                "scale": fmt(self.scale)}


def normalize(K: GridRegion, target_radius=TARGET_RADIUS):
    """Affinely place ``K`` inside ``|z| <= target_radius``.

    Sets already inside that disc are returned unchanged with the identity map.
    Otherwise ``K`` is centered on its bounding box and scaled so its farthest
    cell center lies at ``target_radius``; the result is re-rasterized on the
    same lattice (forward images of cells plus nearest-cell lookback, so thin
    sets are neither broken nor thickened by more than a cell).
    """
    if K.is_empty():
        raise EmptyRegion("cannot normalize an empty region")
    pts = K.points()
    if np.abs(pts).max() <= target_radius:
        return K, AffineMap()
    c = complex(0.5 * (pts.real.min() + pts.real.max()), 0.5 * (pts.imag.min() + pts.imag.max()))
    s = float(np.abs(pts - c).max()) / target_radius
    if s == 0:
        s = 1.0
    amap = AffineMap(c, s)
    fwd = GridRegion.from_points(amap(pts), K.resolution)
    if s < 1:
        box = target_radius + 2.0 / K.resolution
        back = GridRegion.from_predicate(lambda w: K.contains(amap.inverse(w)),
                                         (-box, box, -box, box), K.resolution)
        fwd = fwd.union(back)
    return fwd.with_provenance(f"normalize({K.provenance})"), amap


def distance_to_unit_circle(K: GridRegion, n_samples=None) -> float:
    """``dist(K, unit circle)`` against ``8 * resolution`` uniform circle samples."""
    n = n_samples or 8 * K.resolution
    t = 2 * np.pi * np.arange(n) / n
    circle = np.stack([np.cos(t), np.sin(t)], axis=1)
    pts = K.boundary().points()
    if np.abs(pts).max() >= 1:
        raise InputError("region is not inside the unit disc; normalize it first")
    tree = cKDTree(circle)
    d, _ = tree.query(np.stack([pts.real, pts.imag], axis=1))
    return float(d.min())


def nested_compacta(K: GridRegion, j: int, d: float | None = None) -> GridRegion:
    """``K_j = {z : dist(z, K) <= 2^-(j+1) d}`` with ``d = dist(K, unit circle)``."""
    if j < 0:
        raise ValueError("j must be non-negative")
    if d is None:
        d = distance_to_unit_circle(K)
    rho = 2.0 ** (-(j + 1)) * d
    if rho * K.resolution < 2:
        need = int(np.ceil(2 / rho))
        raise ResolutionTooCoarse(
            f"K_{j} needs dilation radius {rho:.3g} >= 2 cells; minimal resolution {need}",
            minimal_resolution=need)
    return K.dilate(rho, provenance=f"K_{j}")


def disc_chain(j: int):
    """``(D_j, Delta_j)``; ``Delta_j`` is ``None`` for ``j = -1``."""
    if j < -1:
        raise ValueError("j must be >= -1")
    D = Disc(3 * j, 1.0)
    Delta = Disc(-3, 1.0 + 3 * j, closed=True) if j >= 0 else None
    return D, Delta


# ---------------------------------------------------------------------------
# R_j and L_j

@dataclass(frozen=True)
class Neighbourhoods:
    R: GridRegion
    L: GridRegion
    L_image: GridRegion
    Q: GridRegion
    Q_points: np.ndarray
    separation: float
    rho_R: float
    rho_L: float
    lipschitz: float


def _lipschitz_of_iterate(f: RationalMap, z, n, step):
    """Max modulus of the derivative of ``f^n`` sampled at ``z`` (chain rule, finite differences)."""
    if n == 0:
        return 1.0
    w = np.asarray(z, dtype=complex)
    deriv = np.ones(w.shape)
    for _ in range(n):
        deriv = deriv * np.abs(f.derivative_fd(w, step))
        w = f(w)
    return float(deriv.max())


def neighbourhoods(f: RationalMap, j: int, K_j: GridRegion, K_next: GridRegion,
                   fraction=0.25, floor_cells=2.0):
    """Build ``R_j`` around ``Q_j = f^j(dK_j)`` and ``L_j`` around ``K_{j+1}``.

    Both dilation radii are ``fraction`` of the measured image separation
    between ``Q_j`` and ``f^j(K_{j+1})`` (floored at ``floor_cells``); the
    domain radius of ``L_j`` is divided by the sampled Lipschitz constant of
    ``f^j`` so that its image stays at the intended distance.
    """
    res = K_j.resolution
    h = 1.0 / res
    bK = K_j.boundary()
    q = iterate_final(f, bK.points(), j)
    kn = iterate_final(f, K_next.points(), j)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(kn))):
        raise SeparationTooSmall(f"stage {j}: f^{j} has a pole on K_{j}")
    tree = cKDTree(np.stack([q.real, q.imag], axis=1))
    dist, _ = tree.query(np.stack([kn.real, kn.imag], axis=1))
    sep = float(dist.min())
    if sep < 4 * h:
        raise SeparationTooSmall(
            f"stage {j}: separation {sep:.3g} between f^{j}(dK_{j}) and f^{j}(K_{j + 1}) "
            f"is below 4 cells; increase the resolution")
    lip = max(1.0, _lipschitz_of_iterate(f, K_j.points(), j, h))
    rho_R = max(fraction * sep, floor_cells * h)
    rho_L = max(fraction * sep / lip, floor_cells * h)
    Q = GridRegion.from_points(q, res, f"Q_{j}")
    R = Q.dilate(rho_R, provenance=f"R_{j}")
    L = K_next.dilate(rho_L, provenance=f"L_{j}")
    if not np.all(K_j.interior().contains(L.points())):
        raise SeparationTooSmall(f"stage {j}: L_{j} does not fit inside int(K_{j})")
    img = iterate_final(f, L.points(), j)
    L_image = GridRegion.from_points(img, res).dilate(np.sqrt(2) * h * 1.0001,
                                                      provenance=f"f^{j}(L_{j})")
    D, _ = disc_chain(j)
    for name, reg in (("R", R), ("f^j(L)", L_image)):
        if np.abs(reg.points() - D.center).max() + h >= D.radius:
            raise SeparationTooSmall(f"stage {j}: {name}_{j} is not inside D_{j}")
    frame = Frame.union([R.frame, L_image.frame]).padded(1)
    dR = ndimage.distance_transform_edt(~R.embed(frame)) / res
    gap = float(dR[L_image.embed(frame)].min())
    if gap <= 2 * h:
        raise PieceOverlap(f"stage {j}: R_{j} and f^{j}(L_{j}) are {gap:.3g} apart (<= 2 cells)")
    return Neighbourhoods(R, L, L_image, Q, q, sep, rho_R, rho_L, lip)


def stage_neighbourhoods(state):
    """``(R_j, L_j)`` for a construction state (see ``construction.StageState``)."""
    nb = neighbourhoods(state.f, state.j, state.K_j, state.K_next)
    return nb.R, nb.L


# ---------------------------------------------------------------------------
# generators

def _disc_region(center, radius, resolution, inner=0.0, name="disc"):
    pad = radius + 2.0 / resolution
    bbox = (center.real - pad, center.real + pad, center.imag - pad, center.imag + pad)
    tol = 1e-12

    def pred(z):
        r = np.abs(z - center)
        return (r <= radius + tol) & (r >= inner - tol)

    return GridRegion.from_predicate(pred, bbox, resolution, name)


def _squares(depth, cantor):
    """Lower-left corners and side of the retained squares in the unit square."""
    corners = np.array([0j])
    side = 1.0
    if cantor:
        keep = [(a, b) for a in (0, 2) for b in (0, 2)]
    else:
        keep = [(a, b) for a in range(3) for b in range(3) if (a, b) != (1, 1)]
    for _ in range(depth):
        side /= 3
        offs = np.array([a + 1j * b for a, b in keep]) * side
        corners = (corners[:, None] + offs[None, :]).ravel()
    return corners, side


def generate(name, resolution=512, **params) -> GridRegion:
    """Built-in compact sets, already placed inside ``|z| <= 1/2``.

    ``disc(radius, center)``, ``annulus(inner, outer)``, ``point(center)``,
    ``points(centers)``, ``square_outline(side)``, ``cantor(depth)``,
    ``carpet(depth)`` (the union of the boundaries of the retained squares,
    an empty-interior continuum) and ``snowflake(k, intervals, depth)``.
    """
    res = int(resolution)
    if res <= 0:
        raise InputError("resolution must be positive")
    if name == "disc":
        c = complex(params.get("center", 0))
        return _disc_region(c, float(params.get("radius", 0.25)), res, name="disc")
    if name == "annulus":
        inner, outer = float(params.get("inner", 0.25)), float(params.get("outer", 0.4))
        if not 0 < inner < outer:
            raise InputError("annulus needs 0 < inner < outer")
        return _disc_region(0j, outer, res, inner, name=f"annulus({inner}, {outer})")
    if name == "point":
        c = complex(*params["center"]) if "center" in params and not np.isscalar(
            params["center"]) else complex(params.get("center", 0))
        return GridRegion.from_points([c], res, "point")
    if name == "points":
        cs = [complex(*c) if not np.isscalar(c) else complex(c)
              for c in params.get("centers", [0.5, -0.5])]
        return GridRegion.from_points(cs, res, "points")
    side = float(params.get("side", np.sqrt(0.5)))
    origin = complex(-side / 2, -side / 2)
    if name == "square_outline":
        sq = origin + side * np.array([0, 1, 1 + 1j, 1j])
        return rasterize_polylines([sq], res, provenance="square outline")
    if name in ("carpet", "cantor"):
        depth = int(params.get("depth", 3))
        corners, s = _squares(depth, cantor=(name == "cantor"))
        corners = origin + side * corners
        s *= side
        if name == "cantor":
            def pred(z):
                out = np.zeros(z.shape, dtype=bool)
                for c in corners:
                    out |= ((z.real >= c.real) & (z.real <= c.real + s)
                            & (z.imag >= c.imag) & (z.imag <= c.imag + s))
                return out
            pad = side / 2 + 2.0 / res
            return GridRegion.from_predicate(pred, (-pad, pad, -pad, pad), res, f"cantor({depth})")
        unit = np.array([0, 1, 1 + 1j, 1j])
        polys = [c + s * unit for c in corners]
        return rasterize_polylines(polys, res, provenance=f"carpet({depth})")
    if name == "snowflake":
        from .fractal import snowflake_domain

        U = snowflake_domain(int(params.get("k", 1)),
                             params.get("intervals"), int(params.get("depth", 4)),
                             resolution=res, radius=float(params.get("radius", 0.5)))
        return U.dilate(np.sqrt(2) * 1.0001 / res, provenance=f"closure({U.provenance})")
    raise InputError(f"unknown generator '{name}'")
