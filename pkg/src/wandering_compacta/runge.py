"""Runge approximation of piecewise targets by rational maps.

Two solvers share one interface.

* ``pole_sites`` given: linear least squares in the span of
  ``{u^k} U {(s_p/(z-p))^k}`` with degrees doubled until the sampled
  certificate meets ``epsilon``.
* ``pole_sites`` omitted: Cauchy-integral discretisation.  The residual
  target (target minus a carrier map, see below) is extended to a
  sectionally analytic function that is constant per label region and zero
  outside a circle; its Cauchy integrals over smoothed separating loops are
  discretised by the trapezoid rule, which converges geometrically in the
  loop-to-piece distance.  The nodes become simple poles.

The carrier is a map of the target itself (by default the map of the Disc
pieces, otherwise of the largest piece).  Approximating ``g - carrier``
instead of ``g`` means pieces carrying the carrier need no work at all and
poles of the carrier never have to be moved.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from skimage.measure import find_contours

from .errors import ApproximationStalled, IllConditioned, InputError, SeparationTooSmall
from .grid import Disc, Frame, GridRegion, sample_field
from .rational import (ErrorCertificate, PiecewiseTarget, RationalMap, as_rational,
                       piece_samples)

__all__ = ["runge_approximate", "RungeInfo", "choose_carrier"]


@dataclass
class RungeInfo:
    method: str
    rounds: int = 0
    history: list = field(default_factory=list)
    loops: list = field(default_factory=list)
    carrier_poles: int = 0
    degrees: tuple = ()
    condition: float = float("nan")

    def to_json(self):
        from .rational import fmt

        return {"method": self.method, "rounds": self.rounds,
                "history": [fmt(v) for v in self.history],
                "loops": self.loops, "carrier_poles": self.carrier_poles,
                "degrees": list(self.degrees),
                "condition": fmt(self.condition)}


def choose_carrier(target: PiecewiseTarget, carrier="auto") -> RationalMap:
    if carrier is None:
        return RationalMap.constant(0.0)
    if isinstance(carrier, RationalMap):
        return carrier
    if carrier != "auto":
        raise ValueError("carrier must be 'auto', None or a RationalMap")
    discs = [p for p in target.pieces if isinstance(p.region, Disc)]
    pool = discs or target.pieces
    return as_rational(max(pool, key=lambda p: p.area()).map)


class _Residuals:
    """Per-piece certification samples with the residual target precomputed."""

    def __init__(self, target, carrier, density, interior=True):
        self.target = target
        self.res = target.resolution
        self.maps, self.samples, self.values = [], [], []
        for piece in target.pieces:
            F = as_rational(piece.map) - carrier
            pts = piece_samples(piece.region, density, self.res, interior)
            self.maps.append(F)
            self.samples.append(pts)
            self.values.append(np.zeros(pts.size, complex) if F.is_zero() else F(pts))
        self.density = density

    def certificate(self, r: RationalMap, safety):
        sups, n = [], 0
        for pts, vals in zip(self.samples, self.values):
            rv = r(pts) if not r.is_zero() else np.zeros(pts.size, complex)
            sups.append(float(np.abs(rv - vals).max()) if pts.size else 0.0)
            n += pts.size
        sup = max(sups)
        if not np.isfinite(sup):
            sup = np.inf
        return ErrorCertificate(sup, self.density, float(safety), sup * safety,
                                1.0 / (self.density * self.res), n, tuple(sups))


def runge_approximate(target: PiecewiseTarget, epsilon: float, pole_sites=None, *,
                      safety=2.0, density=4, carrier="auto", max_rounds=6, cond_cap=1e12,
                      return_info=False):
    """Rational ``f`` with sampled ``safety * sup |f - g| <= epsilon`` on every piece.

    Returns ``(f, certificate)`` or ``(f, certificate, info)``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    carrier_map = choose_carrier(target, carrier)
    resid = _Residuals(target, carrier_map, density)
    if pole_sites is not None:
        out = _least_squares(target, epsilon, carrier_map, resid, np.asarray(pole_sites, complex),
                             safety, max_rounds, cond_cap)
    else:
        out = _contours(target, epsilon, carrier_map, resid, safety, max_rounds)
    return out if return_info else out[:2]


# ---------------------------------------------------------------------------
# least squares with prescribed pole sites

def _fit_samples(target, res):
    pts, wts = [], []
    for piece in target.pieces:
        reg = piece.region
        if isinstance(reg, Disc):
            b = reg.boundary_samples(2.0 / res)
            pts += [b, Disc(reg.center, 0.5 * reg.radius).boundary_samples(8.0 / res)]
            wts += [np.ones(b.size), np.full(pts[-1].size, 0.5)]
        else:
            b = reg.boundary().points()
            inner = reg.interior()
            ip = inner.points()[::2] if not inner.is_empty() else np.zeros(0, complex)
            pts += [b, ip]
            wts += [np.ones(b.size), np.full(ip.size, 0.5)]
    return np.concatenate(pts), np.concatenate(wts)


def _least_squares(target, epsilon, carrier, resid, sites, safety, max_rounds, cond_cap,
                   m0=4, mp0=2):
    res = target.resolution
    z, w = _fit_samples(target, res)
    rhs = np.zeros(z.size, complex)
    # residual target values at the fit samples, piece by piece
    offset = 0
    fit_parts = []
    for piece, F in zip(target.pieces, resid.maps):
        sub = _fit_samples(PiecewiseTarget([piece]), res)[0]
        fit_parts.append((offset, sub.size, F))
        offset += sub.size
    for off, n, F in fit_parts:
        if not F.is_zero():
            rhs[off:off + n] = F(z[off:off + n])
    c0 = complex(0.5 * (z.real.min() + z.real.max()), 0.5 * (z.imag.min() + z.imag.max()))
    s0 = float(np.abs(z - c0).max())
    scales = np.array([np.abs(z - p).min() for p in sites]) if sites.size else np.zeros(0)
    info = RungeInfo("least_squares", carrier_poles=carrier.n_poles)
    best = (np.inf, None, None)
    sw = np.sqrt(w)
    for rnd in range(max_rounds + 1):
        m, mp = m0 * 2 ** rnd, mp0 * 2 ** rnd
        ncol = m + 1 + mp * sites.size
        if ncol > z.size // 2:
            break
        u = (z - c0) / s0
        cols = [u ** k for k in range(m + 1)]
        for p, s in zip(sites, scales):
            q = s / (z - p)
            cols += [q ** k for k in range(1, mp + 1)]
        A = np.stack(cols, axis=1) * sw[:, None]
        norms = np.linalg.norm(A, axis=0)
        norms[norms == 0] = 1
        A /= norms
        x, _, rank, sv = np.linalg.lstsq(A, rhs * sw, rcond=None)
        x = x / norms
        cond = float((sv[0] / sv[-1]) ** 2) if sv[-1] > 0 else np.inf
        info.condition = cond
        poles = [(p, x[m + 1 + i * mp: m + 1 + (i + 1) * mp] * s ** np.arange(1, mp + 1))
                 for i, (p, s) in enumerate(zip(sites, scales))]
        r = RationalMap(x[:m + 1], poles, c0, s0)
        cert = resid.certificate(r, safety)
        info.history.append(cert.certified_bound)
        info.rounds = rnd + 1
        info.degrees = (m, mp)
        if cert.certified_bound < best[0]:
            best = (cert.certified_bound, r, cert)
        if cert.certified_bound <= epsilon:
            return carrier + r, cert, info
        if cond > cond_cap:
            raise IllConditioned(
                f"normal-equation condition {cond:.3g} exceeds cap {cond_cap:.3g} at degrees "
                f"({m}, {mp}) with certified bound {best[0]:.3g}; use more pole sites or a "
                f"lower resolution", condition=cond)
    raise ApproximationStalled(
        f"least squares did not reach {epsilon:.3g}; best certified bound {best[0]:.3g}",
        best_bound=best[0])


# ---------------------------------------------------------------------------
# Cauchy-integral discretisation

class _Loop:
    """Smooth closed curve with a jump function; the region it bounds lies to its left."""

    def __init__(self, raw, jump, distance, name, sigma=None, circle=None):
        self.jump = jump
        self.name = name
        self.circle = circle
        self.distance = distance
        if circle is None:
            seg = np.abs(np.diff(np.append(raw, raw[:1])))
            self.raw = raw[seg > 0] if np.any(seg > 0) else raw
            self.length = float(np.sum(np.abs(np.diff(np.append(self.raw, self.raw[:1])))))
            self.sigma = sigma
        else:
            c, rho = circle
            self.length = 2 * np.pi * rho

    def sample(self, n):
        """Curve and derivative (w.r.t. arclength) at ``n`` equispaced parameters."""
        if self.circle is not None:
            c, rho = self.circle
            t = 2 * np.pi * np.arange(n) / n
            e = np.exp(1j * t)
            return c + rho * e, 1j * e
        v = np.append(self.raw, self.raw[:1])
        s = np.concatenate([[0], np.cumsum(np.abs(np.diff(v)))])
        L = s[-1]
        q = np.arange(n) * L / n
        zs = np.interp(q, s, v.real) + 1j * np.interp(q, s, v.imag)
        a = np.fft.fft(zs)
        k = np.fft.fftfreq(n, 1.0 / n)
        a *= np.exp(-0.5 * (2 * np.pi * k * self.sigma / L) ** 2)
        kd = k.copy()
        if n % 2 == 0:
            kd[n // 2] = 0
        return np.fft.ifft(a), np.fft.ifft(a * (2j * np.pi * kd / L))

    def nodes(self, spacing, cell):
        m = max(16, int(np.ceil(self.length / spacing)))
        if self.circle is not None:
            zeta, dz = self.sample(m)
            return zeta, dz, self.length / m
        q = max(1, int(np.ceil(self.length / (0.25 * cell) / m)))
        zeta, dz = self.sample(m * q)
        return zeta[::q], dz[::q], self.length / m


def _label_pieces(active):
    labels = []
    for piece, F in active:
        for lab in labels:
            if lab[0] == F:
                lab[1].append(piece.region)
                break
        else:
            labels.append([F, [piece.region]])
    return labels


def _contours(target, epsilon, carrier, resid, safety, max_rounds, pad=6):
    info = RungeInfo("contour", carrier_poles=carrier.n_poles)
    active = [(p, F) for p, F in zip(target.pieces, resid.maps) if not F.is_zero()]
    if not active:
        cert = resid.certificate(RationalMap.constant(0.0), safety)
        return carrier, cert, info
    if any(not isinstance(p.region, GridRegion) for p, _ in active):
        raise InputError("pieces whose map differs from the carrier must be grid regions")
    res = active[0][0].region.resolution
    h = 1.0 / res
    labels = _label_pieces(active)
    frame = Frame.union([r.frame for _, regs in labels for r in regs]).padded(pad)
    masks = []
    for _, regs in labels:
        m = np.zeros(frame.shape, dtype=bool)
        for r in regs:
            m |= r.embed(frame)
        masks.append(m)
    pts = np.concatenate([r.points() for _, regs in labels for r in regs])
    c = complex(0.5 * (pts.real.min() + pts.real.max()), 0.5 * (pts.imag.min() + pts.imag.max()))
    radii = np.abs(pts - c)
    r_b = float(radii.max()) + h
    # obstacles outside the enclosing circle: inactive pieces and singularities
    obstacles = [np.inf]
    for p, F in zip(target.pieces, resid.maps):
        if F.is_zero():
            if isinstance(p.region, Disc):
                obstacles.append(abs(c - p.region.center) - p.region.radius)
            else:
                obstacles.append(float(np.abs(p.region.points() - c).min()))
    for F, _ in labels:
        if F.n_poles:
            obstacles.append(float(np.abs(F.locations - c).min()))
    rho_x = min(obstacles)
    if not np.isfinite(rho_x):
        rho_x = 2 * r_b + 1.0
    far = int(np.argmax(radii))
    counts = np.cumsum([sum(r.count for r in regs) for _, regs in labels])
    base = int(np.searchsorted(counts, far, side="right"))
    F_base = labels[base][0]
    level = None
    if rho_x <= r_b + 4 * h:
        # no separating circle: enclose the active pieces by a level set instead
        frame, pad, level = _outer_level_set(target, resid, labels, masks, frame, h)
        masks = [np.pad(m, pad) for m in masks]

    dists = [ndimage.distance_transform_edt(~m) * h for m in masks]
    d_all = np.minimum.reduce(dists)
    if level is None:
        rho_c = 0.5 * (r_b + rho_x)
        loops = [_Loop(None, F_base, 0.5 * (rho_x - r_b), "outer", circle=(c, rho_c))]
        inside_outer = lambda z: np.abs(z - c) < rho_c - 2 * h
    else:
        psi_o, d_obs = level
        loops = [_make_loop(z, F_base, frame, np.minimum(d_all, d_obs), psi_o, h, "outer")
                 for z in _level_loops(psi_o, frame, h)]
        inside_outer = lambda z: sample_field(frame, psi_o, z) < 0
    for li, (F, _) in enumerate(labels):
        if li == base:
            continue
        others = np.minimum.reduce([d for k, d in enumerate(dists) if k != li])
        psi = dists[li] - others
        jump = F - F_base
        for z in _level_loops(psi, frame, h):
            if not np.all(inside_outer(z)):
                raise SeparationTooSmall("a label region reaches the enclosing loop")
            loops.append(_make_loop(z, jump, frame, d_all, psi, h, f"label {li}"))
    info.loops = [{"name": lp.name, "length": float(lp.length), "distance": float(lp.distance)}
                  for lp in loops]

    # initial accuracy parameter from the standard trapezoid estimate
    target_sup = epsilon / safety
    kappas = []
    for lp in loops:
        zeta, _ = lp.sample(256)
        J = float(np.abs(lp.jump(zeta)).max()) if not lp.jump.is_zero() else 0.0
        est = max(J, 1e-300) * lp.length / (2 * np.pi * lp.distance)
        kappas.append(max(6.0, np.log(8 * est / target_sup)))
    best = (np.inf, None, None)
    for rnd in range(max_rounds + 1):
        locs, coefs, counts_ = [], [], []
        for lp, kappa in zip(loops, kappas):
            spacing = 2 * np.pi * lp.distance / kappa
            zeta, dz, ds = lp.nodes(spacing, h)
            vals = lp.jump(zeta)
            locs.append(zeta)
            coefs.append(-vals * dz * ds / (2j * np.pi))
            counts_.append(zeta.size)
        r = RationalMap.from_arrays(np.concatenate(locs), np.concatenate(coefs))
        cert = resid.certificate(r, safety)
        info.history.append(cert.certified_bound)
        info.rounds = rnd + 1
        for entry, n in zip(info.loops, counts_):
            entry["nodes"] = n
        if cert.certified_bound < best[0]:
            best = (cert.certified_bound, r, cert)
        if cert.certified_bound <= epsilon:
            return carrier + r, cert, info
        kappas = [1.35 * k for k in kappas]
    raise ApproximationStalled(
        f"contour quadrature did not reach {epsilon:.3g} after {max_rounds} refinements; "
        f"best certified bound {best[0]:.3g}", best_bound=best[0])


def _level_loops(psi, frame, h):
    """Closed zero contours of ``psi`` after forcing the frame border positive."""
    psi = psi.copy()
    psi[[0, -1], :] = np.abs(psi[[0, -1], :]) + h
    psi[:, [0, -1]] = np.abs(psi[:, [0, -1]]) + h
    out = []
    for raw in find_contours(psi, 0.0):
        z = (frame.i0 + raw[:, 1] + 1j * (frame.k0 + raw[:, 0])) * h
        if z.size < 4:
            continue
        out.append(z[:-1] if z[0] == z[-1] else z)
    return out


def _outer_level_set(target, resid, labels, masks, frame, h, reach=0.25):
    """Enclose the active pieces by the zero set of d(active) - min(d(obstacles), reach).

    Obstacles are the pieces where the residual vanishes and the poles of every residual
    label map.  Used when no circle separates the active pieces from the obstacles.
    """
    pad = int(np.ceil(reach / h)) + 4
    big = frame.padded(pad)
    zc = big.centers()
    lo = complex(zc.real.min() - reach, zc.imag.min() - reach)
    hi = complex(zc.real.max() + reach, zc.imag.max() + reach)
    d_obs = np.full(big.shape, np.inf)
    pts = []
    for p, F in zip(target.pieces, resid.maps):
        if not F.is_zero():
            continue
        if isinstance(p.region, Disc):
            d_obs = np.minimum(d_obs, np.maximum(np.abs(zc - p.region.center) - p.region.radius, 0))
        else:
            pts.append(p.region.points())
    for F, _ in labels:
        if F.n_poles:
            pts.append(F.locations)
    if pts:
        pts = np.concatenate(pts)
        keep = ((pts.real > lo.real) & (pts.real < hi.real)
                & (pts.imag > lo.imag) & (pts.imag < hi.imag))
        if keep.any():
            tree = cKDTree(np.column_stack([pts[keep].real, pts[keep].imag]))
            dd, _ = tree.query(np.column_stack([zc.real.ravel(), zc.imag.ravel()]),
                               distance_upper_bound=reach + 2 * h)
            d_obs = np.minimum(d_obs, dd.reshape(big.shape))
    act = np.zeros(big.shape, dtype=bool)
    for m in masks:
        act[pad:-pad, pad:-pad] |= m
    d_act = ndimage.distance_transform_edt(~act) * h
    if (d_obs[act] <= 2 * h).any():
        raise SeparationTooSmall("an active piece meets another piece or a singularity")
    psi = d_act - np.minimum(d_obs, reach)
    return big, pad, (psi, d_obs)


def _make_loop(z, jump, frame, d_all, psi, h, name):
    """Smooth a raw level-set polygon, orient it and measure its clearance."""
    d_raw = float(sample_field(frame, d_all, z).min())
    sigma = 1.5 * h
    for _ in range(6):
        lp = _Loop(z, jump, 0.0, name, sigma=sigma)
        n = max(64, int(np.ceil(lp.length / (0.25 * h))))
        zeta, dz = lp.sample(n)
        clearance = float(sample_field(frame, d_all, zeta).min())
        if clearance >= 0.6 * d_raw:
            break
        sigma *= 0.5
    # the region {psi < 0} must lie to the left
    probe = zeta + 1j * dz / np.abs(dz) * 0.5 * clearance
    if np.median(sample_field(frame, psi, probe)) > 0:
        z = z[::-1]
        lp = _Loop(z, jump, 0.0, name, sigma=sigma)
    poles = jump.locations
    sing = float(np.abs(zeta[:, None] - poles[None, :]).min()) if poles.size else np.inf
    lp.distance = min(clearance, sing)
    if lp.distance <= 0:
        raise SeparationTooSmall(f"{name}: separating loop touches a piece")
    return lp
