"""Inductive construction of the stage maps f_0, f_1, ..., f_N.

Stage ``j`` turns ``f_j`` into ``f_{j+1}``: it builds ``R_j`` and ``L_j``,
assembles the piecewise target ``g_{j+1}`` on
``A_{j+1} = Delta_j U R_j U f_j^j(L_j)``, picks ``eps_{j+1}`` from measured
margins, approximates, and then re-verifies every stage condition on the
realised map.
"""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from skimage.measure import find_contours

from .compacta import (disc_chain, distance_to_unit_circle, neighbourhoods, nested_compacta,
                       normalize, AffineMap)
from .errors import MarginExhausted, ResolutionTooCoarse, StageRejected
from .grid import Disc, Frame, GridRegion
from .rational import (Constant, Piece, PiecewiseTarget, RationalMap, Translation, as_rational,
                       fmt, iterate, piece_samples)
from .runge import runge_approximate

__all__ = ["ConstructionConfig", "StageState", "MarginReport", "Margin", "init",
           "assemble_target", "measure_margins", "choose_epsilon", "advance", "run",
           "write_audit", "subset_index", "winding_numbers", "injectivity_check"]

EPS_FLOOR = 1e-12


@dataclass(frozen=True)
class ConstructionConfig:
    safety: float = 2.0
    certify_safety: float = 2.0
    density: int = 4
    neighbourhood_fraction: float = 0.25
    floor_cells: float = 2.0
    winding_samples: int = 32
    max_rounds: int = 6

    def to_json(self):
        return {k: (fmt(v) if isinstance(v, float) else v) for k, v in self.__dict__.items()}


@dataclass(frozen=True)
class Margin:
    name: str
    value: float
    steps: int
    sensitivity: float

    def bound(self, safety):
        if self.sensitivity == 0:
            return np.inf
        return self.value / (2 * self.sensitivity * safety)

    def to_json(self):
        return {"name": self.name, "value": fmt(self.value), "steps": self.steps,
                "sensitivity": fmt(self.sensitivity)}


@dataclass(frozen=True)
class MarginReport:
    """Margins of ``g_{j+1}`` and the sampled Lipschitz data behind them."""

    margins: tuple
    lipschitz: float
    fd_step: float
    injectivity_modulus: float

    def positive(self):
        return all(m.value > 0 for m in self.margins)

    def get(self, name):
        return next(m for m in self.margins if m.name == name)

    def to_json(self):
        return {"margins": [m.to_json() for m in self.margins],
                "lipschitz": fmt(self.lipschitz), "fd_step": fmt(self.fd_step),
                "injectivity_modulus": fmt(self.injectivity_modulus)}


@dataclass(frozen=True)
class StageState:
    """Snapshot after ``f_j`` has been accepted (and, once built, the data for stage ``j``)."""

    j: int
    f: RationalMap
    eps: tuple
    K: GridRegion
    d: float
    K_j: GridRegion
    K_next: GridRegion | None
    config: ConstructionConfig = ConstructionConfig()
    affine: AffineMap = AffineMap()
    nb: object = None
    target: PiecewiseTarget | None = None
    targets: tuple = ()
    increments: tuple = ()
    report: dict = field(default_factory=dict)
    margins: MarginReport | None = None
    certificate: object = None
    runge_info: object = None

    @property
    def eps_j(self):
        return self.eps[-1] if self.eps else None

    @property
    def ledger(self):
        """Remaining budget bound ``sum_{k >= j} eps_k <= 2 eps_j``."""
        return 2 * self.eps[-1] if self.eps else None

    @property
    def R(self):
        return self.nb.R if self.nb else None

    @property
    def L(self):
        return self.nb.L if self.nb else None

    @property
    def Q(self):
        return self.nb.Q if self.nb else None


def _sens(lam, n):
    """``1 + lam + ... + lam^(n-1)``: growth of a per-step perturbation over ``n`` steps."""
    return float(sum(lam ** i for i in range(n)))


def subset_index(big: GridRegion, small: GridRegion):
    """Positions of the cells of ``small`` within ``big.points()`` (``small`` must lie in ``big``)."""
    lookup = np.full(big.mask.shape, -1, dtype=np.int64)
    lookup[big.mask] = np.arange(big.count)
    r, c = big.frame.cell_of(small.points())
    if not np.all(big.frame.inside(r, c)):
        raise ValueError("subset lies outside the region frame")
    idx = lookup[r, c]
    if np.any(idx < 0):
        raise ValueError("subset is not contained in the region")
    return idx


def _depth(region: GridRegion, z):
    """Signed distance of points to the complement of ``region`` (positive inside)."""
    frame = region.frame.padded(2)
    m = region.embed(frame)
    inside = ndimage.distance_transform_edt(m) / region.resolution
    outside = ndimage.distance_transform_edt(~m) / region.resolution
    field_ = np.where(m, inside - 0.5 / region.resolution, -outside + 0.5 / region.resolution)
    r, c = frame.cell_of(z)
    ok = frame.inside(r, c) & np.isfinite(np.asarray(z))
    out = np.full(np.shape(z), -np.inf)
    out[ok] = field_[r[ok], c[ok]]
    return out


# ---------------------------------------------------------------------------
# injectivity

def _component_loops(comp: GridRegion, positive=True):
    """Boundary loops of a component with the component on their left."""
    m = np.pad(comp.mask, 2).astype(float)
    loops = []
    for raw in find_contours(m, 0.5, fully_connected="high", positive_orientation="low"):
        z = (comp.i0 - 2 + raw[:, 1] + 1j * (comp.k0 - 2 + raw[:, 0])) / comp.resolution
        loops.append(z[:-1])
    return loops


def winding_numbers(loop_images, w):
    """Total winding number of closed polylines around each point of ``w``."""
    w = np.atleast_1d(np.asarray(w, dtype=complex))
    total = np.zeros(w.size)
    for img in loop_images:
        v = np.append(img, img[:1])
        for chunk in np.array_split(np.arange(w.size), max(1, w.size // 8)):
            a = v[None, :-1] - w[chunk, None]
            b = v[None, 1:] - w[chunk, None]
            total[chunk] += np.angle(b / a).sum(axis=1) / (2 * np.pi)
    return np.rint(total).astype(int), total


def injectivity_check(F, region: GridRegion, n_samples=32, densify=2):
    """Argument-principle and separation checks of injectivity of ``F`` on ``region``.

    ``F`` maps arrays of points.  For each component, ``n_samples`` deep
    interior cells are mapped and the winding number of the image of the
    component boundary around them must be 1.  The injectivity modulus is
    the minimum over image nearest-neighbour pairs of image distance over
    domain distance.
    """
    windings = []
    for comp in region.components():
        frame = comp.frame.padded(1)
        depth = ndimage.distance_transform_edt(comp.embed(frame))
        deep = depth >= min(3.0, depth.max())
        r, c = np.nonzero(deep)
        zs = ((frame.i0 + c) + 1j * (frame.k0 + r)) / comp.resolution
        zs = zs[np.linspace(0, zs.size - 1, min(n_samples, zs.size)).astype(int)]
        images = []
        for lp in _component_loops(comp):
            v = np.append(lp, lp[:1])
            t = np.arange(densify) / densify
            fine = (v[:-1, None] + (v[1:] - v[:-1])[:, None] * t[None, :]).ravel()
            images.append(F(fine))
        wn, _ = winding_numbers(images, F(zs))
        windings.append(wn)
    windings = np.concatenate(windings) if windings else np.zeros(0, int)
    pts = region.points()
    img = F(pts)
    tree = cKDTree(np.stack([img.real, img.imag], axis=1))
    dist, idx = tree.query(np.stack([img.real, img.imag], axis=1), k=2)
    return windings, _modulus(pts, dist[:, 1], idx[:, 1])


def _modulus(pts, dist, idx):
    """Min image/domain distance ratio; coincident images give 0."""
    dom = np.abs(pts - pts[idx])
    if np.any(dist == 0):
        return 0.0
    return float(np.min(dist / dom))


# ---------------------------------------------------------------------------
# stage operations

def init(K: GridRegion, config: ConstructionConfig = ConstructionConfig(),
         normalize_input=True) -> StageState:
    """``f_0 = -3`` with ``K_0`` and ``K_1``; checks ``K_0`` inside ``D_0``."""
    affine = AffineMap()
    if normalize_input:
        K, affine = normalize(K)
    d = distance_to_unit_circle(K)
    K0 = nested_compacta(K, 0, d)
    K1 = nested_compacta(K, 1, d)
    f0 = RationalMap.constant(-3.0)
    D0, _ = disc_chain(0)
    slack = 1 - float(np.abs(K0.points()).max())
    report = {"(i)": {"passed": slack > 0, "margin": slack,
                      "note": "f_0^0 is the identity and K_0 lies in D_0"}}
    return StageState(0, f0, (), K, d, K0, K1, config, affine, report=report)


def assemble_target(state: StageState, nb=None) -> PiecewiseTarget:
    """``g_{j+1}``: ``f_j`` on ``Delta_j``, ``-3`` on ``R_j``, ``z + 3`` on ``f_j^j(L_j)``."""
    nb = nb or state.nb
    _, Delta = disc_chain(state.j)
    return PiecewiseTarget([Piece(Delta, state.f, f"Delta_{state.j}"),
                            Piece(nb.R, Constant(-3.0), f"R_{state.j}"),
                            Piece(nb.L_image, Translation(3.0), f"f^{state.j}(L_{state.j})")])


def _orbit(f, z, n):
    return iterate(f, np.asarray(z, dtype=complex), n)


def measure_margins(state: StageState, nb=None) -> MarginReport:
    """Margins of ``g_{j+1}`` for conditions (1)-(4) and the orbit constraints.

    Each margin carries the number of map applications between the
    perturbation and the measured quantity and the resulting sensitivity
    ``1 + L + ... + L^(n-1)``, ``L`` the sampled Lipschitz constant of ``f_j``
    along the relevant orbits (central differences at cell scale).
    """
    nb = nb or state.nb
    j, f = state.j, state.f
    h = 1.0 / state.K_j.resolution
    Kj = state.K_j
    orb = _orbit(f, Kj.points(), j)
    inext = subset_index(Kj, state.K_next)
    iL = subset_index(Kj, nb.L)
    lam = 1.0
    for k in range(j):
        lam = max(lam, float(np.abs(f.derivative_fd(orb[k], h)).max()))
    margins = []
    # (1) f^j(dK_j) inside R_j
    depth_R = _depth(nb.R, nb.Q_points)
    margins.append(Margin("(1) depth of f^j(dK_j) in R_j", float(depth_R.min()), j, _sens(lam, j)))
    # (2) g(R_j) = -3 inside D_-1
    margins.append(Margin("(2) dist(g(R_j), dD_-1)", 1.0, 1, 1.0))
    # f^j(K_{j+1}) must stay inside f^j(L_j) where g = z + 3
    depth_L = _depth(nb.L_image, orb[j][inext])
    margins.append(Margin("(3) depth of f^j(K_j+1) in f^j(L_j)", float(depth_L.min()), j,
                          _sens(lam, j)))
    # (3) g^{j+1}(K_{j+1}) inside D_{j+1}
    slack = 1 - float(np.abs(orb[j][inext] - 3 * j).max())
    margins.append(Margin("(3) containment of g^(j+1)(K_j+1) in D_j+1", slack, j + 1,
                          _sens(lam, j + 1)))
    # (3) Rouche margin for injectivity on L_j
    bL = nb.L.boundary()
    img_bL = orb[j][subset_index(Kj, bL)]
    tree = cKDTree(np.stack([img_bL.real, img_bL.imag], axis=1))
    dd, _ = tree.query(np.stack([orb[j][inext].real, orb[j][inext].imag], axis=1))
    margins.append(Margin("(3) Rouche dist(f^j(dL_j), f^j(K_j+1))", float(dd.min()), j + 1,
                          _sens(lam, j + 1)))
    # (4) orbit of K_{j+1} up to step j inside int(Delta_{j+1})
    _, Delta_next = disc_chain(j + 1)
    reach = max(float(np.abs(orb[k][inext] + 3).max()) for k in range(j + 1))
    margins.append(Margin("(4) containment in int(Delta_j+1)", Delta_next.radius - reach, j,
                          _sens(lam, j)))
    # orbits of K_j through step j-1 stay in Delta_j, where |f - g| is controlled
    if j > 0:
        _, Delta = disc_chain(j)
        reach = max(float(np.abs(orb[k] + 3).max()) for k in range(j))
        margins.append(Margin("(ii) K_j orbit inside Delta_j", Delta.radius - reach, j - 1,
                              _sens(lam, j - 1)))
    # (a) f(closed D_-1) inside D_-1
    Dm1, _ = disc_chain(-1)
    pts = piece_samples(Disc(-3, 1.0), 1, state.K_j.resolution)
    margins.append(Margin("(a) f(D_-1) inside D_-1", 1 - float(np.abs(f(pts) + 3).max()), 1, 1.0))
    inj = injectivity_modulus(lambda z: iterate(f, z, j)[j], nb.L)
    return MarginReport(tuple(margins), lam, h, inj)


def injectivity_modulus(F, region):
    pts = region.points()
    img = F(pts)
    tree = cKDTree(np.stack([img.real, img.imag], axis=1))
    dist, idx = tree.query(np.stack([img.real, img.imag], axis=1), k=2)
    return _modulus(pts, dist[:, 1], idx[:, 1])


def choose_epsilon(state: StageState, margins: MarginReport) -> float:
    """``min(eps_j / 2 (1/4 at j = 0), margin / (2 L safety))`` over all margins."""
    if not margins.positive():
        bad = [m.name for m in margins.margins if m.value <= 0]
        raise StageRejected(f"stage {state.j}: non-positive margins {bad}", condition=bad[0],
                            stage=state.j)
    cap = 0.25 if state.j == 0 else state.eps[-1] / 2
    eps = min([cap] + [m.bound(state.config.safety) for m in margins.margins])
    if eps < EPS_FLOOR:
        raise MarginExhausted(f"stage {state.j}: eps = {eps:.3g} underflows {EPS_FLOOR}",
                              stage=state.j)
    return float(eps)


def _record(report, name, passed, margin, note=""):
    report[name] = {"passed": bool(passed), "margin": float(margin)}
    if note:
        report[name]["note"] = note


def verify_stage(f_new: RationalMap, state: StageState, nb, eps_new, cert, targets, eps_all):
    """Re-check every stage condition on the realised ``f_{j+1}``."""
    j = state.j
    cfg = state.config
    res = state.K_j.resolution
    report = {}
    # (1) f^j(dK_j) inside R_j
    bK = state.K_j.boundary()
    qj = iterate(f_new, bK.points(), j)[j]
    depth = _depth(nb.R, qj)
    _record(report, "(1)", depth.min() > 0, depth.min(), "f^j(dK_j) inside R_j")
    # (2) f(R_j) inside D_-1
    sR = np.concatenate([nb.R.points(), nb.R.boundary().subsamples(cfg.density)])
    m2 = 1 - float(np.abs(f_new(sR) + 3).max())
    _record(report, "(2)", m2 > 0, m2, "f(R_j) inside D_-1")
    # (3) / (i): containment and injectivity of f^{j+1} near K_{j+1}
    Kn = state.K_next
    sK = np.concatenate([Kn.points(), Kn.boundary().subsamples(2)])
    orb = iterate(f_new, sK, j + 1)
    m3 = 1 - float(np.abs(orb[j + 1] - 3 * (j + 1)).max()) if np.all(np.isfinite(orb)) else -np.inf
    _record(report, "(3) containment", m3 > 0, m3, "f^(j+1)(K_j+1) inside D_j+1")
    F = lambda z: iterate(f_new, z, j + 1)[j + 1]
    wn, modulus = injectivity_check(F, nb.L, cfg.winding_samples)
    ok = wn.size > 0 and np.all(wn == 1)
    _record(report, "(3) argument principle", ok, float(np.mean(wn == 1)) if wn.size else 0.0,
            f"winding number 1 around {wn.size} sampled values on L_j")
    _record(report, "(3) separation", modulus > 0, modulus,
            "min image/domain nearest-neighbour distance ratio on L_j")
    # (4) / (ii)
    _, Delta_next = disc_chain(j + 1)
    reach = max(float(np.abs(orb[k] + 3).max()) for k in range(j + 1))
    m4 = Delta_next.radius - reach
    _record(report, "(4)", m4 > 0, m4, "f^k(K_j+1) inside int(Delta_j+1), k <= j")
    _record(report, "(ii)", m4 > 0, m4, "orbit containment for index j+1")
    # (a)
    pts = piece_samples(Disc(-3, 1.0), cfg.density, res)
    ma = 1 - float(np.abs(f_new(pts) + 3).max())
    _record(report, "(a)", ma > 0, ma, "f(closed D_-1) inside D_-1")
    # Runge certificate
    _record(report, "certificate", cert.certified_bound <= eps_new, eps_new - cert.certified_bound,
            "certified |f_j+1 - g_j+1| <= eps_j+1 on A_j+1")
    # (iii)
    ok = eps_all[0] < 0.5 and all(b <= a / 2 for a, b in zip(eps_all[:-1], eps_all[1:]))
    slack = min([0.5 - eps_all[0]] + [a / 2 - b for a, b in zip(eps_all[:-1], eps_all[1:])])
    _record(report, "(iii)", ok, slack, "eps_1 < 1/2 and eps_j <= eps_j-1 / 2")
    # telescoping against all earlier targets
    worst = np.inf
    for k, tk in enumerate(targets, start=1):
        budget = sum(eps_all[k - 1:])
        sup = 0.0
        for piece in tk.pieces:
            diff = f_new - as_rational(piece.map)
            if diff.is_zero():
                continue
            s = piece_samples(piece.region, 1, res, interior=False)
            sup = max(sup, float(np.abs(diff(s)).max()))
        worst = min(worst, budget - sup)
    _record(report, "telescoping", worst >= 0, worst, "sup_A_k |f_j+1 - g_k| <= eps_k + ... + eps_j+1")
    return report


def advance(state: StageState) -> StageState:
    """Build ``f_{j+1}`` from ``f_j``; raises ``StageRejected`` on any failed check."""
    j = state.j
    cfg = state.config
    if state.K_next is None:
        raise ResolutionTooCoarse(f"K_{j + 1} is not resolvable at this resolution")
    nb = neighbourhoods(state.f, j, state.K_j, state.K_next, cfg.neighbourhood_fraction,
                        cfg.floor_cells)
    target = assemble_target(state, nb)
    margins = measure_margins(state, nb)
    eps = choose_epsilon(state, margins)
    f_new, cert, info = runge_approximate(target, eps, safety=cfg.certify_safety,
                                          density=cfg.density, max_rounds=cfg.max_rounds,
                                          return_info=True)
    eps_all = state.eps + (eps,)
    targets = state.targets + (target,)
    report = verify_stage(f_new, state, nb, eps, cert, targets, eps_all)
    failed = [k for k, v in report.items() if not v["passed"]]
    done = replace(state, nb=nb, target=target, margins=margins, certificate=cert,
                   runge_info=info, report=report)
    if failed:
        raise StageRejected(f"stage {j}: conditions {failed} failed "
                            f"(margin {report[failed[0]]['margin']:.3g})",
                            condition=failed[0], margin=report[failed[0]]["margin"], stage=j)
    try:
        K_after = nested_compacta(state.K, j + 2, state.d)
    except ResolutionTooCoarse:
        K_after = None
    nxt = StageState(j + 1, f_new, eps_all, state.K, state.d, state.K_next, K_after, cfg,
                     state.affine, targets=targets,
                     increments=state.increments + (f_new - state.f,))
    return done, nxt


def run(K: GridRegion, N: int, config: ConstructionConfig = ConstructionConfig(),
        normalize_input=True, log=None):
    """``init`` followed by ``N`` advances.

    Returns ``(f_N, stages, final)``: ``stages[j]`` is the completed record of
    stage ``j`` (neighbourhoods, target, margins, report) and ``final`` the
    state holding ``f_N``.
    """
    state = init(K, config, normalize_input)
    stages = []
    for _ in range(N):
        done, state = advance(state)
        stages.append(done)
        if log:
            log(f"stage {done.j}: eps = {state.eps[-1]:.3e}, poles = {state.f.n_poles}")
    return state.f, stages, state


# ---------------------------------------------------------------------------
# audit output

def stage_json(stage: StageState, f_next: RationalMap, eps_next: float):
    nb = stage.nb
    return {
        "stage": stage.j,
        "eps_next": fmt(eps_next),
        "eps_history": [fmt(e) for e in stage.eps],
        "ledger_bound": fmt(2 * eps_next),
        "config": stage.config.to_json(),
        "affine": stage.affine.to_json(),
        "d": fmt(stage.d),
        "regions": {
            "K_j": stage.K_j.to_json(), "K_next": stage.K_next.to_json(),
            "L_j": nb.L.to_json(), "R_j": nb.R.to_json(), "Q_j": nb.Q.to_json(),
            "L_image": nb.L_image.to_json(),
        },
        "neighbourhoods": {"separation": fmt(nb.separation), "rho_R": fmt(nb.rho_R),
                           "rho_L": fmt(nb.rho_L), "lipschitz": fmt(nb.lipschitz),
                           "L_inradius": fmt(nb.L.inradius())},
        "target": {"separation": fmt(stage.target.separation),
                   "pieces": [p.name for p in stage.target.pieces]},
        "margins": stage.margins.to_json(),
        "certificate": stage.certificate.to_json(),
        "runge": stage.runge_info.to_json(),
        "report": {k: {"passed": v["passed"], "margin": fmt(v["margin"]),
                       **({"note": v["note"]} if "note" in v else {})}
                   for k, v in stage.report.items()},
        "f_next": f_next.to_json(),
    }


SUMMARY_FIELDS = ["stage", "eps", "poles", "min_margin", "certified_bound"]


def summary_rows(stages, final):
    rows = []
    for st in stages:
        eps = final.eps[st.j]
        row = {"stage": st.j, "eps": fmt(eps),
               "poles": final.f.n_poles if st.j == len(stages) - 1 else None,
               "min_margin": fmt(min(m.value for m in st.margins.margins)),
               "certified_bound": fmt(st.certificate.certified_bound)}
        for k, v in st.report.items():
            row[k] = "pass" if v["passed"] else "fail"
        rows.append(row)
    return rows


def write_audit(outdir, stages, final):
    """Per-stage JSON, ``summary.csv`` and ``f_final.json`` written atomically."""
    os.makedirs(outdir, exist_ok=True)
    fs = [st_next_f for st_next_f in _stage_maps(stages, final)]
    files = {}
    for st, f_next in zip(stages, fs):
        files[f"stage_{st.j}.json"] = json.dumps(stage_json(st, f_next, final.eps[st.j]),
                                                 indent=1, sort_keys=True, default=_plain)
    rows = summary_rows(stages, final)
    for row, f_next in zip(rows, fs):
        row["poles"] = f_next.n_poles
    keys = SUMMARY_FIELDS + sorted({k for r in rows for k in r} - set(SUMMARY_FIELDS))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    files["summary.csv"] = buf.getvalue()
    files["f_final.json"] = json.dumps(final.f.to_json(), indent=1, sort_keys=True, default=_plain)
    for name, text in files.items():
        tmp = os.path.join(outdir, f".{name}.tmp")
        with open(tmp, "w") as fh:
            fh.write(text)
        os.replace(tmp, os.path.join(outdir, name))
    return sorted(files)


def _plain(obj):
    """JSON fallback for numpy scalars and arrays."""
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return fmt(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def _stage_maps(stages, final):
    """``f_{j+1}`` for every completed stage ``j``."""
    maps = []
    f = final.f
    for inc in reversed(final.increments):
        maps.append(f)
        f = f - inc
    return list(reversed(maps))
