"""Acceptance criteria 1-10; every test prints one PASS/FAIL line per criterion."""
import os

import numpy as np
import pytest
from scipy import ndimage

from conftest import Run, record
from wandering_compacta import cli
from wandering_compacta import fractal as fr
from wandering_compacta.compacta import generate
from wandering_compacta.dynamics import pole_witness
from wandering_compacta.grid import GridRegion
from wandering_compacta.rational import (Piece, PiecewiseTarget, RationalMap, certify_error,
                                         iterate, piece_samples)
from wandering_compacta.runge import runge_approximate

STAGE_CONDITIONS = ["(1)", "(2)", "(3) containment", "(3) argument principle", "(3) separation",
                    "(4)", "(ii)", "(a)", "(iii)", "certificate", "telescoping"]
RUNTIME_TARGET = 600.0
DIM_TOL = 0.06
LINE_TOL = 0.03
EXACT_TOL = 1e-10


def _stages_accepted(run):
    bad = []
    for j, st in enumerate(run.stage):
        for name in STAGE_CONDITIONS:
            entry = st["report"][name]
            if not entry["passed"] or float(entry["margin"]) <= 0:
                bad.append(f"stage {j} {name}")
        for m in st["margins"]["margins"]:
            if float(m["value"]) <= 0:
                bad.append(f"stage {j} margin {m['name']}")
    return bad


def _halving(run):
    eps = [run.eps(k) for k in range(1, run.N + 1)]
    return eps, eps[0] <= 0.25 and all(b <= a / 2 for a, b in zip(eps[:-1], eps[1:]))


# 1 -------------------------------------------------------------------------

def test_1_annulus_stages(annulus_run):
    bad = _stages_accepted(annulus_run)
    eps, halving = _halving(annulus_run)
    elapsed = annulus_run.construct_seconds
    ok = annulus_run.N == 4 and not bad and halving and elapsed < RUNTIME_TARGET
    record(1, ok, f"4 stages, failed checks {bad or 'none'}, eps {['%.3g' % e for e in eps]}, "
                  f"halving {halving}, construct {elapsed:.0f}s on {os.cpu_count()} core(s)")
    assert not bad and halving
    assert elapsed < RUNTIME_TARGET


# 2 -------------------------------------------------------------------------

def test_2_escape(annulus_run, rng):
    esc = annulus_run.verify["escape"]
    K = GridRegion.from_json(annulus_run.run["K"])
    pts = K.points()
    z = pts[rng.choice(pts.size, min(pts.size, 20000), replace=False)]
    orb = iterate(annulus_run.f_final, z, 4)
    dev = np.abs(orb - 3.0 * np.arange(5)[:, None]).max()
    ok = esc["passed"] and esc["fraction_inside"] == 1.0 and esc["steps"] == 4 and dev < 1
    record(2, ok, f"{esc['samples']} samples, fraction inside {esc['fraction_inside']}, "
                  f"margin {float(esc['margin']):.4f}; independent recheck max |f^j - 3j| = {dev:.4f}")
    assert ok


# 3 -------------------------------------------------------------------------

def test_3_boundary_capture(annulus_run):
    cap = annulus_run.verify["capture"]
    per = cap["per_stage"]
    ok = (cap["passed"] and cap["steps"] == 4 and [p["j"] for p in per] == [0, 1, 2, 3]
          and all(p["passed"] for p in per))
    record(3, ok, f"dK_j for j = 0..3, margins {[round(float(p['margin']), 4) for p in per]}, "
                  f"closed D(-3,1) margin {float(cap['closed_disc_margin']):.4f}")
    assert ok


# 4 -------------------------------------------------------------------------

def test_4_pole_witness(annulus_run):
    has, sites, windings = [], [], []
    for k in range(1, annulus_run.N + 1):
        w = pole_witness(annulus_run.f(k), annulus_run.target(k))
        has.append(w["has_pole"])
        sites.append(w["max_sites_per_component"])
        windings.append(all(c["local_windings_match"] for c in w["components"]))
    witness = all(has) and all(windings)
    single = all(s <= 1 for s in sites)
    record(4, witness and single,
           f"pole in gap for f_1..f_4: {has}, local winding of 1/f = order: {windings}; "
           f"sites per component {sites} (required <= 1)")
    assert witness, "no pole witnessed in a gap"
    assert single, f"poles spread over {max(sites)} sites in one gap"


# 5 -------------------------------------------------------------------------

def _basis_target():
    A = generate("disc", 128, radius=0.2, center=-0.3)
    B = generate("disc", 128, radius=0.15, center=0.4)
    g = RationalMap([1, 0.5, -0.25 + 0.1j], [(0.05 + 0.0j, [0.02, 0.003j])])
    scale = max(np.abs(g(A.points())).max(), np.abs(g(B.points())).max())
    return PiecewiseTarget([Piece(A, g, "A"), Piece(B, g, "B")]), scale


def test_5_runge_exactness(annulus_run):
    t, scale = _basis_target()
    _, c_ls = runge_approximate(t, 1e-9, pole_sites=[0.05], carrier=None)
    _, c_ct = runge_approximate(t, 1e-9)
    exact = max(c_ls.certified_bound, c_ct.certified_bound) <= EXACT_TOL * scale
    ratios = []
    for k in range(1, annulus_run.N + 1):
        bound = float(annulus_run.stage[k - 1]["certificate"]["certified_bound"])
        dense = certify_error(annulus_run.f(k), annulus_run.target(k), density=16, safety=1.0,
                              interior=False)
        ratios.append(dense.sup_estimate / bound)
    ok = exact and all(r <= 1 for r in ratios)
    record(5, ok, f"in-basis bounds {c_ls.certified_bound:.2e} (LS), {c_ct.certified_bound:.2e} "
                  f"(contour) vs scale {scale:.3g}; 4x oversampled sup / certified_bound per "
                  f"annulus stage {[round(r, 3) for r in ratios]}")
    assert ok


# 6 -------------------------------------------------------------------------

def _telescoping(run):
    worst = []
    fN = run.f_final
    for k in range(1, run.N + 1):
        diff = fN - run.f(k)
        sup = 0.0
        if not diff.is_zero():
            for p in run.target(k).pieces:
                s = piece_samples(p.region, 4, 512)
                sup = max(sup, float(np.abs(diff(s)).max()))
        worst.append(sup / (2 * run.eps(k)))
    return worst


def test_6_telescoping(annulus_run, carpet_run):
    a, c = _telescoping(annulus_run), _telescoping(carpet_run)
    ok = max(a + c) <= 1
    record(6, ok, f"sup_A_k |f_N - f_k| / (2 eps_k): annulus {[f'{v:.2e}' for v in a]}, "
                  f"carpet {[f'{v:.2e}' for v in c]}")
    assert ok


# 7 -------------------------------------------------------------------------

def test_7_carpet(carpet_run):
    bad = _stages_accepted(carpet_run)
    sep = carpet_run.verify["separation"]
    idx = np.array(sep["indices"])
    K = GridRegion.from_json(carpet_run.run["K"])
    ok = (carpet_run.N == 3 and not bad and idx.size == 50 and np.all(idx >= 0)
          and carpet_run.verify_rc == 0 and K.interior().is_empty())
    record(7, ok, f"3 stages, failed checks {bad or 'none'}, empty interior "
                  f"{K.interior().is_empty()}; separation indices for {idx.size} probes: "
                  f"histogram {np.bincount(idx[idx >= 0]).tolist()}")
    assert ok


# 8 -------------------------------------------------------------------------

def test_8_koch_dimension():
    rows, ok = [], True
    for s in (2.5, 3.0, 3.5):
        est = fr.box_dimension(fr.koch_curve(fr.CurveSpec.uniform(s, 7)).vertices).estimate
        exp = np.log(4) / np.log(s)
        ok &= abs(est - exp) <= DIM_TOL
        rows.append(f"s={s}: {est:.4f} vs {exp:.4f}")
    line = fr.box_dimension(fr.koch_curve(fr.CurveSpec(1.0, 1.0, 7)).vertices).estimate
    ok &= abs(line - 1) <= LINE_TOL
    record(8, ok, "; ".join(rows) + f"; line {line:.4f}")
    assert ok


# 9 -------------------------------------------------------------------------

def _random_domain(rng, n=24):
    noise = ndimage.gaussian_filter(rng.standard_normal((n, n)), rng.uniform(0.6, 2.0))
    mask = noise > rng.uniform(-0.3, 0.3) * noise.std()
    lab, m = ndimage.label(mask, fr.FOUR)
    if m == 0:
        mask = np.zeros((n, n), bool)
        mask[n // 2, n // 2] = True
    else:
        mask = lab == 1 + np.argmax(ndimage.sum(mask, lab, range(1, m + 1)))
    return GridRegion(64, 0, 0, mask, "random")


def test_9_classifier_table():
    got = {name: fr.classify_domain(fr.archetype(name, 512)).as_tuple() for name in fr.ARCHETYPES}
    want = fr.FIGURE_TABLE
    columns = [tuple(got[n][i] for n in fr.ARCHETYPES) for i in range(3)]
    rng = np.random.default_rng(9)
    chain = 0
    for _ in range(1000):
        c = fr.classify_domain(_random_domain(rng), check_chain=False)
        if (not (c.regular and c.complement_of_closure_connected) or
                c.boundary_eq_fill_boundary) and (not c.boundary_eq_fill_boundary or c.regular):
            chain += 1
    mism = [n for n in fr.ARCHETYPES if got[n] != want[n]]
    ok = not mism and chain == 1000
    record(9, ok, f"regular {columns[0]}, dU = d fill {columns[1]}, complement connected "
                  f"{columns[2]} (order {fr.ARCHETYPES}); mismatches {mism or 'none'}; "
                  f"chain holds on {chain}/1000 random domains")
    assert chain == 1000
    assert not mism, f"rows differ from the table: {mism}"


# 10 ------------------------------------------------------------------------

def _rerun(out, argv):
    before = Run.files_in(out)
    for name in before:
        os.remove(os.path.join(out, name))
    for args in argv:
        assert cli.main([*args, "--out", str(out)]) in (0, 1)
    return before, Run.files_in(out)


def test_10_determinism(carpet_run, tmp_path):
    out = carpet_run.out
    argv = [["construct", "--set", "carpet", "--resolution", "512", "--stages", "3"], ["verify"]]
    first, second = _rerun(out, argv)
    diffs = sorted(n for n in set(first) | set(second) if first.get(n) != second.get(n))
    for sub, args in (("koch", ["koch", "--s", "3", "--depth", "6"]),
                      ("classify", ["classify", "--archetype", "outward_spiral"])):
        d = tmp_path / sub
        assert cli.main([*args, "--out", str(d)]) == 0
        a, b = _rerun(d, [args])
        diffs += [f"{sub}/{n}" for n in sorted(set(a) | set(b)) if a.get(n) != b.get(n)]
        first.update({f"{sub}/{n}": v for n, v in a.items()})
    ok = not diffs
    record(10, ok, f"{len(first)} JSON/CSV artifacts compared byte for byte (carpet construct "
                   f"+ verify, koch, classify); differing {diffs or 'none'}")
    assert ok
