"""Command line: ``construct``, ``verify``, ``render``, ``koch`` and ``classify``.

Exit codes: 0 success, 1 verification failure, 2 input error, 3 internal cap
(``SizeCap``, ``MarginExhausted``).  Every output path is relative to
``--out``; files are written to a staging directory and moved into place
only when the command succeeds.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .construction import _plain
from .errors import InputError, WanderingError

__all__ = ["RunConfig", "main", "build_parser", "load_input"]


@dataclass
class RunConfig:
    set: str = "annulus"
    params: dict = field(default_factory=dict)
    polygon: str | None = None
    png: str | None = None
    resolution: int = 512
    stages: int = 4
    safety: float = 2.0
    certify_safety: float = 2.0
    density: int = 4
    out: str = "out"
    seed: int = 0
    f: str | None = None
    probes: int = 50
    window: list | None = None
    width: int = 400
    h1: float = 1.0
    h2: float = 1.0
    s: float | None = None
    depth: int = 7
    snowflake: int = 0
    archetype: str | None = None

    def validate(self):
        for name in ("resolution", "stages", "safety", "certify_safety", "density", "width",
                     "probes"):
            if getattr(self, name) <= 0:
                raise InputError(f"config field '{name}' must be positive")
        if self.seed < 0:
            raise InputError("config field 'seed' must be non-negative")
        return self

    def to_json(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InputError(f"unknown config fields {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# plumbing

@contextmanager
def _locked(out):
    os.makedirs(out, exist_ok=True)
    lock = os.path.join(out, ".lock")
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise InputError(f"output directory {out} is locked by another run ({lock})") from None
    os.close(fd)
    try:
        yield
    finally:
        os.remove(lock)


@contextmanager
def _staged(out):
    """A scratch directory whose files are moved into ``out`` on success."""
    stage = tempfile.mkdtemp(prefix=".staging-", dir=out)
    try:
        yield stage
        for name in sorted(os.listdir(stage)):
            os.replace(os.path.join(stage, name), os.path.join(out, name))
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, default=_plain)
        fh.write("\n")


def load_input(cfg: RunConfig):
    from .compacta import generate
    from .grid import load_png_mask, load_polygon_json

    if cfg.png:
        return load_png_mask(cfg.png)
    if cfg.polygon:
        return load_polygon_json(cfg.polygon, cfg.resolution)
    return generate(cfg.set, cfg.resolution, **cfg.params)


def _stage_regions(run):
    from .compacta import nested_compacta
    from .grid import GridRegion

    K = GridRegion.from_json(run["K"])
    d = float(run["d"])
    return K, d, [nested_compacta(K, j, d) for j in range(int(run["stages"]) + 1)]


def _construction_config(cfg):
    from .construction import ConstructionConfig

    return ConstructionConfig(safety=cfg.safety, certify_safety=cfg.certify_safety,
                              density=cfg.density)


# ---------------------------------------------------------------------------
# commands

def cmd_construct(cfg: RunConfig, log=print):
    from .construction import run, write_audit
    from .rational import fmt

    K = load_input(cfg)
    f, stages, final = run(K, cfg.stages, _construction_config(cfg), log=log)
    with _staged(cfg.out) as tmp:
        names = write_audit(tmp, stages, final)
        _dump(os.path.join(tmp, "run.json"),
              {"config": cfg.to_json(), "K": final.K.to_json(), "d": fmt(final.d),
               "affine": final.affine.to_json(), "stages": cfg.stages})
    log(f"wrote {len(names) + 1} files to {cfg.out}")
    return 0


def _read_run(cfg):
    path = os.path.join(cfg.out, "run.json")
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InputError(f"{path} not found; run 'construct' first") from None


def _read_f(cfg):
    from .rational import RationalMap

    path = cfg.f or os.path.join(cfg.out, "f_final.json")
    try:
        with open(path) as fh:
            return RationalMap.from_json(json.load(fh))
    except FileNotFoundError:
        raise InputError(f"map file {path} not found") from None
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise InputError(f"map file {path} is malformed: {exc}") from None


def _stage_target(cfg, j):
    """Grid pieces of the target of stage ``j`` read back from its audit file."""
    from .grid import GridRegion
    from .rational import Constant, Piece, PiecewiseTarget, Translation

    with open(os.path.join(cfg.out, f"stage_{j}.json")) as fh:
        st = json.load(fh)
    R = GridRegion.from_json(st["regions"]["R_j"])
    Li = GridRegion.from_json(st["regions"]["L_image"])
    return PiecewiseTarget([Piece(R, Constant(-3.0), "R"), Piece(Li, Translation(3.0), "L")])


def probe_points(K, d, N, n, seed):
    """``n`` seeded uniform points of the unit disc with ``dist(z, K) > 2^-(N+1) d``.

    One cell diagonal is added to the bound so the last dilation excludes the probe on
    the lattice too.
    """
    from scipy.spatial import cKDTree

    rng = np.random.default_rng(seed)
    pts = K.points()
    tree = cKDTree(np.stack([pts.real, pts.imag], axis=1))
    need = 2.0 ** (-(N + 1)) * d + np.sqrt(2) / K.resolution
    out = []
    while len(out) < n:
        r = np.sqrt(rng.uniform(0, 1, 4 * n))
        z = r * np.exp(2j * np.pi * rng.uniform(0, 1, 4 * n))
        dist, _ = tree.query(np.stack([z.real, z.imag], axis=1))
        out.extend(z[dist > need].tolist())
    return np.array(out[:n])


def cmd_verify(cfg: RunConfig, log=print):
    from . import dynamics as dy
    from .rational import fmt

    run = _read_run(cfg)
    f = _read_f(cfg)
    K, d, regions = _stage_regions(run)
    N = int(run["stages"])
    esc = dy.verify_escape(f, K, N, cfg.density, raise_on_failure=False)
    cap = dy.verify_boundary_capture(f, regions[:N], N, cfg.density, raise_on_failure=False, K=K)
    probes = probe_points(K, d, N, cfg.probes, cfg.seed)
    idx = dy.separation_indices(K, regions, probes)
    sep = {"probes": [[fmt(z.real), fmt(z.imag)] for z in probes],
           "indices": idx.tolist(), "passed": bool(np.all(idx >= 0)),
           "note": "probes are seeded uniform points of the unit disc at distance "
                   "> 2^-(N+1) d + sqrt(2) h from K"}
    witness = dy.pole_witness(f, _stage_target(cfg, N - 1))
    report = {"escape": esc, "capture": cap, "separation": sep, "pole_witness": witness,
              "julia_proxy": "dK is approximated from outside by captured dK_j samples and "
                             "from inside by escaping K samples; normality is not decided"}
    ok = esc["passed"] and cap["passed"] and sep["passed"]
    report["passed"] = ok
    with _staged(cfg.out) as tmp:
        _dump(os.path.join(tmp, "verify.json"), report)
    log(f"escape {'ok' if esc['passed'] else 'VIOLATED'}, capture "
        f"{'ok' if cap['passed'] else 'VIOLATED'}, separation "
        f"{'ok' if sep['passed'] else 'VIOLATED'}")
    return 0 if ok else 1


def cmd_render(cfg: RunConfig, log=print):
    from . import dynamics as dy

    f = _read_f(cfg)
    window = cfg.window or [-4.5, 3 * cfg.stages + 1.5, -2.0, 2.0]
    if len(window) != 4 or window[1] <= window[0] or window[3] <= window[2]:
        raise InputError("window must be [xmin, xmax, ymin, ymax]")
    with _staged(cfg.out) as tmp:
        _, orbits, legend = dy.render(f, window, cfg.stages, cfg.width,
                                      path=os.path.join(tmp, "render.png"))
    log(json.dumps(legend["classes"], sort_keys=True))
    return 0


def cmd_koch(cfg: RunConfig, log=print):
    from . import fractal as fr
    from .grid import rasterize_polylines, save_png_mask

    with _staged(cfg.out) as tmp:
        if cfg.snowflake:
            U, meta = fr.snowflake_domain(cfg.snowflake, depth=min(cfg.depth, 5),
                                          resolution=cfg.resolution, return_meta=True)
            save_png_mask(U, os.path.join(tmp, "snowflake.png"))
            _dump(os.path.join(tmp, "snowflake_meta.json"), meta)
            log(f"snowflake domain with {cfg.snowflake} boundary curves, {U.count} cells")
            return 0
        spec = (fr.CurveSpec.uniform(cfg.s, cfg.depth) if cfg.s
                else fr.CurveSpec(cfg.h1, cfg.h2, cfg.depth))
        curve = fr.koch_curve(spec)
        v = curve.vertices
        _dump(os.path.join(tmp, "curve.json"),
              {"spec": spec.to_json(), "self_intersecting": spec.self_intersecting,
               "vertices": np.stack([v.real, v.imag], axis=1).tolist()})
        dim = fr.box_dimension(v)
        expected = float(fr.local_dimension(spec, 0.5))
        _dump(os.path.join(tmp, "dimension.json"),
              {**dim.to_json(), "formula_at_midpoint": expected})
        save_png_mask(rasterize_polylines([v], cfg.resolution, closed=False),
                      os.path.join(tmp, "curve_mask.png"))
    log(f"{curve.n_segments} segments, box dimension {dim.estimate:.4f} "
        f"(log4/log s at t=1/2: {expected:.4f})")
    return 0


def cmd_classify(cfg: RunConfig, log=print):
    from . import fractal as fr
    from .grid import load_png_mask

    if cfg.png:
        U = load_png_mask(cfg.png)
        name = cfg.png
    else:
        name = cfg.archetype or "disc"
        U = fr.archetype(name, cfg.resolution)
    result = fr.classify_domain(U)
    with _staged(cfg.out) as tmp:
        _dump(os.path.join(tmp, "classify.json"), {"input": name, **result.to_json()})
    log(json.dumps({"input": name, "regular": result.regular,
                    "boundary_eq_fill_boundary": result.boundary_eq_fill_boundary,
                    "complement_of_closure_connected": result.complement_of_closure_connected}))
    return 0


COMMANDS = {"construct": cmd_construct, "verify": cmd_verify, "render": cmd_render,
            "koch": cmd_koch, "classify": cmd_classify}


def build_parser():
    p = argparse.ArgumentParser(prog="wandering-compacta", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    for fld in dataclasses.fields(RunConfig):
        flag = "--" + fld.name.replace("_", "-")
        if fld.name == "params":
            p.add_argument(flag, type=json.loads, help="generator parameters as JSON")
        elif fld.name == "window":
            p.add_argument(flag, type=float, nargs=4, metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
        else:
            typ = {"int": int, "float": float}.get(str(fld.type).split(" ")[0], str)
            p.add_argument(flag, type=typ, dest=fld.name)
    return p


def _config_from_args(args):
    data = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
    cfg = RunConfig.from_json(data)
    for fld in dataclasses.fields(RunConfig):
        v = getattr(args, fld.name, None)
        if v is not None:
            setattr(cfg, fld.name, list(v) if fld.name == "window" else v)
    return cfg.validate()


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        with _locked(cfg.out):
            return COMMANDS[args.command](cfg)
    except WanderingError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
