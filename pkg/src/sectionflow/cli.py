"""Command-line front end: ``verify``, ``trajectory`` and ``report``.

Reports are JSON (``schema: 1``), trajectories CSV with header ``t,u,v,x,y``
and raster slices binary PGM.  Output is deterministic for a fixed
configuration and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import __version__
from .flow import IntegrationError, reduced_trajectory, t_star
from .geometry import derive_scales, region_family
from .sections import CONSTRUCTIONS, SCHEMA, RasterBoundsError, SampleBudgetError, sigma_report
from .verification import VerifyConfig, available_checks, run_checks


@dataclass
class RunConfig:
    command: str
    k: int
    construction: str
    grid_res: int
    density: float
    slab_h: Optional[float]
    out: Optional[Path]
    seed: int


def _k_value(text: str) -> int:
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"k must be an integer, got {text!r}")
    if k < 2:
        raise argparse.ArgumentTypeError(f"k must be >= 2, got {k}")
    return k


def _positive(kind):
    def parse(text: str):
        try:
            val = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
        if not val > 0:
            raise argparse.ArgumentTypeError(f"expected a positive value, got {text!r}")
        return val

    return parse


def _slab_pair(text: str) -> tuple[int, int]:
    try:
        a, b = (int(s) for s in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"slab must be given as A,B, got {text!r}")
    return a, b


def _common(sp, with_sections: bool = True):
    sp.add_argument("--construction", choices=CONSTRUCTIONS, default="section4",
                    help="which map to use (default: section4)")
    sp.add_argument("--k", type=_k_value, default=4, help="number of blocks, k >= 2 (default: 4)")
    sp.add_argument("--seed", type=int, default=0, help="seed for randomised spot checks")
    sp.add_argument("--out", type=Path, default=None, help="output file (default: stdout)")
    if with_sections:
        sp.add_argument("--grid", type=_positive(int), default=1024,
                        help="raster cells across the strip width (default: 1024)")
        sp.add_argument("--density", type=_positive(float), default=1.0,
                        help="source samples per raster cell side (default: 1)")
        sp.add_argument("--slab", type=_positive(float), default=None,
                        help="slab thickness in x and y (default: delta/2)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sectionflow", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run property checks and section bounds")
    _common(v)
    v.add_argument("--check", default=None,
                   help="comma-separated check names (default: all for the construction)")
    v.add_argument("--list", action="store_true", help="list the available checks and exit")

    t = sub.add_parser("trajectory", help="CSV samples of a reduced (x, y) curve")
    _common(t, with_sections=False)
    t.add_argument("--i", type=int, default=1, help="block index (default: 1)")
    t.add_argument("--x0", type=float, default=None, help="start x (default: eps - delta)")
    t.add_argument("--y0", type=float, default=None, help="start y (default: y_check_i + nu)")
    t.add_argument("--t-end", type=float, default=1.0,
                   help="final time; negative values run backwards (default: 1)")
    t.add_argument("--samples", type=_positive(int), default=201, help="number of time samples")

    r = sub.add_parser("report", help="JSON section report, optionally with PGM slices")
    _common(r)
    r.add_argument("--emit-raster", action="store_true",
                   help="write one PGM per requested slab next to --out")
    r.add_argument("--raster-slab", type=_slab_pair, action="append", default=None,
                   metavar="A,B", help="slab to export (default: the argmax slabs)")
    r.add_argument("--raster-dir", type=Path, default=None, help="directory for PGM files")
    r.add_argument("--lipschitz-points", type=int, default=0,
                   help="sample the map derivative at this many points (diagnostic)")
    r.add_argument("--no-slabs", action="store_true", help="omit the per-slab table")
    return ap


def _config(args) -> RunConfig:
    return RunConfig(
        command=args.command,
        k=args.k,
        construction=args.construction,
        grid_res=getattr(args, "grid", 0),
        density=getattr(args, "density", 1.0),
        slab_h=getattr(args, "slab", None),
        out=args.out,
        seed=args.seed,
    )


def _emit(text: str, path: Optional[Path]) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def cmd_verify(args, parser) -> int:
    cfg = _config(args)
    table = available_checks(cfg.construction)
    if args.list:
        sys.stdout.write("\n".join(table) + "\n")
        return 0
    names = None
    if args.check:
        names = [n.strip() for n in args.check.split(",") if n.strip()]
        unknown = [n for n in names if n not in table]
        if unknown:
            parser.error(f"unknown check(s) for {cfg.construction}: {', '.join(unknown)}; "
                         f"available: {', '.join(table)}")
    vc = VerifyConfig(cfg.construction, cfg.k, cfg.seed, cfg.grid_res, cfg.density, cfg.slab_h)
    results = run_checks(vc, names)
    failed = [r.name for r in results if not r.passed]
    for r in results:
        value = "" if r.value is None else f" value={r.value:.6g}"
        bound = "" if r.threshold is None else f" threshold={r.threshold:.6g}"
        print(f"{r.status.upper():4s} {r.name}{value}{bound} ({r.detail})", file=sys.stderr)
    p = derive_scales(cfg.k)
    report = {
        "schema": SCHEMA,
        "command": "verify",
        "construction": cfg.construction,
        "k": cfg.k,
        "eps": p.eps,
        "delta": p.delta,
        "nu": p.nu,
        "seed": cfg.seed,
        "grid_res": cfg.grid_res,
        "density": cfg.density,
        "slab_h": cfg.slab_h if cfg.slab_h is not None else 0.5 * p.delta,
        "checks": [r.to_dict() for r in results],
        "failed": failed,
        "passed": not failed,
    }
    _emit(_dump(report), cfg.out)
    return 0 if not failed else 1


def cmd_trajectory(args, parser) -> int:
    cfg = _config(args)
    p = derive_scales(cfg.k)
    if not 1 <= args.i <= p.k:
        parser.error(f"--i must lie in 1..{p.k}")
    fam = region_family(p)
    yc = fam.y_check[args.i - 1]
    x0 = p.eps - p.delta if args.x0 is None else args.x0
    y0 = yc + p.nu if args.y0 is None else args.y0
    if args.t_end == 0:
        parser.error("--t-end must be nonzero")
    ts = t_star(p, args.i)
    ends = [0.0, args.t_end]
    if args.x0 is None and args.y0 is None:
        # the default start is the curve through t*; t* < 0 when 2i - 1 - eps < 0
        ends.append(ts)
    span = (min(ends), max(ends))
    extra = [ts] if span[0] <= ts <= span[1] else []
    tr = reduced_trajectory(p, args.i, x0, y0, t_span=span, n_samples=args.samples,
                            extra_times=extra)
    cu, cv = fam.R2[args.i - 1].center
    _emit(tr.to_csv(fixed={"u": cu, "v": cv}), cfg.out)
    return 0


def cmd_report(args, parser) -> int:
    cfg = _config(args)
    rep = sigma_report(cfg.construction, cfg.k, grid_res=cfg.grid_res, density=cfg.density,
                       slab_h=cfg.slab_h, lipschitz_points=args.lipschitz_points, seed=cfg.seed)
    doc = rep.to_dict(include_slabs=not args.no_slabs)
    doc["command"] = "report"
    doc["config"] = {"grid_res": cfg.grid_res, "density": cfg.density, "slab_h": rep.outer.slab_h,
                     "seed": cfg.seed}
    doc["notes"] = [
        "x columns cover one period; the maps are periodic in x",
        "stabilisation by the identity in further dimensions is not simulated",
    ]
    rasters = []
    if args.emit_raster:
        rasters = _write_rasters(args, cfg, rep)
        doc["rasters"] = rasters
    _emit(_dump(doc), cfg.out)
    return 0


def _write_rasters(args, cfg: RunConfig, rep) -> list:
    if args.raster_dir is not None:
        folder = args.raster_dir
    elif cfg.out is not None:
        folder = cfg.out.parent
    else:
        folder = Path(".")
    stem = cfg.out.stem if cfg.out is not None else f"{cfg.construction}_k{cfg.k}"
    wanted = []
    if args.raster_slab:
        for set_kind in rep.sweeps:
            wanted += [(set_kind, a, b) for a, b in args.raster_slab]
    else:
        if rep.outer.argmax_outer is not None:
            wanted.append(("P", *rep.outer.argmax_outer))
        if rep.hull is not None and rep.hull.argmax_hull is not None:
            wanted.append(("Q", *rep.hull.argmax_hull))
    out = []
    folder.mkdir(parents=True, exist_ok=True)
    for set_kind, a, b in wanted:
        grid = rep.sweeps[set_kind].raster(a, b)
        path = folder / f"{stem}_{set_kind}_a{a}_b{b}.pgm"
        try:
            with open(path, "wb") as fh:
                grid.to_pgm(fh)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
        out.append({"set": set_kind, "a": a, "b": b, "path": path.name,
                    "occupied_cells": grid.occupied_cells})
    return out


COMMANDS = {"verify": cmd_verify, "trajectory": cmd_trajectory, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args, parser)
    except IntegrationError as exc:
        print(f"error: integration failed: {exc}", file=sys.stderr)
    except (RasterBoundsError, SampleBudgetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
