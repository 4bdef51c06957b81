"""Command line front end.

    specscan e2e --out-dir run1 --seed 3
    specscan segment --out-dir run1 --gamma-deg 15
    specscan detect --image scan.pgm --out-dir det

Exit status: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .pipeline import (
    STAGE_FUNCS, ConfigError, Run, StageError, format_table, load_config, run_e2e, run_stage, summary_rows,
    write_effective_config,
)

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out-dir", default="specscan_out", help="artifact directory (default: %(default)s)")
    common.add_argument("--seed", type=int, help="root seed, overrides the config")
    common.add_argument("--mesh", help="OBJ/PLY mesh, overrides the config (default: bundled mirror)")
    common.add_argument("--gamma-deg", type=float, help="region normal-angle threshold in degrees")
    common.add_argument("--beta-deg", type=float, help="patch normal-angle threshold in degrees")
    common.add_argument("--area-threshold", type=float, help="minimum edge-pixel count of a defect")
    common.add_argument("--no-figures", action="store_true", help="skip the PNG report figures")

    p = argparse.ArgumentParser(prog="specscan", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "sample": "sample the mesh, keep exterior points, estimate normals",
        "segment": "cluster points into regions of similar normals",
        "plan": "split regions into patches and build the scan path",
        "register": "simulate a depth capture and recover the object pose",
        "scan-sim": "simulate line-scan images with injected defects",
        "detect": "find defects in line-scan images",
        "map": "map detections to 3D and score them",
        "e2e": "run every stage and print a summary table",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, parents=[common], help=text, description=text)
        if name == "detect":
            sp.add_argument("--image", action="append", dest="images",
                            help="PGM image to inspect (repeatable); default: the scan-sim images")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, gamma_deg=args.gamma_deg, beta_deg=args.beta_deg,
                          area_threshold=args.area_threshold, mesh=args.mesh)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run = Run(cfg, args.out_dir, figures=not args.no_figures)
    try:
        if args.command == "e2e":
            summary = run_e2e(run)
            print(format_table(summary_rows(summary)))
            return EXIT_OK
        write_effective_config(run)
        fn = STAGE_FUNCS[args.command]
        if args.command == "detect" and args.images:
            result = run_stage(run, "detect", lambda r: fn(r, images=args.images))
        else:
            result = run_stage(run, args.command, fn)
    except StageError as exc:
        print(f"stage failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    for key, value in result.items():
        print(f"{key}\t{value:.6g}" if isinstance(value, float) else f"{key}\t{value}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
