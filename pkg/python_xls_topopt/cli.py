#
# For licensing see accompanying LICENSE.md file.
# Copyright (C) 2022 Apple Inc. All Rights Reserved.
#

import argparse
import dataclasses
import json
import logging
import os
import sys

logging.basicConfig()
logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

import meshio
import numpy as np

from python_xls_topopt.config import (
    ConfigError,
    preset_description,
    preset_names,
    problem_from_dict,
    resolve_config,
)
from python_xls_topopt.elasticity import SolverError
from python_xls_topopt.optimizer import (
    OptimizationAborted,
    XlsTopologyOptimizer,
)
from python_xls_topopt.representations import (
    LegacyKind,
    UnsupportedRepresentationError,
    from_point_data,
    legacy_assignment,
    to_xls,
    verify_equivalence,
)
from python_xls_topopt.verification import run_property_suites
from python_xls_topopt.writers import (
    snapshot_fields,
    write_history,
    write_point_fields,
    write_raster,
    write_vtk,
)

EXIT_CONVERGED = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2

PACKAGE = "python_xls_topopt"


def set_quiet(quiet: bool):
    level = logging.WARNING if quiet else logging.INFO
    for name in list(logging.root.manager.loggerDict):
        if name == PACKAGE or name.startswith(PACKAGE + "."):
            logging.getLogger(name).setLevel(level)


def _write_snapshot(optimizer: XlsTopologyOptimizer, xls, state, stem: str, warp_factor: float,
                    sensitivity=None):
    mesh = optimizer.mesh
    qp, nodal = optimizer.compute_fractions(xls)
    warp = None if state is None or not warp_factor else state.u
    write_vtk(mesh, snapshot_fields(xls, nodal, state, sensitivity), f"{stem}.vtk",
              warp=warp, warp_factor=warp_factor)
    write_raster(mesh, qp, optimizer.spec.catalog.palette, f"{stem}.ppm")


def run(args) -> int:
    if args.snapshot_every is not None and args.snapshot_every < 1:
        raise ConfigError(f"Expected --snapshot-every >= 1, got {args.snapshot_every}")
    if args.max_iters is not None and args.max_iters < 1:
        raise ConfigError(f"Expected --max-iters >= 1, got {args.max_iters}")

    if args.config is not None:
        with open(args.config) as f:
            text = f.read()
    else:
        text = json.dumps({"preset": args.preset})
    resolved = resolve_config(text, args.override or ())
    spec = problem_from_dict(resolved, text)
    if args.max_iters is not None:
        spec = dataclasses.replace(
            spec, schedule=dataclasses.replace(spec.schedule, max_iterations=args.max_iters))

    logger.info(f"Setting random seed to {args.seed}")
    np.random.seed(args.seed)

    os.makedirs(args.output_dir, exist_ok=True)
    with open(os.path.join(args.output_dir, "problem.json"), "w") as f:
        json.dump(resolved, f, indent=2, sort_keys=True)

    logger.info(f"Setting up {spec.name}")
    optimizer = XlsTopologyOptimizer(spec)

    def snapshot(iteration, xls, state, sensitivity):
        stem = os.path.join(args.output_dir, f"snapshot_{iteration:04d}")
        _write_snapshot(optimizer, xls, state, stem, args.warp_factor,
                        sensitivity if args.write_sensitivities else None)

    try:
        xls, history = optimizer(callback=snapshot if args.snapshot_every else None,
                                 callback_steps=args.snapshot_every or 1)
    except OptimizationAborted as e:
        if e.snapshot is not None:
            stem = os.path.join(args.output_dir, f"aborted_{e.iteration:04d}")
            write_vtk(optimizer.mesh, snapshot_fields(e.snapshot), f"{stem}.vtk")
            logger.error(f"Wrote the field of the failed iteration to {stem}.vtk")
        raise

    write_history(history, os.path.join(args.output_dir, "history.csv"))
    qp, _ = optimizer.compute_fractions(xls)
    final_state = optimizer.solve_state(qp)
    _write_snapshot(optimizer, xls, final_state, os.path.join(args.output_dir, "final"),
                    args.warp_factor)
    logger.info(f"Wrote history and final configuration to {args.output_dir}")

    last = history[-1]
    logger.info(f"Final objective {last.objective:.6e}, volumes "
                f"{np.array2string(last.volumes, precision=4)}")
    return EXIT_CONVERGED if history.converged else EXIT_NOT_CONVERGED


def presets(args) -> int:
    for name in preset_names():
        sys.stdout.write(f"{name:8s} {preset_description(name)}\n")
    return EXIT_CONVERGED


def convert(args) -> int:
    source = meshio.read(args.input)
    kind = LegacyKind[args.kind]
    normals = None if args.normals is None else np.asarray(json.loads(args.normals))
    rep = from_point_data(kind, source.point_data, args.phases, normals)
    xls = to_xls(rep, rescale=not args.no_rescale)

    report = verify_equivalence(rep, xls)
    logger.info(f"Converted {rep.n_nodes} nodes of {kind.value} ({args.phases} phases): "
                f"{report.checked} checked, {report.skipped} skipped, "
                f"{len(report.mismatches)} mismatches")

    fields = snapshot_fields(xls)
    fields["legacy_phase"] = legacy_assignment(rep).astype(np.int32)
    cells = [(block.type, block.data) for block in source.cells]
    write_point_fields(source.points, cells, fields, args.output)
    logger.info(f"Wrote X-LS snapshot to {args.output}")
    return EXIT_CONVERGED if report.ok else EXIT_ERROR


def verify(args) -> int:
    try:
        run_property_suites(args.seed)
    except ValueError as e:
        logger.error(f"Property suite failed: {e}")
        return EXIT_ERROR
    return EXIT_CONVERGED


def main(args) -> int:
    set_quiet(args.quiet)
    try:
        return args.func(args)
    except (OptimizationAborted, SolverError) as e:
        logger.error(f"Optimization failed: {e}")
    except (ValueError, UnsupportedRepresentationError) as e:
        logger.error(str(e))
    except OSError as e:
        logger.error(f"I/O error: {e}")
    return EXIT_ERROR


def parser_spec():
    parser = argparse.ArgumentParser(
        prog="python -m python_xls_topopt.cli",
        description="Multi-material topology optimization with the extended level set")
    parser.add_argument("--quiet", action="store_true", help="Only log warnings and errors")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run_parser = subparsers.add_parser("run", help="Run one optimization problem")
    source = run_parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", help="Path to a JSON problem file")
    source.add_argument("--preset", choices=preset_names(), help="Run a bundled preset")
    run_parser.add_argument("-o", "--output-dir", required=True,
                            help="Directory for history.csv, final.vtk, final.ppm and snapshots")
    run_parser.add_argument("--snapshot-every", type=int, default=None,
                            help="Write a VTK/PPM snapshot every N iterations")
    run_parser.add_argument("--max-iters", type=int, default=None,
                            help="Override the iteration cap of the problem")
    run_parser.add_argument(
        "--override",
        action="append",
        help="Override a problem key, e.g. --override evolution.tau=1e-2 (repeatable)")
    run_parser.add_argument("--warp-factor", type=float, default=0.,
                            help="Displace written points by this multiple of u")
    run_parser.add_argument("--write-sensitivities", action="store_true",
                            help="Add the pair sensitivities dJ_i_j to the snapshots")
    run_parser.add_argument("--seed", "-s", type=int, default=0,
                            help="Random seed (randomized checks only)")
    run_parser.set_defaults(func=run)

    presets_parser = subparsers.add_parser("presets", help="List the bundled presets")
    presets_parser.set_defaults(func=presets)

    convert_parser = subparsers.add_parser(
        "convert", help="Convert a legacy level-set snapshot into an X-LS snapshot")
    convert_parser.add_argument("-i", "--input", required=True,
                                help="VTK file with point data legacy_0, legacy_1, ...")
    convert_parser.add_argument("-o", "--output", required=True)
    convert_parser.add_argument("--kind", choices=LegacyKind._member_names_, required=True)
    convert_parser.add_argument("--phases", type=int, required=True)
    convert_parser.add_argument("--normals", default=None,
                                help="JSON list of boundary normals n_ij for i < j (vector-valued only)")
    convert_parser.add_argument("--no-rescale", action="store_true",
                                help="Keep raw converted values, no per-pair rescaling")
    convert_parser.set_defaults(func=convert)

    verify_parser = subparsers.add_parser("verify", help="Run the property suites")
    verify_parser.add_argument("--seed", "-s", type=int, default=0)
    verify_parser.set_defaults(func=verify)
    return parser


def console_main():
    sys.exit(main(parser_spec().parse_args()))


if __name__ == "__main__":
    console_main()
