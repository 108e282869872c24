"""Command-line interface: ``hocurve curve | check | fixtures bullet``.

Exit codes: 0 success, 2 curving did not converge (outputs still written),
1 input or usage errors.  ``HOCURVE_NUM_THREADS`` caps the BLAS/OpenMP
thread pools.
"""
from __future__ import annotations

import os

_threads = os.environ.get("HOCURVE_NUM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
from pathlib import Path  # noqa: E402

from .fileio import (MeshParseError, read_classification, read_curved_mesh,  # noqa: E402
                     read_linear_mesh, write_classification, write_curved_mesh,
                     write_linear_mesh, write_visualization)
from .geometry import GeometryError, GeometryModel  # noqa: E402
from .solver import ConfigError, SolverConfig, curve_mesh  # noqa: E402

log = logging.getLogger("hocurve")

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hocurve", description="Curve linear tetrahedral meshes to high order.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    c = sub.add_parser("curve", help="curve a linear mesh onto its geometry")
    c.add_argument("mesh", help="linear MSH mesh")
    c.add_argument("geometry", help="geometry JSON")
    c.add_argument("classification", help="boundary classification JSON")
    c.add_argument("--config", help="TOML solver configuration")
    c.add_argument("--degree", type=int, help="target polynomial degree (overrides config)")
    c.add_argument("--out", help="curved mesh output (default: <mesh>_q<degree>.msh)")
    c.add_argument("--report", help="JSON report path (default: next to --out)")
    c.add_argument("--viz-level", type=int, default=0,
                   help="write a VTU with level^3 sub-tets per element (0: none)")
    c.add_argument("--y-plus", default="", help="free-text Y+ label for the report")

    k = sub.add_parser("check", help="quality and accuracy metrics of a curved mesh")
    k.add_argument("mesh")
    k.add_argument("geometry")
    k.add_argument("classification")
    k.add_argument("--config", help="TOML configuration (quality quadrature settings)")
    k.add_argument("--report", help="write a JSON/CSV report here")

    f = sub.add_parser("fixtures", help="generate test fixtures")
    fsub = f.add_subparsers(dest="fixture", parser_class=_Parser)
    b = fsub.add_parser("bullet", help="bullet body in a far-field ball")
    b.add_argument("--h", type=float, default=0.5, help="target edge length on the body")
    b.add_argument("--normal-jump-deg", type=float, default=0.0,
                   help="angle between sphere and cylinder normals at the junction")
    b.add_argument("--merged", action="store_true",
                   help="group sphere and cylinder into one virtual surface")
    b.add_argument("--out-dir", default=".")
    b.add_argument("--prefix", default="bullet")
    return p


def _load_config(path, degree) -> SolverConfig:
    cfg = SolverConfig.from_toml(path) if path else SolverConfig()
    if degree is not None:
        cfg = cfg.replace(degree=degree)
    return cfg


def _require(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _print_report(report) -> None:
    q = report.quality
    print(f"elements: {q.n_elements}  degree: {report.metadata['degree']}")
    print(f"q^S : min {q.min_shape:.6f} (element {q.min_shape_element})  mean {q.mean_shape:.6f}")
    print(f"q^SJ: min {q.min_sj:.6f} (element {q.min_sj_element})  mean {q.mean_sj:.6f}")
    if report.accuracy is not None:
        for label, value in report.accuracy.rows():
            print(f"{label:>10s}  {value:.6e}")


def cmd_curve(args) -> int:
    from .report import build_report, write_report

    mesh_path = _require(args.mesh, "mesh file")
    model = GeometryModel.load(_require(args.geometry, "geometry file"))
    cls = read_classification(_require(args.classification, "classification file"))
    cfg = _load_config(args.config, args.degree)
    linear = read_linear_mesh(mesh_path)
    out = Path(args.out) if args.out else mesh_path.with_name(
        f"{mesh_path.stem}_q{cfg.degree}.msh")
    report_path = Path(args.report) if args.report else out.with_suffix(".json")

    result = curve_mesh(linear, model, cls, cfg)
    t0 = time.perf_counter()
    write_curved_mesh(out, result.mesh, cls)
    timings = dict(result.timings)
    report = build_report(result.mesh, model, cls, result, cfg, timings, args.y_plus)
    if args.viz_level > 0:
        from .distortion import element_qualities, quality_rule

        q = element_qualities(result.mesh, quality_rule(result.mesh, cfg.quality_extra,
                                                        cfg.quadrature_exactness))
        write_visualization(result.mesh, args.viz_level, out.with_suffix(".vtu"), q)
    report.timings["output"] = time.perf_counter() - t0
    write_report(report, report_path)
    _print_report(report)
    if not result.converged:
        print("curving did not converge; partial outputs written", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_check(args) -> int:
    from .report import build_report, write_report

    mesh = read_curved_mesh(_require(args.mesh, "mesh file"))
    model = GeometryModel.load(_require(args.geometry, "geometry file"))
    cls = read_classification(_require(args.classification, "classification file"))
    cfg = _load_config(args.config, mesh.degree)
    report = build_report(mesh, model, cls, config=cfg)
    if args.report:
        write_report(report, args.report)
    _print_report(report)
    return EXIT_OK


def cmd_fixture_bullet(args) -> int:
    from .fixtures import bullet_fixture

    if not args.h > 0:
        raise ValueError("--h must be positive")
    if not 0 <= args.normal_jump_deg < 45:
        raise ValueError("--normal-jump-deg must be in [0, 45)")
    fx = bullet_fixture(args.h, args.normal_jump_deg, merged=args.merged)
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    mesh_path = d / f"{args.prefix}.msh"
    write_linear_mesh(mesh_path, fx.mesh, fx.classification,
                      {1: "sphere", 2: "cylinder", 3: "cap", 4: "outer"})
    fx.model.save(d / f"{args.prefix}_geometry.json")
    write_classification(d / f"{args.prefix}_classification.json", fx.classification)
    print(f"wrote {mesh_path} ({len(fx.mesh.tets)} tets, {len(fx.mesh.triangles)} triangles)")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    handlers = {"curve": cmd_curve, "check": cmd_check}
    try:
        if args.command in handlers:
            return handlers[args.command](args)
        if args.command == "fixtures" and args.fixture == "bullet":
            return cmd_fixture_bullet(args)
        parser.print_usage(sys.stderr)
        return EXIT_INPUT
    except (OSError, MeshParseError, GeometryError, ConfigError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
