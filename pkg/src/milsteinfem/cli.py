"""Command line front end for the experiment harness.

Subcommands: ``convergence``, ``stability``, ``evolve``, ``validate-mesh``,
``validate-model``.  Exit codes: 0 on success, 1 on configuration or usage
errors, 2 on numerical failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig
from .fem import assemble_stiffness, check_diagonal_dominance
from .mesh import MeshError, check_mesh_condition, validate_mesh
from .model import validate_diffusion_assumptions, validate_one_sided_lipschitz
from .solver import SolverError
from .studies import StudyError, evolution_study, stability_study, strong_error_study

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep usage errors on exit code 1
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="milsteinfem", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name, help_text in (
        ("convergence", "coupled-path strong error study; writes rate_table.csv"),
        ("stability", "moment stability time series; writes stability.csv"),
        ("evolve", "field and zero-level-set snapshots at configured times"),
        ("validate-mesh", "mesh invariants, edge condition, diagonal dominance"),
        ("validate-model", "sampled drift/diffusion assumption estimates"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", "-c", help="config file path or packaged preset name")
        p.add_argument("--seed", type=int, help="override mc.seed (unsigned 64-bit)")
        p.add_argument("--out", help="override output.dir")
        p.add_argument("--samples", type=int, help="override mc.samples")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="key=value",
            help="override any config key (repeatable)",
        )
    return parser


def _load_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_file(args.config)
    else:
        cfg = ExperimentConfig()
    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        from .config import _parse_scalar  # same scalar grammar as config files

        if "," in value:
            overrides[key.strip()] = tuple(
                _parse_scalar(tok) for tok in value.split(",") if tok.strip()
            )
        else:
            overrides[key.strip()] = _parse_scalar(value)
    if args.seed is not None:
        overrides["mc.seed"] = args.seed
    if args.samples is not None:
        overrides["mc.samples"] = args.samples
    if args.out is not None:
        overrides["output.dir"] = args.out
    return cfg.with_overrides(overrides) if overrides else cfg


def _cmd_convergence(cfg: ExperimentConfig) -> int:
    table = strong_error_study(cfg)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "rate_table.csv"
    table.write_csv(path)
    for w in table.metadata.get("warnings", []):
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {path}")
    for k, tau in enumerate(table.taus):
        order = table.order_linf_el2[k]
        order_txt = "-" if order is None else f"{order:.4f}"
        print(
            f"tau={tau:<12g} err_linf_el2={table.err_linf_el2[k]:.6e} "
            f"order={order_txt}"
        )
    return EXIT_OK


def _cmd_stability(cfg: ExperimentConfig) -> int:
    series = stability_study(cfg)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "stability.csv"
    series.write_csv(path)
    print(f"wrote {path}")
    print(
        f"final means: E||u||^2 = {series.mean_l2sq[-1]:.6g}, "
        f"E||grad u||^2 = {series.mean_h1sq[-1]:.6g}"
    )
    return EXIT_OK


def _cmd_evolve(cfg: ExperimentConfig) -> int:
    results = evolution_study(cfg)
    out_dir = Path(cfg.output_dir)
    for t, (_, segments) in sorted(results.items()):
        print(f"t={t:g}: {len(segments)} level-set segments -> {out_dir}")
    return EXIT_OK


def _cmd_validate_mesh(cfg: ExperimentConfig) -> int:
    mesh = cfg.make_mesh()
    validate_mesh(mesh)
    report = check_mesh_condition(mesh)
    dominance = check_diagonal_dominance(assemble_stiffness(mesh))
    print(
        f"mesh: {mesh.num_vertices} vertices, {mesh.num_triangles} triangles, "
        f"{mesh.num_free} free dofs, h = {mesh.h:g}"
    )
    worst = report.cot_sums.min() if report.cot_sums.size else 0.0
    print(
        f"edge condition: {'PASS' if report.passed else 'FAIL'} "
        f"({report.edges.shape[0]} interior edges, min cot sum = {worst:.3e})"
    )
    print(
        f"stiffness diagonal dominance: {'PASS' if dominance.passed else 'FAIL'} "
        f"(worst row margin = {dominance.worst_margin:.3e})"
    )
    if not (report.passed and dominance.passed):
        return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_validate_model(cfg: ExperimentConfig) -> int:
    model = cfg.make_model()
    mu = validate_one_sided_lipschitz(model.drift)
    print(f"drift: one-sided Lipschitz estimate mu = {mu:.6g} (c0 = {model.drift.coeffs[0]:g})")
    report = validate_diffusion_assumptions(model.diffusion)
    print(
        f"diffusion ({model.diffusion.kind}, delta = {model.diffusion.delta:g}): "
        f"Lipschitz = {report.lipschitz:.6g}, growth = {report.growth:.6g}, "
        f"|DG| = {report.dg_bound:.6g}, |D2G| = {report.d2g_bound:.6g}, "
        f"composite Lipschitz = {report.composite_lipschitz:.6g}"
    )
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


_COMMANDS = {
    "convergence": _cmd_convergence,
    "stability": _cmd_stability,
    "evolve": _cmd_evolve,
    "validate-mesh": _cmd_validate_mesh,
    "validate-model": _cmd_validate_model,
}


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = _load_config(args)
        return _COMMANDS[args.command](cfg)
    except (ConfigError, MeshError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, StudyError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
