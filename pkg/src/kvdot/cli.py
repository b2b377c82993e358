"""Command line interface: ``kvdot {forward,reconstruct,experiment,gradcheck}``.

Exit codes: 0 success, 1 gradient check above tolerance, 2 invalid
arguments or configuration, 3 numerical failure, 4 file output failure.
Flags override values from ``--config``; ``KVDOT_OUTPUT_DIR`` sets the
default output directory.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from kvdot import fem, io
from kvdot.errors import ConfigurationError, NumericalError
from kvdot.experiment import (
    DEFAULT_PATTERN, ExperimentConfig, NoiseModel, compute_errors, exact_data,
    permutation_measurements, run_ladder, synthesize_truth,
)
from kvdot.mesh import build_mesh
from kvdot.objective import CoefficientPair, Objective, RegConfig
from kvdot.optimizer import METRICS, ReconConfig, run_reconstruction

EXIT_GRADCHECK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 1, 2, 3, 4
SUBCOMMANDS = ("forward", "reconstruct", "experiment", "gradcheck")

DEFAULTS = {
    "tau": 16,
    "tau_levels": "4,8,16,32",
    "theta": "example1",
    "seed": 0,
    "measurement_mode": "single",
    "sixteen_count": 16,
    "data_mesh_factor": 1,
    "max_iters": 800,
    "metric": "euclidean",
    "solver": "direct",
    "pattern": "-1,1,-2,3",
    "samples": 20,
    "checkpoint_every": 0,
}


@dataclass
class CliCommand:
    name: str
    options: dict = field(default_factory=dict)
    config_path: str | None = None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigurationError(message)


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _even_tau(text):
    value = _positive_int(text)
    if value % 2:
        raise argparse.ArgumentTypeError(f"tau must be even, got {value}")
    return value


def _tau_list(text):
    try:
        levels = [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad tau list {text!r}") from None
    if not levels or any(t <= 0 or t % 2 for t in levels):
        raise argparse.ArgumentTypeError(f"tau levels must be positive and even: {text!r}")
    return levels


def _theta(text):
    text = str(text)
    if text == "example1":
        return text
    value = text.split(":", 1)[1] if text.startswith("fixed:") else text
    try:
        theta = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"theta must be 'example1' or 'fixed:<value>', got {text!r}") from None
    if theta < 0:
        raise argparse.ArgumentTypeError("theta must be nonnegative")
    return theta


def _pattern(text):
    try:
        values = tuple(float(t) for t in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad pattern {text!r}") from None
    if len(values) != 4:
        raise argparse.ArgumentTypeError("pattern needs four values A,B,C,D")
    return values


CONVERTERS = {
    "tau": _even_tau, "tau_levels": _tau_list, "theta": _theta, "seed": int,
    "sixteen_count": _positive_int, "data_mesh_factor": _positive_int,
    "max_iters": _positive_int, "pattern": _pattern, "samples": _positive_int,
    "checkpoint_every": int,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kvdot", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, tau=True):
        p.add_argument("--config", help="key = value file; command line flags take precedence")
        p.add_argument("--output-dir", help="directory for results (default $KVDOT_OUTPUT_DIR or ./kvdot-out)")
        p.add_argument("--solver", choices=("direct", "cg", "dense"), help="linear solver (default direct)")
        if tau:
            p.add_argument("--tau", type=_even_tau, help="segments per axis, even (default 16)")

    def recon_flags(p):
        p.add_argument("--theta", type=_theta, help="noise amplitude: example1 or fixed:<value>")
        p.add_argument("--seed", type=int, help="noise seed (default 0)")
        p.add_argument("--measurement-mode", choices=("single", "six", "sixteen"))
        p.add_argument("--sixteen-count", type=_positive_int, help="patterns used by sixteen mode (default 16)")
        p.add_argument("--data-mesh-factor", type=_positive_int,
                       help="generate data on a mesh refined by this factor (default 1)")
        p.add_argument("--max-iters", type=_positive_int, help="iteration cap per level (default 800)")
        p.add_argument("--metric", choices=METRICS, help="gradient metric (default euclidean)")
        p.add_argument("--pgm", action="store_true", help="also write PGM heatmaps")

    p = sub.add_parser("forward", help="solve the Neumann-Robin problem at the true coefficients")
    common(p)
    p.add_argument("--pattern", type=_pattern, help="flux constants A,B,C,D (default -1,1,-2,3)")

    p = sub.add_parser("reconstruct", help="reconstruct (q, a) on a single mesh")
    common(p)
    recon_flags(p)
    p.add_argument("--checkpoint-every", type=int, help="write q/a CSV every K iterations (0 = off)")

    p = sub.add_parser("experiment", help="run the refinement ladder with warm starts")
    common(p, tau=False)
    p.add_argument("--tau-levels", type=_tau_list, help="comma separated doubling levels (default 4,8,16,32)")
    recon_flags(p)

    p = sub.add_parser("gradcheck", help="compare gradients with central finite differences")
    common(p)
    p.add_argument("--samples", type=_positive_int, help="random pairs/directions (default 20)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    return parser


def parse_cli(argv=None) -> CliCommand:
    """Parse ``argv`` and merge it with the config file and defaults."""
    args = build_parser().parse_args(argv)
    given = {k: v for k, v in vars(args).items() if v is not None and k not in ("command", "config")}
    options = dict(DEFAULTS)
    if args.config:
        try:
            raw = io.read_config(args.config)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from exc
        for key, value in raw.items():
            conv = CONVERTERS.get(key, str)
            try:
                options[key] = conv(value)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise ConfigurationError(f"{args.config}: {key}: {exc}") from exc
    options.update(given)
    for key, conv in CONVERTERS.items():
        if isinstance(options.get(key), str):
            try:
                options[key] = conv(options[key])
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise ConfigurationError(f"{key}: {exc}") from exc
    if options.get("output_dir") is None:
        options["output_dir"] = os.environ.get("KVDOT_OUTPUT_DIR", "kvdot-out")
    return CliCommand(args.command, options, args.config)


def _experiment_config(opts, levels) -> ExperimentConfig:
    return ExperimentConfig(
        tau_levels=tuple(levels), theta=opts["theta"], seed=opts["seed"],
        measurement_mode=opts["measurement_mode"], sixteen_count=opts["sixteen_count"],
        data_mesh_factor=opts["data_mesh_factor"],
        recon=ReconConfig(max_iters=opts["max_iters"], metric=opts["metric"], seed=opts["seed"]),
        method=opts["solver"], output_dir=str(opts["output_dir"]),
    )


def emit_level(result, outdir: Path, pgm: bool = False, suffix: str = ""):
    """Write the coefficient fields, their errors and the iteration log of one level."""
    mesh, pair, truth = result.mesh, result.state.pair, result.truth
    io.write_vtk(outdir / f"q{suffix}.vtk", mesh, {"q": pair.q})
    io.write_vtk(outdir / f"a{suffix}.vtk", mesh, {"a": pair.a})
    io.write_vtk(outdir / f"diff_q{suffix}.vtk", mesh, {"diff_q": truth.q - pair.q})
    io.write_vtk(outdir / f"diff_a{suffix}.vtk", mesh, {"diff_a": truth.a - pair.a})
    result.state.write_log(outdir / f"log{suffix}.csv")
    if pgm:
        io.write_pgm(outdir / f"q{suffix}.pgm", mesh, pair.q)
        io.write_pgm(outdir / f"a{suffix}.pgm", mesh, pair.a)


def emit_outputs(results, output_dir, pgm: bool = False):
    """Write ``table.csv`` plus per-level fields (in ``tau<k>/`` subdirectories)."""
    outdir = Path(output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    io.write_table(outdir / "table.csv", [r.report for r in results])
    for r in results:
        level_dir = outdir / f"tau{r.mesh.tau}"
        level_dir.mkdir(exist_ok=True)
        emit_level(r, level_dir, pgm)
    return outdir


def cmd_forward(opts):
    mesh = build_mesh(opts["tau"])
    spec = fem.ProblemSpec()
    truth = synthesize_truth(mesh, opts["pattern"])
    j, g = exact_data(mesh, truth, spec, method=opts["solver"])
    u = fem.StateSolver(mesh, truth.q, truth.a, spec, opts["solver"]).neumann(j)
    outdir = Path(opts["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    io.write_vtk(outdir / "u.vtk", mesh, {"u": u, "q_true": truth.q, "a_true": truth.a})
    io.write_field_csv(outdir / "u.csv", mesh, u)
    print(f"tau={mesh.tau} nodes={mesh.n_nodes} |g|_L2(Gamma)={fem.boundary_l2_norm(mesh, g):.6e}")
    return 0


def cmd_reconstruct(opts):
    from kvdot.experiment import LevelResult

    mesh = build_mesh(opts["tau"])
    config = _experiment_config(opts, [mesh.tau])
    spec = fem.ProblemSpec()
    truth = synthesize_truth(mesh)
    meas = permutation_measurements(
        mesh, truth, spec, config.measurement_mode, NoiseModel(config.theta, config.seed),
        config.sixteen_count, config.data_mesh_factor, config.method,
    )
    outdir = Path(opts["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    every = opts["checkpoint_every"]

    def checkpoint(state):
        if every > 0 and state.iteration % every == 0:
            io.write_field_csv(outdir / f"q_iter{state.iteration}.csv", mesh, state.pair.q)
            io.write_field_csv(outdir / f"a_iter{state.iteration}.csv", mesh, state.pair.a)

    reg = RegConfig.for_mesh(mesh, config.rho_factor, config.eps_factor)
    initial = CoefficientPair.constant(mesh, config.recon.q0, config.recon.a0)
    state = run_reconstruction(mesh, spec, meas, reg, config.recon, initial, config.method, checkpoint)
    report = compute_errors(mesh, state.pair, truth, spec, meas, method=config.method)
    result = LevelResult(mesh, truth, meas, initial, state, report)
    io.write_table(outdir / "table.csv", [report])
    emit_level(result, outdir, opts.get("pgm", False))
    print(f"{state.status} after {state.iteration} iterations; "
          f"E_qa={report.E_qa:.6e} E_N={report.E_N:.6e} E_M={report.E_M:.6e} E_D={report.E_D:.6e}")
    return 0


def cmd_experiment(opts):
    config = _experiment_config(opts, opts["tau_levels"])
    results = run_ladder(config)
    outdir = emit_outputs(results, opts["output_dir"], opts.get("pgm", False))
    for r in results:
        rep = r.report
        print(f"tau={rep.tau:3d} delta={rep.delta:.4e} E_qa={rep.E_qa:.4e} E_N={rep.E_N:.4e} "
              f"E_M={rep.E_M:.4e} E_D={rep.E_D:.4e} iters={rep.iterations} ({rep.status})")
    print(f"wrote {outdir / 'table.csv'}")
    return 0


def gradient_check(tau=8, samples=20, seed=0, t=1e-5, method="direct"):
    """Max relative error between gradient and central differences.

    Uses the default regularization on a random admissible pair per sample
    with noisy single-measurement data.
    """
    rng = np.random.default_rng(seed)
    mesh = build_mesh(tau)
    spec = fem.ProblemSpec()
    truth = synthesize_truth(mesh)
    meas = permutation_measurements(mesh, truth, spec, "single", NoiseModel("example1", seed), method=method)
    obj = Objective(mesh, spec, meas, RegConfig.for_mesh(mesh), method)
    b = spec.bounds
    worst = 0.0
    for _ in range(samples):
        pair = CoefficientPair(rng.uniform(b.q_lo + 0.5, b.q_hi - 0.5, mesh.n_nodes),
                               rng.uniform(b.a_lo + 0.5, b.a_hi - 0.5, mesh.n_nodes))
        eq, ea = rng.standard_normal(mesh.n_nodes), rng.standard_normal(mesh.n_nodes)
        gq, ga = obj.gradient(obj.evaluate(pair))
        exact = gq @ eq + ga @ ea
        plus = obj.evaluate(CoefficientPair(pair.q + t * eq, pair.a + t * ea)).value
        minus = obj.evaluate(CoefficientPair(pair.q - t * eq, pair.a - t * ea)).value
        fd = (plus - minus) / (2 * t)
        worst = max(worst, abs(exact - fd) / max(1.0, abs(exact)))
    return worst


def cmd_gradcheck(opts):
    err = gradient_check(opts["tau"], opts["samples"], opts["seed"], method=opts["solver"])
    print(f"max relative error {err:.3e} over {opts['samples']} samples at tau={opts['tau']}")
    return 0 if err <= 1e-5 else EXIT_GRADCHECK


COMMANDS = {
    "forward": cmd_forward, "reconstruct": cmd_reconstruct,
    "experiment": cmd_experiment, "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    try:
        command = parse_cli(argv)
    except ConfigurationError as exc:
        print(f"kvdot: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if command.options.get("verbose"):
        logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    try:
        return COMMANDS[command.name](command.options)
    except ConfigurationError as exc:
        print(f"kvdot: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"kvdot: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"kvdot: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
