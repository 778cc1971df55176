"""
Command-line driver.

    nlhet simulate  MODEL.json --n N --seed S [--noise gaussian] --out series.csv
    nlhet fit       --method cls|cml --model MODEL.json --data series.csv --out fit.json
    nlhet density   --data series.csv --fit fit.json --order P --out curve.csv
    nlhet replicate --experiment table2 --out report.csv [--jobs J]

Exit codes: 0 ok, 2 configuration error, 3 simulation diverged,
4 estimator did not converge (the result file is still written).
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from nlhet import io
from nlhet import model as M
from nlhet.cls import fit_cls
from nlhet.cml import fit_cml
from nlhet.errors import InvalidArgument, SimulationDiverged, SingularSystemError, UnsupportedOperation
from nlhet.kde import density_curve, residuals
from nlhet.montecarlo import ExperimentSpec, FigureSpec, load_experiment, run_experiment, run_figure_experiment
from nlhet.noise import NoiseModel

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_CONVERGENCE = 4
DEFAULT_SEED = 0

log = logging.getLogger("nlhet")


def _noise(args) -> NoiseModel:
    return NoiseModel(args.noise, args.nu)


def cmd_simulate(args) -> int:
    spec, params = io.load_model(args.model)
    if params is None:
        raise InvalidArgument("model file is missing key 'params'")
    series = M.simulate_series(spec, params, _noise(args), args.n, args.burn_in, args.seed)
    io.write_series(args.out, series)
    x = series.x
    print(f"n={series.n} mean={np.mean(x):.6f} var={np.var(x):.6f}")
    return EXIT_OK


def cmd_fit(args) -> int:
    spec, _ = io.load_model(args.model)
    series = io.read_series(args.data)
    if args.method == "cls":
        res = fit_cls(series, spec)
    else:
        res = fit_cml(series, spec, _noise(args))
    io.write_json(args.out, res.to_dict())
    names = spec.param_names()[0] + spec.param_names()[1]
    se = res.standard_errors()
    for k, name in enumerate(names):
        print(f"{name} = {res.psi_hat.psi[k]:.6f} (se {se[k]:.6f})")
    if not res.converged:
        print("warning: estimator did not converge", file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


def cmd_density(args) -> int:
    spec, psi, _ = io.load_result(args.fit)
    series = io.read_series(args.data)
    eps = residuals(series, psi, spec)
    grid = None if args.grid is None else (args.grid[0], args.grid[1], int(args.grid[2]))
    truth = None if args.truth is None else NoiseModel(args.truth, args.nu)
    curve = density_curve(eps, args.order, grid, h=args.bandwidth, rule=args.bandwidth_rule, noise=truth)
    curve.to_csv(args.out)
    print(f"order={curve.order} bandwidth={curve.bandwidth:.6f} n={curve.n}")
    return EXIT_OK


def cmd_replicate(args) -> int:
    exp = load_experiment(args.experiment)
    if isinstance(exp, FigureSpec):
        if args.n is not None:
            exp.n_list = args.n
        curves = run_figure_experiment(exp, args.out)
        print(f"wrote {len(curves)} curves to {args.out}")
        return EXIT_OK
    assert isinstance(exp, ExperimentSpec)
    if args.reps is not None:
        exp = _replace(exp, reps=args.reps)
    if args.n is not None:
        exp = _replace(exp, n_list=args.n)
    if args.seed is not None:
        exp = _replace(exp, seed=args.seed)
    report = run_experiment(exp, jobs=args.jobs)
    report.to_csv(args.out)
    fails = sum(c.failures for c in report.cells)
    print(f"{len(report.cells)} cells, {fails} failed replications")
    return EXIT_OK


def _replace(exp: ExperimentSpec, **kw) -> ExperimentSpec:
    from dataclasses import replace

    return replace(exp, **kw)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nlhet", description=__doc__.split("\n\n")[0].strip())
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def noise_flags(sp):
        sp.add_argument("--noise", default="gaussian", choices=["gaussian", "laplace", "student_t"])
        sp.add_argument("--nu", type=float, default=None, help="degrees of freedom for student_t")

    s = sub.add_parser("simulate", help="simulate a series from a model JSON with 'params'")
    s.add_argument("model")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--burn-in", type=int, default=M.DEFAULT_BURN_IN)
    s.add_argument("--out", required=True)
    noise_flags(s)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="estimate parameters by cls or cml")
    f.add_argument("--method", choices=["cls", "cml"], default="cls")
    f.add_argument("--model", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--out", required=True)
    noise_flags(f)
    f.set_defaults(func=cmd_fit)

    d = sub.add_parser("density", help="kernel estimate of the noise density or a derivative")
    d.add_argument("--data", required=True)
    d.add_argument("--fit", required=True)
    d.add_argument("--order", type=int, default=0)
    d.add_argument("--grid", type=float, nargs=3, metavar=("LO", "HI", "COUNT"))
    d.add_argument("--bandwidth", type=float, default=None)
    d.add_argument("--bandwidth-rule", choices=["default", "classical"], default="default")
    d.add_argument("--truth", choices=["gaussian", "laplace", "student_t"], default=None,
                   help="attach this noise density as a truth column")
    d.add_argument("--nu", type=float, default=None)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_density)

    r = sub.add_parser("replicate", help="run a Monte Carlo experiment")
    r.add_argument("--experiment", required=True, help="canned name (table1..table4, figures) or JSON path")
    r.add_argument("--out", required=True, help="report CSV, or output directory for figures")
    r.add_argument("--reps", type=int, default=None)
    r.add_argument("--n", type=int, nargs="+", default=None)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_replicate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except SimulationDiverged as exc:
        print(f"error: simulation diverged: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except (InvalidArgument, UnsupportedOperation, SingularSystemError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
