"""
Monte Carlo replication of estimator bias, density estimates and interval
coverage.

Every replication draws from its own stream
``SeedSequence(master, spawn_key=(row, noise_index, n, rep))`` so any cell can
be re-run alone and results do not depend on the number of workers.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import stats

from nlhet import model as M
from nlhet.cls import fit_cls
from nlhet.cml import fit_cml
from nlhet.errors import InvalidArgument, SimulationDiverged, SingularSystemError
from nlhet.kde import density_curve, residuals
from nlhet.noise import NoiseModel

METHODS = ("cls", "cml")
DEFAULT_SEED = 20080101


def rep_seed(master: int, row: int, noise_index: int, n: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=(row, noise_index, n, rep))


@dataclass
class ExperimentSpec:
    model: M.ModelSpec
    truths: list[M.ParamVector]
    noises: list = field(default_factory=lambda: [NoiseModel()])
    n_list: list[int] = field(default_factory=lambda: [100])
    reps: int = 1000
    methods: tuple[str, ...] = ("cls",)
    seed: int = DEFAULT_SEED
    burn_in: int = M.DEFAULT_BURN_IN
    name: str = ""
    initial: float = 0.0
    # optional published means, {noise: [row][n_index] -> psi}, and tolerance
    reference: dict | None = None
    tolerance: float | None = None

    def __post_init__(self):
        if self.reps < 1:
            raise InvalidArgument("reps must be >= 1")
        self.methods = tuple(self.methods)
        for m in self.methods:
            if m not in METHODS:
                raise InvalidArgument(f"unknown method {m!r}")
        if not self.truths:
            raise InvalidArgument("experiment needs at least one true parameter row")
        for t in self.truths:
            M.check_params(self.model, t)
        if "cml" in self.methods:
            for nz in self.noises:
                if isinstance(nz, NoiseModel) and not nz.cml_eligible:
                    raise InvalidArgument(f"{nz.family} is sampling-only; cml cannot be requested")
        if any(n < 1 for n in self.n_list):
            raise InvalidArgument("sample sizes must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentSpec:
        try:
            spec = M.ModelSpec.from_dict(d["model"])
            truths = [M.ParamVector.from_dict(t) for t in d["truths"]]
            noise = d.get("noise", {"family": "gaussian"})
            noises = [NoiseModel.from_dict(x) for x in (noise if isinstance(noise, list) else [noise])]
            return cls(
                model=spec,
                truths=truths,
                noises=noises,
                n_list=[int(n) for n in d["n_list"]],
                reps=int(d.get("reps", 1000)),
                methods=tuple(d.get("methods", ["cls"])),
                seed=int(d.get("seed", DEFAULT_SEED)),
                burn_in=int(d.get("burn_in", M.DEFAULT_BURN_IN)),
                name=str(d.get("name", "")),
                reference=d.get("reference_means"),
                tolerance=d.get("tolerance"),
            )
        except KeyError as exc:
            raise InvalidArgument(f"experiment spec is missing key {exc}") from None

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "name": self.name,
            "model": self.model.to_dict(),
            "truths": [t.to_dict() for t in self.truths],
            "noise": [n.to_dict() for n in self.noises],
            "n_list": list(self.n_list),
            "reps": self.reps,
            "methods": list(self.methods),
            "seed": self.seed,
            "burn_in": self.burn_in,
        }


@dataclass
class CellResult:
    row: int
    truth: M.ParamVector
    noise: str
    n: int
    method: str
    mean: np.ndarray
    sd: np.ndarray
    failures: int
    successes: int
    estimates: np.ndarray = field(repr=False, default=None)

    @property
    def bias(self) -> np.ndarray:
        return self.mean - self.truth.psi


@dataclass
class MCReport:
    spec: ExperimentSpec
    cells: list[CellResult]

    def cell(self, row: int, n: int, method: str = "cls", noise: str | None = None) -> CellResult:
        for c in self.cells:
            if c.row == row and c.n == n and c.method == method and (noise is None or c.noise == noise):
                return c
        raise KeyError((row, n, method, noise))

    def to_csv(self, path) -> None:
        rho, theta = self.spec.model.param_names()
        names = rho + theta
        header = (
            names
            + ["noise", "n", "method"]
            + [f"mean_{k}" for k in names]
            + [f"sd_{k}" for k in names]
            + ["failures", "successes"]
        )
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for c in self.cells:
                w.writerow(
                    [_fmt(v) for v in c.truth.psi]
                    + [c.noise, c.n, c.method]
                    + [_fmt(v) for v in c.mean]
                    + [_fmt(v) for v in c.sd]
                    + [c.failures, c.successes]
                )


def _fmt(v) -> str:
    return "nan" if not np.isfinite(v) else f"{float(v):.6f}"


def _noise_label(noise) -> str:
    return getattr(noise, "family", type(noise).__name__)


def _fit(method, series, spec, noise):
    if method == "cls":
        return fit_cls(series, spec, covariance=False)
    return fit_cml(series, spec, noise, covariance=False)


def _run_cell(args):
    exp, row, k, n = args
    spec, truth, noise = exp.model, exp.truths[row], exp.noises[k]
    dim = spec.n_rho + spec.n_theta
    out = {m: np.full((exp.reps, dim), np.nan) for m in exp.methods}
    for r in range(exp.reps):
        try:
            series = M.simulate_series(
                spec, truth, noise, n, exp.burn_in, rep_seed(exp.seed, row, k, n, r),
                initial=exp.initial,
            )
        except SimulationDiverged:
            continue
        init = None
        for m in exp.methods:
            try:
                res = _fit(m, series, spec, noise) if init is None or m == "cls" else fit_cml(
                    series, spec, noise, init=init, covariance=False
                )
            except (SingularSystemError, InvalidArgument, np.linalg.LinAlgError):
                continue
            if m == "cls":
                init = res.psi_hat
            if not res.converged or not np.all(np.isfinite(res.psi_hat.psi)):
                continue
            out[m][r] = res.psi_hat.psi
    return out


def _aggregate(est: np.ndarray):
    ok = np.all(np.isfinite(est), axis=1)
    good = est[ok]
    s = good.shape[0]
    if s == 0:
        nan = np.full(est.shape[1], np.nan)
        return nan, nan, int(est.shape[0]), 0
    mean = np.array([math.fsum(good[:, j]) / s for j in range(est.shape[1])])
    if s > 1:
        sd = np.array(
            [math.sqrt(math.fsum((good[:, j] - mean[j]) ** 2) / (s - 1)) for j in range(est.shape[1])]
        )
    else:
        sd = np.full(est.shape[1], np.nan)
    return mean, sd, int(est.shape[0] - s), int(s)


def run_experiment(exp: ExperimentSpec, jobs: int = 1) -> MCReport:
    """Simulate and fit every (row, noise, n) cell; failed replications are counted."""
    tasks = [
        (exp, row, k, n)
        for row in range(len(exp.truths))
        for k in range(len(exp.noises))
        for n in exp.n_list
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(_run_cell, tasks))
    else:
        outs = [_run_cell(t) for t in tasks]
    cells = []
    for (_, row, k, n), out in zip(tasks, outs):
        for m in exp.methods:
            mean, sd, fails, succ = _aggregate(out[m])
            cells.append(
                CellResult(row, exp.truths[row], _noise_label(exp.noises[k]), n, m,
                           mean, sd, fails, succ, out[m])
            )
    return MCReport(exp, cells)


def load_experiment(name_or_path) -> ExperimentSpec | FigureSpec:
    """Load a canned experiment (``table1`` .. ``table4``, ``figures``) or a JSON file."""
    p = Path(str(name_or_path))
    if p.suffix != ".json" and not p.exists():
        ref = resources.files("nlhet.experiments") / f"{name_or_path}.json"
        if not ref.is_file():
            raise InvalidArgument(f"no canned experiment named {name_or_path!r}")
        text = ref.read_text()
    else:
        if not p.exists():
            raise InvalidArgument(f"experiment file {p} does not exist")
        text = p.read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"malformed experiment JSON: {exc}") from None
    if d.get("kind") == "figures":
        return FigureSpec.from_dict(d)
    return ExperimentSpec.from_dict(d)


# --------------------------------------------------------------------------
# density figures


@dataclass
class FigureModel:
    label: str
    model: M.ModelSpec
    truth: M.ParamVector


@dataclass
class FigureSpec:
    models: list[FigureModel]
    n_list: list[int] = field(default_factory=lambda: [100, 200, 400, 600])
    orders: tuple[int, ...] = (0, 1)
    noise: object = field(default_factory=NoiseModel)
    grid: tuple[float, float, int] = (-4.0, 4.0, 401)
    seed: int = DEFAULT_SEED
    burn_in: int = M.DEFAULT_BURN_IN
    bandwidth_rule: str = "default"
    bandwidth_source: str = "residuals"

    def __post_init__(self):
        if self.bandwidth_source not in ("residuals", "series"):
            raise InvalidArgument("bandwidth_source must be 'residuals' or 'series'")

    @classmethod
    def from_dict(cls, d: dict) -> FigureSpec:
        try:
            models = [
                FigureModel(m["label"], M.ModelSpec.from_dict(m["model"]), M.ParamVector.from_dict(m["truth"]))
                for m in d["models"]
            ]
        except KeyError as exc:
            raise InvalidArgument(f"figure spec is missing key {exc}") from None
        return cls(
            models=models,
            n_list=[int(n) for n in d.get("n_list", [100, 200, 400, 600])],
            orders=tuple(int(p) for p in d.get("orders", [0, 1])),
            noise=NoiseModel.from_dict(d.get("noise", {"family": "gaussian"})),
            grid=tuple(d.get("grid", [-4.0, 4.0, 401])),
            seed=int(d.get("seed", DEFAULT_SEED)),
            burn_in=int(d.get("burn_in", M.DEFAULT_BURN_IN)),
            bandwidth_rule=d.get("bandwidth_rule", "default"),
            bandwidth_source=d.get("bandwidth_source", "residuals"),
        )


@dataclass
class Curve:
    label: str
    n: int
    estimate: object  # KernelEstimate

    @property
    def order(self) -> int:
        return self.estimate.order


def figure_curve(fm: FigureModel, noise, n: int, p: int, seed, grid, rule="default",
                 source="residuals", burn_in=M.DEFAULT_BURN_IN, truth_noise=None):
    """Simulate, fit by CLS, and estimate ``f^(p)`` from the residuals."""
    series = M.simulate_series(fm.model, fm.truth, noise, n, burn_in, seed)
    fit = fit_cls(series, fm.model, covariance=False)
    eps = residuals(series, fit.psi_hat, fm.model)
    return density_curve(
        eps, p, grid, rule=rule, noise=truth_noise if truth_noise is not None else noise,
        bandwidth_from=series.x if source == "series" else None,
    )


def run_figure_experiment(fig: FigureSpec, out_dir=None) -> list[Curve]:
    curves = []
    for mi, fm in enumerate(fig.models):
        for n in fig.n_list:
            ss = np.random.SeedSequence(fig.seed, spawn_key=(mi, n))
            series = M.simulate_series(fm.model, fm.truth, fig.noise, n, fig.burn_in, ss)
            fit = fit_cls(series, fm.model, covariance=False)
            eps = residuals(series, fit.psi_hat, fm.model)
            for p in fig.orders:
                est = density_curve(
                    eps, p, fig.grid, rule=fig.bandwidth_rule, noise=fig.noise,
                    bandwidth_from=series.x if fig.bandwidth_source == "series" else None,
                )
                curves.append(Curve(fm.label, n, est))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for c in curves:
            c.estimate.to_csv(out / f"{c.label}_n{c.n}_p{c.order}.csv")
    return curves


def plugin_gap(spec: M.ModelSpec, truth: M.ParamVector, noise, n: int, r: int, seed,
               grid=(-4.0, 4.0, 401), burn_in=M.DEFAULT_BURN_IN) -> float:
    """``sup_x |f_n^(r)(psi_0; x) - f_n^(r)(psi_hat; x)|`` for one simulated path.

    Both curves share the bandwidth computed from the true-parameter residuals.
    """
    series = M.simulate_series(spec, truth, noise, n, burn_in, seed)
    fit = fit_cls(series, spec, covariance=False)
    e0 = residuals(series, truth, spec)
    e1 = residuals(series, fit.psi_hat, spec)
    c0 = density_curve(e0, r, grid)
    c1 = density_curve(e1, r, grid, h=c0.bandwidth)
    return float(np.max(np.abs(c0.values - c1.values)))


# --------------------------------------------------------------------------
# interval coverage


def wald_coverage(spec: M.ModelSpec, truth: M.ParamVector, noise, n: int, reps: int,
                  method: str = "cls", level: float = 0.95, seed: int = DEFAULT_SEED,
                  burn_in: int = M.DEFAULT_BURN_IN) -> tuple[np.ndarray, int]:
    """Per-parameter coverage of ``psi_hat +- z sqrt(diag(V)/n)``.

    Returns the coverage vector and the number of replications that produced
    a usable covariance.
    """
    z = stats.norm.ppf(0.5 + level / 2)
    hits = np.zeros(truth.psi.size)
    used = 0
    for r in range(reps):
        ss = np.random.SeedSequence(seed, spawn_key=(r,))
        series = M.simulate_series(spec, truth, noise, n, burn_in, ss)
        res = fit_cls(series, spec) if method == "cls" else fit_cml(series, spec, noise)
        if res.covariance is None or not res.converged:
            continue
        se = res.standard_errors()
        hits += np.abs(res.psi_hat.psi - truth.psi) <= z * se
        used += 1
    return hits / max(used, 1), used
