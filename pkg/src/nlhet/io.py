"""Reading and writing series CSVs and model/result JSON files."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from nlhet import model as M
from nlhet.errors import InvalidArgument


def read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise InvalidArgument(f"file {p} does not exist")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"{p}: malformed JSON ({exc})") from None
    if not isinstance(d, dict):
        raise InvalidArgument(f"{p}: expected a JSON object")
    return d


def write_json(path, obj: dict) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> tuple[M.ModelSpec, M.ParamVector | None]:
    """Model JSON: ``{"mean": ..., "vol": ..., "params": {"rho": [...], "theta": [...]}}``.

    ``params`` is optional; it is needed only for simulation.
    """
    d = read_json(path)
    spec = M.ModelSpec.from_dict(d)
    params = None
    if "params" in d:
        params = M.ParamVector.from_dict(d["params"])
        M.check_params(spec, params)
    return spec, params


def write_series(path, series: M.SeriesWindow) -> None:
    """CSV with columns ``t,x``; rows with ``t <= 0`` are presample."""
    q = series.q
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x"])
        for k, v in enumerate(series.full):
            w.writerow([k - q + 1, repr(float(v))])


def read_series(path) -> M.SeriesWindow:
    p = Path(path)
    if not p.is_file():
        raise InvalidArgument(f"file {p} does not exist")
    with open(p, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["t", "x"]:
        raise InvalidArgument(f"{p}: expected header 't,x'")
    try:
        t = np.array([int(r[0]) for r in rows[1:]])
        x = np.array([float(r[1]) for r in rows[1:]])
    except (ValueError, IndexError):
        raise InvalidArgument(f"{p}: rows must be 'integer,number'") from None
    if t.size and np.any(np.diff(t) != 1):
        raise InvalidArgument(f"{p}: t must increase by 1")
    pre = t <= 0
    return M.SeriesWindow(x[pre], x[~pre])


def load_result(path) -> tuple[M.ModelSpec, M.ParamVector, dict]:
    d = read_json(path)
    try:
        spec = M.ModelSpec.from_dict(d["model"])
        psi = M.ParamVector.from_dict(d["psi_hat"])
    except KeyError as exc:
        raise InvalidArgument(f"fit result is missing key {exc}") from None
    M.check_params(spec, psi)
    return spec, psi, d
