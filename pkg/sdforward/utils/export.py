"""
CSV and JSON writers for trajectories, predictions, reports and plot data.

Floats are written with ``repr`` (shortest round-trip decimal), so equal
runs produce byte-identical files.
"""

import csv
import io
import json
import logging
import os

import numpy as np

logger = logging.getLogger(__name__)


def _num(value) -> str:
    return repr(float(value))


def _ensure_dir(path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)


def trajectory_header(n: int, l: int) -> list[str]:
    return ["t"] + [f"x{k}" for k in range(1, n + 1)] + ["u", "sampled"] + [f"d{k}" for k in range(1, l + 1)]


def trajectory_csv(traj) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(trajectory_header(traj.n, traj.disturbance.shape[1]))
    for t, x, u, flag, d in zip(traj.times, traj.states, traj.inputs, traj.sample_flags, traj.disturbance):
        writer.writerow([_num(t)] + [_num(v) for v in x] + [_num(u), int(flag)] + [_num(v) for v in d])
    return buf.getvalue()


def write_trajectory_csv(traj, path: str) -> str:
    _ensure_dir(path)
    with open(path, "w", newline="") as f:
        f.write(trajectory_csv(traj))
    logger.debug(f"wrote {len(traj.times)} rows to {path}")
    return path


def predictions_csv(run) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["tau_i", "X1", "X2", "X3", "x1_true_at_tau_i_plus_tau", "x2_true_at_tau_i_plus_tau", "x3_true_at_tau_i_plus_tau"]
    )
    for rec in run.predictions:
        actual = [""] * 3 if rec.actual is None else [_num(v) for v in rec.actual]
        writer.writerow([_num(rec.tau_i)] + [_num(v) for v in rec.predicted] + actual)
    return buf.getvalue()


def write_predictions_csv(run, path: str) -> str:
    _ensure_dir(path)
    with open(path, "w", newline="") as f:
        f.write(predictions_csv(run))
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if np.isfinite(value) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(data, path: str) -> str:
    _ensure_dir(path)
    with open(path, "w") as f:
        json.dump(_jsonable(data), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def write_columns(traj, directory: str, prefix: str = "") -> list[str]:
    """One two-column file per state (t, x_k) plus one for the input (t, u)."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    columns = [(f"x{k + 1}", traj.states[:, k]) for k in range(traj.n)] + [("u", traj.inputs)]
    for name, values in columns:
        path = os.path.join(directory, f"{prefix}{name}.csv")
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["t", name])
            for t, v in zip(traj.times, values):
                writer.writerow([_num(t), _num(v)])
        paths.append(path)
    return paths
