"""Flat-file formats: key-value documents, trajectory and trace CSV.

Everything is plain text.  Floats are written with ``repr``-style shortest
round-trip formatting (via json), so parse(serialize(x)) == x bit-exactly
and re-running a seeded command produces byte-identical files.
"""

import json

import numpy as np

from .admittance import Pose
from . import dmp

TRAJECTORY_HEADER = "t,px,py,pz,qw,qx,qy,qz,fx,fy,fz,mx,my,mz"
TRACE_HEADER = ("t,px,py,pz,qw,qx,qy,qz,"
                "fx,fy,fz,mx,my,mz,"
                "fdx,fdy,fdz,mdx,mdy,mdz,"
                "kx,ky,kz,krx,kry,krz,reward,status")
CURVE_HEADER = "step,mean_return,success_rate"


def _fmt(x) -> str:
    """Shortest round-trip decimal form of a float."""
    return json.dumps(float(x))


# ---------------------------------------------------------------------------
# key = <json> documents


def write_kv(path: str, mapping: dict, header: str = None) -> None:
    lines = []
    if header:
        lines.append(f"# {header}")
    for key, value in mapping.items():
        if isinstance(value, np.ndarray):
            value = value.tolist()
        lines.append(f"{key} = {json.dumps(value)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_kv(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            try:
                out[key.strip()] = json.loads(value.strip())
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: bad value: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# fitted models


def save_model(path: str, model: dmp.DmpModel) -> None:
    cfg = model.config
    doc = {
        "format": "varimp-model-1",
        "n_basis": cfg.n_basis,
        "alpha": cfg.alpha,
        "beta": cfg.beta,
        "tau": cfg.tau,
        "alpha_z": cfg.alpha_z,
        "z0": cfg.z0,
        "dt": cfg.dt,
        "duration": cfg.duration,
        "centers": model.grid.centers,
        "widths": model.grid.widths,
        "w_pos": model.w_pos,
        "w_rot": model.w_rot,
        "w_force": model.w_force,
        "start_pos": model.start.p,
        "start_rot": model.start.q,
        "goal_pos": model.goal_pos,
        "goal_rot": model.goal_rot,
    }
    write_kv(path, doc, header="fitted movement primitive")


def load_model(path: str) -> dmp.DmpModel:
    doc = read_kv(path)
    if doc.get("format") != "varimp-model-1":
        raise ValueError(f"{path}: not a model file")
    cfg = dmp.DmpConfig(
        n_basis=int(doc["n_basis"]), alpha=doc["alpha"], beta=doc["beta"],
        tau=doc["tau"], alpha_z=doc["alpha_z"], z0=doc["z0"],
        dt=doc["dt"], duration=doc["duration"])
    grid = dmp.BasisGrid(np.array(doc["centers"]), np.array(doc["widths"]))
    start = Pose(np.array(doc["start_pos"]), np.array(doc["start_rot"]))
    return dmp.DmpModel(cfg, grid,
                        np.array(doc["w_pos"]), np.array(doc["w_rot"]),
                        np.array(doc["w_force"]), start,
                        np.array(doc["goal_pos"]), np.array(doc["goal_rot"]))


# ---------------------------------------------------------------------------
# demonstrations / reference trajectories


def save_trajectory(path: str, t, positions, quats, wrenches) -> None:
    t = np.asarray(t)
    rows = [TRAJECTORY_HEADER]
    for k in range(len(t)):
        vals = ([t[k]] + list(positions[k]) + list(quats[k]) + list(wrenches[k]))
        rows.append(",".join(_fmt(v) for v in vals))
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")


def save_demonstration(path: str, demo: dmp.Demonstration) -> None:
    save_trajectory(path, demo.t, demo.positions, demo.quats, demo.wrenches)


def load_demonstration(path: str) -> dmp.Demonstration:
    t, pos, quats, wrench = _load_table(path, TRAJECTORY_HEADER)
    norms = np.linalg.norm(quats, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError(f"{path}: non-unit quaternion rows")
    return dmp.Demonstration(t, pos, quats, wrench)


def _load_table(path: str, expected_header: str):
    with open(path) as fh:
        header = fh.readline().strip()
        if header != expected_header:
            raise ValueError(f"{path}: unexpected header {header!r}")
        data = []
        for lineno, line in enumerate(fh, 2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(expected_header.split(",")):
                raise ValueError(f"{path}:{lineno}: wrong column count")
            data.append([float(v) for v in parts])
    arr = np.array(data)
    if arr.size == 0:
        raise ValueError(f"{path}: empty table")
    return arr[:, 0], arr[:, 1:4], arr[:, 4:8], arr[:, 8:14]


# ---------------------------------------------------------------------------
# episode traces


def save_trace(path: str, rows) -> None:
    """rows: iterable of (t, pose7, f_ext6, f_d6, k6, reward, status)."""
    lines = [TRACE_HEADER]
    for t, pose7, f_ext, f_d, k6, reward, status in rows:
        vals = [t, *pose7, *f_ext, *f_d, *k6, reward]
        lines.append(",".join(_fmt(v) for v in vals) + f",{status}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_trace(path: str) -> dict:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != TRACE_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        numeric, statuses = [], []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            numeric.append([float(v) for v in parts[:-1]])
            statuses.append(parts[-1])
    arr = np.array(numeric)
    if arr.size == 0:
        raise ValueError(f"{path}: empty trace")
    return {
        "t": arr[:, 0],
        "pose": arr[:, 1:8],
        "f_ext": arr[:, 8:14],
        "f_d": arr[:, 14:20],
        "stiffness": arr[:, 20:26],
        "reward": arr[:, 26],
        "status": statuses,
    }


# ---------------------------------------------------------------------------
# learning curves / evaluation tables


def save_curve(path: str, rows) -> None:
    """rows: iterable of (step, mean_return, success_rate)."""
    lines = [CURVE_HEADER]
    for step, ret, rate in rows:
        lines.append(f"{int(step)},{_fmt(ret)},{_fmt(rate)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_curve(path: str):
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CURVE_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        rows = []
        for line in fh:
            line = line.strip()
            if line:
                step, ret, rate = line.split(",")
                rows.append((int(step), float(ret), float(rate)))
    return rows


def save_eval_table(path: str, rows) -> None:
    """rows: iterable of (condition, successes, trials, rate, mean_peak_force)."""
    lines = ["condition,successes,trials,rate,mean_peak_force"]
    for cond, succ, trials, rate, peak in rows:
        lines.append(f"{cond},{int(succ)},{int(trials)},{_fmt(rate)},{_fmt(peak)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
