"""End-to-end command-line contract: files, determinism, exit codes."""

import os
import subprocess
import sys

import numpy as np
import pytest

from varimp import dmp, textio
from varimp.admittance import Pose
from varimp import quat

WALL_CFG = """seed = 7
world.kind = "wall-1dof"
world.noise_std = 0.05
world.geometry = {"z": 0.0}
script = [[0,0,0,0.02,1,0,0,0,0,0],[1.5,0,0,0.0,1,0,0,0,0,0],[2.0,0,0,0.0,1,0,0,0,1.0,10.0],[0.8,0,0,0.006,1,0,0,0,0.3,0]]
dmp.n_basis = 200
gains.k_lin = [605,605,605]
gains.k_ang = [13,13,13]
episode.jitter_z = 0.0008
"""

FREE_CFG = """seed = 3
world.kind = "free-space"
script = [[0,0,0,0.1,1,0,0,0,0,0],[1.0,0.05,0.02,0.12,1,0,0,0,0.3,0]]
dmp.n_basis = 100
"""


def run_cli(*args):
    return subprocess.run([sys.executable, "-m", "varimp.cli", *args],
                          capture_output=True, text=True)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """demo + fitted model prepared once for the command tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.cfg"
    cfg.write_text(WALL_CFG)
    r = run_cli("demo", "--config", str(cfg), "--out", str(root))
    assert r.returncode == 0, r.stderr
    r = run_cli("fit", "--demo", str(root / "demo.csv"), "--config", str(cfg),
                "--out", str(root))
    assert r.returncode == 0, r.stderr
    return root, cfg


def test_demo_free_space_wrench_columns_zero(tmp_path):
    cfg = tmp_path / "free.cfg"
    cfg.write_text(FREE_CFG)
    r = run_cli("demo", "--config", str(cfg), "--out", str(tmp_path))
    assert r.returncode == 0, r.stderr
    demo = textio.load_demonstration(str(tmp_path / "demo.csv"))
    assert np.allclose(demo.wrenches, 0.0)
    assert "peak |F| = 0.000" in r.stdout


def test_demo_wall_press_peak_force(workspace):
    root, _ = workspace
    demo = textio.load_demonstration(str(root / "demo.csv"))
    peak = demo.wrenches[:, 2].max()
    assert abs(peak - 10.0) / 10.0 < 0.05


def test_demo_deterministic_bytes(workspace, tmp_path):
    root, cfg = workspace
    r = run_cli("demo", "--config", str(cfg), "--out", str(tmp_path))
    assert r.returncode == 0
    assert (tmp_path / "demo.csv").read_bytes() == (root / "demo.csv").read_bytes()


def test_fit_reports_rmse_and_round_trips(workspace, tmp_path):
    root, cfg = workspace
    model = textio.load_model(str(root / "model.txt"))
    assert model.config.n_basis == 200
    # byte-identical re-fit
    r = run_cli("fit", "--demo", str(root / "demo.csv"), "--config", str(cfg),
                "--out", str(tmp_path))
    assert r.returncode == 0
    assert (tmp_path / "model.txt").read_bytes() == (root / "model.txt").read_bytes()
    # bit-exact serialization round trip
    path2 = tmp_path / "model2.txt"
    textio.save_model(str(path2), model)
    assert path2.read_bytes() == (root / "model.txt").read_bytes()


def test_fit_bfs_flag(workspace, tmp_path):
    root, cfg = workspace
    r = run_cli("fit", "--demo", str(root / "demo.csv"), "--config", str(cfg),
                "--out", str(tmp_path), "--bfs", "50")
    assert r.returncode == 0
    assert textio.load_model(str(tmp_path / "model.txt")).config.n_basis == 50


def test_rollout_trace_and_determinism(workspace, tmp_path):
    root, cfg = workspace
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    for out in (out1, out2):
        r = run_cli("rollout", "--model", str(root / "model.txt"), "--config",
                    str(cfg), "--out", str(out), "--seed", "5")
        assert r.returncode == 0, r.stderr
        assert "status=" in r.stdout
    assert (out1 / "trace.csv").read_bytes() == (out2 / "trace.csv").read_bytes()
    trace = textio.load_trace(str(out1 / "trace.csv"))
    assert trace["pose"].shape[1] == 7
    assert trace["status"][-1] in ("finished", "terminated", "error")
    assert all(s == "running" for s in trace["status"][:-1])


def test_rollout_missing_policy_exits_2(workspace, tmp_path):
    root, cfg = workspace
    r = run_cli("rollout", "--model", str(root / "model.txt"), "--config",
                str(cfg), "--out", str(tmp_path), "--policy", "/nonexistent.txt")
    assert r.returncode == 2


def test_bad_config_exits_2(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("world.kind = \"wall-1dof\"\nnot.a.key = 1\n")
    r = run_cli("demo", "--config", str(cfg), "--out", str(tmp_path))
    assert r.returncode == 2
    assert "unknown config keys" in r.stderr
    r = run_cli("demo", "--config", str(tmp_path / "missing.cfg"),
                "--out", str(tmp_path))
    assert r.returncode == 2


def test_rollout_error_status_exits_3(tmp_path):
    # fast dive into an extremely stiff wall: the controller acceleration
    # guard trips and the episode ends with the error label
    demo_cfg = tmp_path / "demo.cfg"
    demo_cfg.write_text(
        'seed = 1\nworld.kind = "free-space"\n'
        "script = [[0,0,0,0.02,1,0,0,0,0,0],[0.6,0,0,0.02,1,0,0,0,0,0],"
        "[0.12,0,0,-0.03,1,0,0,0,0.5,0]]\n"
        "dmp.n_basis = 100\n")
    r = run_cli("demo", "--config", str(demo_cfg), "--out", str(tmp_path))
    assert r.returncode == 0, r.stderr
    r = run_cli("fit", "--demo", str(tmp_path / "demo.csv"),
                "--config", str(demo_cfg), "--out", str(tmp_path))
    assert r.returncode == 0, r.stderr
    roll_cfg = tmp_path / "roll.cfg"
    roll_cfg.write_text(
        'seed = 1\nworld.kind = "wall-1dof"\nworld.geometry = {"z": 0.0}\n'
        "world.k_env = 1000000000.0\nworld.d_env = 0.0\n"
        "episode.force_limit = 1000000000.0\nepisode.pos_limit = 1000.0\n"
        "gains.k_lin = [2000,2000,2000]\ngains.k_ang = [40,40,40]\n")
    r = run_cli("rollout", "--model", str(tmp_path / "model.txt"),
                "--config", str(roll_cfg), "--out", str(tmp_path))
    assert r.returncode == 3
    assert "status=error" in r.stdout


def test_train_eval_plot_pipeline(workspace, tmp_path):
    root, _ = workspace
    cfg = tmp_path / "train.cfg"
    cfg.write_text(WALL_CFG + (
        "sac.total_steps = 260\nsac.start_steps = 120\nsac.eval_every = 130\n"
        "sac.eval_episodes = 1\nsac.batch_size = 32\nsac.update_every = 4\n"
        "sac.hidden = [32, 32, 32]\nsac.buffer_capacity = 5000\n"))
    out1 = tmp_path / "t1"
    r = run_cli("train", "--model", str(root / "model.txt"), "--config", str(cfg),
                "--out", str(out1), "--seed", "9")
    assert r.returncode == 0, r.stderr
    assert (out1 / "policy.txt").exists()
    curve = textio.load_curve(str(out1 / "curve.csv"))
    assert len(curve) >= 1

    # byte-identical re-run
    out2 = tmp_path / "t2"
    r = run_cli("train", "--model", str(root / "model.txt"), "--config", str(cfg),
                "--out", str(out2), "--seed", "9")
    assert r.returncode == 0
    assert (out1 / "policy.txt").read_bytes() == (out2 / "policy.txt").read_bytes()
    assert (out1 / "curve.csv").read_bytes() == (out2 / "curve.csv").read_bytes()

    # rollout with the policy
    r = run_cli("rollout", "--model", str(root / "model.txt"), "--config",
                str(cfg), "--out", str(tmp_path), "--policy",
                str(out1 / "policy.txt"), "--seed", "4")
    assert r.returncode in (0, 3)

    # eval table with fixed gains and the policy, plus offset variant
    r = run_cli("eval", "--model", str(root / "model.txt"), "--config", str(cfg),
                "--out", str(tmp_path), "--gains", "low:50,1;high:2000,40",
                "--policy", str(out1 / "policy.txt"), "--trials", "3")
    assert r.returncode == 0, r.stderr
    table = (tmp_path / "eval.csv").read_text().strip().splitlines()
    assert table[0] == "condition,successes,trials,rate,mean_peak_force"
    assert len(table) == 4

    # plotdata: curve + stiffness figure and tidy CSV
    r = run_cli("plotdata", "--kind", "curve", "--out", str(tmp_path),
                str(out1 / "curve.csv"))
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "curve.png").exists()
    assert (tmp_path / "curve.csv").exists()


def test_train_resume_continuation(workspace, tmp_path):
    root, _ = workspace
    cfg = tmp_path / "train.cfg"
    cfg.write_text(WALL_CFG + (
        "sac.total_steps = 390\nsac.start_steps = 120\nsac.eval_every = 130\n"
        "sac.eval_episodes = 1\nsac.batch_size = 32\nsac.update_every = 4\n"
        "sac.hidden = [32, 32, 32]\nsac.buffer_capacity = 5000\n"))
    full = tmp_path / "full"
    r = run_cli("train", "--model", str(root / "model.txt"), "--config", str(cfg),
                "--out", str(full), "--seed", "11")
    assert r.returncode == 0, r.stderr

    # interrupt simulation: re-run a shorter budget, then resume to the total
    short_cfg = tmp_path / "short.cfg"
    short_cfg.write_text(cfg.read_text().replace(
        "sac.total_steps = 390", "sac.total_steps = 130"))
    part = tmp_path / "part"
    r = run_cli("train", "--model", str(root / "model.txt"), "--config",
                str(short_cfg), "--out", str(part), "--seed", "11")
    assert r.returncode == 0, r.stderr
    # NOTE: resume must use the full-horizon config (the learning-rate
    # schedule depends on total_steps)
    resumed = tmp_path / "resumed"
    r = run_cli("train", "--model", str(root / "model.txt"), "--config", str(cfg),
                "--out", str(resumed), "--seed", "11",
                "--resume", str(part / "train_state.pkl"))
    assert r.returncode == 0, r.stderr
    # the schedules differ over the first segment, so compare the resumed
    # run against a full run whose first segment used the short schedule:
    # identical continuation is asserted at the sac.train level in
    # test_sac; here the files must simply be complete and loadable
    assert textio.load_curve(str(resumed / "curve.csv"))
    assert (resumed / "policy.txt").exists()


def test_plotdata_schema_mismatch_exits_2(workspace, tmp_path):
    root, _ = workspace
    r = run_cli("plotdata", "--kind", "stiffness", "--out", str(tmp_path),
                str(root / "demo.csv"))
    assert r.returncode == 2


def test_plotdata_path3d_and_force(workspace, tmp_path):
    root, _ = workspace
    r = run_cli("plotdata", "--kind", "path3d", "--out", str(tmp_path),
                str(root / "demo.csv"))
    assert r.returncode == 0, r.stderr
    r = run_cli("plotdata", "--kind", "force", "--out", str(tmp_path),
                "--axis", "2", str(root / "demo.csv"))
    assert r.returncode == 0, r.stderr
    rows = (tmp_path / "force.csv").read_text().strip().splitlines()
    assert rows[0] == "series,t,value"
    assert len(rows) > 100


def test_trajectory_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    t = np.arange(0, 1.0, 0.01)
    pos = rng.normal(0, 0.05, (len(t), 3))
    quats = np.array([quat.random_unit(rng) for _ in t])
    quats = quat.sign_align(quats)
    wr = rng.normal(0, 5.0, (len(t), 6))
    demo = dmp.Demonstration(t, pos, quats, wr)
    path = tmp_path / "demo.csv"
    textio.save_demonstration(str(path), demo)
    back = textio.load_demonstration(str(path))
    assert np.array_equal(back.t, demo.t)
    assert np.array_equal(back.positions, demo.positions)
    assert np.array_equal(back.quats, demo.quats)
    assert np.array_equal(back.wrenches, demo.wrenches)
