"""Command-line workflow: demonstrate, fit, roll out, train, evaluate, plot.

Subcommands mirror the commissioning stages: `demo` records a synthetic
demonstration against a simulated world, `fit` turns it into a movement
primitive, `rollout` executes it through the admittance controller,
`train` learns the stiffness-adapting policy, `eval` builds success-rate
tables, and `plotdata` exports tidy per-figure CSVs plus rendered PNGs.

Exit codes are stable for scripting: 0 success, 2 usage/configuration
problems, 3 an episode ended with the error status, 4 training diverged.
"""

import argparse
import os
import pickle
import sys

import numpy as np

from . import dmp
from . import env
from . import plots
from . import sac
from . import textio
from .nets import Mlp, mlp_forward

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EPISODE_ERROR = 3
EXIT_DIVERGED = 4


class ConfigError(ValueError):
    pass


# Every key a run configuration may contain; anything else is rejected.
KNOWN_KEYS = {
    "seed",
    "world.kind", "world.k_env", "world.d_env", "world.noise_std",
    "world.offset", "world.geometry",
    "script", "demo.sample_rate",
    "dmp.n_basis", "dmp.alpha", "dmp.beta", "dmp.tau", "dmp.alpha_z", "dmp.z0",
    "gains.k_lin", "gains.k_ang",
    "episode.policy_period", "episode.jitter_x", "episode.jitter_z",
    "episode.pos_limit", "episode.rot_limit", "episode.force_limit",
    "episode.torque_limit", "episode.max_steps",
    "sac.alpha", "sac.lr_start", "sac.lr_end", "sac.gamma", "sac.tau_soft",
    "sac.batch_size", "sac.buffer_capacity", "sac.total_steps",
    "sac.start_steps", "sac.update_every", "sac.eval_every",
    "sac.eval_episodes", "sac.hidden", "sac.dtype",
    "eval.trials", "eval.conditions",
}


def load_config(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = textio.read_kv(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    unknown = set(doc) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return doc


def build_world(cfg: dict) -> env.ContactWorld:
    kind = cfg.get("world.kind")
    if kind is None:
        raise ConfigError("config is missing world.kind")
    geometry = cfg.get("world.geometry", {})
    makers = {
        "free-space": env.free_space,
        "wall-1dof": env.wall_world,
        "peg-in-hole": env.peg_world,
        "tape-channel": env.tape_world,
    }
    if kind not in makers:
        raise ConfigError(f"unknown world kind {kind!r}")
    try:
        world = makers[kind](**geometry) if kind != "free-space" else env.free_space()
    except TypeError as exc:
        raise ConfigError(f"bad world geometry for {kind}: {exc}") from exc
    if "world.k_env" in cfg:
        world.k_env = float(cfg["world.k_env"])
    if "world.d_env" in cfg:
        world.d_env = float(cfg["world.d_env"])
    world.noise_std = float(cfg.get("world.noise_std", 0.0))
    if "world.offset" in cfg:
        world = world.shifted(np.asarray(cfg["world.offset"], dtype=float))
    return world


def build_script(cfg: dict):
    rows = cfg.get("script")
    if not rows:
        raise ConfigError("config is missing script")
    script = []
    for row in rows:
        if len(row) != 10:
            raise ConfigError(
                "script rows must be [duration, px, py, pz, qw, qx, qy, qz, hold, press]")
        dur, px, py, pz, qw, qx, qy, qz, hold, press = row
        script.append(env.Waypoint([px, py, pz], [qw, qx, qy, qz],
                                   duration=dur, hold=hold, press=press))
    return script


def build_dmp_config(cfg: dict, demo: dmp.Demonstration, bfs: int = None) -> dmp.DmpConfig:
    kwargs = {"duration": demo.duration, "dt": demo.dt}
    for key, name in (("dmp.n_basis", "n_basis"), ("dmp.alpha", "alpha"),
                      ("dmp.beta", "beta"), ("dmp.tau", "tau"),
                      ("dmp.alpha_z", "alpha_z"), ("dmp.z0", "z0")):
        if key in cfg:
            kwargs[name] = cfg[key]
    if bfs is not None:
        kwargs["n_basis"] = int(bfs)
    return dmp.DmpConfig(**kwargs)


def build_episode_config(cfg: dict) -> env.EpisodeConfig:
    kwargs = {}
    for key, name in (("episode.policy_period", "policy_period"),
                      ("episode.jitter_x", "jitter_x"),
                      ("episode.jitter_z", "jitter_z"),
                      ("episode.pos_limit", "pos_limit"),
                      ("episode.rot_limit", "rot_limit"),
                      ("episode.force_limit", "force_limit"),
                      ("episode.torque_limit", "torque_limit"),
                      ("episode.max_steps", "max_steps")):
        if key in cfg:
            kwargs[name] = cfg[key]
    return env.EpisodeConfig(**kwargs)


def build_sac_config(cfg: dict) -> sac.SacConfig:
    kwargs = {}
    for key in list(cfg):
        if key.startswith("sac."):
            kwargs[key[4:]] = cfg[key]
    return sac.SacConfig(**kwargs)


# ---------------------------------------------------------------------------
# policy checkpoint (text document: layer shapes + weights)


def save_policy(path: str, net: Mlp) -> None:
    doc = {"format": "varimp-policy-1", "sizes": list(net.sizes),
           "dtype": str(net.dtype)}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        doc[f"w{i}"] = np.asarray(w, dtype=np.float64)
        doc[f"b{i}"] = np.asarray(b, dtype=np.float64)
    textio.write_kv(path, doc, header="stiffness policy network")


def load_policy(path: str) -> Mlp:
    doc = textio.read_kv(path)
    if doc.get("format") != "varimp-policy-1":
        raise ConfigError(f"{path}: not a policy checkpoint")
    net = Mlp(doc["sizes"], rng=None, dtype=np.dtype(doc.get("dtype", "float64")))
    net.weights = [np.array(doc[f"w{i}"], dtype=net.dtype) for i in range(net.n_layers)]
    net.biases = [np.array(doc[f"b{i}"], dtype=net.dtype) for i in range(net.n_layers)]
    return net


def policy_action(net: Mlp, obs) -> np.ndarray:
    out, _ = mlp_forward(net, np.asarray(obs, dtype=net.dtype))
    return np.tanh(out[0, :out.shape[1] // 2]).astype(float)


# ---------------------------------------------------------------------------
# episode drivers


def run_episode(episode: env.Episode, controller) -> dict:
    """Drive one episode; controller maps observation -> stiffness request.

    Returns the trace rows and the outcome summary.
    """
    obs = episode.reset()
    rows = []
    status = env.STATUS_RUNNING
    t = 0.0
    while status == env.STATUS_RUNNING:
        stiffness = controller(obs)
        obs, reward, status = episode.step(stiffness)
        t = episode.tick * episode.config.control_dt
        rows.append((t, list(obs[0:7]), list(obs[7:13]),
                     list(episode.ref.wrench(episode.tick).as_array()),
                     list(episode.stiffness), reward, status))
    return {
        "rows": rows,
        "status": status,
        "steps": episode.steps,
        "success": status == env.STATUS_FINISHED,
        "peak_force": episode.peak_force,
        "peak_force_err": episode.peak_force_err,
    }


def make_controller(args, cfg):
    """Fixed-gain or policy-driven stiffness source, per the arguments."""
    if getattr(args, "policy", None):
        if not os.path.exists(args.policy):
            raise ConfigError(f"policy file not found: {args.policy}")
        net = load_policy(args.policy)
        return lambda obs: env.decode_action(policy_action(net, obs))
    k_lin = np.asarray(cfg.get("gains.k_lin", [605.0] * 3), dtype=float)
    k_ang = np.asarray(cfg.get("gains.k_ang", [13.0] * 3), dtype=float)
    k6 = np.concatenate([k_lin, k_ang])
    return lambda obs: k6


# ---------------------------------------------------------------------------
# subcommands


def cmd_demo(args) -> int:
    cfg = load_config(args.config)
    world = build_world(cfg)
    script = build_script(cfg)
    try:
        demo = env.synth_demonstration(world, script,
                                       sample_rate=float(cfg.get("demo.sample_rate", 100.0)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "demo.csv")
    textio.save_demonstration(path, demo)
    peak = float(np.max(np.linalg.norm(demo.wrenches[:, :3], axis=1)))
    print(f"demo: {len(demo.t)} samples over {demo.duration:.2f} s -> {path}")
    print(f"peak |F| = {peak:.3f} N")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = load_config(args.config) if args.config else {}
    if not os.path.exists(args.demo):
        raise ConfigError(f"demonstration file not found: {args.demo}")
    try:
        demo = textio.load_demonstration(args.demo)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    model = dmp.fit(demo, build_dmp_config(cfg, demo, args.bfs))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "model.txt")
    textio.save_model(path, model)

    trace = dmp.rollout(model, dt=demo.dt, duration=demo.duration)
    n = min(len(demo.t), len(trace))
    pos_rmse = np.sqrt(np.mean((trace.positions[:n] - demo.positions[:n]) ** 2, axis=0))
    force_rmse = np.sqrt(np.mean((trace.forces[:n] - demo.wrenches[:n]) ** 2, axis=0))
    print(f"model: {model.config.n_basis} basis functions -> {path}")
    for name, val in zip(("px", "py", "pz"), pos_rmse):
        print(f"rmse {name} = {val:.6f} m")
    for name, val in zip(("fx", "fy", "fz", "mx", "my", "mz"), force_rmse):
        print(f"rmse {name} = {val:.6f}")
    return EXIT_OK


def _offset_world(world: env.ContactWorld, offset_mm: float) -> env.ContactWorld:
    if offset_mm:
        return world.shifted([offset_mm * 1e-3, 0.0, 0.0])
    return world


def cmd_rollout(args) -> int:
    cfg = load_config(args.config)
    if not os.path.exists(args.model):
        raise ConfigError(f"model file not found: {args.model}")
    model = textio.load_model(args.model)
    world = _offset_world(build_world(cfg), args.offset)
    episode = env.Episode(world, model, build_episode_config(cfg), seed=args.seed)
    controller = make_controller(args, cfg)
    result = run_episode(episode, controller)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "trace.csv")
    textio.save_trace(path, result["rows"])
    print(f"trace: {len(result['rows'])} policy steps -> {path}")
    print(f"status={result['status']} steps={result['steps']} "
          f"success={int(result['success'])} peak_dF={result['peak_force_err']:.3f}")
    if result["status"] == env.STATUS_ERROR:
        return EXIT_EPISODE_ERROR
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if not os.path.exists(args.model):
        raise ConfigError(f"model file not found: {args.model}")
    model = textio.load_model(args.model)
    world = build_world(cfg)
    ep_cfg = build_episode_config(cfg)
    sac_cfg = build_sac_config(cfg)
    seed = int(cfg.get("seed", 0)) if args.seed is None else args.seed
    os.makedirs(args.out, exist_ok=True)
    curve_path = os.path.join(args.out, "curve.csv")
    policy_path = os.path.join(args.out, "policy.txt")
    state_path = os.path.join(args.out, "train_state.pkl")

    def factory(env_seed):
        return env.Episode(world, model, ep_cfg, seed=env_seed)

    resume_state = None
    if args.resume:
        if not os.path.exists(args.resume):
            raise ConfigError(f"resume state not found: {args.resume}")
        with open(args.resume, "rb") as fh:
            resume_state = pickle.load(fh)

    def on_eval(step, mean_ret, rate, agent, state):
        print(f"step {step}: mean return {mean_ret:.1f}, success {rate:.2f}")

    try:
        result = sac.train(factory, sac_cfg, seed=seed,
                           resume_state=resume_state, on_eval=on_eval)
    except sac.TrainingDiverged as exc:
        textio.save_curve(curve_path, exc.curve)
        print(f"training diverged: {exc}", file=sys.stderr)
        print(f"partial curve -> {curve_path}", file=sys.stderr)
        return EXIT_DIVERGED

    textio.save_curve(curve_path, result.curve)
    save_policy(policy_path, result.agent.policy)
    with open(state_path, "wb") as fh:
        pickle.dump(result.final_state, fh)
    print(f"trained {result.steps} steps -> {policy_path}")
    print(f"curve ({len(result.curve)} evaluations) -> {curve_path}")
    return EXIT_OK


def _parse_conditions(cfg: dict, args) -> list:
    conditions = []
    if getattr(args, "gains", None):
        for part in args.gains.split(";"):
            name, _, vals = part.partition(":")
            kp, _, ko = vals.partition(",")
            conditions.append((name.strip(), float(kp), float(ko)))
    elif "eval.conditions" in cfg:
        for row in cfg["eval.conditions"]:
            conditions.append((str(row[0]), float(row[1]), float(row[2])))
    return conditions


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    if not os.path.exists(args.model):
        raise ConfigError(f"model file not found: {args.model}")
    model = textio.load_model(args.model)
    trials = args.trials if args.trials else int(cfg.get("eval.trials", 20))
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    base_world = build_world(cfg)
    ep_cfg = build_episode_config(cfg)
    conditions = _parse_conditions(cfg, args)
    if not conditions and not args.policy:
        raise ConfigError("nothing to evaluate: give --gains, --policy, "
                          "or eval.conditions in the config")
    policy_net = load_policy(args.policy) if args.policy else None

    rows = []
    offsets = args.offset if args.offset else [0.0]
    for offset in offsets:
        world = _offset_world(base_world, offset)
        suffix = f"+{offset:g}mm" if offset else ""

        def run_many(name, controller):
            episode = env.Episode(world, model, ep_cfg, seed=args.seed)
            successes, peaks = 0, []
            for _ in range(trials):
                result = run_episode(episode, controller)
                successes += result["success"]
                peaks.append(result["peak_force"])
            rows.append((name + suffix, successes, trials,
                         successes / trials, float(np.mean(peaks))))
            print(f"{name + suffix}: {successes}/{trials} "
                  f"({successes / trials:.0%}), mean peak |F| {np.mean(peaks):.2f} N")

        for name, kp, ko in conditions:
            k6 = np.array([kp] * 3 + [ko] * 3)
            run_many(name, lambda obs, k6=k6: k6)
        if policy_net is not None:
            run_many("sac", lambda obs: env.decode_action(policy_action(policy_net, obs)))

    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "eval.csv")
    textio.save_eval_table(path, rows)
    print(f"table -> {path}")
    return EXIT_OK


def cmd_plotdata(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    tidy_path = os.path.join(args.out, f"{args.kind}.csv")
    png_path = os.path.join(args.out, f"{args.kind}.png")
    tidy_rows = [("series", "t", "value")]

    def label_of(path):
        return os.path.splitext(os.path.basename(path))[0]

    try:
        if args.kind == "path3d":
            series = {}
            for path in args.inputs:
                t, pos, _, _ = textio._load_table(path, textio.TRAJECTORY_HEADER)
                series[label_of(path)] = pos
                for axis, name in enumerate("xyz"):
                    for k in range(len(t)):
                        tidy_rows.append((f"{label_of(path)}.p{name}", t[k], pos[k, axis]))
            plots.plot_path3d(series, png_path)

        elif args.kind == "force":
            series = {}
            for path in args.inputs:
                t, _, _, wrench = textio._load_table(path, textio.TRAJECTORY_HEADER)
                series[label_of(path)] = (t, wrench[:, args.axis])
                name = "fx fy fz mx my mz".split()[args.axis]
                for k in range(len(t)):
                    tidy_rows.append((f"{label_of(path)}.{name}", t[k], wrench[k, args.axis]))
            plots.plot_force(series, png_path)

        elif args.kind == "curve":
            rows = textio.load_curve(args.inputs[0])
            for step, ret, rate in rows:
                tidy_rows.append(("mean_return", step, ret))
                tidy_rows.append(("success_rate", step, rate))
            plots.plot_curve(rows, png_path)

        elif args.kind == "stiffness":
            series = {}
            for path in args.inputs:
                trace = textio.load_trace(path)
                err = np.linalg.norm(trace["f_ext"][:, :3] - trace["f_d"][:, :3], axis=1)
                series[label_of(path)] = {
                    "t": trace["t"], "k": trace["stiffness"][:, args.axis],
                    "force_err": err,
                }
                for k in range(len(trace["t"])):
                    tidy_rows.append((f"{label_of(path)}.k", trace["t"][k],
                                      trace["stiffness"][k, args.axis]))
                    tidy_rows.append((f"{label_of(path)}.force_err", trace["t"][k], err[k]))
            plots.plot_stiffness(series, png_path)
        else:
            raise ConfigError(f"unknown plot kind {args.kind!r}")
    except (ValueError, FileNotFoundError) as exc:
        raise ConfigError(str(exc)) from exc

    with open(tidy_path, "w") as fh:
        for series_name, t, value in tidy_rows:
            fh.write(f"{series_name},{t},{value}\n")
    print(f"tidy data -> {tidy_path}")
    print(f"figure -> {png_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="varimp",
        description="movement-primitive commissioning against simulated contact")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo", help="record a synthetic demonstration")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("fit", help="fit a movement primitive from a demonstration")
    p.add_argument("--demo", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--bfs", type=int, default=None, help="basis-function count")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("rollout", help="execute a fitted model against a world")
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--policy", default=None)
    p.add_argument("--offset", type=float, default=0.0, help="world shift in mm")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("train", help="train the stiffness-adaptation policy")
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", default=None, help="train_state.pkl to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="success-rate table over gain conditions")
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gains", default=None,
                   help='conditions like "low:50,1;middle:605,13;high:2000,40"')
    p.add_argument("--policy", default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--offset", type=float, action="append", default=None,
                   help="world shift in mm; repeat for several columns")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plotdata", help="tidy per-figure CSV plus rendered PNG")
    p.add_argument("--kind", required=True,
                   choices=("path3d", "force", "curve", "stiffness"))
    p.add_argument("--out", required=True)
    p.add_argument("--axis", type=int, default=2,
                   help="wrench/stiffness channel index (default z)")
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_plotdata)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
