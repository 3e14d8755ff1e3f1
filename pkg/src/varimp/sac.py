"""Soft actor-critic over stiffness actions.

Maps [position, orientation quaternion, external wrench] observations to
normalized stiffness actions with a tanh-squashed Gaussian policy, trained
off-policy against twin critics with entropy regularization.  Everything
runs on the numpy networks in :mod:`varimp.nets`; no autograd framework.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import quat
from .nets import Adam, Mlp, mlp_backward, mlp_forward, mlp_input_grad

OBS_DIM = 13
ACT_DIM = 6

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0

# Tracking-error limits the reward normalizes by: position (m),
# orientation (rad), force (N), torque (N m).
DEFAULT_LIMITS = (0.01, 0.1, 3.0, 1.0)
WEIGHT_GOAL = 1.0
WEIGHT_TRACK = 0.5

_SQRT3 = math.sqrt(3.0)


class TrainingDiverged(RuntimeError):
    """A loss went non-finite; carries the learning curve collected so far."""

    def __init__(self, message, curve=None):
        super().__init__(message)
        self.curve = curve or []


def completion_term(status: str) -> float:
    """Sparse episode-outcome bonus: finished 100, terminated -50, error -100."""
    table = {"finished": 100.0, "terminated": -50.0, "error": -100.0, "running": 0.0}
    if status not in table:
        raise ValueError(f"unknown episode status {status!r}")
    return table[status]


def tracking_term(x: float) -> float:
    """L(x) = 1 - x/sqrt(3), clamped into [0, 1]; x is a normalized error."""
    return max(0.0, min(1.0, 1.0 - x / _SQRT3))


def reward(obs, ref_pose, ref_wrench, status: str, limits=DEFAULT_LIMITS) -> float:
    """Tracking reward plus completion term.

    obs is the 13-vector observation [x, q, F_ext]; errors against the
    reference are normalized by the abort limits before shaping.  Perfect
    tracking while running scores 4 * 0.5 * L(0) = 2.
    """
    obs = np.asarray(obs, dtype=float)
    e_pos, e_rot, e_force, e_torque = limits
    pos_err = float(np.linalg.norm(obs[0:3] - ref_pose.p)) / e_pos
    rot_err = quat.orientation_error(obs[3:7], ref_pose.q) / e_rot
    force_err = float(np.linalg.norm(obs[7:10] - ref_wrench.f)) / e_force
    torque_err = float(np.linalg.norm(obs[10:13] - ref_wrench.m)) / e_torque
    return (WEIGHT_GOAL * completion_term(status)
            + WEIGHT_TRACK * (tracking_term(pos_err) + tracking_term(rot_err)
                              + tracking_term(force_err) + tracking_term(torque_err)))


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform seeded sampling."""

    def __init__(self, capacity: int, obs_dim: int = OBS_DIM, act_dim: int = ACT_DIM,
                 seed: int = 0):
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim), dtype=np.float64)
        self.act = np.zeros((self.capacity, act_dim), dtype=np.float64)
        self.rew = np.zeros(self.capacity, dtype=np.float64)
        self.nxt = np.zeros((self.capacity, obs_dim), dtype=np.float64)
        self.done = np.zeros(self.capacity, dtype=np.float64)
        self.ptr = 0
        self.size = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return self.size

    def store(self, obs, act, rew, nxt, done) -> None:
        i = self.ptr
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = rew
        self.nxt[i] = nxt
        self.done[i] = float(done)
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int) -> dict:
        if self.size < batch_size:
            raise ValueError("not enough transitions to sample a batch")
        idx = self.rng.integers(0, self.size, size=batch_size)
        return {"obs": self.obs[idx], "act": self.act[idx], "rew": self.rew[idx],
                "nxt": self.nxt[idx], "done": self.done[idx]}


@dataclass
class SacConfig:
    """Entropy weight, schedule and the usual off-policy knobs."""

    alpha: float = 0.05
    lr_start: float = 3.3e-3
    lr_end: float = 3e-4
    gamma: float = 0.99
    tau_soft: float = 0.005
    batch_size: int = 256
    buffer_capacity: int = 100_000
    total_steps: int = 40_000
    start_steps: int = 1_000      # uniform-random warmup actions
    update_every: int = 1         # env steps per gradient update
    eval_every: int = 2_000       # env steps between evaluation passes
    eval_episodes: int = 3
    hidden: tuple = (256, 256, 256)
    dtype: str = "float32"        # training dtype; checks run the nets in float64

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0) or not (0.0 < self.tau_soft <= 1.0):
            raise ValueError("gamma in (0,1) and tau_soft in (0,1] required")
        if self.alpha < 0.0:
            raise ValueError("alpha must be non-negative")

    def learning_rate(self, step: int) -> float:
        frac = min(1.0, max(0.0, step / max(1, self.total_steps)))
        return self.lr_start + frac * (self.lr_end - self.lr_start)


class SacAgent:
    """Tanh-Gaussian policy with twin critics and slow-moving targets."""

    def __init__(self, config: SacConfig, rng: np.random.Generator,
                 obs_dim: int = OBS_DIM, act_dim: int = ACT_DIM):
        self.config = config
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        dtype = np.dtype(config.dtype)
        hid = tuple(config.hidden)
        self.policy = Mlp((obs_dim, *hid, 2 * act_dim), rng, dtype)
        self.q1 = Mlp((obs_dim + act_dim, *hid, 1), rng, dtype)
        self.q2 = Mlp((obs_dim + act_dim, *hid, 1), rng, dtype)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.opt_policy = Adam(self.policy)
        self.opt_q1 = Adam(self.q1)
        self.opt_q2 = Adam(self.q2)

    # -- policy -----------------------------------------------------------

    def _dist(self, obs_batch):
        out, cache = mlp_forward(self.policy, obs_batch)
        mean = out[:, :self.act_dim]
        log_std_raw = out[:, self.act_dim:]
        log_std = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std, log_std_raw, cache

    def sample_action(self, obs, rng: np.random.Generator):
        """One stochastic action in [-1, 1]^6 with its log-probability."""
        mean, log_std, _, _ = self._dist(np.asarray(obs, dtype=self.policy.dtype))
        std = np.exp(log_std)
        eps = rng.standard_normal(self.act_dim)
        u = mean[0] + std[0] * eps
        a = np.tanh(u)
        logp = float(np.sum(-0.5 * eps ** 2 - log_std[0] - 0.5 * math.log(2 * math.pi)
                            - np.log(1.0 - a ** 2 + 1e-6)))
        return a.astype(float), logp

    def mean_action(self, obs) -> np.ndarray:
        mean, _, _, _ = self._dist(np.asarray(obs, dtype=self.policy.dtype))
        return np.tanh(mean[0]).astype(float)

    # -- updates ----------------------------------------------------------

    def _critic_targets(self, batch, rng):
        dtype = self.policy.dtype
        nxt = batch["nxt"].astype(dtype)
        mean, log_std, _, _ = self._dist(nxt)
        std = np.exp(log_std)
        eps = rng.standard_normal(mean.shape).astype(dtype)
        u = mean + std * eps
        a2 = np.tanh(u)
        logp = np.sum(-0.5 * eps ** 2 - log_std - 0.5 * math.log(2 * math.pi)
                      - np.log(1.0 - a2 ** 2 + 1e-6), axis=1)
        q_in = np.concatenate([nxt, a2], axis=1)
        q1t, _ = mlp_forward(self.q1_target, q_in)
        q2t, _ = mlp_forward(self.q2_target, q_in)
        q_min = np.minimum(q1t[:, 0], q2t[:, 0])
        soft_value = q_min - self.config.alpha * logp
        return (batch["rew"].astype(dtype)
                + self.config.gamma * (1.0 - batch["done"].astype(dtype)) * soft_value)

    def update(self, batch, lr: float, rng: np.random.Generator) -> dict:
        """One gradient step on both critics and the actor, then soft targets."""
        cfg = self.config
        dtype = self.policy.dtype
        obs = batch["obs"].astype(dtype)
        act = batch["act"].astype(dtype)
        n = len(obs)

        y = self._critic_targets(batch, rng)
        q_in = np.concatenate([obs, act], axis=1)
        losses = {}
        for name, net, opt in (("q1", self.q1, self.opt_q1),
                               ("q2", self.q2, self.opt_q2)):
            q, cache = mlp_forward(net, q_in)
            err = q[:, 0] - y
            losses[name] = float(np.mean(err ** 2))
            gout = (2.0 / n) * err[:, None]
            grads, _ = mlp_backward(net, cache, gout)
            opt.update(net, grads, lr)

        # actor: ascend min-critic plus entropy, via the reparametrized sample
        mean, log_std, log_std_raw, pol_cache = self._dist(obs)
        std = np.exp(log_std)
        eps = rng.standard_normal(mean.shape).astype(dtype)
        u = mean + std * eps
        a_pi = np.tanh(u)
        logp = np.sum(-0.5 * eps ** 2 - log_std - 0.5 * math.log(2 * math.pi)
                      - np.log(1.0 - a_pi ** 2 + 1e-6), axis=1)
        q_in_pi = np.concatenate([obs, a_pi], axis=1)
        q1v, c1 = mlp_forward(self.q1, q_in_pi)
        q2v, c2 = mlp_forward(self.q2, q_in_pi)
        pick1 = (q1v[:, 0] <= q2v[:, 0])[:, None].astype(dtype)
        # dLoss/da through the chosen critic (loss = mean(alpha*logp - q_min))
        gin1 = mlp_input_grad(self.q1, c1, -pick1 / n)
        gin2 = mlp_input_grad(self.q2, c2, -(1.0 - pick1) / n)
        dq_da = (gin1 + gin2)[:, self.obs_dim:]
        # entropy piece: d(alpha*logp)/da = alpha * 2a/(1 - a^2 + eps_c)
        da = dq_da + (cfg.alpha / n) * 2.0 * a_pi / (1.0 - a_pi ** 2 + 1e-6)
        du = da * (1.0 - a_pi ** 2)
        dmean = du
        dlogstd = du * std * eps - (cfg.alpha / n)
        dlogstd = dlogstd * ((log_std_raw > LOG_STD_MIN) & (log_std_raw < LOG_STD_MAX))
        gout_pol = np.concatenate([dmean, dlogstd], axis=1)
        grads_pol, _ = mlp_backward(self.policy, pol_cache, gout_pol)
        self.opt_policy.update(self.policy, grads_pol, lr)
        losses["actor"] = float(np.mean(cfg.alpha * logp - np.minimum(q1v[:, 0], q2v[:, 0])))
        losses["entropy"] = float(-np.mean(logp))

        if not all(math.isfinite(v) for v in losses.values()):
            raise TrainingDiverged(f"non-finite loss: {losses}")

        self._soft_update(self.q1_target, self.q1, cfg.tau_soft)
        self._soft_update(self.q2_target, self.q2, cfg.tau_soft)
        return losses

    @staticmethod
    def _soft_update(target: Mlp, online: Mlp, tau: float) -> None:
        for pt, po in zip(target.parameters(), online.parameters()):
            pt *= (1.0 - tau)
            pt += tau * po


@dataclass
class TrainResult:
    agent: SacAgent
    curve: list                  # rows (step, mean_return, success_rate)
    steps: int
    final_state: dict = None     # resumable episode-boundary snapshot


def evaluate(agent: SacAgent, episode, n_episodes: int) -> tuple:
    """Deterministic-policy evaluation: (mean return, success rate)."""
    returns, successes = [], 0
    for _ in range(n_episodes):
        obs = episode.reset()
        total = 0.0
        status = "running"
        while status == "running":
            a = agent.mean_action(obs)
            obs, r, status = episode.step_action(a)
            total += r
        returns.append(total)
        if status == "finished":
            successes += 1
    return float(np.mean(returns)), successes / n_episodes


def train(env_factory, config: SacConfig, seed: int = 0,
          resume_state: dict = None, on_eval=None) -> TrainResult:
    """Run the off-policy loop for total_steps environment steps.

    env_factory(seed) must build an episode object exposing reset() and
    step_action(a).  One master generator seeds everything, so a given
    (config, seed) replays bit-identically.  Training always stops at an
    episode boundary, which is also where resumable state is well defined.
    """
    master = np.random.default_rng(seed)
    env_seed = int(master.integers(2 ** 31))
    eval_seed = int(master.integers(2 ** 31))
    buf_seed = int(master.integers(2 ** 31))
    env = env_factory(env_seed)
    eval_env = env_factory(eval_seed)

    agent = SacAgent(config, master)
    buf = ReplayBuffer(config.buffer_capacity, seed=buf_seed)
    curve = []
    step = 0

    if resume_state is not None:
        _load_train_state(resume_state, agent, buf, master, env, eval_env)
        curve = list(resume_state["curve"])
        step = int(resume_state["step"])

    next_eval = (step // config.eval_every + 1) * config.eval_every

    while step < config.total_steps:
        obs = env.reset()
        status = "running"
        while status == "running":
            if step < config.start_steps:
                a = master.uniform(-1.0, 1.0, ACT_DIM)
            else:
                a, _ = agent.sample_action(obs, master)
            nxt, r, status = env.step_action(a)
            buf.store(obs, a, r, nxt, float(status != "running"))
            obs = nxt
            step += 1
            if (len(buf) >= config.batch_size and step >= config.start_steps
                    and step % config.update_every == 0):
                try:
                    agent.update(buf.sample(config.batch_size),
                                 config.learning_rate(step), master)
                except TrainingDiverged as exc:
                    exc.curve = curve
                    raise
        # episode boundary: evaluate / stop decisions happen here
        if step >= next_eval:
            mean_ret, rate = evaluate(agent, eval_env, config.eval_episodes)
            curve.append((step, mean_ret, rate))
            next_eval = (step // config.eval_every + 1) * config.eval_every
            if on_eval is not None:
                on_eval(step, mean_ret, rate, agent, _train_state(
                    agent, buf, master, env, eval_env, step, curve))

    return TrainResult(agent, curve, step,
                       _train_state(agent, buf, master, env, eval_env, step, curve))


# ---------------------------------------------------------------------------
# resumable state (episode-boundary snapshots, plain arrays only)


def _net_state(net: Mlp) -> dict:
    return {"weights": [w.copy() for w in net.weights],
            "biases": [b.copy() for b in net.biases]}


def _load_net(net: Mlp, state: dict) -> None:
    net.weights = [np.asarray(w, dtype=net.dtype) for w in state["weights"]]
    net.biases = [np.asarray(b, dtype=net.dtype) for b in state["biases"]]


def _train_state(agent, buf, master, env, eval_env, step, curve) -> dict:
    return {
        "step": step,
        "curve": list(curve),
        "nets": {
            "policy": _net_state(agent.policy),
            "q1": _net_state(agent.q1),
            "q2": _net_state(agent.q2),
            "q1_target": _net_state(agent.q1_target),
            "q2_target": _net_state(agent.q2_target),
        },
        "opts": {
            "policy": agent.opt_policy.state(),
            "q1": agent.opt_q1.state(),
            "q2": agent.opt_q2.state(),
        },
        "buffer": {
            "obs": buf.obs.copy(), "act": buf.act.copy(), "rew": buf.rew.copy(),
            "nxt": buf.nxt.copy(), "done": buf.done.copy(),
            "ptr": buf.ptr, "size": buf.size,
        },
        "rng": {
            "master": master.bit_generator.state,
            "env": env.rng.bit_generator.state,
            "eval": eval_env.rng.bit_generator.state,
            "buf": buf.rng.bit_generator.state,
        },
    }


def _load_train_state(state, agent, buf, master, env, eval_env) -> None:
    nets = state["nets"]
    _load_net(agent.policy, nets["policy"])
    _load_net(agent.q1, nets["q1"])
    _load_net(agent.q2, nets["q2"])
    _load_net(agent.q1_target, nets["q1_target"])
    _load_net(agent.q2_target, nets["q2_target"])
    agent.opt_policy.load_state(state["opts"]["policy"])
    agent.opt_q1.load_state(state["opts"]["q1"])
    agent.opt_q2.load_state(state["opts"]["q2"])
    srcb = state["buffer"]
    buf.obs[:] = srcb["obs"]
    buf.act[:] = srcb["act"]
    buf.rew[:] = srcb["rew"]
    buf.nxt[:] = srcb["nxt"]
    buf.done[:] = srcb["done"]
    buf.ptr = int(srcb["ptr"])
    buf.size = int(srcb["size"])
    master.bit_generator.state = state["rng"]["master"]
    env.rng.bit_generator.state = state["rng"]["env"]
    eval_env.rng.bit_generator.state = state["rng"]["eval"]
    buf.rng.bit_generator.state = state["rng"]["buf"]
