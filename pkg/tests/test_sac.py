"""Networks, replay, reward shaping, and the actor-critic update."""

import math

import numpy as np
import pytest

from varimp import env, dmp, quat, sac
from varimp.admittance import Pose, Wrench
from varimp.nets import Adam, Mlp, mlp_backward, mlp_forward, mlp_input_grad


# ---------------------------------------------------------------------------
# networks


def test_zero_weights_zero_output():
    net = Mlp((5, 8, 3), rng=None)
    y, _ = mlp_forward(net, np.ones((2, 5)))
    assert np.allclose(y, 0.0)


def test_single_linear_layer_reproduces_input():
    net = Mlp((4, 4), rng=None)
    net.weights[0] = np.eye(4)
    x = np.array([[0.3, -0.2, 1.5, 0.0]])
    y, _ = mlp_forward(net, x)
    assert np.allclose(y, x)


def test_forward_rejects_wrong_width():
    net = Mlp((4, 4), rng=None)
    with pytest.raises(ValueError):
        mlp_forward(net, np.ones((1, 5)))


def gradient_check(net, rng, n_coords=12, step=1e-5):
    x = rng.normal(0.0, 1.0, (1, net.sizes[0]))
    sel = rng.normal(0.0, 1.0, (1, net.sizes[-1]))
    _, cache = mlp_forward(net, x)
    grads, _ = mlp_backward(net, cache, sel)

    def loss():
        y, _ = mlp_forward(net, x)
        return float((y * sel).sum())

    worst = 0.0
    for _ in range(n_coords):
        layer = int(rng.integers(0, net.n_layers))
        pick_bias = rng.random() < 0.2
        target = net.biases[layer] if pick_bias else net.weights[layer]
        grad = grads[layer][1] if pick_bias else grads[layer][0]
        idx = tuple(int(rng.integers(0, s)) for s in target.shape)
        orig = target[idx]
        target[idx] = orig + step
        up = loss()
        target[idx] = orig - step
        down = loss()
        target[idx] = orig
        numeric = (up - down) / (2 * step)
        analytic = grad[idx]
        worst = max(worst, abs(numeric - analytic)
                    / max(abs(numeric), abs(analytic), 1e-8))
    return worst


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(10):
        sizes = (int(rng.integers(2, 8)), int(rng.integers(4, 16)),
                 int(rng.integers(4, 16)), int(rng.integers(1, 5)))
        net = Mlp(sizes, rng, np.float64)
        assert gradient_check(net, rng) < 1e-4


def test_input_grad_matches_full_backward():
    rng = np.random.default_rng(1)
    net = Mlp((6, 12, 12, 2), rng, np.float64)
    x = rng.normal(size=(4, 6))
    g = rng.normal(size=(4, 2))
    _, cache = mlp_forward(net, x)
    _, gin_full = mlp_backward(net, cache, g)
    gin = mlp_input_grad(net, cache, g)
    assert np.allclose(gin, gin_full, atol=1e-12)


def test_adam_moves_toward_minimum():
    rng = np.random.default_rng(2)
    net = Mlp((2, 1), rng, np.float64)
    opt = Adam(net)
    x = rng.normal(size=(16, 2))
    target = x @ np.array([[1.5], [-0.5]])
    for _ in range(1200):
        y, cache = mlp_forward(net, x)
        grads, _ = mlp_backward(net, cache, 2.0 * (y - target) / len(x))
        opt.update(net, grads, 1e-2)
    assert np.allclose(net.weights[0], [[1.5], [-0.5]], atol=1e-3)


# ---------------------------------------------------------------------------
# reward shaping


def ref_pose():
    return Pose(np.array([0.1, 0.2, 0.3]), quat.identity())


def obs_at(pose_p, q, wrench6):
    return np.concatenate([pose_p, q, wrench6])


def test_completion_term_values():
    assert sac.completion_term("finished") == 100.0
    assert sac.completion_term("terminated") == -50.0
    assert sac.completion_term("error") == -100.0
    assert sac.completion_term("running") == 0.0
    with pytest.raises(ValueError):
        sac.completion_term("unknown")


def test_reward_perfect_tracking():
    obs = obs_at([0.1, 0.2, 0.3], quat.identity(), np.zeros(6))
    r = sac.reward(obs, ref_pose(), Wrench.zero(), "running")
    assert abs(r - 2.0) < 1e-12
    assert abs(sac.reward(obs, ref_pose(), Wrench.zero(), "finished") - 102.0) < 1e-12
    assert abs(sac.reward(obs, ref_pose(), Wrench.zero(), "terminated") + 48.0) < 1e-12
    assert abs(sac.reward(obs, ref_pose(), Wrench.zero(), "error") + 98.0) < 1e-12


def test_reward_position_term_saturates():
    # position error of e_term * sqrt(3) zeroes exactly one tracking term
    p = np.array([0.1, 0.2, 0.3]) + [0.01 * math.sqrt(3), 0.0, 0.0]
    obs = obs_at(p, quat.identity(), np.zeros(6))
    r = sac.reward(obs, ref_pose(), Wrench.zero(), "running")
    assert abs(r - 1.5) < 1e-12


def test_reward_is_bounded():
    rng = np.random.default_rng(3)
    for _ in range(200):
        obs = obs_at(rng.normal(0, 10, 3), quat.random_unit(rng), rng.normal(0, 50, 6))
        for status in ("running", "finished", "terminated", "error"):
            r = sac.reward(obs, ref_pose(), Wrench.zero(), status)
            assert -100.0 <= r <= 102.0


# ---------------------------------------------------------------------------
# replay buffer


def test_replay_fifo_eviction():
    buf = sac.ReplayBuffer(4, obs_dim=1, act_dim=1, seed=0)
    for k in range(6):
        buf.store([float(k)], [0.0], 0.0, [0.0], False)
    assert len(buf) == 4
    stored = sorted(buf.obs[:, 0])
    assert stored == [2.0, 3.0, 4.0, 5.0]


def test_replay_only_yields_inserted():
    buf = sac.ReplayBuffer(50, obs_dim=1, act_dim=1, seed=1)
    inserted = set()
    for k in range(30):
        buf.store([float(k)], [0.0], float(k), [0.0], False)
        inserted.add(float(k))
    for _ in range(20):
        batch = buf.sample(8)
        assert set(batch["obs"][:, 0]).issubset(inserted)
    with pytest.raises(ValueError):
        buf.sample(31)


# ---------------------------------------------------------------------------
# policy sampling


def small_config(**kw):
    defaults = dict(hidden=(24, 24, 24), batch_size=16, buffer_capacity=2000,
                    total_steps=200, start_steps=40, eval_every=100,
                    eval_episodes=1, update_every=1, dtype="float64")
    defaults.update(kw)
    return sac.SacConfig(**defaults)


def test_policy_with_tiny_std_is_deterministic():
    rng = np.random.default_rng(4)
    agent = sac.SacAgent(small_config(), rng)
    # drive the log-std head far below the clamp
    agent.policy.biases[-1][sac.ACT_DIM:] = -100.0
    obs = rng.normal(size=13)
    a1, logp = agent.sample_action(obs, np.random.default_rng(1))
    a2, _ = agent.sample_action(obs, np.random.default_rng(2))
    mean = agent.mean_action(obs)
    assert np.max(np.abs(a1 - mean)) < 1e-6
    assert np.max(np.abs(a2 - mean)) < 1e-6
    assert math.isfinite(logp)


def test_log_prob_finite_and_below_density_bound():
    rng = np.random.default_rng(5)
    agent = sac.SacAgent(small_config(), rng)
    for _ in range(100):
        obs = rng.normal(size=13)
        a, logp = agent.sample_action(obs, rng)
        assert np.all(np.abs(a) <= 1.0)
        assert math.isfinite(logp)
        mean, log_std, _, _ = agent._dist(obs)
        bound = float(np.sum(-log_std[0] - 0.5 * math.log(2 * math.pi)
                             - np.log(1.0 - a ** 2 + 1e-6)))
        assert logp <= bound + 1e-9


def test_sample_mean_matches_pushforward():
    # empirical mean of squashed samples vs quadrature of tanh(mu + s*x)phi(x)
    rng = np.random.default_rng(6)
    agent = sac.SacAgent(small_config(), rng)
    obs = rng.normal(size=13)
    mean, log_std, _, _ = agent._dist(obs)
    std = np.exp(log_std[0])
    n = 100_000
    draws = np.tanh(mean[0][None, :] + std[None, :] * rng.standard_normal((n, 6)))
    grid = np.linspace(-8, 8, 4001)
    phi = np.exp(-0.5 * grid ** 2) / math.sqrt(2 * math.pi)
    for j in range(6):
        expected = np.trapezoid(np.tanh(mean[0][j] + std[j] * grid) * phi, grid)
        se = draws[:, j].std() / math.sqrt(n)
        assert abs(draws[:, j].mean() - expected) < 3 * se + 1e-4


# ---------------------------------------------------------------------------
# updates


def random_batch(rng, n=16):
    return {
        "obs": rng.normal(size=(n, 13)),
        "act": rng.uniform(-1, 1, (n, 6)),
        "rew": rng.normal(size=n),
        "nxt": rng.normal(size=(n, 13)),
        "done": np.zeros(n),
    }


def test_soft_update_tau_one_copies_online():
    rng = np.random.default_rng(7)
    agent = sac.SacAgent(small_config(tau_soft=1.0), rng)
    agent.update(random_batch(rng), 1e-3, rng)
    for pt, po in zip(agent.q1_target.parameters(), agent.q1.parameters()):
        assert np.array_equal(pt, po)
    for pt, po in zip(agent.q2_target.parameters(), agent.q2.parameters()):
        assert np.array_equal(pt, po)


def test_gamma_zero_critic_regresses_to_rewards():
    rng = np.random.default_rng(8)
    agent = sac.SacAgent(small_config(gamma=1e-12), rng)
    batch = random_batch(rng, n=24)
    for _ in range(600):
        agent.update(batch, 3e-3, rng)
    q_in = np.concatenate([batch["obs"], batch["act"]], axis=1)
    q1, _ = mlp_forward(agent.q1, q_in)
    assert np.max(np.abs(q1[:, 0] - batch["rew"])) < 1e-3


def test_bandit_std_shrinks_without_entropy():
    # single-state bandit with deterministic reward; alpha = 0 drives the
    # policy toward a deterministic optimum, so the sampling noise shrinks
    rng = np.random.default_rng(9)
    agent = sac.SacAgent(small_config(alpha=0.0, gamma=1e-12), rng)
    s = np.zeros(13)
    n = 64

    def make_batch():
        act = rng.uniform(-1, 1, (n, 6))
        rew = -np.sum((act - 0.3) ** 2, axis=1)
        return {"obs": np.tile(s, (n, 1)), "act": act, "rew": rew,
                "nxt": np.tile(s, (n, 1)), "done": np.ones(n)}

    def mean_std():
        _, log_std, _, _ = agent._dist(s)
        return float(np.mean(np.exp(log_std)))

    stds = [mean_std()]
    for _ in range(4):
        for _ in range(150):
            agent.update(make_batch(), 2e-3, rng)
        stds.append(mean_std())
    assert stds[-1] < stds[0]
    assert all(b <= a + 1e-3 for a, b in zip(stds, stds[1:]))


def test_update_reports_diagnostics():
    rng = np.random.default_rng(10)
    agent = sac.SacAgent(small_config(), rng)
    out = agent.update(random_batch(rng), 1e-3, rng)
    assert set(out) >= {"q1", "q2", "actor", "entropy"}
    assert all(math.isfinite(v) for v in out.values())


def test_learning_rate_schedule():
    cfg = sac.SacConfig(lr_start=3.3e-3, lr_end=3e-4, total_steps=1000)
    assert abs(cfg.learning_rate(0) - 3.3e-3) < 1e-12
    assert abs(cfg.learning_rate(500) - (3.3e-3 + 0.5 * (3e-4 - 3.3e-3))) < 1e-12
    assert abs(cfg.learning_rate(1000) - 3e-4) < 1e-12
    assert abs(cfg.learning_rate(5000) - 3e-4) < 1e-12


# ---------------------------------------------------------------------------
# training loop


@pytest.fixture(scope="module")
def tiny_task():
    t = np.arange(0, 2.0, 0.01)
    pos = np.zeros((len(t), 3))
    pos[:, 2] = 0.02 - 0.005 * np.clip(t / 1.8, 0, 1) ** 2
    quats = np.tile([1.0, 0, 0, 0], (len(t), 1))
    demo = dmp.Demonstration(t, pos, quats, np.zeros((len(t), 6)))
    model = dmp.fit(demo, dmp.DmpConfig(n_basis=30))
    world = env.wall_world(z=0.0)
    world.noise_std = 0.05
    cfg_ep = env.EpisodeConfig(jitter_z=0.0005)
    return lambda seed: env.Episode(world, model, cfg_ep, seed=seed)


def test_train_is_bit_reproducible(tiny_task):
    cfg = small_config(total_steps=150, start_steps=60, eval_every=50,
                       eval_episodes=2, batch_size=16)
    res1 = sac.train(tiny_task, cfg, seed=5)
    res2 = sac.train(tiny_task, cfg, seed=5)
    assert res1.curve == res2.curve
    for w1, w2 in zip(res1.agent.policy.parameters(), res2.agent.policy.parameters()):
        assert np.array_equal(w1, w2)


def test_train_resume_matches_unbroken_run(tiny_task):
    # a mid-run snapshot (as if the run died there) must continue into the
    # same trajectory the unbroken run takes under the same config
    cfg = small_config(total_steps=240, start_steps=40, eval_every=60,
                       eval_episodes=2, batch_size=16)
    snapshots = {}

    def grab(step, ret, rate, agent, state):
        snapshots[step] = state

    unbroken = sac.train(tiny_task, cfg, seed=6, on_eval=grab)
    mid_step = sorted(snapshots)[len(snapshots) // 2 - 1]
    resumed = sac.train(tiny_task, cfg, seed=6, resume_state=snapshots[mid_step])
    assert resumed.curve == unbroken.curve
    for w1, w2 in zip(resumed.agent.policy.parameters(),
                      unbroken.agent.policy.parameters()):
        assert np.array_equal(w1, w2)
