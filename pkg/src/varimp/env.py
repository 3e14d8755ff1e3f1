"""Simulated contact worlds and the episode state machine.

Worlds are penalty-contact models: a normal force k_env * depth +
d_env * depth_rate, clamped to push only (no sticking), expressed in the
TCP frame.  A scripted stiff rollout against a world doubles as the
demonstration recorder.  Episodes drive a fitted movement primitive
through the admittance controller, accept stiffness actions at the policy
rate, and end with one of the absorbing labels finished / terminated /
error.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import admittance as adm
from . import dmp
from . import quat
from . import sac
from .admittance import Pose, Wrench

STATUS_RUNNING = "running"
STATUS_FINISHED = "finished"
STATUS_TERMINATED = "terminated"
STATUS_ERROR = "error"

WORLD_KINDS = ("free-space", "wall-1dof", "peg-in-hole", "tape-channel")

# Demonstrations are recorded through a stiff controller at the top of the
# admissible range, so the recorded pose hugs the script.
DEMO_STIFF_LIN = 2000.0
DEMO_STIFF_ANG = 40.0
WORKSPACE_LIMIT = 1.0  # m, per axis

# Observation layout: TCP position (3), orientation quaternion (4),
# measured external wrench (6).
OBS_DIM = 13


class EpisodeStateError(RuntimeError):
    """Raised when a terminal episode is stepped again."""


@dataclass
class ContactWorld:
    """Penalty-contact geometry with a rigid offset and optional noise hook.

    noise_std is the standard deviation of Gaussian measurement noise
    added to the wrench the *episode* observes; the physical contact
    force itself stays noise-free.
    """

    kind: str
    k_env: float = 1e4
    d_env: float = 50.0
    geometry: dict = field(default_factory=dict)
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    noise_std: float = 0.0

    def __post_init__(self):
        if self.kind not in WORLD_KINDS:
            raise ValueError(f"unknown world kind {self.kind!r}")
        if self.k_env <= 0.0 or self.d_env < 0.0:
            raise ValueError("k_env must be positive and d_env non-negative")
        self.offset = np.asarray(self.offset, dtype=float)

    def shifted(self, delta) -> "ContactWorld":
        return replace(self, offset=self.offset + np.asarray(delta, dtype=float),
                       geometry=dict(self.geometry))


def free_space() -> ContactWorld:
    return ContactWorld("free-space")


def wall_world(z: float = 0.0, k_env: float = 1e4, d_env: float = 50.0) -> ContactWorld:
    """Half-space below z: pushing down on the plane yields an upward force."""
    return ContactWorld("wall-1dof", k_env, d_env, {"z": z})


def peg_world(hole_x: float = 0.0, hole_y: float = 0.0, surface_z: float = 0.0,
              depth: float = 0.010, clearance: float = 0.00025,
              k_env: float = 1e4, d_env: float = 50.0) -> ContactWorld:
    """Block surface with a round hole; 0.25 mm radial clearance.

    rim_capture bounds how deep a laterally misaligned peg can sink before
    the surface stops supporting it (it has fallen off the rim).
    """
    return ContactWorld("peg-in-hole", k_env, d_env, {
        "hole_x": hole_x, "hole_y": hole_y, "surface_z": surface_z,
        "depth": depth, "clearance": clearance, "rim_capture": 0.005,
    })


def tape_world(y_start: float = 0.0, y_end: float = 0.25, x_center: float = 0.0,
               crest_z: float = 0.0, slope: float = 0.3, half_width: float = 0.004,
               k_env: float = 1e4, d_env: float = 50.0) -> ContactWorld:
    """Tape bead running along y: two flanks meeting at the press line.

    The pressed ball rides the crest of the bead; the flanks fall away on
    both sides with the given slope down to the base plane beyond
    half_width.  The line contact is laterally unstable, so a compliant
    lateral axis lets the ball slide off the tape while a stiff one holds
    the crest -- the property that makes stiffness choice decide this
    task.
    """
    return ContactWorld("tape-channel", k_env, d_env, {
        "y_start": y_start, "y_end": y_end, "x_center": x_center,
        "crest_z": crest_z, "slope": slope, "half_width": half_width,
    })


def _penalty(k: float, d: float, depth: float, depth_rate: float) -> float:
    """Spring-damper normal force, clamped to be repulsive only."""
    return max(0.0, k * depth + d * depth_rate)


def contact_wrench(world: ContactWorld, pose: Pose, velocity=None) -> Wrench:
    """External wrench the world exerts on the TCP at this pose, TCP frame.

    velocity is the 6-vector world-frame twist of the TCP (linear then
    angular); omit it for quasi-static queries.  Zero outside contact.
    """
    v = np.zeros(6) if velocity is None else np.asarray(velocity, dtype=float)
    p = pose.p
    off = world.offset
    g = world.geometry
    f_world = np.zeros(3)

    if world.kind == "free-space":
        pass

    elif world.kind == "wall-1dof":
        plane = g["z"] + off[2]
        depth = plane - p[2]
        if depth > 0.0:
            f_world[2] = _penalty(world.k_env, world.d_env, depth, -v[2])

    elif world.kind == "peg-in-hole":
        surface = g["surface_z"] + off[2]
        if p[2] < surface:
            hx, hy = g["hole_x"] + off[0], g["hole_y"] + off[1]
            dx, dy = p[0] - hx, p[1] - hy
            rho = math.hypot(dx, dy)
            below = surface - p[2]
            if rho <= g["clearance"]:
                bottom = surface - g["depth"]
                depth = bottom - p[2]
                if depth > 0.0:
                    f_world[2] = _penalty(world.k_env, world.d_env, depth, -v[2])
            else:
                ux, uy = dx / rho, dy / rho
                radial_rate = v[0] * ux + v[1] * uy
                mag = _penalty(world.k_env, world.d_env,
                               rho - g["clearance"], radial_rate)
                f_world[0] -= mag * ux
                f_world[1] -= mag * uy
                if below <= g["rim_capture"]:
                    f_world[2] += _penalty(world.k_env, world.d_env, below, -v[2])

    elif world.kind == "tape-channel":
        xc = g["x_center"] + off[0]
        cz = g["crest_z"] + off[2]
        slope = g["slope"]
        hw = g["half_width"]
        scale = math.sqrt(1.0 + slope * slope)
        dx = p[0] - xc
        if abs(dx) <= hw:
            # Near flank z = cz - slope*|dx|; its normal tilts away from
            # the crest, which is what makes the line contact unstable.
            sgn = 1.0 if dx > 0.0 else (-1.0 if dx < 0.0 else 0.0)
            nx, nz = sgn * slope / scale, 1.0 / scale
            dist = dx * nx + (p[2] - cz) * nz
            if dist < 0.0:
                rate = -(v[0] * nx + v[2] * nz)
                mag = _penalty(world.k_env, world.d_env, -dist, rate)
                f_world[0] += mag * nx
                f_world[2] += mag * nz
        else:
            base = cz - slope * hw
            depth = base - p[2]
            if depth > 0.0:
                f_world[2] += _penalty(world.k_env, world.d_env, depth, -v[2])

    # Point contact on a smooth ball: force only, mapped into the TCP frame.
    f_tcp = quat.rotate(quat.conjugate(pose.q), f_world)
    return Wrench(f_tcp, np.zeros(3))


# ---------------------------------------------------------------------------
# synthetic demonstrations


@dataclass
class Waypoint:
    """One scripted target: travel there over `duration`, dwell for `hold`.

    A positive `press` re-targets the z coordinate below the given value
    by press*(1/K + 1/k_env), the series-spring depth that makes the stiff
    demo controller exert roughly that normal force on the world.
    """

    pos: np.ndarray
    rot: np.ndarray = field(default_factory=quat.identity)
    duration: float = 1.0
    hold: float = 0.0
    press: float = 0.0

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=float)
        self.rot = np.asarray(self.rot, dtype=float)


def _minjerk(s: float) -> float:
    return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)


def synth_demonstration(world: ContactWorld, script, sample_rate: float = 100.0,
                        control_dt: float = 1e-3) -> dmp.Demonstration:
    """Record a demonstration by running a stiff rollout through the script.

    Minimum-jerk segments connect the waypoints; the admittance controller
    (at the stiff end of the gain range, zero desired force) reacts to the
    world, and pose plus the exact simulated contact wrench are recorded
    at sample_rate.
    """
    if len(script) < 2:
        raise ValueError("script needs at least two waypoints")
    for wp in script:
        if np.any(np.abs(wp.pos) > WORKSPACE_LIMIT):
            raise ValueError(f"waypoint {wp.pos} outside the workspace")

    press_depth = 1.0 / DEMO_STIFF_LIN + 1.0 / world.k_env
    targets = []
    for wp in script:
        pos = wp.pos.copy()
        if wp.press > 0.0:
            pos[2] -= wp.press * press_depth
        targets.append((pos, quat.normalize(wp.rot), wp.duration, wp.hold))

    # reference timeline at control rate
    ref_pos, ref_rot = [targets[0][0].copy()], [targets[0][1].copy()]
    for (p0, q0, _, _), (p1, q1, dur, hold) in zip(targets[:-1], targets[1:]):
        n = max(1, int(round(dur / control_dt)))
        rot_step = 2.0 * quat.qlog(quat.multiply(q1, quat.conjugate(q0)))
        for i in range(1, n + 1):
            s = _minjerk(i / n)
            ref_pos.append(p0 + s * (p1 - p0))
            ref_rot.append(quat.multiply(quat.qexp(0.5 * s * rot_step), q0))
        for _ in range(int(round(hold / control_dt))):
            ref_pos.append(ref_pos[-1].copy())
            ref_rot.append(ref_rot[-1].copy())
    ref_pos = np.array(ref_pos)
    ref_rot = quat.sign_align(np.array(ref_rot))

    gains = adm.ImpedanceGains(np.full(3, DEMO_STIFF_LIN), np.full(3, DEMO_STIFF_ANG))
    state = adm.AdmittanceState.zero()
    zero_w = Wrench.zero()
    pose = Pose(ref_pos[0].copy(), ref_rot[0].copy())
    vel6 = np.zeros(6)
    every = max(1, int(round(1.0 / (sample_rate * control_dt))))

    rec_t, rec_p, rec_q, rec_w = [], [], [], []
    wrench = contact_wrench(world, pose, vel6)
    for k in range(len(ref_pos)):
        if k % every == 0:
            rec_t.append(k * control_dt)
            rec_p.append(pose.p.copy())
            rec_q.append(pose.q.copy())
            rec_w.append(wrench.as_array())
        if k + 1 >= len(ref_pos):
            break
        state = adm.step(state, gains, wrench, zero_w, control_dt)
        ref_pose = Pose(ref_pos[k + 1], ref_rot[k + 1])
        new_pose = adm.commanded_pose(ref_pose, state)
        vel6[:3] = (new_pose.p - pose.p) / control_dt
        vel6[3:] = quat.angular_velocity(new_pose.q, pose.q, control_dt)
        pose = new_pose
        wrench = contact_wrench(world, pose, vel6)

    return dmp.Demonstration(np.array(rec_t), np.array(rec_p),
                             np.array(rec_q), np.array(rec_w))


# ---------------------------------------------------------------------------
# episodes


@dataclass
class EpisodeConfig:
    """Abort thresholds, policy rate, and per-trial variability."""

    pos_limit: float = 0.01      # m, per element
    rot_limit: float = 0.1       # rad
    force_limit: float = 3.0     # N, per element
    torque_limit: float = 1.0    # N m, per element
    policy_period: float = 0.05  # s between stiffness updates
    control_dt: float = 1e-3
    max_steps: int = 100000
    accel_limit: float = 1e4     # m/s^2; beyond this the run is declared faulty
    jitter_x: float = 0.0        # m, per-episode random world offset, lateral
    jitter_z: float = 0.0        # m, per-episode random world offset, vertical
    # tape completion predicate parameters
    contact_phase_threshold: float = 1.0   # N of desired normal force
    contact_hold_threshold: float = 0.5    # N of measured normal force
    contact_coverage: float = 0.95
    end_tolerance: float = 0.005           # m, distance to the channel end
    min_insertion: float = 0.005           # m, peg depth that counts as inserted


# Stiffness the episodes start from: the midpoint baseline.
RESET_STIFF = np.array([605.0, 605.0, 605.0, 13.0, 13.0, 13.0])


def decode_action(action) -> np.ndarray:
    """Map a normalized action in [-1, 1]^6 onto the stiffness box."""
    a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
    lo = np.array([adm.K_LIN_MIN] * 3 + [adm.K_ANG_MIN] * 3)
    hi = np.array([adm.K_LIN_MAX] * 3 + [adm.K_ANG_MAX] * 3)
    return lo + 0.5 * (a + 1.0) * (hi - lo)


class Episode:
    """One reference rollout driven tick-by-tick against a contact world.

    The reference trajectory (pose and desired wrench) is precomputed from
    the model at the control rate.  Each policy step clamps the requested
    stiffness, runs policy_period worth of controller ticks, and returns
    (observation, reward, status).  Terminal labels are absorbing.
    """

    def __init__(self, world: ContactWorld, model: dmp.DmpModel,
                 config: EpisodeConfig = None, seed: int = 0):
        self.base_world = world
        self.model = model
        self.config = config or EpisodeConfig()
        self.rng = np.random.default_rng(seed)
        self.ref = dmp.rollout(model, dt=self.config.control_dt)
        self.status = STATUS_TERMINATED  # not usable before reset()
        self._ticks_per_step = max(1, int(round(
            self.config.policy_period / self.config.control_dt)))

    # -- helpers ----------------------------------------------------------

    def _observe(self) -> np.ndarray:
        obs = np.empty(OBS_DIM)
        obs[0:3] = self.pose.p
        obs[3:7] = self.pose.q
        obs[7:13] = self.wrench.as_array()
        return obs

    def _measured(self, raw: Wrench) -> Wrench:
        if self.world.noise_std > 0.0:
            noisy = raw.as_array() + self.rng.normal(0.0, self.world.noise_std, 6)
            return Wrench.from_array(noisy)
        return raw

    def reset(self) -> np.ndarray:
        """Start a fresh trial: controller at the model start, mid stiffness."""
        cfg = self.config
        self.world = self.base_world
        if cfg.jitter_x > 0.0 or cfg.jitter_z > 0.0:
            jit = self.rng.normal(0.0, 1.0, 2)
            self.world = self.base_world.shifted(
                [cfg.jitter_x * jit[0], 0.0, cfg.jitter_z * jit[1]])
        self.state = adm.AdmittanceState.zero()
        self.gains = adm.ImpedanceGains(RESET_STIFF[:3].copy(), RESET_STIFF[3:].copy())
        self.tick = 0
        self.steps = 0
        self.pose = self.ref.pose(0)
        self.vel6 = np.zeros(6)
        self.wrench = self._measured(contact_wrench(self.world, self.pose, self.vel6))
        self.status = STATUS_RUNNING
        # completion bookkeeping
        self._contact_phase_ticks = 0
        self._contact_held_ticks = 0
        self._min_z = self.pose.p[2]
        self._max_y = self.pose.p[1]
        self.peak_force = 0.0      # max ||F_ext|| seen, physical wrench
        self.peak_force_err = 0.0  # max ||F_ext - F_d||
        return self._observe()

    @property
    def stiffness(self) -> np.ndarray:
        return self.gains.stiffness6()

    def _on_tape(self) -> bool:
        """Lateral adherence to the press line (tape world only)."""
        world = self.world
        if world.kind != "tape-channel":
            return True
        g = world.geometry
        return abs(self.pose.p[0] - (g["x_center"] + world.offset[0])) <= g["half_width"]

    def _task_finished(self) -> bool:
        world, g = self.world, self.world.geometry
        if world.kind == "peg-in-hole":
            depth = (g["surface_z"] + world.offset[2]) - self._min_z
            return depth >= self.config.min_insertion
        if world.kind == "tape-channel":
            reached = self._max_y >= (g["y_end"] + world.offset[1]
                                      - self.config.end_tolerance)
            if self._contact_phase_ticks == 0:
                return reached
            coverage = self._contact_held_ticks / self._contact_phase_ticks
            return reached and coverage >= self.config.contact_coverage
        return True

    def _check_errors(self, f_meas: Wrench, ref_pose: Pose, ref_wrench: Wrench) -> bool:
        cfg = self.config
        p, rp = self.pose.p, ref_pose.p
        if (abs(p[0] - rp[0]) > cfg.pos_limit or abs(p[1] - rp[1]) > cfg.pos_limit
                or abs(p[2] - rp[2]) > cfg.pos_limit):
            return True
        f, rf = f_meas.f, ref_wrench.f
        if (abs(f[0] - rf[0]) > cfg.force_limit or abs(f[1] - rf[1]) > cfg.force_limit
                or abs(f[2] - rf[2]) > cfg.force_limit):
            return True
        m, rm = f_meas.m, ref_wrench.m
        if (abs(m[0] - rm[0]) > cfg.torque_limit or abs(m[1] - rm[1]) > cfg.torque_limit
                or abs(m[2] - rm[2]) > cfg.torque_limit):
            return True
        return quat.orientation_error(self.pose.q, ref_pose.q) > cfg.rot_limit

    def step(self, stiffness) -> tuple:
        """Apply a stiffness request and advance one policy period."""
        if self.status != STATUS_RUNNING:
            raise EpisodeStateError(f"episode is {self.status}; reset() it first")
        cfg = self.config
        k6 = adm.clamp_gains(self.gains.stiffness6(), stiffness)
        self.gains = self.gains.with_stiffness(k6)

        for _ in range(self._ticks_per_step):
            if self.tick + 1 >= len(self.ref) or self.steps >= cfg.max_steps:
                self.status = (STATUS_FINISHED if self._task_finished()
                               else STATUS_TERMINATED)
                break
            nxt = self.tick + 1
            ref_pose = self.ref.pose(nxt)
            ref_wrench = self.ref.wrench(nxt)
            try:
                new_state = adm.step(self.state, self.gains, self.wrench,
                                     ref_wrench, cfg.control_dt)
            except ValueError:
                self.status = STATUS_ERROR
                break
            accel = np.max(np.abs(new_state.vel - self.state.vel)) / cfg.control_dt
            if not np.all(np.isfinite(new_state.pos)) or accel > cfg.accel_limit:
                self.status = STATUS_ERROR
                break
            self.state = new_state
            self.tick = nxt
            new_pose = adm.commanded_pose(ref_pose, self.state)
            self.vel6[:3] = (new_pose.p - self.pose.p) / cfg.control_dt
            self.vel6[3:] = quat.angular_velocity(new_pose.q, self.pose.q, cfg.control_dt)
            self.pose = new_pose
            raw = contact_wrench(self.world, self.pose, self.vel6)
            self.wrench = self._measured(raw)

            # completion bookkeeping
            self._min_z = min(self._min_z, self.pose.p[2])
            self._max_y = max(self._max_y, self.pose.p[1])
            fmag = math.sqrt(raw.f[0] ** 2 + raw.f[1] ** 2 + raw.f[2] ** 2)
            df = self.wrench.f - ref_wrench.f
            emag = math.sqrt(df[0] ** 2 + df[1] ** 2 + df[2] ** 2)
            self.peak_force = max(self.peak_force, fmag)
            self.peak_force_err = max(self.peak_force_err, emag)
            if ref_wrench.f[2] > cfg.contact_phase_threshold:
                self._contact_phase_ticks += 1
                if raw.f[2] > cfg.contact_hold_threshold and self._on_tape():
                    self._contact_held_ticks += 1

            if self._check_errors(self.wrench, ref_pose, ref_wrench):
                self.status = STATUS_TERMINATED
                break

        self.steps += 1
        obs = self._observe()
        ref_pose = self.ref.pose(self.tick)
        ref_wrench = self.ref.wrench(self.tick)
        reward = sac.reward(obs, ref_pose, ref_wrench, self.status,
                            limits=(cfg.pos_limit, cfg.rot_limit,
                                    cfg.force_limit, cfg.torque_limit))
        return obs, reward, self.status

    def step_action(self, action) -> tuple:
        """Step with a normalized [-1, 1] action (6 stiffness channels)."""
        return self.step(decode_action(action))


def reset(world: ContactWorld, model: dmp.DmpModel,
          config: EpisodeConfig = None, seed: int = 0) -> tuple:
    """Build an episode and reset it; returns (episode, observation)."""
    episode = Episode(world, model, config, seed)
    return episode, episode.reset()
