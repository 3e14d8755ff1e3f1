"""Dynamic movement primitives for pose-and-force skills.

A primitive is a second-order point attractor toward a goal plus a learned
forcing term, a radial-basis-function combination driven by an
exponentially decaying phase variable.  Position axes use

    tau^2 * x'' = alpha * (beta * (g - x) - tau * x') + f(z)

with f(z) = (g - x0) * sum_i psi_i(z) * w_i * z, the quaternion variant
drives angular acceleration from the rotation logarithm toward the goal
orientation, and the demonstrated wrench is regressed directly over phase
with the same basis.  Fitting inverts the attractor equation on a
demonstration (numerical derivatives), then solves a ridge-regularized
least-squares problem per axis.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from . import quat
from .admittance import Pose, Wrench


class DegenerateBasisError(ValueError):
    """All basis functions underflowed to zero at the queried phase."""


@dataclass
class DmpConfig:
    """Attractor gains, phase clock, and basis count.

    beta defaults to alpha/4, the critically damped choice, so the
    unforced attractor converges without overshoot.
    """

    n_basis: int = 1000
    alpha: float = 6.25
    beta: float = None
    tau: float = 25.0
    alpha_z: float = 1.0
    z0: float = 1.0
    dt: float = 0.01
    duration: float = 10.0

    def __post_init__(self):
        if self.beta is None:
            self.beta = self.alpha / 4.0
        if self.n_basis < 1:
            raise ValueError("need at least one basis function")
        if min(self.tau, self.alpha_z, self.dt, self.duration) <= 0.0 or self.beta <= 0.0:
            raise ValueError("tau, alpha_z, dt, duration and beta must be positive")


@dataclass
class BasisGrid:
    """RBF centers (decreasing in phase) and widths."""

    centers: np.ndarray
    widths: np.ndarray

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float)
        self.widths = np.asarray(self.widths, dtype=float)
        if np.any(np.diff(self.centers) >= 0.0):
            raise ValueError("centers must be strictly decreasing")
        if np.any(self.widths <= 0.0):
            raise ValueError("widths must be positive")

    @staticmethod
    def from_config(cfg: DmpConfig) -> "BasisGrid":
        """Centers evenly spaced in time: c_i = z0*exp(-(alpha_z/tau) * i*T/N)."""
        i = np.arange(1, cfg.n_basis + 1, dtype=float)
        centers = cfg.z0 * np.exp(-(cfg.alpha_z / cfg.tau) * (i * cfg.duration / cfg.n_basis))
        widths = cfg.n_basis ** 1.5 / (centers * cfg.alpha_z)
        return BasisGrid(centers, widths)


@dataclass
class Demonstration:
    """Uniformly sampled (time, pose, wrench) record of one skill execution."""

    t: np.ndarray          # (T,) strictly increasing, uniform within 1%
    positions: np.ndarray  # (T, 3)
    quats: np.ndarray      # (T, 4) sign-aligned
    wrenches: np.ndarray   # (T, 6)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        self.quats = np.asarray(self.quats, dtype=float)
        self.wrenches = np.asarray(self.wrenches, dtype=float)
        if len(self.t) < 3:
            raise ValueError("demonstration needs at least 3 samples")
        steps = np.diff(self.t)
        if np.any(steps <= 0.0):
            raise ValueError("timestamps must be strictly increasing")
        mean_dt = float(np.mean(steps))
        if np.any(np.abs(steps - mean_dt) > 0.01 * mean_dt):
            raise ValueError("sampling must be uniform within 1%")
        self.quats = quat.sign_align(self.quats)

    @property
    def dt(self) -> float:
        return float(np.mean(np.diff(self.t)))

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def pose(self, k: int) -> Pose:
        return Pose(self.positions[k].copy(), self.quats[k].copy())

    def wrench(self, k: int) -> Wrench:
        return Wrench.from_array(self.wrenches[k])


@dataclass
class DmpModel:
    """Fitted skill: basis grid plus weights for position, orientation, force."""

    config: DmpConfig
    grid: BasisGrid
    w_pos: np.ndarray    # (3, N)
    w_rot: np.ndarray    # (3, N)
    w_force: np.ndarray  # (6, N)
    start: Pose
    goal_pos: np.ndarray
    goal_rot: np.ndarray

    def __post_init__(self):
        self.w_pos = np.asarray(self.w_pos, dtype=float)
        self.w_rot = np.asarray(self.w_rot, dtype=float)
        self.w_force = np.asarray(self.w_force, dtype=float)
        self.goal_pos = np.asarray(self.goal_pos, dtype=float)
        self.goal_rot = np.asarray(self.goal_rot, dtype=float)
        for w in (self.w_pos, self.w_rot, self.w_force):
            if not np.all(np.isfinite(w)):
                raise ValueError("non-finite weights")

    def retargeted(self, goal_pos) -> "DmpModel":
        """Same shape, new positional goal."""
        return replace(self, goal_pos=np.asarray(goal_pos, dtype=float))


@dataclass
class Trace:
    """Rollout output: reference poses and desired wrench over time."""

    t: np.ndarray          # (S,)
    positions: np.ndarray  # (S, 3)
    quats: np.ndarray      # (S, 4)
    forces: np.ndarray     # (S, 6)

    def __len__(self):
        return len(self.t)

    def pose(self, k: int) -> Pose:
        return Pose(self.positions[k].copy(), self.quats[k].copy())

    def wrench(self, k: int) -> Wrench:
        return Wrench.from_array(self.forces[k])


def phase(t, cfg: DmpConfig):
    """Phase clock z(t) = z0 * exp(-(alpha_z/tau) * t); strictly positive."""
    return cfg.z0 * np.exp(-(cfg.alpha_z / cfg.tau) * np.asarray(t, dtype=float))


def basis(z: float, grid: BasisGrid) -> np.ndarray:
    """Normalized RBF activations at phase z; sums to one exactly."""
    raw = np.exp(-grid.widths * (z - grid.centers) ** 2)
    total = raw.sum()
    if total <= 0.0:
        raise DegenerateBasisError(f"all basis functions underflowed at z={z}")
    return raw / total


def basis_matrix(z_values, grid: BasisGrid) -> np.ndarray:
    """Rows of normalized activations for each phase sample, shape (T, N)."""
    z = np.asarray(z_values, dtype=float)[:, None]
    raw = np.exp(-grid.widths[None, :] * (z - grid.centers[None, :]) ** 2)
    totals = raw.sum(axis=1)
    if np.any(totals <= 0.0):
        raise DegenerateBasisError("basis underflow at some phase samples")
    return raw / totals[:, None]


def forcing_position(z: float, w_row, goal: float, start: float,
                     psi: np.ndarray = None, grid: BasisGrid = None) -> float:
    """Positional forcing (g - x0) * sum_i psi_i(z) * w_i * z for one axis."""
    if psi is None:
        psi = basis(z, grid)
    return (goal - start) * float(psi @ np.asarray(w_row, dtype=float)) * z


def forcing_orientation(z: float, w_rot, goal_rot, q,
                        psi: np.ndarray = None, grid: BasisGrid = None) -> np.ndarray:
    """Orientation forcing, scaled per axis by the current log-distance to goal.

    diag(log(g_o * conj(q))) * sum_i psi_i(z) * w_i * z.  The scale shrinks
    as the orientation approaches the goal, which is the printed form of
    the attractor; axes with zero log component contribute no forcing.
    """
    if psi is None:
        psi = basis(z, grid)
    d = quat.qlog(quat.multiply(goal_rot, quat.conjugate(q)))
    return d * (np.asarray(w_rot, dtype=float) @ psi) * z


def desired_force(z: float, w_force, psi: np.ndarray = None,
                  grid: BasisGrid = None) -> Wrench:
    """Wrench regression sum_i psi_i(z) * w_i per axis; no goal or phase scaling."""
    if psi is None:
        psi = basis(z, grid)
    vals = np.asarray(w_force, dtype=float) @ psi
    return Wrench(vals[:3], vals[3:6])


def _derivative(x: np.ndarray, dt: float) -> np.ndarray:
    """Central differences along axis 0 with one-sided stencils at the ends."""
    d = np.empty_like(x)
    d[1:-1] = (x[2:] - x[:-2]) / (2.0 * dt)
    d[0] = (x[1] - x[0]) / dt
    d[-1] = (x[-1] - x[-2]) / dt
    return d


def _demo_rates(demo: Demonstration):
    """Velocities and accelerations of a demonstration (linear and angular)."""
    dt = demo.dt
    vel = _derivative(demo.positions, dt)
    acc = _derivative(vel, dt)
    T = len(demo.t)
    omega = np.empty((T, 3))
    for k in range(T):
        if 0 < k < T - 1:
            omega[k] = quat.angular_velocity(demo.quats[k + 1], demo.quats[k - 1], 2.0 * dt)
        elif k == 0:
            omega[k] = quat.angular_velocity(demo.quats[1], demo.quats[0], dt)
        else:
            omega[k] = quat.angular_velocity(demo.quats[-1], demo.quats[-2], dt)
    omega_dot = _derivative(omega, dt)
    return vel, acc, omega, omega_dot


def target_forcing(demo: Demonstration, cfg: DmpConfig):
    """Forcing values the fitted weights must reproduce, from the demonstration.

    Per linear axis:  f = tau^2*x'' - alpha*(beta*(g - x) - tau*x').
    Per angular axis: f = tau^2*w' - alpha*(beta*2*log(g_o * conj(q)) - tau*w),
    with rates from numerical differentiation.  The angular damping acts on
    the time-scaled velocity tau*w, mirroring the linear axes; this keeps
    the unforced orientation attractor critically damped at beta = alpha/4
    (damping the raw velocity would leave it with a damping ratio of only
    alpha/(2*tau*sqrt(alpha*beta)), far too oscillatory to ever settle).
    Returns (f_pos (T,3), f_rot (T,3)).
    """
    if len(demo.t) < 3:
        raise ValueError("demonstration too short to differentiate")
    vel, acc, omega, omega_dot = _demo_rates(demo)
    g = demo.positions[-1]
    g_rot = demo.quats[-1]
    f_pos = (cfg.tau ** 2 * acc
             - cfg.alpha * (cfg.beta * (g - demo.positions) - cfg.tau * vel))
    T = len(demo.t)
    log_dist = np.empty((T, 3))
    for k in range(T):
        log_dist[k] = quat.qlog(quat.multiply(g_rot, quat.conjugate(demo.quats[k])))
    f_rot = (cfg.tau ** 2 * omega_dot
             - cfg.alpha * (cfg.beta * 2.0 * log_dist - cfg.tau * omega))
    return f_pos, f_rot


# Axes whose start-to-goal travel is below this use unit scale in the fit;
# the printed forcing would otherwise divide by zero.
DEGENERATE_SPAN = 1e-6

# Relative ridge weight keeping the normal equations well-posed; the raw
# regression divides by a phase value that decays toward zero.
RIDGE_REL = 1e-8


def fit_weights(psi_matrix: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Ridge least squares w = (P'P + lam*I)^-1 P' f, lam = 1e-8*tr(P'P)/N.

    Solved in whichever of the primal/dual forms is smaller, so very large
    basis counts stay tractable (T x T instead of N x N when N > T).
    Stacked targets of shape (T, k) are solved in one factorization and
    return (k, N) weight rows.
    """
    A = np.asarray(psi_matrix, dtype=float)
    b = np.asarray(targets, dtype=float)
    stacked = b.ndim == 2
    n_rows, n_basis = A.shape
    if n_rows < 1:
        raise ValueError("need at least one sample")
    if n_rows >= n_basis:
        gram = A.T @ A
        # Absolute floor keeps all-zero designs solvable (w = 0 then).
        lam = max(RIDGE_REL * np.trace(gram) / n_basis, 1e-300)
        w = np.linalg.solve(gram + lam * np.eye(n_basis), A.T @ b)
    else:
        # Dual form: (A'A + lam I)^-1 A' b  ==  A'(AA' + lam I)^-1 b
        gram = A @ A.T
        lam = max(RIDGE_REL * np.trace(gram) / n_basis, 1e-300)
        w = A.T @ np.linalg.solve(gram + lam * np.eye(n_rows), b)
    return w.T if stacked else w


def fit(demo: Demonstration, cfg: DmpConfig = None) -> DmpModel:
    """Learn position, orientation and force weights from one demonstration.

    The goal is the final demonstration sample.  Position rows are
    psi_i(z_t)*z_t against targets f/(g - x0); orientation rows carry the
    time-varying log-distance scale on the design-matrix side, so no
    division by a vanishing quantity ever happens; wrench rows are plain
    psi_i(z_t) against the raw recorded values.
    """
    if cfg is None:
        cfg = DmpConfig(duration=demo.duration, dt=demo.dt)
    else:
        cfg = replace(cfg, duration=demo.duration, dt=demo.dt)
    grid = BasisGrid.from_config(cfg)
    t = demo.t - demo.t[0]
    z = phase(t, cfg)
    psi = basis_matrix(z, grid)
    psi_z = psi * z[:, None]

    f_pos, f_rot = target_forcing(demo, cfg)
    start = demo.pose(0)
    g = demo.positions[-1]
    g_rot = demo.quats[-1]

    n = cfg.n_basis
    spans = g - start.p
    scales = np.where(np.abs(spans) >= DEGENERATE_SPAN, spans, 1.0)
    w_pos = fit_weights(psi_z, f_pos / scales[None, :])

    T = len(demo.t)
    log_dist = np.empty((T, 3))
    for k in range(T):
        log_dist[k] = quat.qlog(quat.multiply(g_rot, quat.conjugate(demo.quats[k])))
    w_rot = np.zeros((3, n))
    for axis in range(3):
        # Axes the demonstration never excites stay at zero weight; their
        # design columns would be pure noise at machine scale.
        if np.max(np.abs(log_dist[:, axis])) < DEGENERATE_SPAN:
            continue
        w_rot[axis] = fit_weights(psi_z * log_dist[:, axis:axis + 1], f_rot[:, axis])

    w_force = fit_weights(psi, demo.wrenches)

    return DmpModel(cfg, grid, w_pos, w_rot, w_force, start, g.copy(), g_rot.copy())


def rollout(model: DmpModel, dt: float = None, duration: float = None) -> Trace:
    """Integrate the fitted attractor forward, emitting pose and desired wrench.

    Explicit Euler on the translational and angular accelerations with the
    orientation advanced through the exponential map.  The trace includes
    both endpoints, so it has round(duration/dt) + 1 samples.
    """
    cfg = model.config
    if dt is None:
        dt = cfg.dt
    if duration is None:
        duration = cfg.duration
    if duration <= 0.0 or dt <= 0.0:
        raise ValueError("duration and dt must be positive")
    steps = int(round(duration / dt))

    x = model.start.p.astype(float).copy()
    v = np.zeros(3)
    q = model.start.q.astype(float).copy()
    omega = np.zeros(3)
    g = model.goal_pos
    g_rot = model.goal_rot
    span = g - model.start.p
    tau2 = cfg.tau ** 2

    t_out = np.empty(steps + 1)
    pos_out = np.empty((steps + 1, 3))
    quat_out = np.empty((steps + 1, 4))
    force_out = np.empty((steps + 1, 6))

    decay = math.exp(-(cfg.alpha_z / cfg.tau) * dt)
    # Basis activations are only calibrated over the commissioned phase
    # interval [z(T), z0].  Past the horizon the forcing is cut off and
    # the bare attractor holds the goal: raw extrapolation is unusable
    # (the overlapping basis cancels huge weights against each other
    # inside the support), and even the boundary fit residual would act
    # as a persistent disturbance -- the phase itself decays far too
    # slowly to make the forcing vanish.  The desired wrench holds its
    # final (boundary) value.
    z_floor = float(model.grid.centers[-1])
    z = cfg.z0
    for k in range(steps + 1):
        t_out[k] = k * dt
        pos_out[k] = x
        quat_out[k] = q
        psi = basis(max(z, z_floor), model.grid)
        force_out[k] = model.w_force @ psi
        if k == steps:
            break
        gate = 1.0 if z >= z_floor else 0.0
        f_pos = span * (model.w_pos @ psi) * z * gate
        d = quat.qlog(quat.multiply(g_rot, quat.conjugate(q)))
        f_rot = d * (model.w_rot @ psi) * z * gate
        acc = (cfg.alpha * (cfg.beta * (g - x) - cfg.tau * v) + f_pos) / tau2
        ang_acc = (cfg.alpha * (cfg.beta * 2.0 * d - cfg.tau * omega) + f_rot) / tau2
        v = v + acc * dt
        x = x + v * dt
        omega = omega + ang_acc * dt
        q = quat.integrate_orientation(q, omega, dt)
        z *= decay

    quat_out = quat.sign_align(quat_out)
    return Trace(t_out, pos_out, quat_out, force_out)


def resample(demo: Demonstration, new_dt: float) -> Demonstration:
    """Re-express a demonstration at a different rate by fitting and rolling out."""
    model = fit(demo)
    trace = rollout(model, dt=new_dt, duration=demo.duration)
    return Demonstration(trace.t + demo.t[0], trace.positions, trace.quats, trace.forces)
