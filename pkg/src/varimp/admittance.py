"""Discrete-time 6-DOF admittance controller.

Renders a virtual mass-spring-damper between a reference pose and the
measured external wrench:

    M * a_e + D * v_e + K * x_e = F_ext - F_d

with diagonal gains.  The deviation state x_e lives in the TCP frame; the
commanded pose composes the reference with the deviation on the right.
High stiffness tracks the reference pose, low stiffness tracks the
desired force.  Damping is always derived from stiffness through the
critical-damping relation D = 2*zeta*sqrt(M*K), so stiffness is the only
free behavioral knob.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import quat

# Stiffness operating range and per-update rate limits (N/m, N m/rad).
K_LIN_MIN, K_LIN_MAX = 20.0, 2000.0
K_ANG_MIN, K_ANG_MAX = 1.0, 40.0
K_LIN_RATE = 40.0
K_ANG_RATE = 1.0

# Virtual inertia: 5 kg on the linear axes, 0.02 kg m^2 on the angular ones.
MASS_LIN = 5.0
MASS_ANG = 0.02

# The controller runs at 1 kHz; larger steps are rejected because the
# stiff end of the gain range is no longer reliably integrable.
DT_MAX = 0.01


@dataclass
class Pose:
    """Position (m) plus unit quaternion orientation."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        if abs(quat.norm(self.q) - 1.0) > 1e-9:
            raise ValueError("pose quaternion must be unit")

    def copy(self) -> "Pose":
        return Pose(self.p.copy(), self.q.copy())


@dataclass
class Wrench:
    """Force (N) and torque (N m) 3-vectors."""

    f: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        self.m = np.asarray(self.m, dtype=float)

    @staticmethod
    def zero() -> "Wrench":
        return Wrench(np.zeros(3), np.zeros(3))

    @staticmethod
    def from_array(a) -> "Wrench":
        a = np.asarray(a, dtype=float)
        return Wrench(a[:3].copy(), a[3:6].copy())

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.f, self.m])


def damping_from(inertia, stiffness, zeta: float) -> np.ndarray:
    """Per-axis damping 2*zeta*sqrt(M*K)."""
    inertia = np.asarray(inertia, dtype=float)
    stiffness = np.asarray(stiffness, dtype=float)
    if np.any(inertia <= 0.0) or np.any(stiffness <= 0.0) or zeta <= 0.0:
        raise ValueError("inertia, stiffness and zeta must all be positive")
    return 2.0 * zeta * np.sqrt(inertia * stiffness)


@dataclass
class ImpedanceGains:
    """Diagonal admittance gains; damping is recomputed from K on access."""

    k_lin: np.ndarray = field(default_factory=lambda: np.full(3, 605.0))
    k_ang: np.ndarray = field(default_factory=lambda: np.full(3, 13.0))
    m_lin: float = MASS_LIN
    m_ang: float = MASS_ANG
    zeta: float = 1.0

    def __post_init__(self):
        self.k_lin = np.asarray(self.k_lin, dtype=float)
        self.k_ang = np.asarray(self.k_ang, dtype=float)
        if np.any(self.k_lin < K_LIN_MIN) or np.any(self.k_lin > K_LIN_MAX):
            raise ValueError(f"linear stiffness outside [{K_LIN_MIN}, {K_LIN_MAX}]")
        if np.any(self.k_ang < K_ANG_MIN) or np.any(self.k_ang > K_ANG_MAX):
            raise ValueError(f"angular stiffness outside [{K_ANG_MIN}, {K_ANG_MAX}]")
        # Damping always tracks the current stiffness; gains are treated as
        # immutable after construction, so compute it once.
        self._d_lin = damping_from(self.m_lin, self.k_lin, self.zeta)
        self._d_ang = damping_from(self.m_ang, self.k_ang, self.zeta)

    @property
    def d_lin(self) -> np.ndarray:
        return self._d_lin

    @property
    def d_ang(self) -> np.ndarray:
        return self._d_ang

    def stiffness6(self) -> np.ndarray:
        return np.concatenate([self.k_lin, self.k_ang])

    def with_stiffness(self, k6) -> "ImpedanceGains":
        k6 = np.asarray(k6, dtype=float)
        return ImpedanceGains(k6[:3].copy(), k6[3:6].copy(), self.m_lin, self.m_ang, self.zeta)


@dataclass
class AdmittanceState:
    """TCP-frame deviation from the reference pose and its rates."""

    pos: np.ndarray      # m
    rot: np.ndarray      # unit quaternion
    vel: np.ndarray      # m/s
    omega: np.ndarray    # rad/s

    @staticmethod
    def zero() -> "AdmittanceState":
        return AdmittanceState(np.zeros(3), quat.identity(), np.zeros(3), np.zeros(3))

    def copy(self) -> "AdmittanceState":
        return AdmittanceState(self.pos.copy(), self.rot.copy(), self.vel.copy(), self.omega.copy())


@lru_cache(maxsize=1024)
def _zoh_coeffs(omega_n: float, zeta: float, dt: float):
    """Exact one-step flow of x'' + 2*zeta*w*x' + w^2*x = u under constant u.

    Returns (p11, p12, p21, p22, g1, g2) such that
        x' = p11*x + p12*v + g1*u,   v' = p21*x + p22*v + g2*u.
    Cached per (w, zeta, dt); gains change far less often than ticks run.
    """
    w = omega_n
    wdt = w * dt
    if abs(zeta - 1.0) < 1e-9:
        e = math.exp(-wdt)
        p11 = e * (1.0 + wdt)
        p12 = e * dt
        p21 = -w * w * e * dt
        p22 = e * (1.0 - wdt)
    else:
        if zeta < 1.0:
            wd = w * math.sqrt(1.0 - zeta * zeta)
            c = math.cos(wd * dt)
            sn = math.sin(wd * dt) / wd
        else:
            wd = w * math.sqrt(zeta * zeta - 1.0)
            c = math.cosh(wd * dt)
            sn = math.sinh(wd * dt) / wd
        e = math.exp(-zeta * wdt)
        p11 = e * (c + zeta * w * sn)
        p12 = e * sn
        p21 = -w * w * e * sn
        p22 = e * (c - zeta * w * sn)
    g1 = (1.0 - p22 - 2.0 * zeta * w * p12) / (w * w)
    g2 = p12
    return p11, p12, p21, p22, g1, g2


def step(state: AdmittanceState, gains: ImpedanceGains, f_ext: Wrench, f_d: Wrench,
         dt: float) -> AdmittanceState:
    """One controller tick of the admittance dynamics.

    Linear axes advance M*a = (F_ext - F_d) - D*v - K*x by its exact
    zero-order-hold discretization (the wrench is held constant over the
    tick), which keeps the 1 kHz trajectory on the continuous solution
    even at the stiff end of the gain range.  The angular axes solve the
    torque rows for angular acceleration with the spring acting on the
    rotation logarithm 2*log(q_e), integrate the angular velocity
    explicitly, and advance the deviation quaternion with the
    exponential map.
    """
    if not (0.0 < dt <= DT_MAX):
        raise ValueError(f"dt must lie in (0, {DT_MAX}], got {dt}")
    fe, me = f_ext.f, f_ext.m
    fd, md = f_d.f, f_d.m
    # A sum is finite iff every term is (inf-inf yields nan, also caught).
    if not math.isfinite(fe[0] + fe[1] + fe[2] + me[0] + me[1] + me[2]
                         + fd[0] + fd[1] + fd[2] + md[0] + md[1] + md[2]):
        raise ValueError("non-finite wrench")

    pos = np.empty(3)
    vel = np.empty(3)
    for i in range(3):
        u = (fe[i] - fd[i]) / gains.m_lin
        w = math.sqrt(gains.k_lin[i] / gains.m_lin)
        p11, p12, p21, p22, g1, g2 = _zoh_coeffs(w, gains.zeta, dt)
        pos[i] = p11 * state.pos[i] + p12 * state.vel[i] + g1 * u
        vel[i] = p21 * state.pos[i] + p22 * state.vel[i] + g2 * u

    rot_disp = 2.0 * quat.qlog(state.rot)
    ang_acc = (me - md - gains.d_ang * state.omega - gains.k_ang * rot_disp) / gains.m_ang
    omega = state.omega + ang_acc * dt
    rot = quat.integrate_orientation(state.rot, omega, dt)

    return AdmittanceState(pos, rot, vel, omega)


def commanded_pose(desired: Pose, state: AdmittanceState) -> Pose:
    """Compose the reference pose with the TCP-frame deviation.

    The deviation transform is applied on the right (it lives in the TCP
    frame, the reference in the base frame):  p_c = p_d + R(q_d) * x_e,
    q_c = q_d * q_e.
    """
    p = desired.p + quat.rotate(desired.q, state.pos)
    q = quat.multiply(desired.q, state.rot)
    return Pose(p, q)


def clamp_gains(k_prev, k_req) -> np.ndarray:
    """Clamp a requested stiffness 6-vector to range, then rate limits.

    Range first ([20, 2000] linear / [1, 40] angular), then at most +-40
    N/m and +-1 N m/rad of change relative to k_prev per update.
    """
    k_prev = np.asarray(k_prev, dtype=float)
    k_req = np.asarray(k_req, dtype=float)
    lo = np.array([K_LIN_MIN] * 3 + [K_ANG_MIN] * 3)
    hi = np.array([K_LIN_MAX] * 3 + [K_ANG_MAX] * 3)
    rate = np.array([K_LIN_RATE] * 3 + [K_ANG_RATE] * 3)
    k = np.clip(k_req, lo, hi)
    return np.clip(k, k_prev - rate, k_prev + rate)
