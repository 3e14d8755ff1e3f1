"""Unit-quaternion algebra and the log/exp maps between rotations and 3-vectors.

Quaternions are stored as numpy arrays ``[w, x, y, z]`` (scalar first).
Every constructing operation renormalizes its result so that norm drift
stays below 1e-9 even over very long integration runs.  Sign continuity
across a trajectory is *not* a property of single quaternions; callers
that difference consecutive samples must run them through
:func:`sign_align` first.
"""

import math

import numpy as np

# Zero-rotation branch cut for the log/exp maps; below this the rotation
# is indistinguishable from identity at double precision.
ZERO_TOL = 1e-12
# Below this angle the sin(x)/x style ratios are replaced by their series
# to avoid cancellation.
SERIES_TOL = 1e-6

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def identity() -> np.ndarray:
    """Fresh identity quaternion (safe to mutate)."""
    return np.array([1.0, 0.0, 0.0, 0.0])


def norm(q) -> float:
    """Euclidean norm sqrt(w^2 + |u|^2); defined for any quaternion."""
    return math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])


def normalize(q) -> np.ndarray:
    n = norm(q)
    if n < ZERO_TOL:
        raise ValueError("cannot normalize a near-zero quaternion")
    return np.asarray(q, dtype=float) / n


def multiply(q1, q2) -> np.ndarray:
    """Hamilton product q1 * q2, renormalized.

    Scalar part v1*v2 - u1.u2, vector part v1*u2 + v2*u1 + u1 x u2.
    """
    w1, x1, y1, z1 = q1[0], q1[1], q1[2], q1[3]
    w2, x2, y2, z2 = q2[0], q2[1], q2[2], q2[3]
    out = np.empty(4)
    out[0] = w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2
    out[1] = w1 * x2 + w2 * x1 + y1 * z2 - z1 * y2
    out[2] = w1 * y2 + w2 * y1 + z1 * x2 - x1 * z2
    out[3] = w1 * z2 + w2 * z1 + x1 * y2 - y1 * x2
    out /= math.sqrt(out[0] ** 2 + out[1] ** 2 + out[2] ** 2 + out[3] ** 2)
    return out


def conjugate(q) -> np.ndarray:
    """(v, u) -> (v, -u); inverse rotation for unit quaternions."""
    return np.array([q[0], -q[1], -q[2], -q[3]])


def qlog(q) -> np.ndarray:
    """Logarithm map: unit quaternion -> rotation vector in R^3.

    Returns arccos(v) * u/|u|, and the zero vector when |u| vanishes.
    The angle is evaluated as atan2(|u|, v), which equals arccos(v) for
    unit quaternions but has no cancellation as v -> 1.
    """
    u = np.array([q[1], q[2], q[3]])
    un = math.sqrt(u[0] ** 2 + u[1] ** 2 + u[2] ** 2)
    if un < ZERO_TOL:
        return np.zeros(3)
    v = q[0]
    if un < SERIES_TOL and v > 0.0:
        # arcsin(x)/x = 1 + x^2/6 + O(x^4)
        scale = (1.0 + un * un / 6.0) / v
    else:
        scale = math.atan2(un, v) / un
    return scale * u


def qexp(r) -> np.ndarray:
    """Exponential map: rotation vector in R^3 -> unit quaternion.

    cos(|r|) + sin(|r|) * r/|r|; identity when |r| vanishes.
    """
    a = math.sqrt(r[0] ** 2 + r[1] ** 2 + r[2] ** 2)
    if a < ZERO_TOL:
        return identity()
    if a < SERIES_TOL:
        # sin(x)/x = 1 - x^2/6 + O(x^4)
        s = 1.0 - a * a / 6.0
    else:
        s = math.sin(a) / a
    out = np.empty(4)
    out[0] = math.cos(a)
    out[1] = s * r[0]
    out[2] = s * r[1]
    out[3] = s * r[2]
    out /= math.sqrt(out[0] ** 2 + out[1] ** 2 + out[2] ** 2 + out[3] ** 2)
    return out


def angular_velocity(q_next, q_now, dt: float) -> np.ndarray:
    """Angular velocity (rad/s) rotating q_now into q_next over dt seconds.

    omega = (2/dt) * log(q_next * conj(q_now)).  Inputs must be
    sign-aligned; the result is the world-frame rate for left-applied
    increments (see :func:`integrate_orientation`).
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    return (2.0 / dt) * qlog(multiply(q_next, conjugate(q_now)))


def integrate_orientation(q, omega, dt: float) -> np.ndarray:
    """Advance orientation by a constant angular velocity: exp(omega*dt/2) * q."""
    if dt < 0.0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    half = 0.5 * dt
    inc = qexp((omega[0] * half, omega[1] * half, omega[2] * half))
    return multiply(inc, q)


def orientation_error(q, q_d) -> float:
    """Rotation distance 2*|log(q * conj(q_d))| in radians.

    The map is continuous everywhere except at q * conj(q_d) = -identity,
    where the value is defined as 2*pi.
    """
    qe = multiply(q, conjugate(q_d))
    if abs(qe[0] + 1.0) < 1e-9 and abs(qe[1]) < 1e-9 and abs(qe[2]) < 1e-9 and abs(qe[3]) < 1e-9:
        return 2.0 * math.pi
    lg = qlog(qe)
    return 2.0 * math.sqrt(lg[0] ** 2 + lg[1] ** 2 + lg[2] ** 2)


def rotate(q, v) -> np.ndarray:
    """Rotate a 3-vector by the rotation q encodes (sandwich product q*[0,v]*conj(q))."""
    w, ux, uy, uz = q[0], q[1], q[2], q[3]
    vx, vy, vz = v[0], v[1], v[2]
    tx = 2.0 * (uy * vz - uz * vy)
    ty = 2.0 * (uz * vx - ux * vz)
    tz = 2.0 * (ux * vy - uy * vx)
    out = np.empty(3)
    out[0] = vx + w * tx + (uy * tz - uz * ty)
    out[1] = vy + w * ty + (uz * tx - ux * tz)
    out[2] = vz + w * tz + (ux * ty - uy * tx)
    return out


def sign_align(qs) -> np.ndarray:
    """Resolve the double cover over a quaternion trajectory.

    Flips individual samples of an (T, 4) sequence so consecutive dot
    products are non-negative; each output row is the input row or its
    negation (the same rotation).  Needed before numerical
    differentiation, which is only continuous under this convention.
    """
    qs = np.array(qs, dtype=float)
    if qs.ndim != 2 or qs.shape[1] != 4 or qs.shape[0] == 0:
        raise ValueError("expected a non-empty (T, 4) quaternion sequence")
    out = qs.copy()
    for k in range(1, len(out)):
        if float(np.dot(out[k - 1], out[k])) < 0.0:
            out[k] = -out[k]
    return out


def random_unit(rng: np.random.Generator) -> np.ndarray:
    """Uniformly random unit quaternion (uniform over rotations)."""
    u1, u2, u3 = rng.random(3)
    a = math.sqrt(1.0 - u1)
    b = math.sqrt(u1)
    return np.array([
        a * math.sin(2.0 * math.pi * u2),
        a * math.cos(2.0 * math.pi * u2),
        b * math.sin(2.0 * math.pi * u3),
        b * math.cos(2.0 * math.pi * u3),
    ])
