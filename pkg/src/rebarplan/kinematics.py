"""Reduced quadruped kinematics: FK, contact projection, reachability quadrics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import gamma

FEET = ("FL", "FR", "BL", "BR")
FOOT_INDEX = {f: i for i, f in enumerate(FEET)}


class ReachabilityError(RuntimeError):
    """Too few ground-contact samples to fit a reachability region."""


@dataclass(frozen=True)
class RobotModel:
    torso_dims: tuple[float, float, float] = (0.30, 0.30, 0.175)
    hip_offsets: tuple[tuple[float, float, float], ...] = (
        (0.15, 0.094, 0.0),
        (0.15, -0.094, 0.0),
        (-0.15, 0.094, 0.0),
        (-0.15, -0.094, 0.0),
    )
    link_lengths: tuple[float, float] = (0.20, 0.20)
    # abduction, hip pitch, knee
    joint_limits: tuple[tuple[float, float], ...] = ((-1.0, 1.0), (-0.66, 2.96), (-2.72, -0.84))
    mass: float = 12.0
    mu: float = 0.5
    nominal_com_height: float = 0.325

    def __post_init__(self):
        if min(self.torso_dims) <= 0 or min(self.link_lengths) <= 0:
            raise ValueError("lengths must be positive")
        if any(lo >= hi for lo, hi in self.joint_limits):
            raise ValueError("joint limits need lo < hi")
        if self.mass <= 0 or not 0 < self.mu <= 2:
            raise ValueError("mass must be positive and 0 < mu <= 2")

    def hip(self, foot: str) -> np.ndarray:
        return np.asarray(self.hip_offsets[FOOT_INDEX[foot]], dtype=float)

    @property
    def lower(self) -> np.ndarray:
        return np.tile([lo for lo, _ in self.joint_limits], 4)

    @property
    def upper(self) -> np.ndarray:
        return np.tile([hi for _, hi in self.joint_limits], 4)

    @property
    def leg_reach(self) -> float:
        return sum(self.link_lengths)


@dataclass
class Configuration:
    torso_pos: np.ndarray
    torso_rpy: np.ndarray = field(default_factory=lambda: np.zeros(3))
    joints: np.ndarray = field(default_factory=lambda: np.zeros(12))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.torso_pos, self.torso_rpy, self.joints])

    @classmethod
    def from_vector(cls, x) -> "Configuration":
        x = np.asarray(x, dtype=float)
        return cls(x[:3].copy(), x[3:6].copy(), x[6:18].copy())

    def copy(self) -> "Configuration":
        return Configuration(self.torso_pos.copy(), self.torso_rpy.copy(), self.joints.copy())


def rotation(rpy) -> np.ndarray:
    """Z-Y-X (yaw, pitch, roll) rotation matrix."""
    r, p, y = rpy
    cr, sr = math.cos(r), math.sin(r)
    cp, sp = math.cos(p), math.sin(p)
    cy, sy = math.cos(y), math.sin(y)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def leg_chain(model: RobotModel, q) -> tuple[np.ndarray, np.ndarray]:
    """Knee and foot positions relative to the hip, in the torso frame.

    All-zero joints put the leg straight down under the hip.
    """
    abd, pitch, knee = q
    l1, l2 = model.link_lengths
    knee_s = np.array([-l1 * math.sin(pitch), 0.0, -l1 * math.cos(pitch)])
    foot_s = knee_s + np.array([-l2 * math.sin(pitch + knee), 0.0, -l2 * math.cos(pitch + knee)])
    ca, sa = math.cos(abd), math.sin(abd)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]])
    return rx @ knee_s, rx @ foot_s


def forward_kinematics(model: RobotModel, config: Configuration, foot: str) -> np.ndarray:
    i = FOOT_INDEX[foot]
    _, foot_local = leg_chain(model, config.joints[3 * i: 3 * i + 3])
    R = rotation(config.torso_rpy)
    return config.torso_pos + R @ (model.hip(foot) + foot_local)


def leg_ik(model: RobotModel, foot_rel_hip) -> np.ndarray:
    """Analytic leg IK in the torso frame (knee-backward branch), clamped to limits."""
    x, y, z = foot_rel_hip
    l1, l2 = model.link_lengths
    abd = math.atan2(y, -z) if abs(z) + abs(y) > 1e-12 else 0.0
    zp = -math.hypot(y, z)  # distance below hip in the abducted leg plane
    d = math.hypot(x, zp)
    d = min(max(d, abs(l1 - l2) + 1e-9), l1 + l2 - 1e-9)
    cos_k = (d * d - l1 * l1 - l2 * l2) / (2 * l1 * l2)
    knee = -math.acos(max(-1.0, min(1.0, cos_k)))
    # foot_x = -l1 sin(p) - l2 sin(p+k), foot_z = -l1 cos(p) - l2 cos(p+k)
    alpha = math.atan2(-x, -zp)
    beta = math.atan2(l2 * math.sin(knee), l1 + l2 * math.cos(knee))
    pitch = alpha - beta
    q = np.array([abd, pitch, knee])
    lo = np.array([l for l, _ in model.joint_limits])
    hi = np.array([h for _, h in model.joint_limits])
    return np.clip(q, lo, hi)


def standing_configuration(model: RobotModel, torso_pos, targets: dict | None = None) -> Configuration:
    """Torso at ``torso_pos`` (zero rpy) with legs reaching toward ``targets``.

    Feet without a target stand under their hips at the ground.
    """
    torso_pos = np.asarray(torso_pos, dtype=float)
    joints = np.zeros(12)
    for foot in FEET:
        hip_w = torso_pos + model.hip(foot)
        if targets and foot in targets:
            tgt = np.asarray(targets[foot], dtype=float)
        else:
            tgt = np.array([hip_w[0], hip_w[1], 0.0])
        i = FOOT_INDEX[foot]
        joints[3 * i: 3 * i + 3] = leg_ik(model, tgt - hip_w)
    return Configuration(torso_pos.copy(), np.zeros(3), joints)


# --------------------------------------------------------------------------
# contact projection

@dataclass
class ProjectionFailure:
    residual: float
    iterations: int
    reason: str = "max iterations"

    def __bool__(self):
        return False


def _stacked_fk(model, x, feet):
    cfg = Configuration.from_vector(x)
    return np.concatenate([forward_kinematics(model, cfg, f) for f in feet])


def fk_jacobian(model: RobotModel, x, feet, eps: float = 1e-7) -> np.ndarray:
    """Central-difference Jacobian of stacked foot positions w.r.t. the 18-vector."""
    x = np.asarray(x, dtype=float)
    J = np.zeros((3 * len(feet), x.size))
    for k in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[k] += eps
        xm[k] -= eps
        J[:, k] = (_stacked_fk(model, xp, feet) - _stacked_fk(model, xm, feet)) / (2 * eps)
    return J


def project_to_modes(model: RobotModel, seed: Configuration, targets, *, tol: float = 1e-6,
                     max_iter: int = 200, damping: float = 1e-3, step: float = 1.0,
                     stall_window: int = 10, stall_ratio: float = 1e-10):
    """Drive the listed feet onto their targets by damped least squares.

    ``targets`` is a sequence of ``(foot, point)``. Returns a new
    :class:`Configuration`, or a falsy :class:`ProjectionFailure`.
    """
    targets = list(targets)
    feet = [f for f, _ in targets]
    if not 1 <= len(feet) <= 4 or len(set(feet)) != len(feet):
        raise ValueError("need 1-4 targets on distinct feet")
    goal = np.concatenate([np.asarray(p, dtype=float) for _, p in targets])
    lo, hi = model.lower, model.upper
    x = seed.as_vector().copy()
    x[6:] = np.clip(x[6:], lo, hi)

    history = []
    lam2 = damping ** 2
    for it in range(max_iter + 1):
        err = _stacked_fk(model, x, feet) - goal
        res = float(np.max(np.abs(err)))
        history.append(float(np.linalg.norm(err)))
        if res <= tol:
            return Configuration.from_vector(x)
        if it == max_iter:
            break
        if len(history) > stall_window:
            old = history[-1 - stall_window]
            if old - history[-1] < stall_ratio * max(old, 1e-300):
                return ProjectionFailure(res, it, "stalled")
        J = fk_jacobian(model, x, feet)
        dx = -J.T @ np.linalg.solve(J @ J.T + lam2 * np.eye(J.shape[0]), err)
        x = x + step * dx
        x[6:] = np.clip(x[6:], lo, hi)
    return ProjectionFailure(res, max_iter)


# --------------------------------------------------------------------------
# superquadric reachability

@dataclass(frozen=True)
class Superquadric:
    center: tuple[float, float]
    A: float
    B: float
    a: float
    b: float

    def __post_init__(self):
        if self.A <= 0 or self.B <= 0 or self.a < 1 or self.b < 1:
            raise ValueError("superquadric needs A, B > 0 and a, b >= 1")

    def value(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        dx = np.abs((p[..., 0] - self.center[0]) / self.A)
        dy = np.abs((p[..., 1] - self.center[1]) / self.B)
        return dx ** self.a + dy ** self.b

    @property
    def area(self) -> float:
        return superquadric_area(self.A, self.B, self.a, self.b)

    def translated(self, offset) -> "Superquadric":
        return replace(self, center=(self.center[0] + float(offset[0]), self.center[1] + float(offset[1])))

    def to_dict(self) -> dict:
        return {"x0": self.center[0], "y0": self.center[1], "A": self.A, "B": self.B, "a": self.a, "b": self.b}

    @classmethod
    def from_dict(cls, d) -> "Superquadric":
        return cls((float(d["x0"]), float(d["y0"])), float(d["A"]), float(d["B"]), float(d["a"]), float(d["b"]))


def superquadric_contains(sq: Superquadric, p) -> bool:
    return bool(sq.value(p) <= 1.0)


def superquadric_area(A, B, a, b):
    return 4.0 * A * B * gamma(1 + 1 / a) * gamma(1 + 1 / b) / gamma(1 + 1 / a + 1 / b)


SIZE_GRID = np.round(np.arange(0.05, 0.40 + 1e-9, 0.01), 2)
EXPONENTS = (1.0, 1.5, 2.0, 3.0, 4.0)


def sample_ground_contacts(model: RobotModel, foot: str, n_samples: int, seed: int,
                           eps: float = 0.01) -> np.ndarray:
    """Foot xy (hip-projection frame) of random joint samples landing within ``eps`` of the ground.

    Samples whose shank points upward (knee below the foot) are dropped as
    self-collision outliers.
    """
    rng = np.random.default_rng(seed)
    lo = np.array([l for l, _ in model.joint_limits])
    hi = np.array([h for _, h in model.joint_limits])
    q = rng.uniform(lo, hi, size=(n_samples, 3))
    knees, feet = leg_positions_batch(model, q)
    height = model.nominal_com_height + model.hip(foot)[2]
    foot_z = height + feet[:, 2]
    keep = (np.abs(foot_z) <= eps) & ~shank_points_up(knees, feet)
    return feet[keep, :2]


def leg_positions_batch(model: RobotModel, q: np.ndarray):
    l1, l2 = model.link_lengths
    abd, pitch, knee = q[:, 0], q[:, 1], q[:, 2]
    kx = -l1 * np.sin(pitch)
    kz = -l1 * np.cos(pitch)
    fx = kx - l2 * np.sin(pitch + knee)
    fz = kz - l2 * np.cos(pitch + knee)
    ca, sa = np.cos(abd), np.sin(abd)
    knees = np.stack([kx, -sa * kz, ca * kz], axis=1)
    feet = np.stack([fx, -sa * fz, ca * fz], axis=1)
    return knees, feet


def shank_points_up(knees: np.ndarray, feet: np.ndarray) -> np.ndarray:
    return (feet[:, 2] - knees[:, 2]) > 0.0


def fit_reachability(model: RobotModel, foot: str, n_samples: int = 20000, seed: int = 0,
                     coverage: float = 0.95) -> Superquadric:
    """Smallest-area superquadric (hip-projection frame) covering ``coverage`` of ground samples."""
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1000")
    pts = sample_ground_contacts(model, foot, n_samples, seed)
    if len(pts) < 50:
        raise ReachabilityError(f"only {len(pts)} ground-contact samples for {foot}")
    x0, y0 = pts.mean(axis=0)
    ax = np.abs(pts[:, 0] - x0)
    ay = np.abs(pts[:, 1] - y0)
    need = coverage * len(pts)

    exps = np.asarray(EXPONENTS)
    # (sizes, exps, n) terms for each axis
    tx = (ax[None, None, :] / SIZE_GRID[:, None, None]) ** exps[None, :, None]
    ty = (ay[None, None, :] / SIZE_GRID[:, None, None]) ** exps[None, :, None]
    tx = tx.reshape(-1, len(pts))
    ty = ty.reshape(-1, len(pts))
    params_x = [(A, a) for A in SIZE_GRID for a in EXPONENTS]
    params_y = [(B, b) for B in SIZE_GRID for b in EXPONENTS]
    area_x = np.array([A * gamma(1 + 1 / a) for A, a in params_x])
    area_y = np.array([B * gamma(1 + 1 / b) for B, b in params_y])
    ex = np.array([1 / a for _, a in params_x])
    ey = np.array([1 / b for _, b in params_y])

    best = None
    chunk = 20
    for i0 in range(0, len(params_x), chunk):
        block = tx[i0:i0 + chunk]
        counts = np.count_nonzero(block[:, None, :] + ty[None, :, :] <= 1.0, axis=2)
        areas = 4.0 * area_x[i0:i0 + chunk, None] * area_y[None, :] / gamma(
            1 + ex[i0:i0 + chunk, None] + ey[None, :])
        areas = np.where(counts >= need, areas, np.inf)
        k = int(np.argmin(areas))
        i, j = divmod(k, areas.shape[1])
        if np.isfinite(areas[i, j]) and (best is None or areas[i, j] < best[0] - 1e-15):
            best = (areas[i, j], i0 + i, j)
    if best is None:
        raise ReachabilityError(f"no quadric in the search grid covers {coverage:.0%} of samples")
    A, a = params_x[best[1]]
    B, b = params_y[best[2]]
    return Superquadric((float(x0), float(y0)), float(A), float(B), float(a), float(b))


def containment_fraction(sq: Superquadric, pts: np.ndarray) -> float:
    return float(np.mean(sq.value(pts) <= 1.0))


def fit_all(model: RobotModel, n_samples: int = 20000, seed: int = 0) -> dict[str, Superquadric]:
    return {f: fit_reachability(model, f, n_samples, seed + i) for i, f in enumerate(FEET)}


def save_reach(reach: dict[str, Superquadric], path) -> None:
    doc = {f: reach[f].to_dict() for f in FEET}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_reach(path) -> dict[str, Superquadric]:
    doc = json.loads(Path(path).read_text())
    return {f: Superquadric.from_dict(doc[f]) for f in FEET}
