"""Single-transition trajectory optimization on a reduced centroidal model.

Each transition opens with a short four-contact phase that shifts the CoM
over the three stance feet, then lifts the swing foot. Decision variables:
CoM position/velocity at ``N+1`` knots, four contact forces per interval
(the swing foot's is pinned to zero after liftoff), the two interior swing
waypoints and the landing coparameter. The swing foot follows three cubic
pieces ``Pa + (Pb - Pa)(3s^2 - 2s^3)`` through ``P0..P3`` (zero velocity at
each waypoint), so its knot positions are linear in the variables.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .env import RebarGrid, box_sdf_and_grad, point_obstacle_distance, point_on_bar
from .kinematics import (Configuration, ProjectionFailure, RobotModel, forward_kinematics, project_to_modes,
                         standing_configuration)
from .modes import Mode, ModeFamily, foothold_targets

GRAVITY = 9.81
MAX_REFERENCE_SAMPLES = 10
# stance and swing feet stay within this fraction of the straight-knee leg length
REACH_FRACTION = 0.99
# internal feasibility thresholds, tighter than the verifier's
EQ_TOL = 1e-5  # newtons; 10x inside the verifier bound
INEQ_TOL = 1e-7

# verifier tolerances
DYNAMICS_TOL = 1e-4
FRICTION_TOL = 1e-6
MODE_TOL = 1e-6
OBSTACLE_TOL = 1e-6


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    COST_ABOVE_JMAX = "CostAboveJmax"
    MAX_ITERS = "MaxIters"
    PROJECTION_FAILED = "ProjectionFailed"


@dataclass
class TransitionProblem:
    src_mode: Mode
    dst_family: ModeFamily
    chi_bounds: tuple[float, float]
    horizon_T: float = 0.5
    knots_N: int = 50
    Q_pos: float = 10.0
    Q_vel: float = 1.0
    R: float = 1e-4
    Qf_scale: float = 10.0
    J_max: float = 50.0
    h_sw: float = 0.08
    margin: float = 0.02
    max_iters: int = 250
    max_outer: int = 5
    Q_swing: float = 10.0
    shift_fraction: float = 0.4
    swing_start: np.ndarray | None = None
    com0: np.ndarray | None = None
    vel0: np.ndarray | None = None

    def __post_init__(self):
        lo, hi = self.chi_bounds
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"chi_bounds must be a sub-interval of [0, 1], got {self.chi_bounds}")
        if self.knots_N < 10:
            raise ValueError("knots_N must be at least 10")
        if not self.horizon_T > 0:
            raise ValueError("horizon_T must be positive")
        if not 0.0 <= self.shift_fraction < 1.0:
            raise ValueError("shift_fraction must lie in [0, 1)")
        if min(self.Q_pos, self.Q_vel, self.R, self.Qf_scale, self.Q_swing) < 0:
            raise ValueError("weights must be non-negative")
        land = self.landing_foot
        if land not in self.dst_family.feet:
            raise ValueError("destination family must place the swing foot in stance")
        for f in self.dst_family.feet:
            if f != land and self.src_mode.family.bar_of(f) != self.dst_family.bar_of(f):
                raise ValueError(f"foot {f} changes bar between source and destination")

    @property
    def landing_foot(self) -> str:
        return self.src_mode.family.swing_foot

    @property
    def landing_bar(self) -> int:
        return self.dst_family.bar_of(self.landing_foot)

    @property
    def dt(self) -> float:
        return self.horizon_T / self.knots_N

    @property
    def n_shift(self) -> int:
        """Intervals with all four feet loaded before liftoff."""
        return int(round(self.shift_fraction * self.knots_N))

    @property
    def liftoff(self) -> float:
        return self.n_shift * self.dt


@dataclass
class Reference:
    chi_land: float
    com: np.ndarray           # (N+1, 3)
    swing_points: np.ndarray  # (4, 3): P0..P3
    forces: np.ndarray        # (N, 4, 3) static force distribution
    stance_points: np.ndarray  # (3, 3)
    terminal_config: Configuration
    samples_tried: int = 1


@dataclass
class TransitionPlan:
    status: Status
    cost_J: float
    com_knots: np.ndarray      # (N+1, 6)
    forces: np.ndarray         # (N, 4, 3); slot 3 is the swing foot before liftoff
    swing_points: np.ndarray   # (4, 3)
    chi_land: float
    horizon_T: float
    terminal_config: Configuration | None = None
    iterations: int = 0
    outer_iterations: int = 0
    max_violation: float = math.inf
    trace: list = field(default_factory=list)
    projection_iterations: int = 0
    wall_ms: float = 0.0
    liftoff: float = 0.0

    @property
    def knots_N(self) -> int:
        return len(self.forces)

    @property
    def succeeded(self) -> bool:
        return self.status is Status.CONVERGED

    def swing_coefficients(self) -> list[np.ndarray]:
        """Per-piece cubic coefficients ``(4, 3)`` in the local parameter ``s in [0, 1]``."""
        out = []
        for a, b in zip(self.swing_points[:-1], self.swing_points[1:]):
            out.append(np.stack([a, np.zeros(3), 3.0 * (b - a), -2.0 * (b - a)]))
        return out

    def swing_position(self, t: float) -> np.ndarray:
        return swing_eval(self.swing_points, t, self.horizon_T, self.liftoff)

    def to_dict(self) -> dict:
        N = self.knots_N
        return {
            "status": self.status.value,
            "cost_J": self.cost_J if math.isfinite(self.cost_J) else None,
            "times": [self.horizon_T * k / N for k in range(N + 1)],
            "com": self.com_knots.tolist(),
            "forces": self.forces.tolist(),
            "swing_points": self.swing_points.tolist(),
            "swing_coefficients": [c.tolist() for c in self.swing_coefficients()],
            "swing_piece_times": np.linspace(self.liftoff, self.horizon_T, 4).tolist(),
            "chi_land": self.chi_land if math.isfinite(self.chi_land) else None,
            "liftoff": self.liftoff,
            "iterations": self.iterations,
        }


def _piece(t, T, t0=0.0):
    u = min(max(3.0 * (t - t0) / (T - t0), 0.0), 3.0)
    i = min(int(u), 2)
    return i, u - i


def swing_eval(points: np.ndarray, t: float, T: float, t0: float = 0.0) -> np.ndarray:
    """Swing foot at time ``t``; it rests at ``P0`` until liftoff ``t0``."""
    i, s = _piece(t, T, t0)
    sig = 3 * s * s - 2 * s ** 3
    return points[i] + (points[i + 1] - points[i]) * sig


def swing_weights(N: int, T: float, t0: float = 0.0) -> np.ndarray:
    """(N+1, 4) weights so that knot ``k`` of the swing foot is ``W[k] @ P``."""
    W = np.zeros((N + 1, 4))
    for k in range(N + 1):
        i, s = _piece(T * k / N, T, t0)
        sig = 3 * s * s - 2 * s ** 3
        W[k, i] += 1.0 - sig
        W[k, i + 1] += sig
    return W


def static_forces(model: RobotModel, stance: np.ndarray, com: np.ndarray) -> np.ndarray:
    """Vertical forces on the contacts holding the CoM still (least-norm for four): (n, 3)."""
    m = model.mass
    n = len(stance)
    M = np.vstack([np.ones(n), stance[:, 1] - com[1], stance[:, 0] - com[0]])
    rhs = np.array([m * GRAVITY, 0.0, 0.0])
    fz = np.linalg.lstsq(M, rhs, rcond=None)[0]
    out = np.zeros((n, 3))
    out[:, 2] = fz
    return out


def _plane_z(grid: RebarGrid) -> float:
    return float(grid.bars[0].p0[2])


def default_swing_start(grid, model, problem) -> np.ndarray:
    c = _com0(grid, model, problem)
    h = model.hip(problem.landing_foot)
    return np.array([c[0] + h[0], c[1] + h[1], _plane_z(grid)])


def _vel0(problem) -> np.ndarray:
    return np.zeros(3) if problem.vel0 is None else np.asarray(problem.vel0, dtype=float)


def _com0(grid, model, problem) -> np.ndarray:
    if problem.com0 is not None:
        return np.asarray(problem.com0, dtype=float)
    c = foothold_targets(grid, problem.src_mode).mean(axis=0)
    return np.array([c[0], c[1], model.nominal_com_height])


def _terminal_config(model, torso_pos, targets: dict, seed_cfg=None):
    """IK stand at ``torso_pos``; falls back to damped least-squares projection."""
    cfg = standing_configuration(model, torso_pos, targets)
    res = max(float(np.max(np.abs(forward_kinematics(model, cfg, f) - p))) for f, p in targets.items())
    if res <= MODE_TOL:
        return cfg, 0
    out = project_to_modes(model, seed_cfg or cfg, list(targets.items()))
    if isinstance(out, ProjectionFailure):
        return out, out.iterations
    return out, 1


def build_reference(grid: RebarGrid, model: RobotModel, problem: TransitionProblem, seed: int = 0):
    """Desired trajectory for one transition, or :class:`ProjectionFailure` after 10 samples."""
    rng = np.random.default_rng(seed)
    N = problem.knots_N
    stance = foothold_targets(grid, problem.src_mode)
    feet = problem.src_mode.family.feet
    bar = grid.bar(problem.landing_bar)
    com0 = _com0(grid, model, problem)
    p0 = default_swing_start(grid, model, problem) if problem.swing_start is None else \
        np.asarray(problem.swing_start, dtype=float)
    lo, hi = problem.chi_bounds
    ns = problem.n_shift
    c_src = stance.mean(axis=0)
    last = None
    for attempt in range(1, MAX_REFERENCE_SAMPLES + 1):
        chi = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
        p3 = point_on_bar(bar, chi)
        targets = {f: p for f, p in zip(feet, stance)}
        targets[problem.landing_foot] = p3
        # torso stays over the swing-phase support triangle
        torso = np.array([c_src[0], c_src[1], _plane_z(grid) + model.nominal_com_height])
        cfg, _ = _terminal_config(model, torso, targets)
        if isinstance(cfg, ProjectionFailure):
            last = cfg
            continue
        com_end = cfg.torso_pos.copy()
        com = np.empty((N + 1, 3))
        s = np.linspace(0.0, 1.0, ns + 1)[:, None]
        com[:ns + 1] = com0[None, :] * (1 - s) + com_end[None, :] * s
        com[ns:] = com_end
        apex = max(p0[2], p3[2]) + problem.h_sw
        P = np.array([p0, [p0[0], p0[1], apex], [p3[0], p3[1], apex], p3])
        contacts = np.vstack([stance, p0])
        forces = np.zeros((N, 4, 3))
        for k in range(N):
            if k < ns:
                forces[k] = static_forces(model, contacts, com[k])
            else:
                forces[k, :3] = static_forces(model, stance, com[k])
        return Reference(chi, com, P, forces, stance, cfg, attempt)
    return last if last is not None else ProjectionFailure(math.inf, 0, "no samples")


# --------------------------------------------------------------------------
# transcription

def _skew_blocks(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices ``[v]x`` for ``(..., 3)`` vectors."""
    z = np.zeros(v.shape[:-1])
    return np.stack([
        np.stack([z, -v[..., 2], v[..., 1]], axis=-1),
        np.stack([v[..., 2], z, -v[..., 0]], axis=-1),
        np.stack([-v[..., 1], v[..., 0], z], axis=-1),
    ], axis=-2)


class TransitionNLP:
    """Cost, constraints and their analytic Jacobians for one transition.

    Equalities ``c(x) = 0``; inequalities ``g(x) >= 0``.
    """

    CORNER_SIGNS = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)

    def __init__(self, grid: RebarGrid, model: RobotModel, problem: TransitionProblem, ref: Reference):
        self.grid, self.model, self.problem, self.ref = grid, model, problem, ref
        N = problem.knots_N
        self.N = N
        self.h = problem.dt
        self.nX = 6 * (N + 1)
        self.nF = 12 * N
        self.n_shift = problem.n_shift
        self.i_P1 = self.nX + self.nF
        self.i_chi = self.i_P1 + 6
        self.n = self.i_chi + 1
        self.stance = ref.stance_points
        self.feet = problem.src_mode.family.feet
        self.hips = np.array([model.hip(f) for f in self.feet])
        self.hip_sw = model.hip(problem.landing_foot)
        self.reach = REACH_FRACTION * self._max_leg_length(model)
        bar = grid.bar(problem.landing_bar)
        self.bar_p0 = np.asarray(bar.p0, dtype=float)
        self.bar_vec = bar.length * bar.direction
        self.P0 = ref.swing_points[0]
        self.contacts = np.vstack([self.stance, self.P0])
        self.obstacles = list(grid.obstacles)
        self.com0 = ref.com[0]
        self.vel0 = _vel0(problem)
        half = 0.5 * np.asarray(model.torso_dims)
        self.corners = self.CORNER_SIGNS * half
        self._build_linear()

    @staticmethod
    def _max_leg_length(model):
        l1, l2 = model.link_lengths
        kmax = model.joint_limits[2][1]  # least-bent knee
        return math.sqrt(l1 * l1 + l2 * l2 + 2 * l1 * l2 * math.cos(kmax))

    # ---- index helpers
    def ir(self, k):
        return 6 * k

    def iv(self, k):
        return 6 * k + 3

    def if_(self, k, j):
        return self.nX + 12 * k + 3 * j

    # ---- packing
    def initial_guess(self) -> np.ndarray:
        x = np.zeros(self.n)
        X = x[:self.nX].reshape(self.N + 1, 6)
        X[:, :3] = self.ref.com
        x[self.nX:self.nX + self.nF] = self.ref.forces.ravel()
        x[self.i_P1:self.i_P1 + 3] = self.ref.swing_points[1]
        x[self.i_P1 + 3:self.i_P1 + 6] = self.ref.swing_points[2]
        x[self.i_chi] = self.ref.chi_land
        return x

    def unpack(self, x):
        X = x[:self.nX].reshape(self.N + 1, 6)
        F = x[self.nX:self.nX + self.nF].reshape(self.N, 4, 3)
        P = np.array([self.P0, x[self.i_P1:self.i_P1 + 3], x[self.i_P1 + 3:self.i_P1 + 6],
                      self.bar_p0 + x[self.i_chi] * self.bar_vec])
        return X, F, P, float(x[self.i_chi])

    def _build_linear(self):
        N, h, m = self.N, self.h, self.model.mass
        p = self.problem
        # swing knots: p = Msw x + msw
        W = swing_weights(N, p.horizon_T, p.liftoff)
        rows, cols, vals = [], [], []
        for k in range(N + 1):
            for d in range(3):
                r = 3 * k + d
                if W[k, 1]:
                    rows.append(r); cols.append(self.i_P1 + d); vals.append(W[k, 1])
                if W[k, 2]:
                    rows.append(r); cols.append(self.i_P1 + 3 + d); vals.append(W[k, 2])
                if W[k, 3] and self.bar_vec[d]:
                    rows.append(r); cols.append(self.i_chi); vals.append(W[k, 3] * self.bar_vec[d])
        self.Msw = sp.csr_matrix((vals, (rows, cols)), shape=(3 * (N + 1), self.n))
        self.msw = (W[:, [0]] * self.P0 + W[:, [3]] * self.bar_p0).ravel()
        self.swing_ref = W @ self.ref.swing_points

        # cost residual S x - s
        rows, cols, vals, rhs = [], [], [], []
        r = 0

        def add(idx, w, target):
            nonlocal r
            for d in range(3):
                rows.append(r); cols.append(idx + d); vals.append(w); rhs.append(w * target[d])
                r += 1

        qf = p.Qf_scale
        for k in range(N + 1):
            s = qf if k == N else 1.0
            add(self.ir(k), math.sqrt(s * p.Q_pos), self.ref.com[k])
            add(self.iv(k), math.sqrt(s * p.Q_vel), np.zeros(3))
        for k in range(N):
            for j in range(4):
                add(self.if_(k, j), math.sqrt(p.R), self.ref.forces[k, j])
        S = sp.csr_matrix((vals, (rows, cols)), shape=(r, self.n))
        wsw = np.array([math.sqrt((qf if k == N else 1.0) * p.Q_swing) for k in range(N + 1)]).repeat(3)
        self.S = sp.vstack([S, sp.diags(wsw) @ self.Msw]).tocsr()
        self.s = np.concatenate([rhs, wsw * (self.swing_ref.ravel() - self.msw)])

        # linear equalities: initial state, trapezoidal kinematics, linear momentum
        rows, cols, vals, b = [], [], [], []
        r = 0
        s0 = m / h
        for d in range(3):
            rows += [r]; cols += [self.ir(0) + d]; vals += [s0]; b.append(s0 * self.com0[d]); r += 1
        for d in range(3):
            rows += [r]; cols += [self.iv(0) + d]; vals += [s0]; b.append(s0 * self.vel0[d]); r += 1
        for k in range(N):
            for d in range(3):
                rows += [r] * 4
                cols += [self.ir(k + 1) + d, self.ir(k) + d, self.iv(k) + d, self.iv(k + 1) + d]
                vals += [m / h, -m / h, -0.5 * m, -0.5 * m]
                b.append(0.0)
                r += 1
        g = np.array([0.0, 0.0, -GRAVITY])
        for k in range(N):
            for d in range(3):
                rows += [r] * 6
                cols += [self.iv(k + 1) + d, self.iv(k) + d] + [self.if_(k, j) + d for j in range(4)]
                vals += [m / h, -m / h, -1.0, -1.0, -1.0, -1.0]
                b.append(m * g[d])
                r += 1
        # come to rest so the next transition starts from a consistent state
        for d in range(3):
            rows += [r]; cols += [self.iv(N) + d]; vals += [s0]; b.append(0.0); r += 1
        # swing foot unloaded after liftoff
        for k in range(self.n_shift, N):
            for d in range(3):
                rows += [r]; cols += [self.if_(k, 3) + d]; vals += [1.0]; b.append(0.0); r += 1
        self.A_lin = sp.csr_matrix((vals, (rows, cols)), shape=(r, self.n))
        self.b_lin = np.array(b)

        # linear inequalities: friction pyramid, landing bounds
        mu = self.model.mu
        rows, cols, vals, b = [], [], [], []
        r = 0
        for k in range(N):
            for j in range(4):
                i = self.if_(k, j)
                for axis in (0, 1):
                    for sgn in (1.0, -1.0):
                        rows += [r, r]; cols += [i + 2, i + axis]; vals += [mu, -sgn]; b.append(0.0); r += 1
        lo, hi = p.chi_bounds
        rows += [r, r + 1]; cols += [self.i_chi, self.i_chi]; vals += [1.0, -1.0]; b += [lo, -hi]
        r += 2
        self.G_lin = sp.csr_matrix((vals, (rows, cols)), shape=(r, self.n))
        self.g_lin = np.array(b)
        self.H0 = (2.0 * (self.S.T @ self.S)).tocsc()

    # ---- cost
    def cost(self, x) -> float:
        res = self.S @ x - self.s
        return float(res @ res)

    def cost_grad(self, x) -> np.ndarray:
        return 2.0 * (self.S.T @ (self.S @ x - self.s))

    # ---- equalities
    def equalities(self, x, jac: bool = True):
        X, F, _, _ = self.unpack(x)
        c_lin = self.A_lin @ x - self.b_lin
        a = self.contacts[None, :, :] - X[:-1, None, :3]  # (N, 4, 3)
        tau = np.cross(a, F).sum(axis=1)                 # (N, 3)
        c = np.concatenate([c_lin, tau.ravel()])
        if not jac:
            return c
        N = self.N
        n_lin = self.A_lin.shape[0]
        # d tau_k / d r_k = sum_j [f_kj]x ; d tau_k / d f_kj = [a_kj]x
        dr = _skew_blocks(F).sum(axis=1)  # (N, 3, 3)
        da = _skew_blocks(a)              # (N, 4, 3, 3)
        rows, cols, vals = [], [], []
        kk = np.arange(N)
        rr = n_lin + 3 * kk[:, None, None] + np.arange(3)[None, :, None]
        rows.append(np.broadcast_to(rr, (N, 3, 3)).ravel())
        cols.append(np.broadcast_to(6 * kk[:, None, None] + np.arange(3)[None, None, :], (N, 3, 3)).ravel())
        vals.append(dr.ravel())
        for j in range(4):
            rows.append(np.broadcast_to(rr, (N, 3, 3)).ravel())
            fc = self.nX + 12 * kk[:, None, None] + 3 * j + np.arange(3)[None, None, :]
            cols.append(np.broadcast_to(fc, (N, 3, 3)).ravel())
            vals.append(da[:, j].ravel())
        A_ang = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows) - n_lin, np.concatenate(cols))),
                              shape=(3 * N, self.n))
        return c, sp.vstack([self.A_lin, A_ang]).tocsr()

    # ---- inequalities
    def swing_knots(self, x) -> np.ndarray:
        return (self.Msw @ x + self.msw).reshape(self.N + 1, 3)

    def inequalities(self, x, jac: bool = True):
        N = self.N
        X = x[:self.nX].reshape(N + 1, 6)
        r = X[:, :3]
        parts = [self.G_lin @ x - self.g_lin]
        blocks = [self.G_lin] if jac else None
        L = self.reach
        # stance reach: (L^2 - |c - r - hip|^2) / 2L
        d = self.stance[None, :, :] - r[:, None, :] - self.hips[None, :, :]  # (N+1, 3, 3)
        parts.append(((L * L - (d ** 2).sum(axis=2)) / (2 * L)).ravel())
        if jac:
            rows = np.repeat(np.arange(3 * (N + 1)), 3)
            cols = (6 * np.arange(N + 1)[:, None, None] + np.zeros((1, 3, 1), int) + np.arange(3)).ravel()
            blocks.append(sp.csr_matrix(((d / L).ravel(), (rows, cols)), shape=(3 * (N + 1), self.n)))
        # swing reach
        psw = self.swing_knots(x)
        ds = psw - r - self.hip_sw
        parts.append((L * L - (ds ** 2).sum(axis=1)) / (2 * L))
        if jac:
            gp = -ds / L
            Dp = sp.csr_matrix((gp.ravel(), (np.repeat(np.arange(N + 1), 3), np.arange(3 * (N + 1)))),
                               shape=(N + 1, 3 * (N + 1)))
            rows = np.repeat(np.arange(N + 1), 3)
            cols = (6 * np.arange(N + 1)[:, None] + np.arange(3)).ravel()
            blocks.append(Dp @ self.Msw + sp.csr_matrix(((ds / L).ravel(), (rows, cols)), shape=(N + 1, self.n)))
        # obstacles: swing foot knots and torso corners
        corners = (r[:, None, :] + self.corners[None, :, :]).reshape(-1, 3)
        crow = np.repeat(np.arange(len(corners)), 3)
        ccol = (6 * np.repeat(np.arange(N + 1), 8)[:, None] + np.arange(3)).ravel()
        for o in self.obstacles:
            sd, gr = box_sdf_and_grad(psw, o.center, o.half_extents)
            parts.append(sd - self.problem.margin)
            if jac:
                Dp = sp.csr_matrix((gr.ravel(), (np.repeat(np.arange(N + 1), 3), np.arange(3 * (N + 1)))),
                                   shape=(N + 1, 3 * (N + 1)))
                blocks.append(Dp @ self.Msw)
            sd, gr = box_sdf_and_grad(corners, o.center, o.half_extents)
            parts.append(sd - self.problem.margin)
            if jac:
                blocks.append(sp.csr_matrix((gr.ravel(), (crow, ccol)), shape=(len(corners), self.n)))
        g = np.concatenate(parts)
        if not jac:
            return g
        return g, sp.vstack(blocks).tocsr()

    def violation(self, x) -> float:
        c = self.equalities(x, jac=False)
        g = self.inequalities(x, jac=False)
        return max(float(np.max(np.abs(c))), float(max(0.0, -np.min(g))))

    def feasible(self, c, g) -> bool:
        return float(np.max(np.abs(c))) <= EQ_TOL and float(np.min(g)) >= -INEQ_TOL

    def binding(self, x, grad) -> np.ndarray:
        """Variables held at a clipping bound that descent would push further out."""
        mask = np.zeros(self.n, dtype=bool)
        iz = np.arange(self.nX + 2, self.nX + self.nF, 3)
        mask[iz] = (x[iz] <= 0.0) & (grad[iz] > 0.0)
        lo, hi = self.problem.chi_bounds
        xc, gc = x[self.i_chi], grad[self.i_chi]
        mask[self.i_chi] = (xc <= lo and gc > 0.0) or (xc >= hi and gc < 0.0)
        return mask

    def clip(self, x) -> np.ndarray:
        x = x.copy()
        lo, hi = self.problem.chi_bounds
        x[self.i_chi] = min(max(x[self.i_chi], lo), hi)
        fz = x[self.nX + 2:self.nX + self.nF:3]
        x[self.nX + 2:self.nX + self.nF:3] = np.maximum(fz, 0.0)
        return x


# --------------------------------------------------------------------------
# solver

RESTORE_THRESHOLD = 1e-3
RESTORE_STEPS = 5


def _restore(nlp, x):
    """Least-norm Gauss-Newton correction onto equalities and violated inequalities.

    Used once an iterate is nearly feasible; returns ``(x, c, A, g, G, steps)``.
    """
    c, A = nlp.equalities(x)
    g, G = nlp.inequalities(x)
    steps = 0
    for _ in range(RESTORE_STEPS):
        if nlp.feasible(c, g):
            break
        viol = g < INEQ_TOL
        M = sp.vstack([A, G[viol]]).tocsc()
        r = np.concatenate([c, g[viol] - 2 * INEQ_TOL])
        MMt = (M @ M.T + 1e-12 * sp.eye(M.shape[0])).tocsc()
        try:
            y = spla.splu(MMt).solve(r)
        except RuntimeError:
            break
        x = nlp.clip(x - M.T @ y)
        c, A = nlp.equalities(x)
        g, G = nlp.inequalities(x)
        steps += 1
    return x, c, A, g, G, steps


def _merit(J, c, g, lam, nu, mu):
    shifted = np.maximum(0.0, nu - mu * g)
    return J + lam @ c + 0.5 * mu * (c @ c) + (shifted @ shifted - nu @ nu) / (2 * mu)


def solve_transition(grid: RebarGrid, model: RobotModel, problem: TransitionProblem, reference,
                     mu0: float = 1e3, log=None) -> TransitionPlan:
    """Augmented-Lagrangian outer loop over regularised Gauss-Newton KKT steps."""
    t0 = time.perf_counter()
    N = problem.knots_N
    if isinstance(reference, ProjectionFailure) or reference is None:
        return TransitionPlan(Status.PROJECTION_FAILED, math.inf, np.zeros((N + 1, 6)), np.zeros((N, 4, 3)),
                              np.zeros((4, 3)), float("nan"), problem.horizon_T,
                              projection_iterations=getattr(reference, "iterations", 0),
                              wall_ms=(time.perf_counter() - t0) * 1e3)
    nlp = TransitionNLP(grid, model, problem, reference)
    x = nlp.clip(nlp.initial_guess())
    c, A = nlp.equalities(x)
    g, G = nlp.inequalities(x)
    lam = np.zeros(len(c))
    nu = np.zeros(len(g))
    mu = mu0
    iters = 0
    outer = 0
    incumbent = math.inf
    trace: list[float] = []
    status = Status.MAX_ITERS
    J = nlp.cost(x)

    def finish(st, x, J):
        X, F, P, chi = nlp.unpack(x)
        plan = TransitionPlan(st, J if st is Status.CONVERGED else
                              (J if st is Status.COST_ABOVE_JMAX else math.inf),
                              X.copy(), F.copy(), P, chi, problem.horizon_T, None, iters, outer,
                              nlp.violation(x), trace, liftoff=problem.liftoff)
        plan.wall_ms = (time.perf_counter() - t0) * 1e3
        return plan

    for outer in range(1, problem.max_outer + 1):
        while True:
            if nlp.feasible(c, g):
                if J > problem.J_max:
                    trace.append(min(incumbent, J))
                    return finish(Status.COST_ABOVE_JMAX, x, J)
                incumbent = min(incumbent, J)
            if iters >= problem.max_iters:
                break
            iters += 1
            shifted = np.maximum(0.0, nu - mu * g)
            active = shifted > 0.0
            grad = nlp.cost_grad(x) + A.T @ (lam + mu * c) - G.T @ shifted
            # projected step: freeze variables pinned at their clipping bound
            pinned = nlp.binding(x, grad)
            free = sp.diags((~pinned).astype(float))
            Ga = G[active] @ free
            Af = A @ free
            e_c = c + lam / mu
            e_g = (nu / mu - g)[active]
            na, ne = Ga.shape[0], A.shape[0]
            H = free @ nlp.H0 @ free + sp.diags(np.where(pinned, 1.0, 1e-9))
            K = sp.bmat([[H, Af.T, -Ga.T],
                         [Af, -sp.eye(ne) / mu, None],
                         [-Ga, None, -sp.eye(na) / mu if na else None]], format="csc")
            rhs = np.concatenate([np.where(pinned, 0.0, -nlp.cost_grad(x)), -e_c, -e_g])
            try:
                sol = spla.splu(K).solve(rhs)
            except RuntimeError:
                break
            dx = sol[:nlp.n]
            slope = float(grad @ dx)
            phi = _merit(J, c, g, lam, nu, mu)
            alpha, accepted = 1.0, False
            for _ in range(30):
                xn = nlp.clip(x + alpha * dx)
                cn = nlp.equalities(xn, jac=False)
                gn = nlp.inequalities(xn, jac=False)
                Jn = nlp.cost(xn)
                phin = _merit(Jn, cn, gn, lam, nu, mu)
                if phin <= phi + 1e-4 * alpha * min(slope, 0.0):
                    accepted = True
                    break
                alpha *= 0.5
            step = alpha * float(np.max(np.abs(dx))) if accepted else 0.0
            if log is not None:
                log(dict(outer=outer, it=iters, alpha=alpha if accepted else 0.0, step=step, J=J, phi=phi,
                         slope=slope, viol=nlp.violation(x), n_active=na))
            if accepted:
                x, J = xn, Jn
                c, A = nlp.equalities(x)
                g, G = nlp.inequalities(x)
            if not accepted or step <= 1e-10 or phi - phin <= 1e-13 * max(1.0, abs(phi)):
                break
        if not nlp.feasible(c, g) and nlp.violation(x) < RESTORE_THRESHOLD:
            xr, cr, Ar, gr, Gr, k = _restore(nlp, x)
            iters += k
            if nlp.feasible(cr, gr):
                x, c, A, g, G = xr, cr, Ar, gr, Gr
                J = nlp.cost(x)
        if nlp.feasible(c, g):
            if J > problem.J_max:
                trace.append(min(incumbent, J))
                return finish(Status.COST_ABOVE_JMAX, x, J)
            incumbent = min(incumbent, J)
            trace.append(incumbent)
            status = Status.CONVERGED
            break
        trace.append(incumbent)
        if iters >= problem.max_iters:
            break
        lam = lam + mu * c
        nu = np.maximum(0.0, nu - mu * g)
        mu *= 10.0

    plan = finish(status, x, J)
    if status is Status.CONVERGED:
        targets = {f: p for f, p in zip(nlp.feet, nlp.stance)}
        targets[problem.landing_foot] = plan.swing_points[3]
        cfg, pit = _terminal_config(model, plan.com_knots[-1, :3], targets, reference.terminal_config)
        plan.projection_iterations = pit
        if isinstance(cfg, ProjectionFailure):
            plan.status = Status.PROJECTION_FAILED
            plan.cost_J = math.inf
        else:
            plan.terminal_config = cfg
    plan.wall_ms = (time.perf_counter() - t0) * 1e3
    return plan


def plan_transition(grid, model, problem, seed: int = 0) -> TransitionPlan:
    """Reference plus solve."""
    t0 = time.perf_counter()
    ref = build_reference(grid, model, problem, seed)
    plan = solve_transition(grid, model, problem, ref)
    if not isinstance(ref, ProjectionFailure):
        plan.projection_iterations += ref.samples_tried
    else:
        plan.projection_iterations += MAX_REFERENCE_SAMPLES
    plan.wall_ms = (time.perf_counter() - t0) * 1e3
    return plan


# --------------------------------------------------------------------------
# independent verification

@dataclass
class PlanReport:
    dynamics: float          # N, inf-norm of linear and angular momentum residuals
    integration: float       # m, trapezoidal consistency
    initial: float
    friction_margin: float   # N, most negative pyramid/unilateral margin
    mode: float              # m
    min_obstacle_distance: float
    chi_in_bounds: bool

    def passes(self, margin: float) -> bool:
        return (self.dynamics <= DYNAMICS_TOL and self.integration <= DYNAMICS_TOL
                and self.initial <= MODE_TOL
                and self.friction_margin >= -FRICTION_TOL and self.mode <= MODE_TOL
                and self.min_obstacle_distance >= margin - OBSTACLE_TOL and self.chi_in_bounds)


def evaluate_plan(grid: RebarGrid, model: RobotModel, problem: TransitionProblem, plan: TransitionPlan) -> PlanReport:
    """Recompute every constraint residual from the plan arrays alone."""
    N = plan.knots_N
    T = plan.horizon_T
    h = T / N
    m = model.mass
    r = plan.com_knots[:, :3]
    v = plan.com_knots[:, 3:]
    F = plan.forces
    stance = foothold_targets(grid, problem.src_mode)
    start = default_swing_start(grid, model, problem) if problem.swing_start is None else \
        np.asarray(problem.swing_start, dtype=float)
    contacts = np.vstack([stance, start])
    weight = np.array([0.0, 0.0, -m * GRAVITY])
    dyn = 0.0
    integ = 0.0
    for k in range(N):
        lin = m * (v[k + 1] - v[k]) / h - F[k].sum(axis=0) - weight
        ang = sum(np.cross(contacts[j] - r[k], F[k, j]) for j in range(4))
        dyn = max(dyn, float(np.max(np.abs(lin))), float(np.max(np.abs(ang))))
        integ = max(integ, float(np.max(np.abs(r[k + 1] - r[k] - 0.5 * h * (v[k] + v[k + 1])))))
    com0 = _com0(grid, model, problem)
    initial = max(float(np.max(np.abs(r[0] - com0))), float(np.max(np.abs(v[0] - _vel0(problem)))))
    mu = model.mu
    fr = np.concatenate([
        (mu * F[..., 2] - np.abs(F[..., 0])).ravel(),
        (mu * F[..., 2] - np.abs(F[..., 1])).ravel(),
        F[..., 2].ravel(),
    ])
    friction = float(fr.min()) if len(fr) else 0.0
    # airborne swing foot carries nothing
    airborne = np.arange(N) * h >= plan.liftoff - 1e-12
    if airborne.any():
        friction = min(friction, -float(np.max(np.abs(F[airborne, 3]))))

    lo, hi = problem.chi_bounds
    chi_ok = bool(lo - 1e-12 <= plan.chi_land <= hi + 1e-12)
    landing = point_on_bar(grid.bar(problem.landing_bar), min(max(plan.chi_land, 0.0), 1.0))
    mode = max(float(np.max(np.abs(plan.swing_position(T) - landing))),
               float(np.max(np.abs(plan.swing_position(0.0) - start))))
    if plan.terminal_config is None:
        mode = math.inf
    else:
        cfg = plan.terminal_config
        for foot, p in zip(problem.src_mode.family.feet, stance):
            mode = max(mode, float(np.max(np.abs(forward_kinematics(model, cfg, foot) - p))))
        mode = max(mode, float(np.max(np.abs(forward_kinematics(model, cfg, problem.landing_foot) - landing))))

    half = 0.5 * np.asarray(model.torso_dims)
    dmin = math.inf
    for k in range(N + 1):
        p = plan.swing_position(T * k / N)
        for o in grid.obstacles:
            dmin = min(dmin, point_obstacle_distance(p, o))
            for sx in (-1, 1):
                for sy in (-1, 1):
                    for sz in (-1, 1):
                        dmin = min(dmin, point_obstacle_distance(r[k] + half * (sx, sy, sz), o))
    return PlanReport(dyn, integ, initial, friction, mode, dmin, chi_ok)
