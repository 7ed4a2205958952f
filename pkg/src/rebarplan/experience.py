"""Bounded transition penalties and per-edge RBF experience distributions."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .env import RebarGrid, point_obstacle_distance, point_on_bar
from .kinematics import FOOT_INDEX
from .modes import ModeFamily

UNIFORM_PRIOR = 0.01
DEFAULT_SIGMA = 0.15
DEFAULT_R_INFL = 0.10


@dataclass(frozen=True)
class PenaltyMap:
    w1: float = 1.0
    w2: float = 0.05
    w3: float = 0.05

    def __post_init__(self):
        if min(self.w1, self.w2) <= 0 or self.w3 < 0:
            raise ValueError("penalty weights need w1, w2 > 0 and w3 >= 0")


def penalty(pmap: PenaltyMap, cost_J: float) -> float:
    """``w1 * tanh(w2 * J + w3)``; an infinite cost maps to exactly ``w1``."""
    if math.isnan(cost_J) or cost_J < 0:
        raise ValueError(f"cost must be non-negative, got {cost_J}")
    if math.isinf(cost_J):
        return pmap.w1
    return pmap.w1 * math.tanh(pmap.w2 * cost_J + pmap.w3)


Prior = Callable[[np.ndarray], np.ndarray]


def uniform_prior(value: float = UNIFORM_PRIOR) -> Prior:
    def prior(chi):
        chi = np.asarray(chi, dtype=float)
        return np.full(chi.shape[:-1], value)
    return prior


def obstacle_prior(grid: RebarGrid, edge_families: tuple[ModeFamily, ModeFamily], scale: float = 1.0,
                   r_infl: float = DEFAULT_R_INFL, base: float = UNIFORM_PRIOR) -> Prior:
    """Prior raised linearly as the landing foothold approaches an obstacle.

    Each obstacle contributes ``scale * clip(1 - d / r_infl, 0, 1)`` where
    ``d`` is the signed distance from the landing point to the box.
    """
    src, dst = edge_families
    landing = src.swing_foot
    bar = grid.bar(dst.bar_of(landing))
    slot = FOOT_INDEX[landing]

    def prior(chi):
        chi = np.asarray(chi, dtype=float)
        flat = chi.reshape(-1, 4)
        pts = np.array([point_on_bar(bar, float(np.clip(c, 0.0, 1.0))) for c in flat[:, slot]]).reshape(-1, 3)
        return landing_prior_values(grid, pts, scale, r_infl, base).reshape(chi.shape[:-1])
    return prior


def landing_prior_values(grid: RebarGrid, points: np.ndarray, scale: float = 1.0,
                         r_infl: float = DEFAULT_R_INFL, base: float = UNIFORM_PRIOR) -> np.ndarray:
    """Obstacle prior evaluated directly at landing points ``(n, 3)``."""
    out = np.full(len(points), base)
    for o in grid.obstacles:
        d = np.array([point_obstacle_distance(p, o) for p in points])
        out += scale * np.clip(1.0 - d / r_infl, 0.0, 1.0)
    return out


@dataclass
class ExperienceDistribution:
    src_family: ModeFamily
    dst_family: ModeFamily
    sigma: float = DEFAULT_SIGMA
    prior: Prior = field(default_factory=uniform_prior, repr=False)
    centers: list = field(default_factory=list)
    weights: list = field(default_factory=list)
    penalty_sum: float = 0.0
    n_attempts: int = 0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def mean_penalty(self) -> float:
        return self.penalty_sum / self.n_attempts if self.n_attempts else 0.0

    def rbf_sum(self, chi) -> np.ndarray:
        chi = np.asarray(chi, dtype=float)
        flat = chi.reshape(-1, 4)
        if not self.weights:
            return np.zeros(chi.shape[:-1])
        c = np.asarray(self.centers)
        w = np.asarray(self.weights)
        d2 = ((flat[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
        return (np.exp(-d2 / (2 * self.sigma ** 2)) @ w).reshape(chi.shape[:-1])


def query(dist: ExperienceDistribution, joint_chi) -> float | np.ndarray:
    """Transition difficulty at ``joint_chi`` (prior plus RBF sum, floored at zero)."""
    chi = np.asarray(joint_chi, dtype=float)
    val = np.maximum(0.0, dist.prior(chi) + dist.rbf_sum(chi))
    return float(val) if chi.ndim == 1 else val


def update(dist: ExperienceDistribution, joint_chi, delta: float) -> ExperienceDistribution:
    """Add one basis function weighted by ``delta`` minus the running mean penalty.

    The first attempt on an edge seeds the running mean with its own
    penalty, so its basis weight is zero.
    """
    mean_before = dist.mean_penalty if dist.n_attempts else delta
    dist.centers.append(tuple(float(c) for c in joint_chi))
    dist.weights.append(delta - mean_before)
    dist.penalty_sum += delta
    dist.n_attempts += 1
    return dist


def joint_chi(src_chi: dict[str, float], landing_foot: str, landing_chi: float) -> tuple[float, ...]:
    """4-vector of per-foot coparameters in FL, FR, BL, BR order across a transition.

    ``src_chi`` maps each source stance foot to its coparameter; the landing
    foot takes ``landing_chi``.
    """
    out = [0.0] * 4
    for foot, c in src_chi.items():
        out[FOOT_INDEX[foot]] = float(c)
    out[FOOT_INDEX[landing_foot]] = float(landing_chi)
    return tuple(out)


class ExperienceStore:
    """All edge distributions plus the prior used for edges never attempted."""

    def __init__(self, grid: RebarGrid | None = None, prior: str = "uniform", sigma: float = DEFAULT_SIGMA,
                 prior_scale: float = 1.0, r_infl: float = DEFAULT_R_INFL,
                 penalty_map: PenaltyMap | None = None):
        if prior not in ("uniform", "obstacle"):
            raise ValueError(f"unknown prior {prior!r}")
        if prior == "obstacle" and grid is None:
            raise ValueError("obstacle prior needs a grid")
        self.grid = grid
        self.prior_kind = prior
        self.sigma = sigma
        self.prior_scale = prior_scale
        self.r_infl = r_infl
        self.penalty_map = penalty_map or PenaltyMap()
        self.edges: dict[tuple[str, str], ExperienceDistribution] = {}

    def make_prior(self, src: ModeFamily, dst: ModeFamily) -> Prior:
        if self.prior_kind == "uniform" or not self.grid.obstacles:
            return uniform_prior()
        return obstacle_prior(self.grid, (src, dst), self.prior_scale, self.r_infl)

    def distribution(self, src: ModeFamily, dst: ModeFamily, create: bool = True):
        key = (src.key(), dst.key())
        dist = self.edges.get(key)
        if dist is None and create:
            dist = ExperienceDistribution(src, dst, self.sigma, self.make_prior(src, dst))
            self.edges[key] = dist
        return dist

    def record(self, src: ModeFamily, dst: ModeFamily, chi, cost_J: float) -> float:
        delta = penalty(self.penalty_map, cost_J)
        update(self.distribution(src, dst), chi, delta)
        return delta

    # ---- serialisation
    def to_dict(self) -> dict:
        pm = self.penalty_map
        return {
            "prior": {"type": self.prior_kind, "scale": self.prior_scale, "r_infl": self.r_infl,
                      "value": UNIFORM_PRIOR},
            "sigma": self.sigma,
            "penalty": {"w1": pm.w1, "w2": pm.w2, "w3": pm.w3},
            "edges": [
                {
                    "src_family": _family_to_dict(d.src_family),
                    "dst_family": _family_to_dict(d.dst_family),
                    "sigma": d.sigma,
                    "mean_penalty": d.mean_penalty,
                    "penalty_sum": d.penalty_sum,
                    "n_attempts": d.n_attempts,
                    "basis": [{"center": list(c), "w": w} for c, w in zip(d.centers, d.weights)],
                }
                for _, d in sorted(self.edges.items())
            ],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, doc: dict, grid: RebarGrid | None = None) -> "ExperienceStore":
        pr = doc.get("prior", {})
        pen = doc.get("penalty", {})
        store = cls(grid, pr.get("type", "uniform"), float(doc.get("sigma", DEFAULT_SIGMA)),
                    float(pr.get("scale", 1.0)), float(pr.get("r_infl", DEFAULT_R_INFL)),
                    PenaltyMap(**pen) if pen else None)
        for rec in doc.get("edges", []):
            src = _family_from_dict(rec["src_family"])
            dst = _family_from_dict(rec["dst_family"])
            dist = ExperienceDistribution(src, dst, float(rec["sigma"]), store.make_prior(src, dst))
            dist.centers = [tuple(b["center"]) for b in rec["basis"]]
            dist.weights = [b["w"] for b in rec["basis"]]
            dist.n_attempts = int(rec["n_attempts"])
            dist.penalty_sum = float(rec.get("penalty_sum", rec["mean_penalty"] * dist.n_attempts))
            store.edges[(src.key(), dst.key())] = dist
        return store

    @classmethod
    def load(cls, path, grid: RebarGrid | None = None) -> "ExperienceStore":
        return cls.from_dict(json.loads(Path(path).read_text()), grid)


def _family_to_dict(fam: ModeFamily) -> dict:
    return {"stance": [{"foot": f, "bar": b} for f, b in fam.stance], "swing": fam.swing_foot}


def _family_from_dict(d: dict) -> ModeFamily:
    return ModeFamily(tuple((s["foot"], int(s["bar"])) for s in d["stance"]), d["swing"])
