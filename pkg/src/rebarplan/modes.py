"""Mode families, modes and the contact constraint functions defining them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import RebarGrid, point_on_bar
from .kinematics import FEET, FOOT_INDEX, Configuration, RobotModel, forward_kinematics


@dataclass(frozen=True, order=True)
class ModeFamily:
    """Three stance feet assigned to bars; the fourth foot swings.

    ``stance`` is kept sorted in FL < FR < BL < BR order.
    """

    stance: tuple[tuple[str, int], ...]
    swing_foot: str

    def __post_init__(self):
        feet = [f for f, _ in self.stance]
        if len(feet) != 3 or len(set(feet)) != 3:
            raise ValueError("a mode family needs three distinct stance feet")
        if self.swing_foot in feet or self.swing_foot not in FEET:
            raise ValueError("swing foot must be the foot not in stance")
        ordered = tuple(sorted(self.stance, key=lambda s: FOOT_INDEX[s[0]]))
        object.__setattr__(self, "stance", ordered)

    @classmethod
    def from_assignment(cls, assignment: dict[str, int]) -> "ModeFamily":
        swing = [f for f in FEET if f not in assignment]
        if len(swing) != 1:
            raise ValueError("assignment must cover exactly three feet")
        return cls(tuple((f, int(b)) for f, b in assignment.items()), swing[0])

    @property
    def feet(self) -> tuple[str, ...]:
        return tuple(f for f, _ in self.stance)

    def bar_of(self, foot: str) -> int:
        for f, b in self.stance:
            if f == foot:
                return b
        raise KeyError(foot)

    def key(self) -> str:
        return "|".join(f"{f}:{b}" for f, b in self.stance) + f"|sw:{self.swing_foot}"

    def validate(self, grid: RebarGrid) -> None:
        for _, b in self.stance:
            grid.bar(b)


@dataclass(frozen=True)
class Mode:
    family: ModeFamily
    chi: tuple[float, float, float]

    def __post_init__(self):
        chi = tuple(float(c) for c in self.chi)
        if len(chi) != 3 or any(not 0.0 <= c <= 1.0 for c in chi):
            raise ValueError(f"coparameters must lie in [0, 1]^3, got {chi}")
        object.__setattr__(self, "chi", chi)

    def chi_of(self, foot: str) -> float:
        return self.chi[self.family.feet.index(foot)]

    def to_dict(self) -> dict:
        return {
            "stance": [{"foot": f, "bar": b, "chi": c} for (f, b), c in zip(self.family.stance, self.chi)],
            "swing": self.family.swing_foot,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mode":
        fam = ModeFamily(tuple((s["foot"], int(s["bar"])) for s in d["stance"]), d["swing"])
        by_foot = {s["foot"]: float(s["chi"]) for s in d["stance"]}
        return cls(fam, tuple(by_foot[f] for f in fam.feet))


def foothold_targets(grid: RebarGrid, mode: Mode) -> np.ndarray:
    """(3, 3) foothold points, rows in ``mode.family.stance`` order."""
    return np.array([point_on_bar(grid.bar(b), c) for (_, b), c in zip(mode.family.stance, mode.chi)])


def mode_constraint(grid: RebarGrid, model: RobotModel, mode: Mode, config: Configuration) -> np.ndarray:
    targets = foothold_targets(grid, mode)
    fk = np.array([forward_kinematics(model, config, f) for f in mode.family.feet])
    return (fk - targets).ravel()


def nominal_com(grid: RebarGrid, model: RobotModel, mode: Mode) -> np.ndarray:
    c = foothold_targets(grid, mode).mean(axis=0)
    return np.array([c[0], c[1], model.nominal_com_height])
