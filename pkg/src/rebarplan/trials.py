"""Planning trials and offline experience accumulation."""

from __future__ import annotations

import csv
import enum
import io
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import ConfigError, Scenario, point_on_bar
from .experience import ExperienceStore, joint_chi
from .kinematics import FEET, RobotModel, Superquadric, fit_all
from .modegraph import (DEFAULT_BINS, LeadSearchFailure, ModeTransitionGraph, SearchWeights, WorkCounter,
                        build_graph, edge_weights, search_lead)
from .modes import Mode, ModeFamily
from .torso import TorsoPath, TorsoPlanFailure, plan_torso
from .trajopt import Status, TransitionProblem, build_reference, solve_transition

CSV_COLUMNS = ("trial", "reached_goal", "total_cost", "attempted", "succeeded", "skipped", "graph_ms",
               "to_mean_ms", "to_min_ms", "to_max_ms", "termination")
JMAX_TOTAL_FACTOR = 10.0
REACH_SEED = 0
REACH_SAMPLES = 20000

# Deterministic "work clock": operation counts scaled to roughly match
# wall-clock milliseconds on a single core, so logged times are
# reproducible bit for bit.
TO_MS_PER_ITERATION = 3.0
TO_MS_PER_REFERENCE_SAMPLE = 0.5
GRAPH_MS_PER_UNIT = 0.002


class Termination(str, enum.Enum):
    GOAL = "Goal"
    JMAX_EXCEEDED = "JmaxExceeded"
    PROJECTION_FAILED = "ProjectionFailed"
    NO_LEAD = "NoLead"


@dataclass
class TrialRecord:
    trial_index: int
    reached_goal: bool
    total_cost: float
    n_attempted: int
    n_succeeded: int
    n_skipped: int
    graph_search_ms: float
    to_solve_ms: tuple[float, float, float]
    termination: Termination
    lead_length: int = 0
    wall_graph_ms: float = 0.0
    wall_to_ms: list = field(default_factory=list)
    com_trace: list = field(default_factory=list)
    footholds: list = field(default_factory=list)
    torso_path: TorsoPath | None = None
    lead_modes: list = field(default_factory=list)
    statuses: list = field(default_factory=list)
    plans: list = field(default_factory=list)

    def to_dict(self) -> dict:
        """Trial log consumed by the renderer; wall-clock fields are left out for reproducibility."""
        mean, lo, hi = self.to_solve_ms
        return {
            "trial": self.trial_index,
            "reached_goal": self.reached_goal,
            "total_cost": _finite(self.total_cost),
            "attempted": self.n_attempted,
            "succeeded": self.n_succeeded,
            "skipped": self.n_skipped,
            "graph_ms": self.graph_search_ms,
            "to_ms": [_finite(mean), _finite(lo), _finite(hi)],
            "termination": self.termination.value,
            "statuses": list(self.statuses),
            "lead": list(self.lead_modes),
            "footholds": [[f, int(b), float(c)] for f, b, c in self.footholds],
            "com_trace": [[float(v) for v in p] for p in self.com_trace],
            "torso_path": self.torso_path.to_dict() if self.torso_path is not None else None,
            "plans": list(self.plans),
        }

    def csv_row(self) -> list[str]:
        mean, lo, hi = self.to_solve_ms
        return [str(self.trial_index), "1" if self.reached_goal else "0", _fmt(self.total_cost),
                str(self.n_attempted), str(self.n_succeeded), str(self.n_skipped), _fmt(self.graph_search_ms),
                _fmt(mean), _fmt(lo), _fmt(hi), self.termination.value]


def _finite(x):
    return float(x) if x is not None and math.isfinite(x) else None


def _fmt(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if math.isinf(x):
        return "inf"
    return f"{x:.6f}"


@dataclass
class PlannerConfig:
    K: int = DEFAULT_BINS
    J_max: float = 50.0
    weights: SearchWeights = field(default_factory=SearchWeights)
    timing: str = "work"  # "work" or "wall"
    torso_inflation: float = 0.15
    max_iters: int = 250

    @classmethod
    def from_scenario(cls, scenario: Scenario, **overrides) -> "PlannerConfig":
        p = dict(scenario.planner)
        p.update({k: v for k, v in overrides.items() if v is not None})
        w = SearchWeights(**{k: float(p[k]) for k in ("w_D", "w_d", "w_tau", "goal_radius") if k in p})
        cfg = cls(int(p.get("bins", DEFAULT_BINS)), float(p.get("jmax", 50.0)), w, p.get("timing", "work"),
                  float(p.get("torso_inflation", 0.15)), int(p.get("max_iters", 250)))
        if cfg.K < 1 or cfg.K > 20:
            raise ConfigError("bins must lie in [1, 20]")
        if cfg.J_max < 0:
            raise ConfigError("jmax must be non-negative")
        if cfg.timing not in ("work", "wall"):
            raise ConfigError("timing must be 'work' or 'wall'")
        return cfg


def start_state(scenario: Scenario, model: RobotModel):
    """Stance footholds ``{foot: (bar, chi)}``, swing foot and its position."""
    grid = scenario.grid
    holds = {f: (b, c) for f, b, c in scenario.start_stance}
    if len(holds) == 4:
        swing = scenario.contact_sequence[0]
        bar, chi = holds.pop(swing)
        swing_pos = point_on_bar(grid.bar(bar), chi)
    else:
        swing = next(f for f in FEET if f not in holds)
        com = scenario.start_com
        hip = model.hip(swing)
        swing_pos = np.array([com[0] + hip[0], com[1] + hip[1], grid.bars[0].p0[2]])
    return holds, swing, swing_pos


def _mode_from_holds(holds, swing) -> Mode:
    fam = ModeFamily(tuple((f, b) for f, (b, _) in holds.items()), swing)
    return Mode(fam, tuple(holds[f][1] for f in fam.feet))


def transition_seed(seed: int, trial: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, trial, step]).generate_state(1)[0])


@dataclass
class Planner:
    """Everything one accumulation run shares across trials."""

    scenario: Scenario
    model: RobotModel
    reach: dict[str, Superquadric]
    graph: ModeTransitionGraph
    config: PlannerConfig
    torso_path: TorsoPath | None = None

    @classmethod
    def create(cls, scenario: Scenario, model: RobotModel | None = None, reach=None,
               config: PlannerConfig | None = None, use_torso_path: bool = False) -> "Planner":
        model = model or RobotModel()
        reach = reach or fit_all(model, REACH_SAMPLES, REACH_SEED)
        config = config or PlannerConfig.from_scenario(scenario)
        graph = build_graph(scenario.grid, model, reach, scenario.contact_sequence, config.K)
        path = None
        if use_torso_path:
            try:
                path = plan_torso(scenario.grid, scenario.start_com, scenario.goal_com, config.torso_inflation)
            except TorsoPlanFailure:
                path = None
        return cls(scenario, model, reach, graph, config, path)


def run_trial(planner: Planner, experience: ExperienceStore, trial_index: int = 0, seed: int = 0,
              j_max_total: float | None = None, keep_plans: bool = False) -> TrialRecord:
    """Lead search, then sequential transitions until failure or the goal."""
    sc, model, graph, cfg = planner.scenario, planner.model, planner.graph, planner.config
    grid = sc.grid
    j_total_max = JMAX_TOTAL_FACTOR * cfg.J_max if j_max_total is None else j_max_total
    holds, swing, swing_pos = start_state(sc, model)
    start = _mode_from_holds(holds, swing)
    com = np.asarray(sc.start_com, dtype=float).copy()
    vel = np.zeros(3)

    t0 = time.perf_counter()
    counter = WorkCounter()
    try:
        v0 = graph.find_vertex(start)
        if v0 < 0:
            raise LeadSearchFailure("start stance is not a reachable slice")
        ew = edge_weights(graph, experience, planner.torso_path, cfg.weights, counter)
        lead = search_lead(graph, v0, sc.goal_com, weights=cfg.weights, edge_w=ew)
    except (LeadSearchFailure, KeyError):
        wall = (time.perf_counter() - t0) * 1e3
        gms = wall if cfg.timing == "wall" else GRAPH_MS_PER_UNIT * counter.units()
        return TrialRecord(trial_index, False, 0.0, 0, 0, 0, gms, (math.nan,) * 3, Termination.NO_LEAD,
                           wall_graph_ms=wall, com_trace=[com.tolist()], torso_path=planner.torso_path)
    wall_graph = (time.perf_counter() - t0) * 1e3
    counter.expansions += lead.expansions
    counter.relaxations += int(lead.work_units) - lead.expansions
    graph_ms = wall_graph if cfg.timing == "wall" else GRAPH_MS_PER_UNIT * counter.units()

    n_trans = len(lead.modes) - 1
    total = 0.0
    attempts: list[tuple[ModeFamily, ModeFamily, tuple, float]] = []
    to_ms: list[float] = []
    statuses: list[str] = []
    wall_ms: list[float] = []
    plans: list[dict] = []
    trace = [com.tolist()]
    footholds = [(f, b, c) for f, (b, c) in holds.items()]
    termination = Termination.GOAL
    succeeded = 0
    for i in range(n_trans):
        src_fam = lead.modes[i].family
        dst_mode = lead.modes[i + 1]
        land = src_fam.swing_foot
        src = Mode(src_fam, tuple(holds[f][1] for f in src_fam.feet))
        b = min(int(dst_mode.chi_of(land) * cfg.K), cfg.K - 1)
        bounds = (b / cfg.K, (b + 1) / cfg.K)
        problem = TransitionProblem(src, dst_mode.family, bounds, J_max=cfg.J_max, max_iters=cfg.max_iters,
                                    swing_start=swing_pos, com0=com, vel0=vel)
        t1 = time.perf_counter()
        ref = build_reference(grid, model, problem, transition_seed(seed, trial_index, i))
        plan = solve_transition(grid, model, problem, ref)
        wall_ms.append((time.perf_counter() - t1) * 1e3)
        statuses.append(plan.status.value)
        if keep_plans:
            plans.append(plan.to_dict())
        samples = getattr(ref, "samples_tried", 10)
        to_ms.append(wall_ms[-1] if cfg.timing == "wall" else
                     TO_MS_PER_ITERATION * plan.iterations + TO_MS_PER_REFERENCE_SAMPLE * samples)
        if plan.status is Status.CONVERGED:
            J = plan.cost_J
            chi = plan.chi_land
        elif plan.status is Status.COST_ABOVE_JMAX:
            J = plan.cost_J
            chi = plan.chi_land
        else:
            J = math.inf
            chi = getattr(ref, "chi_land", 0.5 * (bounds[0] + bounds[1]))
        src_chi = {f: holds[f][1] for f in src_fam.feet}
        attempts.append((src_fam, dst_mode.family, joint_chi(src_chi, land, chi), J))
        total += J
        if plan.status is Status.PROJECTION_FAILED:
            termination = Termination.PROJECTION_FAILED
            break
        if plan.status is not Status.CONVERGED or total > j_total_max:
            termination = Termination.JMAX_EXCEEDED
            break
        succeeded += 1
        # advance the physical state
        holds[land] = (problem.landing_bar, chi)
        footholds.append((land, problem.landing_bar, chi))
        nxt = dst_mode.family.swing_foot
        bar, c = holds.pop(nxt)
        swing_pos = point_on_bar(grid.bar(bar), c)
        com = plan.com_knots[-1, :3].copy()
        vel = plan.com_knots[-1, 3:].copy()
        trace.extend(plan.com_knots[1:, :3].tolist())

    for src_fam, dst_fam, chi, J in attempts:
        experience.record(src_fam, dst_fam, chi, J)

    reached = termination is Termination.GOAL
    stats = (float(np.mean(to_ms)), float(np.min(to_ms)), float(np.max(to_ms))) if to_ms else (math.nan,) * 3
    return TrialRecord(trial_index, reached, total, len(attempts), succeeded, n_trans - len(attempts), graph_ms,
                       stats, termination, len(lead.modes), wall_graph, wall_ms, trace, footholds,
                       planner.torso_path, [m.to_dict() for m in lead.modes], statuses, plans)


def records_to_csv(records: list[TrialRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(r.csv_row())
    return buf.getvalue()


@dataclass
class AccumulationResult:
    records: list[TrialRecord]
    experience: ExperienceStore
    planner: Planner

    @property
    def successes(self) -> int:
        return sum(r.reached_goal for r in self.records)

    @property
    def first_success(self) -> int | None:
        for r in self.records:
            if r.reached_goal:
                return r.trial_index
        return None

    def summary(self) -> dict:
        graph = [r.graph_search_ms for r in self.records]
        to = [r.to_solve_ms[0] for r in self.records if r.n_attempted]
        return {
            "trials": len(self.records),
            "successes": self.successes,
            "first_success": self.first_success,
            "mean_graph_ms": float(np.mean(graph)) if graph else math.nan,
            "mean_to_ms": float(np.mean(to)) if to else math.nan,
            "mean_wall_graph_ms": float(np.mean([r.wall_graph_ms for r in self.records])),
        }


def accumulate(scenario: Scenario, n_trials: int, use_torso_path: bool = False, prior: str = "uniform",
               seed: int = 0, out_dir=None, planner: Planner | None = None, config: PlannerConfig | None = None,
               model: RobotModel | None = None, reach=None, progress=None) -> AccumulationResult:
    """Run ``n_trials`` trials threading one experience store; optionally write CSV and experience."""
    if n_trials < 1:
        raise ConfigError("n_trials must be at least 1")
    if prior not in ("uniform", "obstacle"):
        raise ConfigError(f"unknown prior {prior!r}")
    if planner is None:
        planner = Planner.create(scenario, model, reach, config, use_torso_path)
    store = ExperienceStore(scenario.grid, prior)
    records = []
    for t in range(n_trials):
        rec = run_trial(planner, store, t, seed)
        records.append(rec)
        if progress:
            progress(rec)
    result = AccumulationResult(records, store, planner)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trials.csv").write_text(records_to_csv(records))
        store.save(out / "experience.json")
    return result
