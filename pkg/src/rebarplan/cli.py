"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 planning failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .env import ConfigError, PRESETS, load_scenario, preset_path
from .experience import ExperienceStore
from .kinematics import RobotModel, fit_all, load_reach, save_reach
from .modegraph import GraphBuildError
from .render import report_figures, scene_svg, trial_swing_paths, write_svg
from .trials import (REACH_SAMPLES, Planner, PlannerConfig, accumulate, records_to_csv,
                     run_trial)

EXIT_CONFIG = 2
EXIT_PLANNING = 3


class PlanningFailure(RuntimeError):
    pass


def _scenario(spec: str):
    path = preset_path(spec) if spec in PRESETS else Path(spec)
    return load_scenario(path)


def _planner(scenario, bins, jmax, reach_path, torso, timing=None):
    cfg = PlannerConfig.from_scenario(scenario, bins=bins, jmax=jmax, timing=timing)
    model = RobotModel()
    reach = load_reach(reach_path) if reach_path else None
    return Planner.create(scenario, model, reach, cfg, torso)


def _run(fn):
    """Map library errors to exit codes."""
    try:
        fn()
    except (ConfigError, ValueError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (GraphBuildError, PlanningFailure) as exc:
        click.echo(f"planning failed: {exc}", err=True)
        sys.exit(EXIT_PLANNING)


scenario_opt = click.option("--scenario", required=True,
                            help=f"Scenario JSON path or preset name ({', '.join(PRESETS)}).")
seed_opt = click.option("--seed", type=int, default=0, show_default=True)
out_opt = click.option("--out", "out_dir", type=click.Path(file_okay=False), default="out", show_default=True)
bins_opt = click.option("--bins", type=int, default=None, help="Coparameter bins per bar (overrides scenario).")
jmax_opt = click.option("--jmax", type=float, default=None, help="Per-transition cost ceiling.")
reach_opt = click.option("--reach", "reach_path", type=click.Path(dir_okay=False), default=None,
                         help="reach.json from fit-reach; refitted when absent.")
torso_opt = click.option("--torso-path", type=bool, default=False, show_default=True,
                         help="Bias leads toward a guiding torso path.")


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def main():
    """Experience-based contact planning for a quadruped on rebar grids."""


@main.command("fit-reach")
@seed_opt
@out_opt
@click.option("--samples", type=int, default=REACH_SAMPLES, show_default=True)
def fit_reach_cmd(seed, out_dir, samples):
    """Fit per-foot reachability superquadrics and write reach.json."""
    def go():
        if samples < 1000:
            raise ConfigError("--samples must be at least 1000")
        reach = fit_all(RobotModel(), samples, seed)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_reach(reach, out / "reach.json")
        click.echo(f"wrote {out / 'reach.json'}")
    _run(go)


@main.command("build-graph")
@scenario_opt
@bins_opt
@reach_opt
@out_opt
def build_graph_cmd(scenario, bins, reach_path, out_dir):
    """Build the mode-transition graph and report its size."""
    def go():
        sc = _scenario(scenario)
        planner = _planner(sc, bins, None, reach_path, False)
        summary = planner.graph.summary()
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "graph.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
        click.echo(" ".join(f"{k}={v}" for k, v in summary.items()))
    _run(go)


@main.command("accumulate")
@scenario_opt
@seed_opt
@click.option("--trials", "n_trials", type=int, default=100, show_default=True)
@torso_opt
@click.option("--prior", type=click.Choice(["uniform", "obstacle"]), default="uniform", show_default=True)
@out_opt
@bins_opt
@jmax_opt
@reach_opt
@click.option("--timing", type=click.Choice(["work", "wall"]), default=None,
              help="Logged times: deterministic work clock or wall clock.")
@click.option("--report/--no-report", default=True, show_default=True, help="Write PNG figures.")
def accumulate_cmd(scenario, seed, n_trials, torso_path, prior, out_dir, bins, jmax, reach_path, timing, report):
    """Run planning trials that accumulate experience; writes CSV, experience and figures."""
    def go():
        sc = _scenario(scenario)
        planner = _planner(sc, bins, jmax, reach_path, torso_path, timing)
        out = Path(out_dir)
        res = accumulate(sc, n_trials, torso_path, prior, seed, out, planner=planner)
        logs = [r.to_dict() for r in res.records]
        (out / "trials.json").write_text(json.dumps(logs, sort_keys=True) + "\n")
        last = next((r for r in reversed(res.records) if r.reached_goal), res.records[-1])
        write_svg(out / "scene.svg", scene_svg(sc, last.com_trace, last.footholds, planner.torso_path,
                                               goal_radius=planner.config.weights.goal_radius,
                                               title=f"{sc.name} trial {last.trial_index}"))
        if report:
            report_figures(res.records, out, f"{sc.name} ({prior} prior)")
        s = res.summary()
        click.echo(f"trials={s['trials']} successes={s['successes']} first_success={s['first_success']} "
                   f"mean_graph_ms={s['mean_graph_ms']:.3f} mean_to_ms={s['mean_to_ms']:.3f}")
    _run(go)


@main.command("plan-once")
@scenario_opt
@seed_opt
@torso_opt
@click.option("--prior", type=click.Choice(["uniform", "obstacle"]), default="uniform", show_default=True)
@click.option("--experience", "experience_path", type=click.Path(dir_okay=False), default=None,
              help="experience.json to plan with; a fresh store otherwise.")
@out_opt
@bins_opt
@jmax_opt
@reach_opt
def plan_once_cmd(scenario, seed, torso_path, prior, experience_path, out_dir, bins, jmax, reach_path):
    """Plan a single trial and export the lead, trajectories and an SVG."""
    def go():
        sc = _scenario(scenario)
        planner = _planner(sc, bins, jmax, reach_path, torso_path)
        store = (ExperienceStore.load(experience_path, sc.grid) if experience_path
                 else ExperienceStore(sc.grid, prior))
        rec = run_trial(planner, store, 0, seed, keep_plans=True)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trial.json").write_text(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
        (out / "trials.csv").write_text(records_to_csv([rec]))
        write_svg(out / "scene.svg", scene_svg(sc, rec.com_trace, rec.footholds, planner.torso_path,
                                               trial_swing_paths(rec.plans),
                                               goal_radius=planner.config.weights.goal_radius,
                                               title=f"{sc.name} plan-once"))
        click.echo(f"termination={rec.termination.value} attempted={rec.n_attempted} "
                   f"succeeded={rec.n_succeeded} total_cost={rec.total_cost:.6f}")
        if not rec.reached_goal:
            raise PlanningFailure(f"trial ended with {rec.termination.value}")
    _run(go)


@main.command("render")
@scenario_opt
@click.option("--log", "log_path", type=click.Path(dir_okay=False), default=None,
              help="trial.json or trials.json; the grid alone when absent.")
@click.option("--trial", "trial_index", type=int, default=None, help="Trial to draw from a trials.json log.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default="scene.svg", show_default=True)
@click.option("--goal-radius", type=float, default=0.10, show_default=True)
def render_cmd(scenario, log_path, trial_index, out_path, goal_radius):
    """Render a scenario and optionally one logged trial to SVG."""
    def go():
        sc = _scenario(scenario)
        trace = holds = path = swings = None
        if log_path:
            doc = json.loads(Path(log_path).read_text())
            if isinstance(doc, list):
                if not doc:
                    raise ConfigError("empty trial log")
                doc = doc[-1] if trial_index is None else next(d for d in doc if d["trial"] == trial_index)
            trace, holds = doc["com_trace"], doc["footholds"]
            if doc.get("torso_path"):
                from .torso import TorsoPath
                path = TorsoPath.from_dict(doc["torso_path"])
            swings = trial_swing_paths(doc.get("plans", []))
        out = Path(out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_svg(out, scene_svg(sc, trace, holds, path, swings, goal_radius=goal_radius, title=sc.name))
        click.echo(f"wrote {out}")
    _run(go)


if __name__ == "__main__":
    main()
