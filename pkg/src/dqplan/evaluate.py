"""Episode runners and comparison reports for the planning agents.

Four ways to play a level: subgoal selection by a value network (the
planning agent), uniform-random subgoal selection, direct action
selection by the baseline network, and whole-level planning with no
subgoals at all. Each produces an EpisodeResult; emit_report aggregates
results into per-level statistics and action coefficients.

Timing uses a monotonic clock around goal selection and planning calls
only; environment stepping is excluded. Passing clock=None zeroes all
timing fields, which keeps report bytes reproducible for determinism
audits.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import planner
from .grid import (
    Action,
    GameState,
    LevelSpec,
    apply_action,
    formulate_goals,
    initial_state,
    state_fingerprint,
    DEFAULT_GEMS_NEEDED,
)
from .qlearn import QNet, q_values_a, rank_subgoals


@dataclass(frozen=True)
class EpisodeResult:
    model: str
    level: str
    solved: bool
    total_actions: int
    goal_selection_time: float
    planning_time: float
    goal_selection_errors: int
    wall_time: float
    seed: int | None = None
    actions: tuple[Action, ...] = ()


def _clock_or_zero(clock):
    return clock if clock is not None else (lambda: 0.0)


def _execute(state: GameState, actions, gems_needed: int) -> GameState:
    for action in actions:
        state = apply_action(state, action, gems_needed=gems_needed)
    return state


def _subgoal_loop(
    level: LevelSpec,
    choose,
    model: str,
    level_id: str,
    gems_needed: int,
    strategy: str,
    weight: int,
    timeout_s: float | None,
    clock,
    seed: int | None,
) -> EpisodeResult:
    """Shared select-plan-act loop; `choose` orders candidate subgoals."""
    tick = _clock_or_zero(clock)
    state = initial_state(level)
    executed: list[Action] = []
    select_time = 0.0
    plan_time = 0.0
    errors = 0
    timed_out = False
    wall_start = tick()
    while not state.exited and not timed_out:
        t0 = tick()
        candidates = choose(state)
        select_time += tick() - t0
        for goal in candidates:
            t0 = tick()
            outcome = planner.plan_subgoal(
                state,
                goal,
                gems_needed=gems_needed,
                strategy=strategy,
                weight=weight,
                timeout_s=timeout_s,
            )
            plan_time += tick() - t0
            if outcome.status == planner.UNSOLVABLE:
                errors += 1
                continue
            if outcome.status == planner.TIMEOUT:
                timed_out = True
                break
            actions = planner.plan_to_game_actions(outcome.plan)
            state = _execute(state, actions, gems_needed)
            executed.extend(actions)
            break
        else:
            raise RuntimeError(
                f"no attainable subgoal from {state.player_cell}; "
                "the level violates its solvability guarantee"
            )
    return EpisodeResult(
        model=model,
        level=level_id,
        solved=state.exited,
        total_actions=len(executed),
        goal_selection_time=select_time,
        planning_time=plan_time,
        goal_selection_errors=errors,
        wall_time=tick() - wall_start,
        seed=seed,
        actions=tuple(executed),
    )


def run_dqp_episode(
    level: LevelSpec,
    net: QNet,
    gems_needed: int = DEFAULT_GEMS_NEEDED,
    strategy: str = "wbfs",
    weight: int = 5,
    timeout_s: float | None = None,
    clock=time.monotonic,
    model: str = "dqp",
    level_id: str = "level",
    seed: int | None = None,
) -> EpisodeResult:
    """Play one level with network-ranked subgoals, cheapest value first.

    An unsolvable pick counts as a goal selection error and the next
    subgoal by ascending value is tried; the failed attempt's planning
    time stays in the account. A planner timeout ends the episode
    unsolved.
    """

    def choose(state: GameState):
        return [goal for goal, _ in rank_subgoals(net, state)]

    return _subgoal_loop(
        level, choose, model, level_id, gems_needed, strategy, weight,
        timeout_s, clock, seed,
    )


def run_random_episode(
    level: LevelSpec,
    seed: int,
    gems_needed: int = DEFAULT_GEMS_NEEDED,
    strategy: str = "wbfs",
    weight: int = 5,
    timeout_s: float | None = None,
    clock=time.monotonic,
    model: str = "rm",
    level_id: str = "level",
) -> EpisodeResult:
    """Play one level picking subgoals uniformly at random."""
    rng = np.random.default_rng(seed)

    def choose(state: GameState):
        goals = list(formulate_goals(state).subgoals)
        order = rng.permutation(len(goals))
        return [goals[int(i)] for i in order]

    return _subgoal_loop(
        level, choose, model, level_id, gems_needed, strategy, weight,
        timeout_s, clock, seed,
    )


def run_dql_episode(
    level: LevelSpec,
    net: QNet,
    max_actions: int = 2000,
    seed: int = 0,
    gems_needed: int = DEFAULT_GEMS_NEEDED,
    clock=time.monotonic,
    model: str = "dql",
    level_id: str = "level",
) -> EpisodeResult:
    """Play one level with direct action selection and loop avoidance.

    Per step: take the highest-value action if it leads somewhere new;
    in a visited state fall back to the highest-value action not yet
    tried here; with everything tried, move uniformly at random. The
    episode fails once max_actions steps have been taken.
    """
    tick = _clock_or_zero(clock)
    rng = np.random.default_rng(seed)
    state = initial_state(level)
    executed: list[Action] = []
    select_time = 0.0
    visited: dict[tuple, int] = {}
    tried: dict[tuple, set[Action]] = {}
    visited[state_fingerprint(state)] = 1
    wall_start = tick()
    while not state.exited and len(executed) < max_actions:
        t0 = tick()
        values = q_values_a(net, state)
        ranked = sorted(values, key=lambda av: -av[1])
        best_action = ranked[0][0]
        select_time += tick() - t0
        here = state_fingerprint(state)
        tried_here = tried.setdefault(here, set())
        if state_fingerprint(apply_action(state, best_action, gems_needed=gems_needed)) not in visited:
            action = best_action
        else:
            untried = [a for a, _ in ranked if a not in tried_here]
            if untried:
                action = untried[0]
            else:
                action = list(Action)[int(rng.integers(len(Action)))]
        tried_here.add(action)
        state = apply_action(state, action, gems_needed=gems_needed)
        executed.append(action)
        fp = state_fingerprint(state)
        visited[fp] = visited.get(fp, 0) + 1
    return EpisodeResult(
        model=model,
        level=level_id,
        solved=state.exited,
        total_actions=len(executed),
        goal_selection_time=select_time,
        planning_time=0.0,
        goal_selection_errors=0,
        wall_time=tick() - wall_start,
        seed=seed,
        actions=tuple(executed),
    )


def run_planner_only(
    level: LevelSpec,
    strategy: str = "wbfs",
    weight: int = 5,
    timeout_s: float | None = None,
    gems_needed: int = DEFAULT_GEMS_NEEDED,
    clock=time.monotonic,
    model: str | None = None,
    level_id: str = "level",
    seed: int | None = None,
) -> EpisodeResult:
    """Solve the whole level in one planner call, no subgoals."""
    tick = _clock_or_zero(clock)
    wall_start = tick()
    t0 = tick()
    outcome = planner.plan_level(
        initial_state(level),
        gems_needed=gems_needed,
        strategy=strategy,
        weight=weight,
        timeout_s=timeout_s,
    )
    plan_time = tick() - t0
    actions: tuple[Action, ...] = ()
    solved = False
    if outcome.status == planner.SOLVED:
        actions = tuple(planner.plan_to_game_actions(outcome.plan))
        final = _execute(initial_state(level), actions, gems_needed)
        if not final.exited:
            raise RuntimeError("whole-level plan did not reach the exit on replay")
        solved = True
    return EpisodeResult(
        model=model if model is not None else strategy,
        level=level_id,
        solved=solved,
        total_actions=len(actions),
        goal_selection_time=0.0,
        planning_time=plan_time,
        goal_selection_errors=0,
        wall_time=tick() - wall_start,
        seed=seed,
        actions=actions,
    )


def action_coefficient(model_lengths, rm_lengths) -> float:
    """Geometric mean of per-level length ratios against the random model."""
    if set(model_lengths) != set(rm_lengths):
        raise ValueError("level sets differ between the two length maps")
    if not model_lengths:
        raise ValueError("need at least one level to form a ratio")
    logs = []
    for level, length in model_lengths.items():
        other = rm_lengths[level]
        if length <= 0 or other <= 0:
            raise ValueError(f"nonpositive plan length on level {level!r}")
        logs.append(math.log(length / other))
    return math.exp(sum(logs) / len(logs))


@dataclass(frozen=True)
class CellStats:
    reps: int
    solved: int
    length_mean: float | None
    length_std: float | None
    time_mean: float
    time_std: float | None

    @property
    def success_rate(self) -> float:
        return self.solved / self.reps


@dataclass(frozen=True)
class ComparisonReport:
    results: tuple[EpisodeResult, ...]
    cells: dict
    coefficients: dict

    def rows(self) -> str:
        """Machine-readable lines, one per episode."""
        out = ["model,level,solved,length,time_s,errors,seed"]
        for r in self.results:
            time_s = r.goal_selection_time + r.planning_time
            out.append(
                f"{r.model},{r.level},{int(r.solved)},{r.total_actions},"
                f"{time_s:.6f},{r.goal_selection_errors},"
                f"{r.seed if r.seed is not None else ''}"
            )
        return "\n".join(out) + "\n"

    def table(self) -> str:
        """Human-readable per-level table plus coefficient summary."""
        models = sorted({m for m, _ in self.cells})
        levels = sorted({lv for _, lv in self.cells})
        width = max([len(lv) for lv in levels] + [5])
        header = "level".ljust(width) + "".join(m.rjust(24) for m in models)
        lines = [header]
        for lv in levels:
            row = [lv.ljust(width)]
            for m in models:
                cell = self.cells.get((m, lv))
                row.append(_render_cell(cell).rjust(24))
            lines.append("".join(row))
        lines.append("")
        for model in sorted(self.coefficients):
            lines.append(
                f"action coefficient {model}: {self.coefficients[model]:.4f}"
            )
        return "\n".join(lines) + "\n"


def _render_cell(cell: CellStats | None) -> str:
    if cell is None:
        return "."
    if cell.solved == 0:
        return "-"
    length = f"{cell.length_mean:.1f}"
    if cell.length_std is not None:
        length += f"±{cell.length_std:.1f}"
    rate = f"{cell.success_rate:.0%}"
    return f"{length} ({rate})"


def _mean_std(values) -> tuple[float, float | None]:
    mean = float(np.mean(values))
    # sample std needs two observations; a single repetition omits it
    if len(values) < 2:
        return mean, None
    return mean, float(np.std(values, ddof=1))


def emit_report(results, baseline: str = "rm") -> ComparisonReport:
    """Aggregate episodes into per-(model, level) cells and coefficients.

    Action coefficients compare each model's mean solved length against
    the baseline model per level, using only levels both actually
    solved, then take the geometric mean across those levels.
    """
    ordered = tuple(results)
    by_cell: dict[tuple[str, str], list[EpisodeResult]] = {}
    for r in ordered:
        by_cell.setdefault((r.model, r.level), []).append(r)
    cells: dict[tuple[str, str], CellStats] = {}
    for key, rs in by_cell.items():
        solved = [r for r in rs if r.solved]
        lengths = [r.total_actions for r in solved]
        times = [r.goal_selection_time + r.planning_time for r in rs]
        length_mean, length_std = _mean_std(lengths) if lengths else (None, None)
        time_mean, time_std = _mean_std(times)
        cells[key] = CellStats(
            reps=len(rs),
            solved=len(solved),
            length_mean=length_mean,
            length_std=length_std,
            time_mean=time_mean,
            time_std=time_std,
        )
    coefficients: dict[str, float] = {}
    models = {m for m, _ in cells}
    if baseline in models:
        base_lengths = {
            lv: cells[(baseline, lv)].length_mean
            for m, lv in cells
            if m == baseline and cells[(baseline, lv)].solved > 0
        }
        for model in sorted(models - {baseline}):
            shared = {
                lv: cells[(model, lv)].length_mean
                for m, lv in cells
                if m == model and cells[(model, lv)].solved > 0 and lv in base_lengths
            }
            if shared:
                coefficients[model] = action_coefficient(
                    shared, {lv: base_lengths[lv] for lv in shared}
                )
    return ComparisonReport(results=ordered, cells=cells, coefficients=coefficients)
