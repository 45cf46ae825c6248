"""Procedural training levels and offline dataset collection.

Levels are rejection-sampled random grids: a walled border, uniformly
placed player, exit, and gems, then boulders and dirt by density. A
candidate is kept only when the native oracle proves every gem and the
exit reachable from the start (ignoring the gem-count gate), which is
sufficient for full solvability because collecting gems, digging dirt,
and breaking boulders only ever open the map further.

Collection replays the paper's two recipes: the subgoal collector picks
uniformly random subgoals and records one transition per executed plan,
restarting after each solve so every attainable sample lies on a
trajectory that solved the level; the action collector interleaves
planned walks to random gems with short uniform random walks and
records every executed action.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import planner
from .grid import (
    DEFAULT_GEMS_NEEDED,
    DIRT,
    EMPTY,
    EXIT,
    GEM,
    MAX_SIDE,
    PLAYER,
    WALL,
    BOULDER,
    Action,
    GameState,
    LevelSpec,
    Subgoal,
    SubgoalKind,
    apply_action,
    formulate_goals,
    initial_state,
    parse_level,
    state_fingerprint,
)
from .qlearn import TransitionA, TransitionG

DQP_SAMPLES = 500
DQL_SAMPLES = 5000


@dataclass(frozen=True)
class GenConfig:
    """Level-generator knobs; defaults match the training-level shape."""

    width: int = 26
    height: int = 13
    gem_count: int = 23
    boulder_density: float = 0.12
    dirt_density: float = 0.35
    seed: int = 0

    def __post_init__(self) -> None:
        if not 3 <= self.width <= MAX_SIDE or not 3 <= self.height <= MAX_SIDE:
            raise ValueError(f"level side lengths must lie in 3..{MAX_SIDE}")
        for name in ("boulder_density", "dirt_density"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        interior = (self.width - 2) * (self.height - 2)
        if self.gem_count < 0 or self.gem_count + 2 > interior:
            raise ValueError(
                f"{self.gem_count} gems plus player and exit exceed "
                f"{interior} interior cells"
            )


@dataclass(frozen=True)
class DatasetMeta:
    """Provenance carried in dataset file headers."""

    level_id: str
    sample_count: int
    mode: str
    seed: int

    def to_dict(self) -> dict:
        return {
            "level_id": self.level_id,
            "sample_count": self.sample_count,
            "mode": self.mode,
            "seed": self.seed,
        }


def _random_grid(cfg: GenConfig, rng: np.random.Generator) -> str:
    rows = [[WALL] * cfg.width for _ in range(cfg.height)]
    interior = [
        (x, y) for y in range(1, cfg.height - 1) for x in range(1, cfg.width - 1)
    ]
    picks = rng.choice(len(interior), size=cfg.gem_count + 2, replace=False)
    special = {interior[i] for i in picks}
    px, py = interior[picks[0]]
    ex, ey = interior[picks[1]]
    rows[py][px] = PLAYER
    rows[ey][ex] = EXIT
    for i in picks[2:]:
        gx, gy = interior[i]
        rows[gy][gx] = GEM
    for x, y in interior:
        if (x, y) in special:
            continue
        roll = rng.random()
        if roll < cfg.boulder_density:
            rows[y][x] = BOULDER
        elif roll < cfg.boulder_density + cfg.dirt_density:
            rows[y][x] = DIRT
        else:
            rows[y][x] = EMPTY
    return "\n".join("".join(row) for row in rows) + "\n"


def _solvable(level: LevelSpec) -> bool:
    state = initial_state(level)
    for cell in sorted(state.gem_cells):
        goal = Subgoal(SubgoalKind.GEM, cell)
        if not planner.native_solve(state, goal).solved:
            return False
    exit_goal = Subgoal(SubgoalKind.EXIT, state.exit_cell)
    return planner.native_solve(state, exit_goal, gems_needed=0).solved


def gen_level(cfg: GenConfig, max_tries: int = 500) -> LevelSpec:
    """Random level with every gem and the exit provably reachable.

    Deterministic in the seed: the rejection loop consumes one rng
    stream, so equal configs give byte-identical level text.
    """
    rng = np.random.default_rng(cfg.seed)
    for _ in range(max_tries):
        level = parse_level(_random_grid(cfg, rng))
        if _solvable(level):
            return level
    raise RuntimeError(
        f"no solvable level found in {max_tries} tries for {cfg}; "
        "lower the densities or the gem count"
    )


def _execute(state: GameState, actions, gems_needed: int) -> GameState:
    for action in actions:
        state = apply_action(state, action, gems_needed=gems_needed)
    return state


def _plan_actions(state, goal, gems_needed, strategy, weight, timeout_s):
    """Plan one subgoal; returns (status, game actions or None)."""
    outcome = planner.plan_subgoal(
        state, goal, gems_needed=gems_needed, strategy=strategy,
        weight=weight, timeout_s=timeout_s,
    )
    if outcome.status != planner.SOLVED:
        return outcome.status, None
    return planner.SOLVED, planner.plan_to_game_actions(outcome.plan)


def collect_dqp(
    level: LevelSpec,
    n: int = DQP_SAMPLES,
    seed: int = 0,
    gems_needed: int = DEFAULT_GEMS_NEEDED,
    lam: float = 200.0,
    r_f: float = -200.0,
    strategy: str = "wbfs",
    weight: int = 5,
    timeout_s: float | None = None,
    max_trajectories: int = 10_000,
    stall_limit: int = 50,
    log=None,
) -> list[TransitionG]:
    """Gather n unique subgoal transitions by random subgoal exploration.

    One trajectory runs from the initial state until the exit is
    reached; its samples are committed only then, so attainable samples
    always lie on a successful trajectory. Unattainable exit picks
    record a penalty sample and re-pick without moving. Uniqueness is
    judged on (state content, subgoal): orientation is invisible to the
    encoder, so it never splits keys.

    stall_limit bounds the consecutive trajectories allowed to add no
    new unique sample; deep decision branches are rare under random
    picks, so levels near their capacity need generous patience.
    """
    start = initial_state(level)
    if start.gems_collected + len(start.gem_cells) < gems_needed:
        raise ValueError("level holds fewer gems than the exit threshold")
    rng = np.random.default_rng(seed)
    samples: dict[tuple, TransitionG] = {}
    stalled = 0
    for _ in range(max_trajectories):
        if len(samples) >= n:
            break
        state = start
        trajectory: dict[tuple, TransitionG] = {}
        completed = False
        # pick budget: a trajectory that cannot finish (all picks timing
        # out) is discarded instead of spinning
        for _ in range(1000):
            goals = formulate_goals(state).subgoals
            goal = goals[int(rng.integers(len(goals)))]
            key = (state_fingerprint(state, include_orientation=False), goal)
            if goal.kind is SubgoalKind.EXIT and state.gems_collected < gems_needed:
                trajectory.setdefault(
                    key, TransitionG(state, goal, float(lam), None)
                )
                continue
            status, actions = _plan_actions(
                state, goal, gems_needed, strategy, weight, timeout_s
            )
            if status == planner.TIMEOUT:
                if log is not None:
                    log(f"planner timeout on {goal} during subgoal collection")
                continue
            if status != planner.SOLVED:
                raise RuntimeError(
                    f"attainable subgoal {goal} reported {status}; "
                    "the level failed its solvability guarantee"
                )
            nxt = _execute(state, actions, gems_needed)
            if goal.kind is SubgoalKind.GEM and goal.cell in nxt.gem_cells:
                raise RuntimeError(f"plan for {goal} did not collect its gem")
            if nxt.exited:
                trajectory.setdefault(
                    key, TransitionG(state, goal, float(len(actions) + r_f), None)
                )
                completed = True
                break
            trajectory.setdefault(
                key, TransitionG(state, goal, float(len(actions)), nxt)
            )
            state = nxt
        before = len(samples)
        if completed:
            for key, transition in trajectory.items():
                samples.setdefault(key, transition)
        stalled = stalled + 1 if len(samples) == before else 0
        if stalled >= stall_limit:
            raise RuntimeError(
                f"subgoal collection stalled at {len(samples)} unique samples; "
                f"the level cannot supply {n}"
            )
    if len(samples) < n:
        raise RuntimeError(
            f"subgoal collection needed more than {max_trajectories} trajectories"
        )
    return list(samples.values())[:n]


def collect_dql(
    level: LevelSpec,
    n: int = DQL_SAMPLES,
    seed: int = 0,
    gems_needed: int = DEFAULT_GEMS_NEEDED,
    strategy: str = "wbfs",
    weight: int = 5,
    timeout_s: float | None = None,
    max_trajectories: int = 10_000,
    stall_limit: int = 50,
    log=None,
) -> list[TransitionA]:
    """Gather n unique action transitions by plan/random-walk interleaving.

    Each trajectory alternates a planned walk to a uniformly random
    remaining gem with 1..10 uniform random actions; once no gems
    remain it plans to the exit. Every executed action is recorded as
    (s, a, -1, s'), with reward 5 and no next state on completion.
    Uniqueness is judged on (state content, orientation, action).
    """
    start = initial_state(level)
    if start.gems_collected + len(start.gem_cells) < gems_needed:
        raise ValueError("level holds fewer gems than the exit threshold")
    rng = np.random.default_rng(seed)
    samples: dict[tuple, TransitionA] = {}
    actions_order = tuple(Action)
    stalled = 0

    def record(state, action, nxt) -> bool:
        """Add one executed action; True when the level was completed."""
        key = (state_fingerprint(state, include_orientation=True), action)
        if nxt.exited:
            samples.setdefault(key, TransitionA(state, action, 5.0, None))
            return True
        samples.setdefault(key, TransitionA(state, action, -1.0, nxt))
        return False

    for _ in range(max_trajectories):
        if len(samples) >= n:
            break
        state = start
        before = len(samples)
        while len(samples) < n:
            if state.gem_cells:
                cells = sorted(state.gem_cells)
                target = Subgoal(SubgoalKind.GEM, cells[int(rng.integers(len(cells)))])
            elif state.gems_collected >= gems_needed:
                target = Subgoal(SubgoalKind.EXIT, state.exit_cell)
            else:
                break  # out of gems yet short of the gate: dead trajectory
            status, planned = _plan_actions(
                state, target, gems_needed, strategy, weight, timeout_s
            )
            if status == planner.TIMEOUT:
                if log is not None:
                    log(f"planner timeout on {target}; restarting trajectory")
                break
            if status != planner.SOLVED:
                raise RuntimeError(
                    f"attainable subgoal {target} reported {status} during "
                    "action collection"
                )
            done = False
            for action in planned:
                nxt = apply_action(state, action, gems_needed=gems_needed)
                done = record(state, action, nxt)
                if done:
                    break
                state = nxt
            if done:
                break
            for _ in range(int(rng.integers(1, 11))):
                action = actions_order[int(rng.integers(len(actions_order)))]
                nxt = apply_action(state, action, gems_needed=gems_needed)
                done = record(state, action, nxt)
                if done:
                    break
                state = nxt
            if done:
                break
        stalled = stalled + 1 if len(samples) == before else 0
        if stalled >= stall_limit:
            raise RuntimeError(
                f"action collection stalled at {len(samples)} unique samples; "
                f"the level cannot supply {n}"
            )
    if len(samples) < n:
        raise RuntimeError(
            f"action collection needed more than {max_trajectories} trajectories"
        )
    return list(samples.values())[:n]


def enumerate_subgoal_transitions(
    level: LevelSpec,
    gems_needed: int = DEFAULT_GEMS_NEEDED,
    lam: float = 200.0,
    r_f: float = -200.0,
    strategy: str = "wbfs",
    weight: int = 5,
    max_states: int = 20_000,
) -> list[TransitionG]:
    """Every (state, subgoal) transition reachable by whole-plan steps.

    Exhaustively explores the subgoal-decision graph: from each reachable
    decision state, try every open subgoal, follow the planner's path to
    its next decision state. Tractable for small levels; used to build
    complete training sets where random collection would be wasteful.
    """
    start = initial_state(level)
    seen = {state_fingerprint(start, include_orientation=False)}
    frontier = [start]
    out: list[TransitionG] = []
    while frontier:
        state = frontier.pop()
        for goal in formulate_goals(state).subgoals:
            if goal.kind is SubgoalKind.EXIT and state.gems_collected < gems_needed:
                out.append(TransitionG(state, goal, float(lam), None))
                continue
            status, actions = _plan_actions(
                state, goal, gems_needed, strategy, weight, None
            )
            if status != planner.SOLVED:
                raise RuntimeError(f"subgoal {goal} reported {status} while enumerating")
            nxt = _execute(state, actions, gems_needed)
            if nxt.exited:
                out.append(TransitionG(state, goal, float(len(actions) + r_f), None))
                continue
            out.append(TransitionG(state, goal, float(len(actions)), nxt))
            key = state_fingerprint(nxt, include_orientation=False)
            if key not in seen:
                if len(seen) >= max_states:
                    raise RuntimeError(f"more than {max_states} decision states")
                seen.add(key)
                frontier.append(nxt)
    return out
