"""Forward-search planning over ground tasks, plus a native grid oracle.

Heuristics come from one layered delete-relaxed fixpoint:

* ``h_max``: the layer at which the last goal atom appears (admissible),
* ``h_ff``: the number of distinct actions in a relaxed plan extracted
  backwards through earliest achievers.

Strategies:

* ``opt``: A* with ``h_max``; returns provably optimal plans,
* ``wbfs``: weighted best-first search with ``f = g + W * h_ff``,
* ``ehc``: enforced hill-climbing whose breadth-first plateau escape
  expands helpful actions first (those achieving a first-layer atom of
  the relaxed plan), retries the plateau with all applicable actions,
  and falls back to ``wbfs`` when even that dead-ends (so the strategy
  stays complete).

Ties break deterministically: ascending f, then descending g, then
insertion order. All searches are cooperative about timeouts.
"""

from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass, field

from . import grid, grounding, pddl
from .grounding import GroundAction, GroundTask
from .pddl import name_to_cell

INF = float("inf")

SOLVED = "solved"
UNSOLVABLE = "unsolvable"
TIMEOUT = "timeout"


@dataclass(frozen=True)
class Plan:
    """A sequence of action names (ground task plans) or grid Actions (native)."""

    actions: tuple

    @property
    def length(self) -> int:
        return len(self.actions)


@dataclass
class PlanOutcome:
    status: str
    plan: Plan | None
    elapsed: float
    expansions: int = 0

    @property
    def solved(self) -> bool:
        return self.status == SOLVED


# ---------------------------------------------------------------------------
# Relaxed planning graph


class _RelaxedModel:
    """Rule view of a ground task: one rule per (action, effect clause)."""

    def __init__(self, task: GroundTask):
        n_atoms = len(task.atoms)
        self.n_atoms = n_atoms
        rule_pre: list[tuple[int, ...]] = []
        rule_adds: list[tuple[int, ...]] = []
        rule_action: list[int] = []
        for aidx, action in enumerate(task.actions):
            for clause in action.effects:
                if not clause.add:
                    continue
                pre = tuple(sorted(set(action.pre) | set(clause.condition)))
                rule_pre.append(pre)
                rule_adds.append(clause.add)
                rule_action.append(aidx)
        self.rule_pre = rule_pre
        self.rule_adds = rule_adds
        self.rule_action = rule_action
        self.rule_pre_count = [len(p) for p in rule_pre]
        self.zero_pre_rules = [r for r, c in enumerate(self.rule_pre_count) if c == 0]
        self.rules_by_atom: list[list[int]] = [[] for _ in range(n_atoms)]
        for r, pre in enumerate(rule_pre):
            for atom in pre:
                self.rules_by_atom[atom].append(r)
        self.adders_by_atom: list[list[int]] = [[] for _ in range(n_atoms)]
        for r, adds in enumerate(rule_adds):
            for atom in adds:
                self.adders_by_atom[atom].append(r)

    def levels(self, state: frozenset[int], goal: tuple[int, ...]):
        """Layered relaxed fixpoint with early exit once the goal is covered.

        Returns (level, achiever, goal_reached); level[a] is -1 for atoms
        not reached before the cutoff.
        """
        level = [-1] * self.n_atoms
        achiever = [-1] * self.n_atoms
        count = list(self.rule_pre_count)
        remaining = 0
        for g in goal:
            if g not in state:
                remaining += 1
        wave = []
        for atom in state:
            level[atom] = 0
            wave.append(atom)
        if remaining == 0:
            return level, achiever, True
        depth = 0
        fired: list[int] = list(self.zero_pre_rules)
        rules_by_atom = self.rules_by_atom
        rule_adds = self.rule_adds
        goal_set = set(goal)
        while True:
            for atom in wave:
                for r in rules_by_atom[atom]:
                    count[r] -= 1
                    if count[r] == 0:
                        fired.append(r)
            depth += 1
            next_wave = []
            for r in fired:
                for a in rule_adds[r]:
                    if level[a] == -1:
                        level[a] = depth
                        achiever[a] = r
                        next_wave.append(a)
                        if a in goal_set:
                            remaining -= 1
            if remaining == 0:
                return level, achiever, True
            if not next_wave:
                return level, achiever, False
            wave = next_wave
            fired = []

    def h_max(self, state: frozenset[int], goal: tuple[int, ...]) -> float:
        level, _, reached = self.levels(state, goal)
        if not reached:
            return INF
        return max((level[g] for g in goal), default=0)

    def h_ff(
        self, state: frozenset[int], goal: tuple[int, ...], with_helpful: bool = False
    ):
        """Relaxed-plan heuristic; optionally also the helpful action set.

        Helpful actions are the applicable actions achieving an atom the
        relaxed plan needs in its first layer.
        """
        level, achiever, reached = self.levels(state, goal)
        if not reached:
            return (INF, frozenset()) if with_helpful else INF
        max_level = max((level[g] for g in goal), default=0)
        if max_level == 0:
            return (0, frozenset()) if with_helpful else 0
        buckets: list[list[int]] = [[] for _ in range(max_level + 1)]
        marked = [False] * self.n_atoms
        for g in goal:
            if level[g] > 0 and not marked[g]:
                marked[g] = True
                buckets[level[g]].append(g)
        selected: set[int] = set()
        for depth in range(max_level, 0, -1):
            for atom in buckets[depth]:
                r = achiever[atom]
                selected.add(self.rule_action[r])
                for p in self.rule_pre[r]:
                    if level[p] > 0 and not marked[p]:
                        marked[p] = True
                        buckets[level[p]].append(p)
        if not with_helpful:
            return len(selected)
        helpful: set[int] = set()
        for atom in buckets[1]:
            for r in self.adders_by_atom[atom]:
                if all(level[p] == 0 for p in self.rule_pre[r]):
                    helpful.add(self.rule_action[r])
        return len(selected), frozenset(helpful)


class _Applicability:
    """Per-task successor generator: actions indexed by a rare pre atom."""

    def __init__(self, task: GroundTask):
        freq: dict[int, int] = {}
        for action in task.actions:
            for atom in action.pre:
                freq[atom] = freq.get(atom, 0) + 1
        self.always: list[int] = []
        buckets: dict[int, list[int]] = {}
        for aidx, action in enumerate(task.actions):
            if not action.pre:
                self.always.append(aidx)
                continue
            key = min(action.pre, key=lambda a: (freq[a], a))
            buckets.setdefault(key, []).append(aidx)
        self.buckets = buckets

    def applicable(self, task: GroundTask, state: frozenset[int]) -> list[int]:
        out = []
        buckets = self.buckets
        actions = task.actions
        for aidx in self.always:
            if actions[aidx].pre <= state:
                out.append(aidx)
        for atom in state:
            for aidx in buckets.get(atom, ()):
                if actions[aidx].pre <= state:
                    out.append(aidx)
        out.sort()
        return out


def _relaxed(task: GroundTask) -> _RelaxedModel:
    model = task.caches.get("relaxed")
    if model is None:
        model = _RelaxedModel(task)
        task.caches["relaxed"] = model
    return model


def _applicability(task: GroundTask) -> _Applicability:
    idx = task.caches.get("applicability")
    if idx is None:
        idx = _Applicability(task)
        task.caches["applicability"] = idx
    return idx


def h_ff(task: GroundTask, state: frozenset[int] | None = None) -> float:
    if task.unsolvable_goal:
        return INF
    return _relaxed(task).h_ff(task.init if state is None else state, task.goal)


def h_max(task: GroundTask, state: frozenset[int] | None = None) -> float:
    if task.unsolvable_goal:
        return INF
    return _relaxed(task).h_max(task.init if state is None else state, task.goal)


# ---------------------------------------------------------------------------
# Ground state transition (used by search and plan validation)


def _apply(task: GroundTask, state: frozenset[int], action: GroundAction) -> frozenset[int]:
    adds: set[int] = set()
    dels: set[int] = set()
    for clause in action.effects:
        fire = True
        for c in clause.condition:
            if c not in state:
                fire = False
                break
        if fire:
            adds.update(clause.add)
            dels.update(clause.delete)
    return frozenset((state - dels) | adds)


def _goal_satisfied(task: GroundTask, state: frozenset[int]) -> bool:
    for g in task.goal:
        if g not in state:
            return False
    return True


# ---------------------------------------------------------------------------
# Search strategies


def solve(
    task: GroundTask,
    strategy: str = "wbfs",
    weight: int = 5,
    timeout_s: float | None = None,
) -> PlanOutcome:
    """Plan for a ground task. Strategies: ``opt``, ``wbfs``, ``ehc``."""
    start = time.monotonic()
    if strategy == "opt":
        return _best_first(task, use_ff=False, weight=1, timeout_s=timeout_s, start=start)
    if strategy == "wbfs":
        return _best_first(task, use_ff=True, weight=weight, timeout_s=timeout_s, start=start)
    if strategy == "ehc":
        return _ehc(task, weight=weight, timeout_s=timeout_s, start=start)
    raise ValueError(f"unknown strategy {strategy!r}")


def _timed_out(start: float, timeout_s: float | None) -> bool:
    return timeout_s is not None and time.monotonic() - start > timeout_s


def _best_first(
    task: GroundTask,
    use_ff: bool,
    weight: int,
    timeout_s: float | None,
    start: float,
) -> PlanOutcome:
    relaxed = _relaxed(task)
    applicability = _applicability(task)
    heuristic = relaxed.h_ff if use_ff else relaxed.h_max
    init = task.init
    if task.unsolvable_goal:
        return PlanOutcome(UNSOLVABLE, None, time.monotonic() - start)
    h0 = heuristic(init, task.goal)
    if h0 == INF:
        return PlanOutcome(UNSOLVABLE, None, time.monotonic() - start)
    counter = itertools.count()
    # parent map doubles as the closed set: state -> (g, parent, action)
    best: dict[frozenset[int], tuple[int, frozenset[int] | None, int | None]] = {
        init: (0, None, None)
    }
    open_heap = [(weight * h0, 0, next(counter), init)]
    expansions = 0
    while open_heap:
        f, neg_g, _, state = heapq.heappop(open_heap)
        g = -neg_g
        if best[state][0] < g:
            continue  # stale entry
        if _goal_satisfied(task, state):
            return PlanOutcome(
                SOLVED, _extract_plan(task, best, state), time.monotonic() - start, expansions
            )
        expansions += 1
        if expansions % 64 == 0 and _timed_out(start, timeout_s):
            return PlanOutcome(TIMEOUT, None, time.monotonic() - start, expansions)
        for aidx in applicability.applicable(task, state):
            succ = _apply(task, state, task.actions[aidx])
            g2 = g + 1
            known = best.get(succ)
            if known is not None and known[0] <= g2:
                continue
            h = heuristic(succ, task.goal)
            if h == INF:
                continue
            best[succ] = (g2, state, aidx)
            heapq.heappush(open_heap, (g2 + weight * h, -g2, next(counter), succ))
    return PlanOutcome(UNSOLVABLE, None, time.monotonic() - start, expansions)


def _extract_plan(task, best, state) -> Plan:
    names: list[str] = []
    while True:
        _, parent, aidx = best[state]
        if parent is None:
            break
        names.append(task.actions[aidx].name)
        state = parent
    names.reverse()
    return Plan(tuple(names))


def _ehc(task: GroundTask, weight: int, timeout_s: float | None, start: float) -> PlanOutcome:
    relaxed = _relaxed(task)
    applicability = _applicability(task)
    if task.unsolvable_goal:
        return PlanOutcome(UNSOLVABLE, None, time.monotonic() - start)
    current = task.init
    h_cur, helpful_cur = relaxed.h_ff(current, task.goal, with_helpful=True)
    if h_cur == INF:
        return PlanOutcome(UNSOLVABLE, None, time.monotonic() - start)
    plan: list[str] = []
    expansions = 0
    while h_cur > 0:
        # breadth-first search for a strictly better state; first over helpful
        # actions only, then (if that exhausts) over all applicable actions
        found = None
        for restricted in (True, False):
            visited = {current}
            queue: list[tuple[frozenset[int], list[str], frozenset[int]]] = [
                (current, [], helpful_cur)
            ]
            qi = 0
            while qi < len(queue):
                state, path, helpful = queue[qi]
                qi += 1
                expansions += 1
                if expansions % 64 == 0 and _timed_out(start, timeout_s):
                    return PlanOutcome(TIMEOUT, None, time.monotonic() - start, expansions)
                if restricted:
                    candidates = sorted(helpful)
                else:
                    candidates = applicability.applicable(task, state)
                for aidx in candidates:
                    succ = _apply(task, state, task.actions[aidx])
                    if succ in visited:
                        continue
                    visited.add(succ)
                    h, succ_helpful = relaxed.h_ff(succ, task.goal, with_helpful=True)
                    if h == INF:
                        continue
                    spath = path + [task.actions[aidx].name]
                    if h < h_cur:
                        found = (succ, spath, h, succ_helpful)
                        break
                    queue.append((succ, spath, succ_helpful))
                if found:
                    break
            if found:
                break
        if found is None:
            # dead end: restart with the complete strategy
            outcome = _best_first(task, use_ff=True, weight=weight, timeout_s=timeout_s, start=start)
            outcome.expansions += expansions
            return outcome
        current, path, h_cur, helpful_cur = found
        plan.extend(path)
    return PlanOutcome(SOLVED, Plan(tuple(plan)), time.monotonic() - start, expansions)


# ---------------------------------------------------------------------------
# Plan utilities


def format_plan(plan: Plan) -> str:
    lines = [f"({name})" for name in plan.actions]
    lines.append(f"; length = {plan.length}")
    return "\n".join(lines) + "\n"


def parse_plan(text: str) -> Plan:
    names = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith(";"):
            continue
        if not (line.startswith("(") and line.endswith(")")):
            raise ValueError(f"bad plan line: {raw!r}")
        names.append(" ".join(line[1:-1].split()))
    return Plan(tuple(names))


def validate_plan(task: GroundTask, plan: Plan) -> bool:
    """Simulate the plan from init; True iff every step applies and the goal holds."""
    by_name: dict[str, list[GroundAction]] = {}
    for action in task.actions:
        by_name.setdefault(action.name, []).append(action)
    state = task.init
    for name in plan.actions:
        stepped = None
        for action in by_name.get(name, ()):
            if action.pre <= state:
                stepped = _apply(task, state, action)
                break
        if stepped is None:
            return False
        state = stepped
    return _goal_satisfied(task, state)


_VERB_TO_ACTION = {
    "move-up": grid.Action.UP,
    "move-down": grid.Action.DOWN,
    "move-left": grid.Action.LEFT,
    "move-right": grid.Action.RIGHT,
    "move-up-gem": grid.Action.UP,
    "move-down-gem": grid.Action.DOWN,
    "move-left-gem": grid.Action.LEFT,
    "move-right-gem": grid.Action.RIGHT,
    "turn-up": grid.Action.UP,
    "turn-down": grid.Action.DOWN,
    "turn-left": grid.Action.LEFT,
    "turn-right": grid.Action.RIGHT,
    "use-up": grid.Action.USE,
    "use-down": grid.Action.USE,
    "use-left": grid.Action.USE,
    "use-right": grid.Action.USE,
}


def plan_to_game_actions(plan: Plan) -> list[grid.Action]:
    """Map ground action names back to game actions (they correspond 1:1)."""
    out = []
    for name in plan.actions:
        verb = name.split(" ", 1)[0]
        action = _VERB_TO_ACTION.get(verb)
        if action is None:
            raise ValueError(f"cannot map plan action {name!r} to a game action")
        out.append(action)
    return out


# ---------------------------------------------------------------------------
# Native oracle: A* directly on game states


def native_solve(
    state: grid.GameState,
    goal: grid.Subgoal,
    gems_needed: int = grid.DEFAULT_GEMS_NEEDED,
    max_expansions: int = 500_000,
) -> PlanOutcome:
    """Optimal plan for one subgoal, searching game states directly.

    Independent of the declarative model: successors come from
    :func:`dqplan.grid.apply_action`. Used as an oracle for the planner
    and as the solvability check in level generation. An EXIT goal with
    fewer than ``gems_needed`` gems is unsolvable by definition (picking
    up more gems on the way does not count; only the planning model's
    notion of the current state matters, and both models agree on it).
    """
    t0 = time.monotonic()
    if state.exited:
        raise ValueError("cannot plan from an exited state")
    if goal.kind is grid.SubgoalKind.EXIT:
        if goal.cell != state.exit_cell:
            raise ValueError("exit subgoal does not match the exit cell")
        if state.gems_collected < gems_needed:
            return PlanOutcome(UNSOLVABLE, None, time.monotonic() - t0)
    elif goal.cell not in state.gem_cells:
        raise ValueError(f"no gem at {goal.cell}")
    target = goal.cell

    def key(s: grid.GameState):
        return (
            s.player_cell,
            s.orientation.value,
            s.boulder_cells,
            s.gems_collected,
            s.exited,
        )

    def h(s: grid.GameState) -> int:
        return abs(s.player_cell[0] - target[0]) + abs(s.player_cell[1] - target[1])

    counter = itertools.count()
    start_key = key(state)
    best: dict = {start_key: (0, None, None)}
    holder = {start_key: state}
    open_heap = [(h(state), 0, next(counter), start_key)]
    expansions = 0
    while open_heap:
        f, neg_g, _, skey = heapq.heappop(open_heap)
        g = -neg_g
        if best[skey][0] < g:
            continue
        s = holder[skey]
        if s.player_cell == target and (goal.kind is grid.SubgoalKind.GEM or s.exited):
            plan = []
            cur = skey
            while True:
                _, parent, action = best[cur]
                if parent is None:
                    break
                plan.append(action)
                cur = parent
            plan.reverse()
            return PlanOutcome(SOLVED, Plan(tuple(plan)), time.monotonic() - t0, expansions)
        if s.exited:
            continue  # absorbing: a finished level allows no more actions
        expansions += 1
        if expansions > max_expansions:
            return PlanOutcome(TIMEOUT, None, time.monotonic() - t0, expansions)
        for action in grid.Action:
            succ = grid.apply_action(s, action, gems_needed=gems_needed)
            kk = key(succ)
            g2 = g + 1
            known = best.get(kk)
            if known is not None and known[0] <= g2:
                continue
            best[kk] = (g2, skey, action)
            holder[kk] = succ
            heapq.heappush(open_heap, (g2 + h(succ), -g2, next(counter), kk))
    return PlanOutcome(UNSOLVABLE, None, time.monotonic() - t0, expansions)


# ---------------------------------------------------------------------------
# Declarative pipeline facade: emit, parse, ground, solve in one call

_domain_cache: dict[tuple[int, int], pddl.DomainDef] = {}


def game_domain(
    gems_needed: int = grid.DEFAULT_GEMS_NEEDED,
    counter_cap: int = pddl.DEFAULT_COUNTER_CAP,
) -> pddl.DomainDef:
    """Parsed game domain, cached per (gems_needed, counter_cap)."""
    key = (gems_needed, counter_cap)
    domain = _domain_cache.get(key)
    if domain is None:
        domain = pddl.parse_domain(pddl.domain_text(gems_needed, counter_cap))
        _domain_cache[key] = domain
    return domain


def ground_subgoal_task(
    state: grid.GameState,
    goal: grid.Subgoal,
    gems_needed: int = grid.DEFAULT_GEMS_NEEDED,
) -> GroundTask:
    """Ground a single-subgoal task for the given state.

    Gem tasks assert the live counter, so the domain's gate threshold
    must match gems_needed; exit tasks freeze the counter and only read
    ``enough-gems`` from the init. Both ground against the same cached
    domain so one parse serves a whole episode.
    """
    reachable_count = state.gems_collected + len(state.gem_cells)
    cap = max(pddl.DEFAULT_COUNTER_CAP, reachable_count, gems_needed)
    domain = game_domain(gems_needed=gems_needed, counter_cap=cap)
    text = pddl.emit_problem(state, goal, gems_needed=gems_needed)
    return grounding.ground(domain, pddl.parse_problem(text))


def ground_level_task(
    state: grid.GameState, gems_needed: int = grid.DEFAULT_GEMS_NEEDED
) -> GroundTask:
    """Ground a whole-level task (collect enough gems, then exit)."""
    reachable_count = state.gems_collected + len(state.gem_cells)
    cap = max(pddl.DEFAULT_COUNTER_CAP, reachable_count, gems_needed)
    domain = game_domain(gems_needed=gems_needed, counter_cap=cap)
    text = pddl.emit_level_problem(state, gems_needed=gems_needed)
    return grounding.ground(domain, pddl.parse_problem(text))


def plan_subgoal(
    state: grid.GameState,
    goal: grid.Subgoal,
    gems_needed: int = grid.DEFAULT_GEMS_NEEDED,
    strategy: str = "wbfs",
    weight: int = 5,
    timeout_s: float | None = None,
) -> PlanOutcome:
    """Plan from a game state to one subgoal through the declarative model."""
    task = ground_subgoal_task(state, goal, gems_needed)
    return solve(task, strategy=strategy, weight=weight, timeout_s=timeout_s)


def plan_level(
    state: grid.GameState,
    gems_needed: int = grid.DEFAULT_GEMS_NEEDED,
    strategy: str = "wbfs",
    weight: int = 5,
    timeout_s: float | None = None,
) -> PlanOutcome:
    """Plan a whole level in one search (the planner-only baseline)."""
    task = ground_level_task(state, gems_needed)
    return solve(task, strategy=strategy, weight=weight, timeout_s=timeout_s)
