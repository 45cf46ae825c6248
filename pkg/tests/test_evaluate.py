"""Episode runners, action coefficient, and report construction."""

import collections

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dqplan import evaluate, planner, qlearn
from dqplan.evaluate import (
    ComparisonReport,
    EpisodeResult,
    action_coefficient,
    emit_report,
    run_dql_episode,
    run_dqp_episode,
    run_planner_only,
    run_random_episode,
)
from dqplan.grid import (
    Action,
    Subgoal,
    SubgoalKind,
    apply_action,
    formulate_goals,
    initial_state,
    parse_level,
    state_fingerprint,
)

THREE_GEM_LEVEL = parse_level(
    "\n".join(
        [
            "wwwwww",
            "w..x.w",
            "wA.x.w",
            "w..xew",
            "wwwwww",
        ]
    )
)

ONE_GEM_LEVEL = parse_level(
    "\n".join(
        [
            "wwwww",
            "wAxew",
            "wwwww",
        ]
    )
)


class _TableNet:
    """Duck-typed net: reads the lit subgoal bit out of each encoding."""

    def __init__(self, table, default=0.0):
        self.table = table
        self.default = default

    def infer(self, x, aux=None):
        out = []
        for enc in x:
            cells = np.argwhere(enc[:, :, qlearn.CH_SUBGOAL] == 1)
            cell = (int(cells[0][0]), int(cells[0][1]))
            out.append(self.table.get(cell, self.default))
        return np.asarray(out, dtype=np.float64)


def gems_first_net(state):
    """Table net ranking gems cheap and the exit expensive."""
    table = {}
    for goal in formulate_goals(state).subgoals:
        table[goal.cell] = 100.0 if goal.kind is SubgoalKind.EXIT else 1.0
    return _TableNet(table)


def replay(level, result, gems_needed):
    state = initial_state(level)
    for action in result.actions:
        state = apply_action(state, action, gems_needed=gems_needed)
    return state


class TestDqpEpisode:
    def test_solves_and_replays(self):
        net = gems_first_net(initial_state(THREE_GEM_LEVEL))
        result = run_dqp_episode(THREE_GEM_LEVEL, net, gems_needed=3)
        assert result.solved
        assert result.goal_selection_errors == 0
        final = replay(THREE_GEM_LEVEL, result, gems_needed=3)
        assert final.exited
        assert result.total_actions == len(result.actions)

    def test_total_actions_is_sum_of_plan_lengths(self):
        net = gems_first_net(initial_state(THREE_GEM_LEVEL))
        result = run_dqp_episode(THREE_GEM_LEVEL, net, gems_needed=3)
        state = initial_state(THREE_GEM_LEVEL)
        total = 0
        while not state.exited:
            goal = qlearn.select_subgoal(net, state)
            outcome = planner.plan_subgoal(state, goal, gems_needed=3)
            if outcome.status != planner.SOLVED:
                ranked = qlearn.rank_subgoals(net, state)
                for goal, _ in ranked:
                    outcome = planner.plan_subgoal(state, goal, gems_needed=3)
                    if outcome.status == planner.SOLVED:
                        break
            actions = planner.plan_to_game_actions(outcome.plan)
            total += len(actions)
            for action in actions:
                state = apply_action(state, action, gems_needed=3)
        assert result.total_actions == total

    def test_exit_first_ranking_counts_one_error_per_decision(self):
        state = initial_state(ONE_GEM_LEVEL)
        table = {state.exit_cell: -5.0}
        for goal in formulate_goals(state).subgoals:
            if goal.kind is SubgoalKind.GEM:
                table[goal.cell] = 10.0
        net = _TableNet(table)
        result = run_dqp_episode(ONE_GEM_LEVEL, net, gems_needed=1)
        assert result.solved
        # one decision before the gate opens: exit tried, rejected, gem taken
        assert result.goal_selection_errors == 1

    def test_planner_timeout_makes_episode_unsolved(self, monkeypatch):
        net = gems_first_net(initial_state(THREE_GEM_LEVEL))

        def timed_out(*args, **kwargs):
            return planner.PlanOutcome(planner.TIMEOUT, None, 1.0, 64)

        monkeypatch.setattr(evaluate.planner, "plan_subgoal", timed_out)
        result = run_dqp_episode(
            THREE_GEM_LEVEL, net, gems_needed=3, timeout_s=1.0
        )
        assert not result.solved
        assert result.total_actions == 0

    def test_clock_none_zeroes_timing(self):
        net = gems_first_net(initial_state(THREE_GEM_LEVEL))
        result = run_dqp_episode(THREE_GEM_LEVEL, net, gems_needed=3, clock=None)
        assert result.goal_selection_time == 0.0
        assert result.planning_time == 0.0
        assert result.wall_time == 0.0

    def test_real_clock_times_are_positive(self):
        net = gems_first_net(initial_state(THREE_GEM_LEVEL))
        result = run_dqp_episode(THREE_GEM_LEVEL, net, gems_needed=3)
        assert result.planning_time > 0.0
        assert result.wall_time >= result.planning_time

    def test_matches_exhaustive_ordering_optimum_with_perfect_table(self):
        state = initial_state(THREE_GEM_LEVEL)
        gems = sorted(state.gem_cells)
        import itertools

        best_total = None
        for order in itertools.permutations(gems):
            total = 0
            s = state
            feasible = True
            for cell in order:
                if cell not in s.gem_cells:
                    continue  # collected in passing on an earlier leg
                outcome = planner.native_solve(
                    s, Subgoal(SubgoalKind.GEM, cell), gems_needed=3
                )
                if not outcome.solved:
                    feasible = False
                    break
                total += len(outcome.plan.actions)
                for action in outcome.plan.actions:
                    s = apply_action(s, action, gems_needed=3)
            if not feasible:
                continue
            outcome = planner.native_solve(
                s, Subgoal(SubgoalKind.EXIT, s.exit_cell), gems_needed=3
            )
            total += len(outcome.plan.actions)
            if best_total is None or total < best_total:
                best_total = total
                best_order = order
        table = {cell: float(i) for i, cell in enumerate(best_order)}
        table[state.exit_cell] = 50.0
        result = run_dqp_episode(
            THREE_GEM_LEVEL, _TableNet(table), gems_needed=3, strategy="opt"
        )
        assert result.solved
        assert result.total_actions == best_total


class TestRandomEpisode:
    def test_fixed_seed_reproducible(self):
        a = run_random_episode(THREE_GEM_LEVEL, seed=5, gems_needed=3)
        b = run_random_episode(THREE_GEM_LEVEL, seed=5, gems_needed=3)
        assert a.actions == b.actions
        assert a.total_actions == b.total_actions

    def test_solves_valid_level(self):
        result = run_random_episode(THREE_GEM_LEVEL, seed=0, gems_needed=3)
        assert result.solved
        assert replay(THREE_GEM_LEVEL, result, gems_needed=3).exited

    def test_errors_occur_across_many_seeds(self):
        errors = sum(
            run_random_episode(ONE_GEM_LEVEL, seed=s, gems_needed=1).goal_selection_errors
            for s in range(30)
        )
        assert errors > 0


class _ActionTable:
    """Maps (player cell, orientation) to preferred actions via values."""

    def __init__(self, policy):
        self.policy = policy


def _patched_q_values_a(table):
    def q_values_a(net, state, pool=None):
        preferred = net.policy.get(
            (state.player_cell, state.orientation), Action.UP
        )
        return [
            (a, 0.0 if a is preferred else float(i + 1))
            for i, a in enumerate(Action)
        ]

    return q_values_a


class TestDqlEpisode:
    def test_policy_table_solves_corridor(self, monkeypatch):
        state = initial_state(ONE_GEM_LEVEL)
        policy = {}
        here = state
        walk = []
        for _ in range(20):
            if here.exited:
                break
            nxt = apply_action(here, Action.RIGHT, gems_needed=1)
            policy[(here.player_cell, here.orientation)] = Action.RIGHT
            walk.append(Action.RIGHT)
            here = nxt

        def q_values_a(net, state, pool=None):
            pref = policy.get((state.player_cell, state.orientation), Action.RIGHT)
            return [(a, 1.0 if a is pref else 0.0) for a in Action]

        monkeypatch.setattr(evaluate, "q_values_a", q_values_a)
        result = run_dql_episode(ONE_GEM_LEVEL, net=None, gems_needed=1)
        assert result.solved
        assert replay(ONE_GEM_LEVEL, result, gems_needed=1).exited

    def test_action_cap_fails_episode(self, monkeypatch):
        def q_values_a(net, state, pool=None):
            return [(a, float(-i)) for i, a in enumerate(Action)]

        monkeypatch.setattr(evaluate, "q_values_a", q_values_a)
        result = run_dql_episode(
            THREE_GEM_LEVEL, net=None, max_actions=25, seed=3, gems_needed=3
        )
        assert not result.solved
        assert result.total_actions == 25

    def test_deterministic_before_first_revisit(self, monkeypatch):
        calls = []

        def q_values_a(net, state, pool=None):
            calls.append(state_fingerprint(state))
            return [(a, float(-i)) for i, a in enumerate(Action)]

        monkeypatch.setattr(evaluate, "q_values_a", q_values_a)
        a = run_dql_episode(
            THREE_GEM_LEVEL, net=None, max_actions=10, seed=1, gems_needed=3
        )
        b = run_dql_episode(
            THREE_GEM_LEVEL, net=None, max_actions=10, seed=2, gems_needed=3
        )
        # different seeds agree while the loop-avoidance fallback is idle
        counts = collections.Counter(calls)
        if max(counts.values()) == 1:
            assert a.actions == b.actions


class TestPlannerOnly:
    def test_opt_matches_breadth_first_oracle(self):
        result = run_planner_only(
            ONE_GEM_LEVEL, strategy="opt", gems_needed=1, clock=None
        )
        assert result.solved
        start = initial_state(ONE_GEM_LEVEL)
        frontier = [start]
        seen = {state_fingerprint(start)}
        depth = 0
        optimum = None
        while optimum is None:
            depth += 1
            nxt = []
            for s in frontier:
                for action in Action:
                    t = apply_action(s, action, gems_needed=1)
                    if t.exited:
                        optimum = depth
                        break
                    fp = state_fingerprint(t)
                    if fp not in seen:
                        seen.add(fp)
                        nxt.append(t)
                if optimum:
                    break
            frontier = nxt
        assert result.total_actions == optimum

    def test_timeout_records_unsolved(self, monkeypatch):
        def timed_out(*args, **kwargs):
            return planner.PlanOutcome(planner.TIMEOUT, None, 1.0, 64)

        monkeypatch.setattr(evaluate.planner, "plan_level", timed_out)
        result = run_planner_only(
            THREE_GEM_LEVEL, strategy="wbfs", gems_needed=3, timeout_s=0.01
        )
        assert not result.solved
        assert result.total_actions == 0

    def test_wbfs_solves_and_replays(self):
        result = run_planner_only(THREE_GEM_LEVEL, strategy="wbfs", gems_needed=3)
        assert result.solved
        assert replay(THREE_GEM_LEVEL, result, gems_needed=3).exited


class TestActionCoefficient:
    def test_identity(self):
        lengths = {"a": 12.0, "b": 30.0}
        assert action_coefficient(lengths, dict(lengths)) == pytest.approx(1.0)

    def test_worked_example(self):
        got = action_coefficient({"a": 50.0, "b": 100.0}, {"a": 100.0, "b": 100.0})
        assert got == pytest.approx(np.sqrt(0.5), abs=1e-12)

    def test_mismatched_levels_rejected(self):
        with pytest.raises(ValueError, match="level sets"):
            action_coefficient({"a": 1.0}, {"b": 1.0})

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError, match="nonpositive"):
            action_coefficient({"a": 0.0}, {"a": 5.0})

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            action_coefficient({}, {})

    @given(
        st.dictionaries(
            st.sampled_from(["a", "b", "c", "d"]),
            st.tuples(st.integers(1, 500), st.integers(1, 500)),
            min_size=1,
        ),
        st.floats(0.01, 100.0),
    )
    def test_scale_invariance(self, pairs, scale):
        model = {k: float(m) for k, (m, _) in pairs.items()}
        rm = {k: float(r) for k, (_, r) in pairs.items()}
        base = action_coefficient(model, rm)
        scaled = action_coefficient(
            {k: v * scale for k, v in model.items()},
            {k: v * scale for k, v in rm.items()},
        )
        assert scaled == pytest.approx(base, rel=1e-9)


def _episode(model, level, solved, length, time_s=0.5, errors=0, seed=None):
    return EpisodeResult(
        model=model,
        level=level,
        solved=solved,
        total_actions=length,
        goal_selection_time=0.0,
        planning_time=time_s,
        goal_selection_errors=errors,
        wall_time=time_s,
        seed=seed,
    )


class TestEmitReport:
    def results(self):
        return [
            _episode("dqp", "L1", True, 10, seed=0),
            _episode("dqp", "L1", True, 14, seed=1),
            _episode("dqp", "L2", False, 0, seed=0),
            _episode("dqp", "L2", False, 0, seed=1),
            _episode("rm", "L1", True, 20, seed=0),
            _episode("rm", "L1", True, 20, seed=1),
            _episode("rm", "L2", True, 30, seed=0),
            _episode("rm", "L2", True, 30, seed=1),
        ]

    def test_cells_and_coefficient(self):
        report = emit_report(self.results())
        cell = report.cells[("dqp", "L1")]
        assert cell.length_mean == pytest.approx(12.0)
        assert cell.length_std == pytest.approx(np.std([10, 14], ddof=1))
        assert cell.success_rate == 1.0
        assert report.cells[("dqp", "L2")].length_mean is None
        # L2 unsolved by dqp, so the ratio uses L1 only
        assert report.coefficients["dqp"] == pytest.approx(12.0 / 20.0)

    def test_unsolved_cell_renders_dash(self):
        table = emit_report(self.results()).table()
        assert "-" in table
        assert "action coefficient dqp" in table

    def test_single_repetition_omits_std(self):
        report = emit_report([_episode("dqp", "L1", True, 10)])
        cell = report.cells[("dqp", "L1")]
        assert cell.length_std is None
        assert "±" not in report.table().splitlines()[1]

    def test_rows_format(self):
        report = emit_report(self.results())
        lines = report.rows().splitlines()
        assert lines[0] == "model,level,solved,length,time_s,errors,seed"
        assert len(lines) == 9
        assert lines[1] == "dqp,L1,1,10,0.500000,0,0"

    def test_report_bytes_deterministic(self):
        a = emit_report(self.results())
        b = emit_report(self.results())
        assert a.rows() == b.rows()
        assert a.table() == b.table()

    def test_no_baseline_no_coefficients(self):
        report = emit_report([_episode("dqp", "L1", True, 10)])
        assert report.coefficients == {}


class TestReplayAuditProperty:
    @given(st.integers(0, 40))
    def test_random_episode_replay_audit(self, seed):
        result = run_random_episode(
            THREE_GEM_LEVEL, seed=seed, gems_needed=3, clock=None
        )
        assert result.solved
        final = replay(THREE_GEM_LEVEL, result, gems_needed=3)
        assert final.exited
        assert result.total_actions == len(result.actions)
