"""Environment tests: parsing, rendering, transition semantics, counting."""

from __future__ import annotations

import pytest
from hypothesis import given

from dqplan import grid
from dqplan.grid import Action, Orientation, SubgoalKind

from conftest import actions_strategy, game_states, level_texts

# Hand-checked 7x5 level used by the transition walkthrough below.
SMALL_LEVEL = "wwwwwww\nwA.x.ew\nw--o--w\nw-x---w\nwwwwwww\n"


def walk(state, actions, gems_needed):
    for a in actions:
        state = grid.apply_action(state, a, gems_needed=gems_needed)
    return state


class TestParse:
    def test_round_trip(self):
        level = grid.parse_level(SMALL_LEVEL)
        assert grid.render_level(level) == SMALL_LEVEL
        assert (level.width, level.height) == (7, 5)
        assert level.tile_at(3, 1) == grid.GEM

    @given(level_texts())
    def test_round_trip_random(self, text):
        assert grid.render_level(grid.parse_level(text)) == text

    @pytest.mark.parametrize(
        "text",
        [
            "",
            "www\nwAw\nww\n",  # ragged
            "www\nwAw\nwww\n",  # no exit
            "wwww\nwAew\nwzew\nwwww\n",  # unknown tile and two exits
            "wwww\nwA-w\nw-ew\nwww-\n",  # border hole
            "wwwww\nwAAew\nwwwww\n",  # two avatars
            "ww\nww\n",  # too small
        ],
    )
    def test_rejects_bad_text(self, text):
        with pytest.raises(grid.LevelError):
            grid.parse_level(text)

    def test_rejects_oversized(self):
        side = grid.MAX_SIDE + 1
        rows = ["w" * side for _ in range(side)]
        inner = "w" + "A" + "e" + "-" * (side - 4) + "w"
        rows[1] = inner
        with pytest.raises(grid.LevelError):
            grid.parse_level("\n".join(rows) + "\n")


class TestInitialState:
    def test_fields(self):
        s = grid.initial_state(grid.parse_level(SMALL_LEVEL))
        assert s.player_cell == (1, 1)
        assert s.orientation is Orientation.SOUTH
        assert s.gem_cells == frozenset({(3, 1), (2, 3)})
        assert s.boulder_cells == frozenset({(3, 2)})
        assert s.dirt_cells == frozenset({(2, 1), (4, 1)})
        assert s.exit_cell == (5, 1)
        assert s.gems_collected == 0
        assert not s.exited

    def test_render_state_matches_level(self):
        s = grid.initial_state(grid.parse_level(SMALL_LEVEL))
        assert grid.render_state(s) == SMALL_LEVEL


class TestTransitions:
    """Step-by-step walkthrough of SMALL_LEVEL, hand-simulated."""

    def test_turn_then_move_digs_dirt(self):
        s0 = grid.initial_state(grid.parse_level(SMALL_LEVEL))
        s1 = grid.apply_action(s0, Action.RIGHT, gems_needed=2)
        # first press only reorients
        assert s1.player_cell == (1, 1)
        assert s1.orientation is Orientation.EAST
        s2 = grid.apply_action(s1, Action.RIGHT, gems_needed=2)
        assert s2.player_cell == (2, 1)
        assert (2, 1) not in s2.dirt_cells

    def test_gem_pickup_and_boulder_cycle(self):
        s = grid.initial_state(grid.parse_level(SMALL_LEVEL))
        s = walk(s, [Action.RIGHT, Action.RIGHT, Action.RIGHT], gems_needed=2)
        assert s.player_cell == (3, 1)
        assert s.gems_collected == 1
        assert (3, 1) not in s.gem_cells
        s = grid.apply_action(s, Action.DOWN, gems_needed=2)
        assert s.orientation is Orientation.SOUTH and s.player_cell == (3, 1)
        blocked = grid.apply_action(s, Action.DOWN, gems_needed=2)
        # bump into the boulder: nothing changes but the step is consumed
        assert blocked == s
        s = grid.apply_action(s, Action.USE, gems_needed=2)
        assert s.boulder_cells == frozenset()
        nop = grid.apply_action(s, Action.USE, gems_needed=2)
        assert nop == s
        s = walk(s, [Action.DOWN, Action.DOWN], gems_needed=2)
        assert s.player_cell == (3, 3)

    def test_wall_bump_is_noop(self):
        s = grid.initial_state(grid.parse_level(SMALL_LEVEL))
        s = walk(s, [Action.LEFT], gems_needed=2)
        bumped = grid.apply_action(s, Action.LEFT, gems_needed=2)
        assert bumped == s

    def test_full_clear_and_exit(self):
        s = grid.initial_state(grid.parse_level(SMALL_LEVEL))
        route = [
            Action.RIGHT, Action.RIGHT, Action.RIGHT,        # dig, gem 1
            Action.DOWN, Action.USE,                          # face and break boulder
            Action.DOWN, Action.DOWN,                         # to (3,3)
            Action.LEFT, Action.LEFT,                         # gem 2 at (2,3)
            Action.UP, Action.UP, Action.UP,                  # up the left lane to (2,1)
        ]
        s = walk(s, route, gems_needed=2)
        assert s.gems_collected == 2
        assert s.player_cell == (2, 1)
        s = walk(s, [Action.UP], gems_needed=2)  # bump top wall
        assert s.player_cell == (2, 1)
        s = walk(s, [Action.RIGHT, Action.RIGHT, Action.RIGHT, Action.RIGHT], gems_needed=2)
        assert s.player_cell == (5, 1)
        assert s.exited

    def test_exit_requires_gem_threshold(self):
        s = grid.initial_state(grid.parse_level(SMALL_LEVEL))
        # run straight to the exit, collecting only the first gem
        route = [Action.RIGHT] + [Action.RIGHT] * 4
        s = walk(s, route, gems_needed=2)
        assert s.player_cell == (5, 1)
        assert s.gems_collected == 1
        assert not s.exited
        # the avatar may step off again
        s = grid.apply_action(s, Action.DOWN, gems_needed=2)
        s = grid.apply_action(s, Action.DOWN, gems_needed=2)
        assert s.player_cell == (5, 2)

    def test_acting_after_exit_raises(self):
        s = grid.initial_state(grid.parse_level(SMALL_LEVEL))
        route = [Action.RIGHT] + [Action.RIGHT] * 4
        s = walk(s, route, gems_needed=1)
        assert s.exited
        with pytest.raises(ValueError):
            grid.apply_action(s, Action.UP, gems_needed=1)


class TestInvariants:
    @given(game_states(), actions_strategy())
    def test_action_sequences_preserve_conservation(self, state, actions):
        total_gems = len(state.gem_cells)
        dirt0 = state.dirt_cells
        boulders0 = state.boulder_cells
        prev = state
        for a in actions:
            if prev.exited:
                break
            cur = grid.apply_action(prev, a, gems_needed=2)
            assert cur.player_cell not in cur.wall_cells
            assert cur.player_cell not in cur.boulder_cells
            assert cur.gems_collected + len(cur.gem_cells) == total_gems
            assert cur.dirt_cells <= dirt0
            assert cur.boulder_cells <= boulders0
            # one step changes orientation or position, never both
            assert not (
                cur.orientation is not prev.orientation
                and cur.player_cell != prev.player_cell
            )
            if a is Action.USE:
                assert cur.orientation is prev.orientation
                assert cur.player_cell == prev.player_cell
            if cur.exited:
                assert cur.player_cell == cur.exit_cell
                assert cur.gems_collected >= 2
            prev = cur

    @given(game_states())
    def test_goal_formulation_order(self, state):
        goals = grid.formulate_goals(state).subgoals
        assert goals[-1].kind is SubgoalKind.EXIT
        assert goals[-1].cell == state.exit_cell
        gem_goals = goals[:-1]
        assert {g.cell for g in gem_goals} == set(state.gem_cells)
        keys = [(g.cell[1], g.cell[0]) for g in gem_goals]
        assert keys == sorted(keys)
        assert all(g.kind is SubgoalKind.GEM for g in gem_goals)

    @given(game_states())
    def test_fingerprint_orientation_toggle(self, state):
        turned = grid.apply_action(state, Action.UP, gems_needed=2)
        if turned.orientation is state.orientation:
            return
        assert grid.state_fingerprint(state) != grid.state_fingerprint(turned)
        assert grid.state_fingerprint(
            state, include_orientation=False
        ) == grid.state_fingerprint(turned, include_orientation=False)


class TestTrajectoryCount:
    @pytest.mark.parametrize(
        "total,needed,expected",
        [(3, 3, 6), (4, 2, 12), (1, 0, 1), (5, 1, 5), (6, 3, 120)],
    )
    def test_small_cases(self, total, needed, expected):
        assert grid.trajectory_count(total, needed) == expected

    def test_rejects_bad_counts(self):
        with pytest.raises(ValueError):
            grid.trajectory_count(3, 4)
