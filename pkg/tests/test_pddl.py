"""Parser and emitter tests for the STRIPS fragment."""

from __future__ import annotations

import dataclasses

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dqplan import grid, pddl
from dqplan.pddl import (
    AndF,
    Atom,
    EffectClause,
    ExistsF,
    NotF,
    PddlError,
    parse_domain,
    parse_problem,
)

from conftest import game_states

SMALL_LEVEL = "wwwwwww\nwA.x.ew\nw--o--w\nw-x---w\nwwwwwww\n"

TINY_DOMAIN = """
(define (domain toy)
  (:requirements :strips :typing)
  (:types spot - object)
  (:predicates (here ?s - spot) (seen ?s - spot) (flag))
  (:action hop
    :parameters (?a - spot ?b - spot)
    :precondition (and (here ?a) (not (here ?b)))
    :effect (and (here ?b) (not (here ?a))
                 (when (flag) (seen ?b))))
)
"""


class TestReader:
    def test_comments_and_case(self):
        dom = parse_domain(TINY_DOMAIN.replace("(:action hop", "; note\n  (:action HOP"))
        assert dom.actions[0].name == "hop"

    def test_unclosed_paren_positions(self):
        with pytest.raises(PddlError) as err:
            parse_domain("(define (domain x)\n  (:predicates (p)\n")
        assert err.value.line is not None

    def test_stray_close(self):
        with pytest.raises(PddlError):
            parse_domain(")")

    def test_empty_input(self):
        with pytest.raises(PddlError):
            parse_domain("   ; only a comment\n")


class TestDomainParse:
    def test_structure(self):
        dom = parse_domain(TINY_DOMAIN)
        assert dom.name == "toy"
        assert dom.types == (("spot", "object"),)
        assert dict(dom.predicates) == {"here": ("spot",), "seen": ("spot",), "flag": ()}
        (hop,) = dom.actions
        assert hop.parameters == (("?a", "spot"), ("?b", "spot"))
        assert hop.precondition == AndF(
            (Atom("here", ("?a",)), NotF(Atom("here", ("?b",))))
        )
        # one unconditional clause plus the when
        assert hop.effects == (
            EffectClause((), (Atom("here", ("?b",)),), (Atom("here", ("?a",)),)),
            EffectClause(
                ((True, Atom("flag", ())),), (Atom("seen", ("?b",)),), ()
            ),
        )

    def test_typed_list_grouping(self):
        dom = parse_domain(
            "(define (domain t) (:types a b - object c - b)"
            " (:predicates (p ?x - a ?y ?z - c)))"
        )
        assert dom.types == (("a", "object"), ("b", "object"), ("c", "b"))
        assert dom.predicates == (("p", ("a", "c", "c")),)

    def test_untyped_defaults_to_object(self):
        dom = parse_domain("(define (domain t) (:predicates (p ?x)))")
        assert dom.predicates == (("p", ("object",)),)

    @pytest.mark.parametrize(
        "snippet",
        [
            "(or (p) (q))",
            "(forall (?x - object) (p))",
            "(imply (p) (q))",
            "(when (p) (q))",
        ],
    )
    def test_rejects_unsupported_connectives(self, snippet):
        text = (
            "(define (domain t) (:predicates (p) (q))"
            f" (:action a :parameters () :precondition {snippet} :effect (p)))"
        )
        with pytest.raises(PddlError, match="unsupported connective"):
            parse_domain(text)

    def test_rejects_negated_conjunction(self):
        text = (
            "(define (domain t) (:predicates (p) (q))"
            " (:action a :parameters () :precondition (not (and (p) (q))) :effect (p)))"
        )
        with pytest.raises(PddlError, match="'not' may wrap"):
            parse_domain(text)

    def test_rejects_multi_variable_exists(self):
        text = (
            "(define (domain t) (:predicates (p ?x ?y))"
            " (:action a :parameters ()"
            " :precondition (exists (?x ?y - object) (p ?x ?y)) :effect (and)))"
        )
        with pytest.raises(PddlError, match="single-variable"):
            parse_domain(text)

    def test_rejects_exists_with_compound_body(self):
        text = (
            "(define (domain t) (:predicates (p ?x) (q ?x))"
            " (:action a :parameters ()"
            " :precondition (exists (?x - object) (and (p ?x) (q ?x))) :effect (and)))"
        )
        with pytest.raises(PddlError, match="body must be a single atom"):
            parse_domain(text)

    def test_rejects_nested_when(self):
        text = (
            "(define (domain t) (:predicates (p) (q) (r))"
            " (:action a :parameters () :precondition (p)"
            " :effect (when (p) (when (q) (r)))))"
        )
        with pytest.raises(PddlError, match="nested 'when'"):
            parse_domain(text)

    def test_rejects_arity_mismatch(self):
        text = (
            "(define (domain t) (:predicates (p ?x))"
            " (:action a :parameters () :precondition (p) :effect (and)))"
        )
        with pytest.raises(PddlError, match="declared with 1"):
            parse_domain(text)

    def test_rejects_unknown_predicate_in_effect(self):
        text = (
            "(define (domain t) (:predicates (p))"
            " (:action a :parameters () :precondition (p) :effect (mystery)))"
        )
        with pytest.raises(PddlError, match="unknown predicate"):
            parse_domain(text)

    def test_rejects_unknown_section(self):
        with pytest.raises(PddlError, match="unknown domain section"):
            parse_domain("(define (domain t) (:functions (f)))")

    def test_error_carries_position(self):
        text = (
            "(define (domain t)\n"
            "  (:predicates (p))\n"
            "  (:action a :parameters ()\n"
            "    :precondition (or (p) (p))\n"
            "    :effect (p)))"
        )
        with pytest.raises(PddlError) as err:
            parse_domain(text)
        assert err.value.line == 4


class TestProblemParse:
    def test_structure(self):
        prob = parse_problem(
            "(define (problem pb) (:domain toy)"
            " (:objects s1 s2 - spot)"
            " (:init (here s1) (flag))"
            " (:goal (and (here s2) (not (flag)))))"
        )
        assert prob.name == "pb"
        assert prob.domain_name == "toy"
        assert prob.objects == (("s1", "spot"), ("s2", "spot"))
        assert prob.init == (Atom("here", ("s1",)), Atom("flag", ()))
        assert prob.goal == (
            (True, Atom("here", ("s2",))),
            (False, Atom("flag", ())),
        )

    def test_goal_required(self):
        with pytest.raises(PddlError, match="no goal"):
            parse_problem("(define (problem pb) (:domain toy) (:init (flag)))")

    def test_goal_must_be_literal_conjunction(self):
        with pytest.raises(PddlError):
            parse_problem(
                "(define (problem pb) (:domain toy)"
                " (:goal (exists (?s - spot) (here ?s))))"
            )


class TestGameDomain:
    def test_parses_and_has_sixteen_schemas(self):
        dom = parse_domain(pddl.domain_text())
        assert dom.name == pddl.DOMAIN_NAME
        names = sorted(a.name for a in dom.actions)
        expected = sorted(
            f"{verb}-{d}"
            for verb in ("turn", "move", "use")
            for d in pddl.DIRECTIONS
        ) + sorted(f"move-{d}-gem" for d in pddl.DIRECTIONS)
        assert names == sorted(expected)

    def test_counter_chain_length_follows_cap(self):
        dom = parse_domain(pddl.domain_text(gems_needed=2, counter_cap=4))
        move_gem = next(a for a in dom.actions if a.name == "move-up-gem")
        whens = [c for c in move_gem.effects if c.condition]
        assert len(whens) == 4  # k = 0..3
        gated = [c for c in whens if Atom("enough-gems", ()) in c.add]
        assert len(gated) == 1
        assert (True, Atom("gems-count-1", ())) in gated[0].condition

    def test_rejects_bad_threshold(self):
        with pytest.raises(ValueError):
            pddl.domain_text(gems_needed=24, counter_cap=23)

    def test_every_schema_requires_not_exited(self):
        dom = parse_domain(pddl.domain_text())
        for schema in dom.actions:
            assert isinstance(schema.precondition, AndF)
            assert NotF(Atom("exited", ("?p",))) in schema.precondition.parts

    def test_move_blocks_on_boulders_and_gems(self):
        dom = parse_domain(pddl.domain_text())
        move = next(a for a in dom.actions if a.name == "move-left")
        exists_types = sorted(
            p.sub.vtype
            for p in move.precondition.parts
            if isinstance(p, NotF) and isinstance(p.sub, ExistsF)
        )
        assert exists_types == ["boulder", "gem"]


class TestEmitters:
    def setup_method(self):
        self.state = grid.initial_state(grid.parse_level(SMALL_LEVEL))

    def test_subgoal_problem_round_trips(self):
        goal = grid.Subgoal(grid.SubgoalKind.GEM, (3, 1))
        prob = parse_problem(pddl.emit_problem(self.state, goal))
        assert prob.domain_name == pddl.DOMAIN_NAME
        assert prob.goal == ((True, Atom("got", ("g_3_1",))),)
        init = set(prob.init)
        assert Atom("at", ("p1", "c_1_1")) in init
        assert Atom("oriented-down", ("p1",)) in init
        assert Atom("at", ("g_3_1", "c_3_1")) in init
        assert Atom("at", ("b_3_2", "c_3_2")) in init
        assert Atom("exit-cell", ("c_5_1",)) in init
        assert Atom("terrain-wall", ("c_0_0",)) in init
        # dirt cells are not empty, dug cells would be
        assert Atom("terrain-empty", ("c_2_1",)) not in init
        assert Atom("terrain-empty", ("c_1_1",)) in init
        # gem tasks track pickups so the exit gate can open mid-plan
        assert Atom("gems-count-0", ()) in init

    def test_gem_subgoal_counter_reflects_collected(self):
        goal = grid.Subgoal(grid.SubgoalKind.GEM, (3, 1))
        partway = dataclasses.replace(self.state, gems_collected=3)
        prob = parse_problem(pddl.emit_problem(partway, goal))
        assert Atom("gems-count-3", ()) in set(prob.init)

    def test_exit_subgoal_goal_and_threshold(self):
        goal = grid.Subgoal(grid.SubgoalKind.EXIT, (5, 1))
        prob = parse_problem(pddl.emit_problem(self.state, goal, gems_needed=2))
        assert prob.goal == ((True, Atom("exited", ("p1",))),)
        init = set(prob.init)
        assert Atom("enough-gems", ()) not in init
        # exit tasks freeze the counter: picking the exit early must be
        # unsolvable, not a license to collect the missing gems first
        assert not any(a.pred.startswith("gems-count-") for a in init)
        enough = dataclasses.replace(self.state, gems_collected=2)
        prob2 = parse_problem(pddl.emit_problem(enough, goal, gems_needed=2))
        assert Atom("enough-gems", ()) in set(prob2.init)

    def test_level_problem_asserts_counter(self):
        prob = parse_problem(pddl.emit_level_problem(self.state))
        assert Atom("gems-count-0", ()) in set(prob.init)
        assert prob.goal == ((True, Atom("exited", ("p1",))),)

    def test_connectivity_is_in_grid_only(self):
        prob = parse_problem(pddl.emit_problem(self.state, grid.Subgoal(grid.SubgoalKind.GEM, (3, 1))))
        conn = [a for a in prob.init if a.pred == "connected-up"]
        # every cell except the top row has an upward neighbour
        assert len(conn) == self.state.width * (self.state.height - 1)
        assert Atom("connected-up", ("c_1_1", "c_1_0")) in set(prob.init)

    def test_rejects_bad_subgoals(self):
        with pytest.raises(ValueError, match="no gem"):
            pddl.emit_problem(self.state, grid.Subgoal(grid.SubgoalKind.GEM, (1, 1)))
        with pytest.raises(ValueError, match="not the exit"):
            pddl.emit_problem(self.state, grid.Subgoal(grid.SubgoalKind.EXIT, (1, 1)))
        exited = dataclasses.replace(self.state, exited=True)
        with pytest.raises(ValueError, match="exited"):
            pddl.emit_problem(exited, grid.Subgoal(grid.SubgoalKind.EXIT, (5, 1)))

    @given(game_states())
    def test_emission_round_trips_for_random_states(self, state):
        goal = grid.formulate_goals(state).subgoals[0]
        if goal.kind is grid.SubgoalKind.GEM:
            text = pddl.emit_problem(state, goal)
        else:
            text = pddl.emit_level_problem(state)
        prob = parse_problem(text)
        init = set(prob.init)
        assert Atom("at", ("p1", pddl.cell_name(state.player_cell))) in init
        gem_objs = {name for name, t in prob.objects if t == "gem"}
        assert gem_objs == {pddl.gem_name(c) for c in state.gem_cells}


class TestNames:
    @given(st.tuples(st.integers(0, 29), st.integers(0, 29)))
    def test_cell_name_round_trip(self, cell):
        assert pddl.name_to_cell(pddl.cell_name(cell)) == cell
        assert pddl.name_to_cell(pddl.gem_name(cell)) == cell
        assert pddl.name_to_cell(pddl.boulder_name(cell)) == cell

    def test_name_to_cell_rejects_garbage(self):
        with pytest.raises(ValueError):
            pddl.name_to_cell("p1")
