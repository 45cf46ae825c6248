"""Typed STRIPS fragment: AST, parser, and game task emitters.

The supported language is STRIPS with typing, negative preconditions,
single-variable existentials whose body is one atom, and conditional
effects. That is exactly what the game model needs and nothing more.

The emitters translate a game state into a domain/problem pair. One
domain text serves three task flavours:

* gem tasks: the goal is one gem. The init asserts the current counter
  atom, so pickups made in passing advance the chain and a route that
  opens the exit gate and then crosses the exit cell dead-ends in the
  model, matching the game rule that an open exit ends the level.
* exit tasks: the goal is the exit. The init asserts no counter atom,
  so the chain can never fire and the goal is provably unreachable
  until ``enough-gems`` is already true; picking the exit too early is
  detected as unsolvable through relaxed reachability.
* whole-level tasks: the init asserts the current counter value, so the
  planner itself can count gem pickups and finish the level.

Cells are named ``c_<x>_<y>``; gems and boulders are named after the
cell they occupy (``g_4_2``, ``b_7_5``) since neither ever moves.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .grid import (
    DEFAULT_GEMS_NEEDED,
    Cell,
    GameState,
    Orientation,
    Subgoal,
    SubgoalKind,
)

DOMAIN_NAME = "rocks-and-diamonds"
DEFAULT_COUNTER_CAP = 23

DIRECTIONS = ("up", "down", "left", "right")

ORIENTATION_WORD = {
    Orientation.NORTH: "up",
    Orientation.SOUTH: "down",
    Orientation.WEST: "left",
    Orientation.EAST: "right",
}


class PddlError(ValueError):
    """Parse or validation failure, with source position when available."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        if line is not None:
            message = f"line {line}, col {col}: {message}"
        super().__init__(message)
        self.line = line
        self.col = col


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Atom:
    pred: str
    args: tuple[str, ...]


@dataclass(frozen=True)
class NotF:
    sub: "Formula"


@dataclass(frozen=True)
class AndF:
    parts: tuple["Formula", ...]


@dataclass(frozen=True)
class ExistsF:
    var: str
    vtype: str
    body: Atom


Formula = Atom | NotF | AndF | ExistsF

# A literal is (positive, atom).
Literal = tuple[bool, Atom]


@dataclass(frozen=True)
class EffectClause:
    """One (possibly conditional) effect: when all condition literals hold,
    add the add atoms and delete the delete atoms."""

    condition: tuple[Literal, ...]
    add: tuple[Atom, ...]
    delete: tuple[Atom, ...]


@dataclass(frozen=True)
class ActionSchema:
    name: str
    parameters: tuple[tuple[str, str], ...]
    precondition: Formula
    effects: tuple[EffectClause, ...]


@dataclass(frozen=True)
class DomainDef:
    name: str
    types: tuple[tuple[str, str], ...]  # (type, parent)
    predicates: tuple[tuple[str, tuple[str, ...]], ...]  # (name, arg types)
    actions: tuple[ActionSchema, ...]


@dataclass(frozen=True)
class ProblemDef:
    name: str
    domain_name: str
    objects: tuple[tuple[str, str], ...]  # (object, type)
    init: tuple[Atom, ...]
    goal: tuple[Literal, ...]


# ---------------------------------------------------------------------------
# Tokenizer and s-expression reader


class _Token:
    """A symbol token: its lowercased text plus the source offset for errors."""

    __slots__ = ("text", "offset")

    def __init__(self, text: str, offset: int):
        self.text = text
        self.offset = offset


_TOKEN_RE = re.compile(r";[^\n]*|[()]|[^\s();]+")


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    for m in _TOKEN_RE.finditer(text):
        t = m.group()
        if t[0] == ";":
            continue
        tokens.append(_Token(t if t in "()" else t.lower(), m.start()))
    return tokens


def _offset_to_pos(source: str, offset: int) -> tuple[int, int]:
    line = source.count("\n", 0, offset) + 1
    col = offset - (source.rfind("\n", 0, offset) + 1) + 1
    return line, col


class _Reader:
    """S-expression reader over the token stream; lists keep token positions."""

    def __init__(self, text: str):
        self.source = text
        self.tokens = _tokenize(text)
        self.pos = 0
        # parsers report positions lazily through this hook
        global _ACTIVE_SOURCE
        _ACTIVE_SOURCE = text

    def peek(self) -> _Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self) -> _Token:
        tok = self.peek()
        if tok is None:
            raise PddlError("unexpected end of input")
        self.pos += 1
        return tok

    def read(self):
        tok = self.next()
        if tok.text == "(":
            items = []
            while True:
                nxt = self.peek()
                if nxt is None:
                    line, col = _offset_to_pos(self.source, tok.offset)
                    raise PddlError("unclosed '('", line, col)
                if nxt.text == ")":
                    self.next()
                    return items
                items.append(self.read())
        if tok.text == ")":
            line, col = _offset_to_pos(self.source, tok.offset)
            raise PddlError("unexpected ')'", line, col)
        return tok


_ACTIVE_SOURCE = ""


def _head(sexp, context: str) -> str:
    if not isinstance(sexp, list) or not sexp or not isinstance(sexp[0], _Token):
        raise PddlError(f"expected a list in {context}")
    return sexp[0].text


def _err(message: str, sexp=None) -> PddlError:
    """Build a positioned error from the nearest token (computed lazily)."""
    tok = None
    if isinstance(sexp, list) and sexp and isinstance(sexp[0], _Token):
        tok = sexp[0]
    elif isinstance(sexp, _Token):
        tok = sexp
    if tok is None:
        return PddlError(message)
    line, col = _offset_to_pos(_ACTIVE_SOURCE, tok.offset)
    return PddlError(message, line, col)


def _parse_typed_list(items, context: str) -> tuple[tuple[str, str], ...]:
    """Parse `a b - t c - t2` style typed lists; untyped entries get 'object'."""
    out = []
    pending = []
    i = 0
    while i < len(items):
        tok = items[i]
        if not isinstance(tok, _Token):
            raise PddlError(f"expected a name in {context}")
        if tok.text == "-":
            if i + 1 >= len(items) or not isinstance(items[i + 1], _Token):
                raise _err(f"dangling '-' in {context}", tok)
            vtype = items[i + 1].text
            if not pending:
                raise _err(f"type with no names in {context}", tok)
            out.extend((name, vtype) for name in pending)
            pending = []
            i += 2
            continue
        pending.append(tok.text)
        i += 1
    out.extend((name, "object") for name in pending)
    return tuple(out)


def _parse_atom(sexp, context: str) -> Atom:
    if not isinstance(sexp, list) or not sexp:
        raise _err(f"expected an atom in {context}", sexp)
    for part in sexp:
        if not isinstance(part, _Token):
            raise _err(f"nested list inside atom in {context}", sexp)
    return Atom(sexp[0].text, tuple(t.text for t in sexp[1:]))


def _parse_formula(sexp, context: str) -> Formula:
    head = _head(sexp, context)
    if head == "and":
        return AndF(tuple(_parse_formula(p, context) for p in sexp[1:]))
    if head == "not":
        if len(sexp) != 2:
            raise _err("'not' takes exactly one argument", sexp)
        sub = _parse_formula(sexp[1], context)
        if not isinstance(sub, (Atom, ExistsF)):
            raise _err("'not' may wrap only an atom or an exists", sexp)
        return NotF(sub)
    if head == "exists":
        if len(sexp) != 3:
            raise _err("'exists' takes a variable list and a body", sexp)
        typed = _parse_typed_list(sexp[1], context)
        if len(typed) != 1:
            raise _err("only single-variable 'exists' is supported", sexp)
        var, vtype = typed[0]
        if not var.startswith("?"):
            raise _err(f"exists variable {var!r} must start with '?'", sexp)
        body = _parse_formula(sexp[2], context)
        if not isinstance(body, Atom):
            raise _err("'exists' body must be a single atom", sexp)
        return ExistsF(var, vtype, body)
    if head in ("or", "forall", "imply", "when"):
        raise _err(f"unsupported connective {head!r} in {context}", sexp)
    return _parse_atom(sexp, context)


def _parse_literals(formula: Formula, context: str) -> tuple[Literal, ...]:
    """Flatten a formula of conjoined literals; anything else is an error."""
    if isinstance(formula, Atom):
        return ((True, formula),)
    if isinstance(formula, NotF):
        if not isinstance(formula.sub, Atom):
            raise PddlError(f"expected a literal in {context}")
        return ((False, formula.sub),)
    if isinstance(formula, AndF):
        out: list[Literal] = []
        for part in formula.parts:
            out.extend(_parse_literals(part, context))
        return tuple(out)
    raise PddlError(f"expected conjunction of literals in {context}")


def _parse_effect(sexp, context: str) -> tuple[EffectClause, ...]:
    """Normalize an effect formula into clauses (one unconditional + whens)."""
    add: list[Atom] = []
    delete: list[Atom] = []
    clauses: list[EffectClause] = []

    def walk(node):
        head = _head(node, context)
        if head == "and":
            for part in node[1:]:
                walk(part)
            return
        if head == "not":
            if len(node) != 2:
                raise _err("'not' takes exactly one argument", node)
            delete.append(_parse_atom(node[1], context))
            return
        if head == "when":
            if len(node) != 3:
                raise _err("'when' takes a condition and an effect", node)
            cond = _parse_literals(_parse_formula(node[1], context), context)
            sub_add: list[Atom] = []
            sub_del: list[Atom] = []

            def walk_sub(inner):
                ihead = _head(inner, context)
                if ihead == "and":
                    for part in inner[1:]:
                        walk_sub(part)
                    return
                if ihead == "not":
                    if len(inner) != 2:
                        raise _err("'not' takes exactly one argument", inner)
                    sub_del.append(_parse_atom(inner[1], context))
                    return
                if ihead == "when":
                    raise _err("nested 'when' is not supported", inner)
                sub_add.append(_parse_atom(inner, context))

            walk_sub(node[2])
            clauses.append(EffectClause(cond, tuple(sub_add), tuple(sub_del)))
            return
        add.append(_parse_atom(node, context))

    walk(sexp)
    out: list[EffectClause] = []
    if add or delete:
        out.append(EffectClause((), tuple(add), tuple(delete)))
    out.extend(clauses)
    return tuple(out)


def parse_domain(text: str) -> DomainDef:
    reader = _Reader(text)
    top = reader.read()
    if _head(top, "domain") != "define":
        raise PddlError("expected (define (domain ...) ...)")
    if len(top) < 2 or _head(top[1], "domain") != "domain" or len(top[1]) != 2:
        raise PddlError("expected (domain <name>) after define")
    name = top[1][1].text
    types: tuple[tuple[str, str], ...] = ()
    predicates: tuple[tuple[str, tuple[str, ...]], ...] = ()
    actions: list[ActionSchema] = []
    for section in top[2:]:
        head = _head(section, "domain body")
        if head == ":requirements":
            continue
        if head == ":types":
            types = _parse_typed_list(section[1:], ":types")
        elif head == ":predicates":
            preds = []
            for psexp in section[1:]:
                atom_like = psexp
                if not isinstance(atom_like, list) or not atom_like:
                    raise _err("bad predicate declaration", section)
                pname = atom_like[0].text
                typed = _parse_typed_list(atom_like[1:], f"predicate {pname}")
                preds.append((pname, tuple(t for _, t in typed)))
            predicates = tuple(preds)
        elif head == ":action":
            if len(section) < 2 or not isinstance(section[1], _Token):
                raise _err("action needs a name", section)
            aname = section[1].text
            params: tuple[tuple[str, str], ...] = ()
            precondition: Formula = AndF(())
            effects: tuple[EffectClause, ...] = ()
            i = 2
            while i < len(section):
                key = section[i]
                if not isinstance(key, _Token) or not key.text.startswith(":"):
                    raise _err(f"expected a keyword in action {aname}", section)
                if i + 1 >= len(section):
                    raise _err(f"missing value for {key.text} in {aname}", section)
                value = section[i + 1]
                if key.text == ":parameters":
                    params = _parse_typed_list(value, f"parameters of {aname}")
                    for var, _ in params:
                        if not var.startswith("?"):
                            raise _err(f"parameter {var!r} of {aname} must start with '?'", section)
                elif key.text == ":precondition":
                    precondition = _parse_formula(value, f"precondition of {aname}")
                elif key.text == ":effect":
                    effects = _parse_effect(value, f"effect of {aname}")
                else:
                    raise _err(f"unknown action keyword {key.text}", section)
                i += 2
            actions.append(ActionSchema(aname, params, precondition, effects))
        else:
            raise _err(f"unknown domain section {head!r}", section)
    domain = DomainDef(name, types, predicates, tuple(actions))
    _validate_domain(domain)
    return domain


def parse_problem(text: str) -> ProblemDef:
    reader = _Reader(text)
    top = reader.read()
    if _head(top, "problem") != "define":
        raise PddlError("expected (define (problem ...) ...)")
    if len(top) < 2 or _head(top[1], "problem") != "problem" or len(top[1]) != 2:
        raise PddlError("expected (problem <name>) after define")
    name = top[1][1].text
    domain_name = ""
    objects: tuple[tuple[str, str], ...] = ()
    init: tuple[Atom, ...] = ()
    goal: tuple[Literal, ...] = ()
    for section in top[2:]:
        head = _head(section, "problem body")
        if head == ":domain":
            if len(section) != 2:
                raise _err("bad :domain section", section)
            domain_name = section[1].text
        elif head == ":objects":
            objects = _parse_typed_list(section[1:], ":objects")
        elif head == ":init":
            init = tuple(_parse_atom(s, ":init") for s in section[1:])
        elif head == ":goal":
            if len(section) != 2:
                raise _err(":goal takes one formula", section)
            goal = _parse_literals(_parse_formula(section[1], ":goal"), ":goal")
        else:
            raise _err(f"unknown problem section {head!r}", section)
    if not goal:
        raise PddlError("problem has no goal")
    return ProblemDef(name, domain_name, objects, init, goal)


def _validate_domain(domain: DomainDef) -> None:
    """Arity checks for every atom in the domain against :predicates."""
    arity = {name: len(args) for name, args in domain.predicates}

    def check_atom(atom: Atom, where: str):
        if atom.pred not in arity:
            raise PddlError(f"unknown predicate {atom.pred!r} in {where}")
        if len(atom.args) != arity[atom.pred]:
            raise PddlError(
                f"predicate {atom.pred!r} used with {len(atom.args)} args in {where},"
                f" declared with {arity[atom.pred]}"
            )

    def check_formula(f: Formula, where: str):
        if isinstance(f, Atom):
            check_atom(f, where)
        elif isinstance(f, NotF):
            check_formula(f.sub, where)
        elif isinstance(f, AndF):
            for part in f.parts:
                check_formula(part, where)
        elif isinstance(f, ExistsF):
            check_atom(f.body, where)

    for action in domain.actions:
        check_formula(action.precondition, action.name)
        for clause in action.effects:
            for _, atom in clause.condition:
                check_atom(atom, action.name)
            for atom in clause.add + clause.delete:
                check_atom(atom, action.name)


# ---------------------------------------------------------------------------
# Game domain emission


def cell_name(cell: Cell) -> str:
    return f"c_{cell[0]}_{cell[1]}"


def gem_name(cell: Cell) -> str:
    return f"g_{cell[0]}_{cell[1]}"


def boulder_name(cell: Cell) -> str:
    return f"b_{cell[0]}_{cell[1]}"


def name_to_cell(name: str) -> Cell:
    try:
        _, x, y = name.split("_")
        return (int(x), int(y))
    except ValueError as exc:
        raise ValueError(f"not a cell-coded object name: {name!r}") from exc


def _counter_pred(k: int) -> str:
    return f"gems-count-{k}"


def domain_text(
    gems_needed: int = DEFAULT_GEMS_NEEDED, counter_cap: int = DEFAULT_COUNTER_CAP
) -> str:
    """Emit the game domain.

    Sixteen schemas, one per (verb, direction): turn, move onto a plain
    cell, move onto a gem cell, and use (break the faced boulder). Every
    ground action corresponds 1:1 to a game action, so plan length equals
    executed action count. Gem pickups advance a propositional counter
    chain via conditional effects; crossing ``gems_needed`` adds
    ``enough-gems``, which gates the exit effect on plain moves. A
    problem that asserts no counter atom therefore freezes the counter,
    which makes exit goals unreachable unless ``enough-gems`` held
    already. All actions require ``(not (exited ?p))``: ending the level
    is absorbing, exactly as in the game.
    """
    if not 0 <= gems_needed <= counter_cap:
        raise ValueError(f"need 0 <= gems_needed <= counter_cap, got {gems_needed}, {counter_cap}")
    lines: list[str] = []
    out = lines.append
    out(f"(define (domain {DOMAIN_NAME})")
    out("  (:requirements :strips :typing :negative-preconditions"
        " :existential-preconditions :conditional-effects)")
    out("  (:types locatable cell - object")
    out("          player gem boulder - locatable)")
    out("  (:predicates")
    out("    (at ?l - locatable ?c - cell)")
    for d in DIRECTIONS:
        out(f"    (connected-{d} ?c1 - cell ?c2 - cell)")
    for d in DIRECTIONS:
        out(f"    (oriented-{d} ?p - player)")
    out("    (terrain-wall ?c - cell)")
    out("    (terrain-empty ?c - cell)")
    out("    (got ?g - gem)")
    out("    (exit-cell ?c - cell)")
    out("    (exited ?p - player)")
    out("    (enough-gems)")
    for k in range(counter_cap + 1):
        out(f"    ({_counter_pred(k)})")
    out("  )")
    for d in DIRECTIONS:
        others = " ".join(f"(not (oriented-{o} ?p))" for o in DIRECTIONS if o != d)
        out("")
        out(f"  (:action turn-{d}")
        out("    :parameters (?p - player)")
        out(f"    :precondition (and (not (exited ?p)) (not (oriented-{d} ?p)))")
        out(f"    :effect (and (oriented-{d} ?p) {others}))")
    for d in DIRECTIONS:
        out("")
        out(f"  (:action move-{d}")
        out("    :parameters (?p - player ?c1 - cell ?c2 - cell)")
        out("    :precondition (and (not (exited ?p))")
        out(f"                       (oriented-{d} ?p)")
        out("                       (at ?p ?c1)")
        out(f"                       (connected-{d} ?c1 ?c2)")
        out("                       (not (terrain-wall ?c2))")
        out("                       (not (exists (?b - boulder) (at ?b ?c2)))")
        out("                       (not (exists (?g - gem) (at ?g ?c2))))")
        out("    :effect (and (not (at ?p ?c1)) (at ?p ?c2)")
        out("                 (when (not (terrain-empty ?c2)) (terrain-empty ?c2))")
        out("                 (when (and (exit-cell ?c2) (enough-gems)) (exited ?p))))")
    for d in DIRECTIONS:
        out("")
        out(f"  (:action move-{d}-gem")
        out("    :parameters (?p - player ?c1 - cell ?c2 - cell ?g - gem)")
        out("    :precondition (and (not (exited ?p))")
        out(f"                       (oriented-{d} ?p)")
        out("                       (at ?p ?c1)")
        out(f"                       (connected-{d} ?c1 ?c2)")
        out("                       (at ?g ?c2))")
        out("    :effect (and (not (at ?p ?c1)) (at ?p ?c2)")
        out("                 (not (at ?g ?c2)) (got ?g)")
        for k in range(counter_cap):
            gate = f" (enough-gems)" if k + 1 == gems_needed else ""
            out(
                f"                 (when ({_counter_pred(k)})"
                f" (and (not ({_counter_pred(k)})) ({_counter_pred(k + 1)}){gate}))"
            )
        out("    ))")
    for d in DIRECTIONS:
        out("")
        out(f"  (:action use-{d}")
        out("    :parameters (?p - player ?c1 - cell ?c2 - cell ?b - boulder)")
        out("    :precondition (and (not (exited ?p))")
        out(f"                       (oriented-{d} ?p)")
        out("                       (at ?p ?c1)")
        out(f"                       (connected-{d} ?c1 ?c2)")
        out("                       (at ?b ?c2))")
        out("    :effect (not (at ?b ?c2)))")
    out(")")
    return "\n".join(lines) + "\n"


def _state_objects_and_init(
    state: GameState, gems_needed: int, with_counters: bool
) -> tuple[list[str], list[str]]:
    """Shared object/init sections for both task flavours, canonically sorted."""
    cells = sorted(
        (x, y) for y in range(state.height) for x in range(state.width)
    )
    gems = sorted(state.gem_cells)
    boulders = sorted(state.boulder_cells)
    objects = ["p1 - player"]
    objects.extend(f"{cell_name(c)} - cell" for c in cells)
    objects.extend(f"{gem_name(c)} - gem" for c in gems)
    objects.extend(f"{boulder_name(c)} - boulder" for c in boulders)
    init: list[str] = []
    init.append(f"(at p1 {cell_name(state.player_cell)})")
    init.append(f"(oriented-{ORIENTATION_WORD[state.orientation]} p1)")
    for c in gems:
        init.append(f"(at {gem_name(c)} {cell_name(c)})")
    for c in boulders:
        init.append(f"(at {boulder_name(c)} {cell_name(c)})")
    for (x, y) in cells:
        here = cell_name((x, y))
        for d, (dx, dy) in (("up", (0, -1)), ("down", (0, 1)), ("left", (-1, 0)), ("right", (1, 0))):
            nx, ny = x + dx, y + dy
            if 0 <= nx < state.width and 0 <= ny < state.height:
                init.append(f"(connected-{d} {here} {cell_name((nx, ny))})")
        if (x, y) in state.wall_cells:
            init.append(f"(terrain-wall {here})")
        elif (x, y) not in state.dirt_cells:
            init.append(f"(terrain-empty {here})")
    init.append(f"(exit-cell {cell_name(state.exit_cell)})")
    if state.gems_collected >= gems_needed:
        init.append("(enough-gems)")
    if with_counters:
        init.append(f"({_counter_pred(state.gems_collected)})")
    return objects, init


def _problem_text(name: str, objects: list[str], init: list[str], goal: str) -> str:
    lines = [f"(define (problem {name})", f"  (:domain {DOMAIN_NAME})", "  (:objects"]
    lines.extend(f"    {o}" for o in objects)
    lines.append("  )")
    lines.append("  (:init")
    lines.extend(f"    {a}" for a in init)
    lines.append("  )")
    lines.append(f"  (:goal {goal})")
    lines.append(")")
    return "\n".join(lines) + "\n"


def emit_problem(
    state: GameState, goal: Subgoal, gems_needed: int = DEFAULT_GEMS_NEEDED
) -> str:
    """Emit a single-subgoal task for the given state.

    Gem tasks assert the current counter atom: pickups made in passing
    advance the chain, so a route that opens the exit gate mid-plan and
    then steps onto the exit cell is a dead end in the model exactly as
    it ends the level in the game. Exit tasks assert no counter atom,
    freezing the chain: the gate cannot be opened within the plan, so an
    exit goal is solvable iff the state already holds enough gems, and
    the planner detects the unsolvable case immediately through relaxed
    reachability.
    """
    if state.exited:
        raise ValueError("cannot emit a task from an exited state")
    if goal.kind is SubgoalKind.GEM:
        if goal.cell not in state.gem_cells:
            raise ValueError(f"no gem at {goal.cell}")
        goal_str = f"(got {gem_name(goal.cell)})"
        tag = f"gem-{goal.cell[0]}-{goal.cell[1]}"
    else:
        if goal.cell != state.exit_cell:
            raise ValueError(f"exit subgoal cell {goal.cell} is not the exit")
        goal_str = "(exited p1)"
        tag = "exit"
    objects, init = _state_objects_and_init(
        state, gems_needed, with_counters=goal.kind is SubgoalKind.GEM
    )
    return _problem_text(f"subgoal-{tag}", objects, init, goal_str)


def emit_level_problem(
    state: GameState, gems_needed: int = DEFAULT_GEMS_NEEDED
) -> str:
    """Emit a whole-level task: collect gems up to the threshold and exit.

    The init asserts the current counter atom, so the chain advances on
    every pickup and the planner can reach ``enough-gems`` by itself.
    """
    if state.exited:
        raise ValueError("cannot emit a task from an exited state")
    objects, init = _state_objects_and_init(state, gems_needed, with_counters=True)
    return _problem_text("whole-level", objects, init, "(exited p1)")
