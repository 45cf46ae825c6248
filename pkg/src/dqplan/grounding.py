"""Compile a parsed (domain, problem) pair into an integer-indexed ground task.

The grounder understands the language subset of :mod:`dqplan.pddl`:

* negative conditions compile to complement atoms (``not-P``) whose
  truth is maintained by mirrored add/delete effects wherever ``P`` is
  touched,
* a positive ``exists`` becomes an extra grounding parameter, a negated
  ``exists`` becomes one negative literal per object of the type,
* literals over atoms that no effect can add are folded against the
  initial state during enumeration, which keeps the ground task close
  to its reachable core before search ever starts,
* a final delete-relaxed reachability pass drops actions and clauses
  that can never fire from the given initial state.

Atom and action identifiers are canonical: sorted by their printed
names, so two groundings of byte-identical inputs are byte-identical.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .pddl import (
    ActionSchema,
    AndF,
    Atom,
    DomainDef,
    ExistsF,
    Formula,
    NotF,
    ProblemDef,
)


class GroundingError(ValueError):
    pass


@dataclass(frozen=True)
class GroundClause:
    condition: tuple[int, ...]
    add: tuple[int, ...]
    delete: tuple[int, ...]


@dataclass(frozen=True)
class GroundAction:
    name: str  # e.g. "move-up p1 c_2_3 c_2_2"
    pre: frozenset[int]
    effects: tuple[GroundClause, ...]


@dataclass
class GroundTask:
    """Ground STRIPS task over integer atom ids."""

    atoms: tuple[str, ...]
    actions: tuple[GroundAction, ...]
    init: frozenset[int]
    goal: tuple[int, ...]
    complement_of: dict[int, int]
    unsolvable_goal: bool = False
    # planners may stash derived structures here (relaxation graphs etc.)
    caches: dict = field(default_factory=dict, repr=False, compare=False)


DEFAULT_MAX_ATOMS = 200_000
DEFAULT_MAX_ACTIONS = 500_000


@dataclass(frozen=True)
class _PreSpec:
    """Normalized precondition of one schema."""

    pos: tuple[Atom, ...]
    neg: tuple[Atom, ...]
    neg_exists: tuple[tuple[str, str, Atom], ...]


def _normalize_precondition(schema: ActionSchema) -> tuple[_PreSpec, tuple[tuple[str, str], ...]]:
    """Flatten the precondition; positive exists become extra parameters."""
    pos: list[Atom] = []
    neg: list[Atom] = []
    neg_exists: list[tuple[str, str, Atom]] = []
    extra_params: list[tuple[str, str]] = []
    taken = {var for var, _ in schema.parameters}

    def fresh(var: str) -> str:
        out = var
        while out in taken:
            out = out + "x"
        taken.add(out)
        return out

    def walk(f: Formula):
        if isinstance(f, AndF):
            for part in f.parts:
                walk(part)
        elif isinstance(f, Atom):
            pos.append(f)
        elif isinstance(f, ExistsF):
            var = fresh(f.var)
            extra_params.append((var, f.vtype))
            body = f.body
            if var != f.var:
                body = Atom(body.pred, tuple(var if a == f.var else a for a in body.args))
            pos.append(body)
        elif isinstance(f, NotF):
            if isinstance(f.sub, Atom):
                neg.append(f.sub)
            else:
                sub = f.sub
                neg_exists.append((sub.var, sub.vtype, sub.body))
        else:  # pragma: no cover - parser forbids other shapes
            raise GroundingError(f"unsupported precondition part in {schema.name}")

    walk(schema.precondition)
    return _PreSpec(tuple(pos), tuple(neg), tuple(neg_exists)), tuple(extra_params)


class _Model:
    """Typed objects, initial state indexes, and lifted effect signatures."""

    def __init__(self, domain: DomainDef, problem: ProblemDef):
        self.domain = domain
        self.problem = problem
        self._classify_cache: dict[tuple[str, tuple[str, ...]], tuple[bool, bool, bool]] = {}
        self._init_index: dict[tuple, dict] = {}
        declared = {t for t, _ in domain.types} | {p for _, p in domain.types} | {"object"}
        parent = dict(domain.types)
        self.ancestors: dict[str, frozenset[str]] = {}
        for t in declared:
            chain = {t}
            cur = t
            seen = {t}
            while cur in parent:
                cur = parent[cur]
                if cur in seen:
                    raise GroundingError(f"type cycle at {cur!r}")
                seen.add(cur)
                chain.add(cur)
            chain.add("object")
            self.ancestors[t] = frozenset(chain)
        self.descendants: dict[str, set[str]] = {t: set() for t in declared}
        for t in declared:
            for anc in self.ancestors[t]:
                self.descendants.setdefault(anc, set()).add(t)

        self.object_type: dict[str, str] = {}
        for obj, otype in problem.objects:
            if otype not in self.ancestors:
                raise GroundingError(f"object {obj!r} has undeclared type {otype!r}")
            if obj in self.object_type:
                raise GroundingError(f"object {obj!r} declared twice")
            self.object_type[obj] = otype
        self.objects_by_type: dict[str, tuple[str, ...]] = {}
        for t in self.descendants:
            self.objects_by_type[t] = tuple(
                sorted(o for o, ot in self.object_type.items() if t in self.ancestors[ot])
            )

        arity = {name: len(args) for name, args in domain.predicates}
        self.init_tuples: dict[str, set[tuple[str, ...]]] = {name: set() for name in arity}
        for atom in problem.init:
            if atom.pred not in arity:
                raise GroundingError(f"init uses unknown predicate {atom.pred!r}")
            if len(atom.args) != arity[atom.pred]:
                raise GroundingError(f"init atom {atom} has wrong arity")
            for obj in atom.args:
                if obj not in self.object_type:
                    raise GroundingError(f"init atom {atom} uses undeclared object")
            self.init_tuples[atom.pred].add(atom.args)

        # lifted add/delete signatures per predicate; a signature element is
        # ("type", t) for a schema variable or ("const", name) for a constant.
        # A clause guarded by a variable-free condition atom that can never
        # become true contributes nothing, so signatures are refined to a
        # fixpoint: dropping one dead clause's adds can starve the condition
        # of the next (this is what turns a chained counter whose base atom
        # is absent from init into statically dead machinery).
        records = []
        for schema in domain.actions:
            ptypes = dict(schema.parameters)
            prespec, _ = _normalize_precondition(schema)
            pre_pos = [
                (a.pred, a.args) for a in prespec.pos if self._ground_known(a)
            ]
            pre_neg = [
                (a.pred, a.args) for a in prespec.neg if self._ground_known(a)
            ]
            for ci, clause in enumerate(schema.effects):
                cond_pos = list(pre_pos)
                cond_neg = list(pre_neg)
                for positive, atom in clause.condition:
                    if self._ground_known(atom):
                        (cond_pos if positive else cond_neg).append((atom.pred, atom.args))
                adds = [
                    (a.pred, self._signature(a, ptypes, schema)) for a in clause.add
                ]
                dels = [
                    (a.pred, self._signature(a, ptypes, schema)) for a in clause.delete
                ]
                records.append((schema.name, ci, cond_pos, cond_neg, adds, dels))
        alive = [True] * len(records)
        while True:
            add_sigs: dict[str, list[tuple]] = {name: [] for name in arity}
            del_sigs: dict[str, list[tuple]] = {name: [] for name in arity}
            for i, rec in enumerate(records):
                if not alive[i]:
                    continue
                for pred, sig in rec[4]:
                    add_sigs[pred].append(sig)
                for pred, sig in rec[5]:
                    del_sigs[pred].append(sig)
            self.add_sigs = add_sigs
            self.del_sigs = del_sigs
            changed = False
            for i, rec in enumerate(records):
                if not alive[i]:
                    continue
                dead = any(
                    objs not in self.init_tuples[pred] and not self.atom_addable(pred, objs)
                    for pred, objs in rec[2]
                ) or any(
                    objs in self.init_tuples[pred] and not self.atom_deletable(pred, objs)
                    for pred, objs in rec[3]
                )
                if dead:
                    alive[i] = False
                    changed = True
            if not changed:
                break
        self.dead_clauses: set[tuple[str, int]] = {
            (rec[0], rec[1]) for i, rec in enumerate(records) if not alive[i]
        }

    def _ground_known(self, atom: Atom) -> bool:
        """Variable-free, over declared objects and predicates (those are the
        atoms the signature fixpoint can evaluate without a binding)."""
        return (
            atom.pred in self.init_tuples
            and all(not a.startswith("?") and a in self.object_type for a in atom.args)
        )

    def _signature(self, atom: Atom, ptypes: dict[str, str], schema: ActionSchema) -> tuple:
        sig = []
        for arg in atom.args:
            if arg.startswith("?"):
                if arg not in ptypes:
                    raise GroundingError(
                        f"effect of {schema.name} uses unbound variable {arg!r}"
                    )
                sig.append(("type", ptypes[arg]))
            else:
                sig.append(("const", arg))
        return tuple(sig)

    def _sig_matches_objs(self, sig: tuple, objs: tuple[str, ...]) -> bool:
        for (kind, val), obj in zip(sig, objs):
            if kind == "const":
                if obj != val:
                    return False
            elif val not in self.ancestors[self.object_type[obj]]:
                return False
        return True

    def atom_addable(self, pred: str, objs: tuple[str, ...]) -> bool:
        return any(self._sig_matches_objs(s, objs) for s in self.add_sigs[pred])

    def atom_deletable(self, pred: str, objs: tuple[str, ...]) -> bool:
        return any(self._sig_matches_objs(s, objs) for s in self.del_sigs[pred])

    def classify(self, pred: str, objs: tuple[str, ...]) -> tuple[bool, bool, bool]:
        """Memoized (in_init, addable, deletable) for one ground atom."""
        key = (pred, objs)
        hit = self._classify_cache.get(key)
        if hit is None:
            hit = (
                objs in self.init_tuples[pred],
                self.atom_addable(pred, objs),
                self.atom_deletable(pred, objs),
            )
            self._classify_cache[key] = hit
        return hit

    def _sig_overlaps_literal(self, sig: tuple, lit_sig: tuple) -> bool:
        for (kind, val), (lkind, lval) in zip(sig, lit_sig):
            if kind == "const" and lkind == "const":
                if val != lval:
                    return False
            elif kind == "const":
                if val not in self.objects_by_type.get(lval, ()):
                    return False
            elif lkind == "const":
                if lval not in self.objects_by_type.get(val, ()):
                    return False
            else:
                if not (self.descendants.get(val, set()) & self.descendants.get(lval, set())):
                    return False
        return True

    def literal_is_init_bounded(self, atom: Atom, ptypes: dict[str, str]) -> bool:
        """True when every reachable instance of the literal is in init."""
        lit_sig = tuple(
            ("type", ptypes[a]) if a.startswith("?") else ("const", a) for a in atom.args
        )
        return not any(
            self._sig_overlaps_literal(s, lit_sig) for s in self.add_sigs[atom.pred]
        )

    def statically_true(self, pred: str, objs: tuple[str, ...]) -> bool:
        in_init, _, deletable = self.classify(pred, objs)
        return in_init and not deletable

    def statically_false(self, pred: str, objs: tuple[str, ...]) -> bool:
        in_init, addable, _ = self.classify(pred, objs)
        return not in_init and not addable

    def init_matching(self, pred: str, pattern: tuple) -> tuple[tuple[str, ...], ...]:
        """Init tuples of ``pred`` whose fixed positions match ``pattern``.

        ``pattern`` holds object names at fixed positions and None at
        free ones. Indexed lazily per (pred, free-position mask).
        """
        mask = tuple(p is not None for p in pattern)
        key = (pred, mask)
        index = self._init_index.get(key)
        if index is None:
            index = {}
            for objs in self.init_tuples[pred]:
                k = tuple(o for o, fixed in zip(objs, mask) if fixed)
                index.setdefault(k, []).append(objs)
            for k in index:
                index[k] = tuple(sorted(index[k]))
            self._init_index[key] = index
        probe = tuple(p for p in pattern if p is not None)
        return index.get(probe, ())


class _Interner:
    """Atom ids keyed by (polarity, pred, args); name strings built on miss only."""

    def __init__(self, max_atoms: int):
        self.ids: dict[tuple, int] = {}
        self.names: list[str] = []
        self.max_atoms = max_atoms

    def intern(self, negated: bool, pred: str, objs: tuple[str, ...]) -> int:
        key = (negated, pred, objs)
        idx = self.ids.get(key)
        if idx is None:
            idx = len(self.names)
            if idx >= self.max_atoms:
                raise GroundingError(f"atom budget exceeded ({self.max_atoms})")
            self.ids[key] = idx
            name = _atom_name(pred, objs)
            self.names.append("(not " + name + ")" if negated else name)
        return idx


def _atom_name(pred: str, objs: tuple[str, ...]) -> str:
    return "(" + " ".join((pred,) + objs) + ")"


def _compile_atom(
    atom: Atom, param_index: dict[str, int], where: str, known_objects=None
) -> tuple:
    """Precompile an atom's args to parameter indexes (int) or constants (str)."""
    parts = []
    for arg in atom.args:
        if arg.startswith("?"):
            idx = param_index.get(arg)
            if idx is None:
                raise GroundingError(f"unbound variable {arg!r} in {where}")
            parts.append(idx)
        else:
            if known_objects is not None and arg not in known_objects:
                raise GroundingError(f"unknown constant {arg!r} in {where}")
            parts.append(arg)
    return atom.pred, tuple(parts)


def _subst_compiled(catom: tuple, binding: tuple) -> tuple[str, tuple[str, ...]]:
    pred, parts = catom
    return pred, tuple(binding[p] if type(p) is int else p for p in parts)


def _join_bindings(
    model: _Model,
    schema_name: str,
    params: tuple[tuple[str, str], ...],
    pre: _PreSpec,
) -> list[tuple]:
    """Enumerate parameter bindings (positional tuples), restricted by
    init-bounded positive literals (a hash-free nested-loop join: the
    literal tables are small once folding applies)."""
    ptypes = dict(params)
    param_index = {var: i for i, (var, _) in enumerate(params)}
    n = len(params)
    allowed: list[frozenset[str]] = []
    for var, vtype in params:
        pool = model.objects_by_type.get(vtype)
        if pool is None:
            raise GroundingError(f"{schema_name}: parameter {var!r} has unknown type {vtype!r}")
        allowed.append(frozenset(pool))
    joinable = [a for a in pre.pos if model.literal_is_init_bounded(a, ptypes)]
    joinable.sort(key=lambda a: (len(model.init_tuples[a.pred]), a.pred, a.args))
    bindings: list[tuple] = [(None,) * n]
    for atom in joinable:
        catom = _compile_atom(atom, param_index, schema_name)
        parts = catom[1]
        new_bindings: list[tuple] = []
        for binding in bindings:
            # positions already bound (or constant) probe the init index,
            # so each binding only visits tuples it can actually extend
            pattern = tuple(binding[p] if type(p) is int else p for p in parts)
            for objs in model.init_matching(atom.pred, pattern):
                ext = list(binding)
                ok = True
                for part, obj in zip(parts, objs):
                    if type(part) is int:
                        cur = ext[part]
                        if cur is None:
                            if obj not in allowed[part]:
                                ok = False
                                break
                            ext[part] = obj
                        elif cur != obj:
                            ok = False
                            break
                if ok:
                    new_bindings.append(tuple(ext))
        bindings = new_bindings
        if not bindings:
            return []
    out: list[tuple] = []
    for binding in bindings:
        missing = [i for i in range(n) if binding[i] is None]
        if not missing:
            out.append(binding)
            continue
        for combo in itertools.product(*(sorted(allowed[i]) for i in missing)):
            ext = list(binding)
            for i, obj in zip(missing, combo):
                ext[i] = obj
            out.append(tuple(ext))
    return out


def ground(
    domain: DomainDef,
    problem: ProblemDef,
    max_atoms: int = DEFAULT_MAX_ATOMS,
    max_actions: int = DEFAULT_MAX_ACTIONS,
) -> GroundTask:
    model = _Model(domain, problem)
    interner = _Interner(max_atoms)
    complements: dict[int, int] = {}
    intern = interner.intern

    def pos_id(pred: str, objs: tuple[str, ...]) -> int:
        return intern(False, pred, objs)

    def neg_id(pred: str, objs: tuple[str, ...]) -> int:
        pid = intern(False, pred, objs)
        nid = intern(True, pred, objs)
        complements[pid] = nid
        complements[nid] = pid
        return nid

    # phase A: enumerate bindings, fold preconditions and effect conditions
    @dataclass
    class _Candidate:
        name: str
        pre: set[int]
        clauses: list[tuple[tuple[int, ...], list[tuple[str, tuple[str, ...]]], list[tuple[str, tuple[str, ...]]]]]

    candidates: list[_Candidate] = []
    for schema in domain.actions:
        prespec, extra = _normalize_precondition(schema)
        params = schema.parameters + extra
        ptypes = dict(params)
        param_index = {var: i for i, (var, _) in enumerate(params)}
        n_params = len(params)
        known = model.object_type
        pos_c = [_compile_atom(a, param_index, schema.name, known) for a in prespec.pos]
        neg_c = [_compile_atom(a, param_index, schema.name, known) for a in prespec.neg]
        exists_c = []
        for var, vtype, atom in prespec.neg_exists:
            # the witness variable compiles to the one-past-last index, so a
            # binding extended with one extra slot substitutes it directly
            inner_index = dict(param_index)
            inner_index[var] = n_params
            catom = _compile_atom(atom, inner_index, schema.name, known)
            pool = model.objects_by_type.get(vtype)
            if pool is None:
                raise GroundingError(f"{schema.name}: exists over unknown type {vtype!r}")
            witness_ok = frozenset(pool)
            var_positions = tuple(
                i for i, p in enumerate(catom[1]) if type(p) is int and p == n_params
            )
            if not var_positions:
                # witness variable unused in the body: same as a plain
                # negative literal, provided any witness object exists
                if pool:
                    neg_c.append(catom)
                continue
            bounded = model.literal_is_init_bounded(
                atom, {**ptypes, var: vtype}
            )
            exists_c.append((catom, witness_ok, var_positions, bounded, pool))
        clauses_c = []
        for ci, clause in enumerate(schema.effects):
            if (schema.name, ci) in model.dead_clauses:
                continue
            cond_c = [
                (positive, _compile_atom(a, param_index, schema.name, known))
                for positive, a in clause.condition
            ]
            add_c = [_compile_atom(a, param_index, schema.name, known) for a in clause.add]
            del_c = [_compile_atom(a, param_index, schema.name, known) for a in clause.delete]
            clauses_c.append((cond_c, add_c, del_c))
        name_positions = tuple(param_index[v] for v, _ in schema.parameters)
        classify = model.classify
        for binding in _join_bindings(model, schema.name, params, prespec):
            pre_ids: set[int] = set()
            ok = True
            for catom in pos_c:
                pred, objs = _subst_compiled(catom, binding)
                in_init, addable, deletable = classify(pred, objs)
                if in_init:
                    if not deletable:
                        continue  # statically true
                elif not addable:
                    ok = False  # statically false
                    break
                pre_ids.add(pos_id(pred, objs))
            if not ok:
                continue
            for catom in neg_c:
                pred, objs = _subst_compiled(catom, binding)
                in_init, addable, deletable = classify(pred, objs)
                if in_init:
                    if not deletable:
                        ok = False  # statically true, negation can never hold
                        break
                elif not addable:
                    continue  # statically false, negation always holds
                pre_ids.add(neg_id(pred, objs))
            if not ok:
                continue
            ext_binding = binding + (None,)
            for catom, witness_ok, var_positions, bounded, pool in exists_c:
                pred = catom[0]
                if bounded:
                    # only init instances can ever be true: look them up
                    pattern = _subst_compiled(catom, ext_binding)[1]
                    for objs in model.init_matching(pred, pattern):
                        witness = objs[var_positions[0]]
                        if witness not in witness_ok:
                            continue
                        if len(var_positions) > 1 and any(
                            objs[i] != witness for i in var_positions[1:]
                        ):
                            continue
                        if not classify(pred, objs)[2]:  # in init, undeletable
                            ok = False
                            break
                        pre_ids.add(neg_id(pred, objs))
                else:
                    for obj in pool:
                        pred2, objs = _subst_compiled(catom, binding + (obj,))
                        in_init, addable, deletable = classify(pred2, objs)
                        if in_init:
                            if not deletable:
                                ok = False
                                break
                        elif not addable:
                            continue
                        pre_ids.add(neg_id(pred2, objs))
                if not ok:
                    break
            if not ok:
                continue
            clauses = []
            for cond_c, add_c, del_c in clauses_c:
                cond_ids: list[int] = []
                alive = True
                for positive, catom in cond_c:
                    pred, objs = _subst_compiled(catom, binding)
                    in_init, addable, deletable = classify(pred, objs)
                    if positive:
                        if in_init:
                            if not deletable:
                                continue
                        elif not addable:
                            alive = False
                            break
                        cond_ids.append(pos_id(pred, objs))
                    else:
                        if in_init:
                            if not deletable:
                                alive = False
                                break
                        elif not addable:
                            continue
                        cond_ids.append(neg_id(pred, objs))
                if not alive:
                    continue
                adds = [_subst_compiled(a, binding) for a in add_c]
                dels = [_subst_compiled(a, binding) for a in del_c]
                clauses.append((tuple(sorted(set(cond_ids))), adds, dels))
            name = " ".join((schema.name,) + tuple(binding[i] for i in name_positions))
            candidates.append(_Candidate(name, pre_ids, clauses))
            if len(candidates) > max_actions:
                raise GroundingError(f"action budget exceeded ({max_actions})")

    # goal literals intern (and register complements) before effect
    # compilation so negative goals get their mirrors maintained
    goal_ids: list[int] = []
    unsolvable = False
    for positive, atom in problem.goal:
        if atom.pred not in model.init_tuples:
            raise GroundingError(f"goal uses unknown predicate {atom.pred!r}")
        pred, objs = atom.pred, atom.args
        for obj in objs:
            if obj not in model.object_type:
                raise GroundingError(f"goal atom {atom} uses undeclared object")
        if positive:
            if model.statically_true(pred, objs):
                continue
            if model.statically_false(pred, objs):
                unsolvable = True
                continue
            goal_ids.append(pos_id(pred, objs))
        else:
            if model.statically_false(pred, objs):
                continue
            if model.statically_true(pred, objs):
                unsolvable = True
                continue
            goal_ids.append(neg_id(pred, objs))

    # phase B: compile effects, mirroring registered complements
    actions: list[GroundAction] = []
    classify = model.classify
    for cand in candidates:
        clauses: list[GroundClause] = []
        for cond_ids, adds, dels in cand.clauses:
            add_ids: list[int] = []
            del_ids: list[int] = []
            for pred, objs in adds:
                in_init, addable, deletable = classify(pred, objs)
                if in_init and not deletable:
                    continue  # statically true, adding is a no-op
                aid = pos_id(pred, objs)
                add_ids.append(aid)
                mirror = complements.get(aid)
                if mirror is not None:
                    del_ids.append(mirror)
            for pred, objs in dels:
                in_init, addable, deletable = classify(pred, objs)
                if not in_init and not addable:
                    continue  # statically false, deleting is a no-op
                did = pos_id(pred, objs)
                del_ids.append(did)
                mirror = complements.get(did)
                if mirror is not None:
                    add_ids.append(mirror)
            if add_ids or del_ids:
                clauses.append(
                    GroundClause(cond_ids, tuple(sorted(set(add_ids))), tuple(sorted(set(del_ids))))
                )
        actions.append(GroundAction(cand.name, frozenset(cand.pre), tuple(clauses)))

    # initial state over the interned universe
    init_ids: set[int] = set()
    for (negated, pred, objs), idx in interner.ids.items():
        if negated:
            continue
        if objs in model.init_tuples[pred]:
            init_ids.add(idx)
    for pid, nid in complements.items():
        if interner.names[pid].startswith("(not "):
            continue
        if pid not in init_ids:
            init_ids.add(nid)

    task = GroundTask(
        atoms=tuple(interner.names),
        actions=tuple(actions),
        init=frozenset(init_ids),
        goal=tuple(sorted(set(goal_ids))),
        complement_of=complements,
        unsolvable_goal=unsolvable,
    )
    return _prune_and_canonicalize(task)


def _reachable_sets(task: GroundTask) -> tuple[set[int], list[int]]:
    """Delete-relaxed reachable atoms and the actions that can ever fire.

    Counter-based fixpoint: one rule per (action pre, clause condition)
    pair; a rule fires when its open-precondition count hits zero.
    """
    n_atoms = len(task.atoms)
    rule_pre: list[int] = []
    rule_adds: list[tuple[int, ...]] = []
    rule_action: list[int] = []
    rules_by_atom: list[list[int]] = [[] for _ in range(n_atoms)]
    action_rule: list[int] = []  # rule standing for "pre satisfied" per action
    for aidx, action in enumerate(task.actions):
        base = sorted(action.pre)
        rid = len(rule_pre)
        action_rule.append(rid)
        rule_pre.append(len(base))
        rule_adds.append(())
        rule_action.append(aidx)
        for atom in base:
            rules_by_atom[atom].append(rid)
        for clause in action.effects:
            if not clause.add:
                continue
            pre = sorted(set(action.pre) | set(clause.condition))
            rid = len(rule_pre)
            rule_pre.append(len(pre))
            rule_adds.append(clause.add)
            rule_action.append(-1)
            for atom in pre:
                rules_by_atom[atom].append(rid)
    reached = set(task.init)
    alive_mask = [False] * len(task.actions)
    count = rule_pre[:]
    queue = list(task.init)
    for rid, c in enumerate(count):
        if c == 0:
            aidx = rule_action[rid]
            if aidx >= 0:
                alive_mask[aidx] = True
            for atom in rule_adds[rid]:
                if atom not in reached:
                    reached.add(atom)
                    queue.append(atom)
    qi = 0
    while qi < len(queue):
        atom = queue[qi]
        qi += 1
        for rid in rules_by_atom[atom]:
            count[rid] -= 1
            if count[rid] == 0:
                aidx = rule_action[rid]
                if aidx >= 0:
                    alive_mask[aidx] = True
                for added in rule_adds[rid]:
                    if added not in reached:
                        reached.add(added)
                        queue.append(added)
    alive = [aidx for aidx, ok in enumerate(alive_mask) if ok]
    return reached, alive


def _prune_and_canonicalize(task: GroundTask) -> GroundTask:
    reached, alive = _reachable_sets(task)
    keep_atoms = set(reached)
    keep_atoms.update(task.goal)
    kept_actions: list[GroundAction] = []
    for aidx in alive:
        action = task.actions[aidx]
        clauses = tuple(
            c for c in action.effects if all(x in reached for x in c.condition)
        )
        kept_actions.append(GroundAction(action.name, action.pre, clauses))
        for clause in clauses:
            keep_atoms.update(clause.add)
            keep_atoms.update(clause.delete)
        keep_atoms.update(action.pre)

    order = sorted(keep_atoms, key=lambda i: task.atoms[i])
    remap = {old: new for new, old in enumerate(order)}
    atoms = tuple(task.atoms[i] for i in order)
    complement_of = {
        remap[a]: remap[b]
        for a, b in task.complement_of.items()
        if a in remap and b in remap
    }
    kept_actions.sort(key=lambda a: a.name)

    def remap_action(action: GroundAction) -> GroundAction:
        return GroundAction(
            action.name,
            frozenset(remap[i] for i in action.pre),
            tuple(
                GroundClause(
                    tuple(sorted(remap[i] for i in c.condition)),
                    tuple(sorted(remap[i] for i in c.add if i in remap)),
                    tuple(sorted(remap[i] for i in c.delete if i in remap)),
                )
                for c in action.effects
            ),
        )

    return GroundTask(
        atoms=atoms,
        actions=tuple(remap_action(a) for a in kept_actions),
        init=frozenset(remap[i] for i in task.init if i in remap),
        goal=tuple(sorted(remap[i] for i in task.goal)),
        complement_of=complement_of,
        unsolvable_goal=task.unsolvable_goal,
    )


def holds(task: GroundTask, state: frozenset[int], action: GroundAction) -> bool:
    return action.pre <= state


def apply_action(task: GroundTask, state: frozenset[int], action: GroundAction) -> frozenset[int]:
    """STRIPS application: conditions read the pre-state, deletes before adds."""
    if not action.pre <= state:
        raise ValueError(f"action {action.name!r} is not applicable")
    adds: set[int] = set()
    dels: set[int] = set()
    for clause in action.effects:
        if all(c in state for c in clause.condition):
            adds.update(clause.add)
            dels.update(clause.delete)
    return frozenset((state - dels) | adds)
