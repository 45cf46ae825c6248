"""Versioned on-disk formats for transition datasets and training logs.

A dataset file is JSON-lines: a header line naming the format, version,
transition kind, and free-form metadata, then one record per
transition. States are stored as level-text snapshots plus orientation
and the collected-gem count; since the avatar covers the tile it stands
on, an explicit exit coordinate is added whenever the avatar occludes
the exit. All JSON is emitted with sorted keys and compact separators
so identical data produces identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

from .grid import (
    BOULDER,
    DIRT,
    EMPTY,
    EXIT,
    GEM,
    PLAYER,
    WALL,
    GameState,
    Orientation,
    Action,
    Subgoal,
    SubgoalKind,
    render_state,
)
from .qlearn import TransitionA, TransitionG

DATASET_FORMAT = "dqplan-dataset"
DATASET_VERSION = 1

KIND_SUBGOAL = "g"
KIND_ACTION = "a"

LOG_HEADER = "iteration,loss,mean_abs_td"


def state_to_record(state: GameState) -> dict:
    if state.exited:
        raise ValueError("exited states have no on-disk form")
    record = {
        "level": render_state(state).splitlines(),
        "orientation": state.orientation.value,
        "gems": state.gems_collected,
    }
    if state.player_cell == state.exit_cell:
        record["exit"] = list(state.exit_cell)
    return record


def state_from_record(record: dict) -> GameState:
    rows = record["level"]
    width = len(rows[0])
    height = len(rows)
    walls, gems, boulders, dirt = set(), set(), set(), set()
    player = None
    exit_cell = None
    for y, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"ragged level text in record, row {y}")
        for x, char in enumerate(row):
            cell = (x, y)
            if char == WALL:
                walls.add(cell)
            elif char == GEM:
                gems.add(cell)
            elif char == BOULDER:
                boulders.add(cell)
            elif char == DIRT:
                dirt.add(cell)
            elif char == PLAYER:
                if player is not None:
                    raise ValueError("record has more than one avatar")
                player = cell
            elif char == EXIT:
                exit_cell = cell
            elif char != EMPTY:
                raise ValueError(f"unknown tile {char!r} in record")
    if player is None:
        raise ValueError("record has no avatar")
    if "exit" in record:
        exit_cell = tuple(record["exit"])
    if exit_cell is None:
        raise ValueError("record has no exit")
    return GameState(
        width=width,
        height=height,
        wall_cells=frozenset(walls),
        player_cell=player,
        orientation=Orientation(record["orientation"]),
        gem_cells=frozenset(gems),
        boulder_cells=frozenset(boulders),
        dirt_cells=frozenset(dirt),
        exit_cell=exit_cell,
        gems_collected=int(record["gems"]),
        exited=False,
    )


def transition_to_record(transition) -> dict:
    nxt = transition.s_next
    record = {
        "s": state_to_record(transition.s),
        "r": float(transition.r),
        "next": None if nxt is None else state_to_record(nxt),
    }
    if isinstance(transition, TransitionG):
        record["goal"] = {
            "kind": transition.g.kind.value,
            "cell": list(transition.g.cell),
        }
    elif isinstance(transition, TransitionA):
        record["action"] = transition.a.value
    else:
        raise TypeError(f"not a transition: {transition!r}")
    return record


def record_to_transition(record: dict, kind: str):
    s = state_from_record(record["s"])
    r = float(record["r"])
    nxt = record["next"]
    s_next = None if nxt is None else state_from_record(nxt)
    if kind == KIND_SUBGOAL:
        goal = Subgoal(SubgoalKind(record["goal"]["kind"]), tuple(record["goal"]["cell"]))
        return TransitionG(s=s, g=goal, r=r, s_next=s_next)
    if kind == KIND_ACTION:
        return TransitionA(s=s, a=Action(record["action"]), r=r, s_next=s_next)
    raise ValueError(f"unknown dataset kind {kind!r}")


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_dataset(path, transitions, meta: dict | None = None) -> None:
    """Write transitions as a header line plus one JSON record per line."""
    transitions = list(transitions)
    if not transitions:
        raise ValueError("refusing to write an empty dataset")
    kind = KIND_SUBGOAL if isinstance(transitions[0], TransitionG) else KIND_ACTION
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "kind": kind,
        "count": len(transitions),
        "meta": meta or {},
    }
    lines = [_dumps(header)]
    lines.extend(_dumps(transition_to_record(tr)) for tr in transitions)
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_dataset(path):
    """Load a dataset file; returns (transitions, header dict)."""
    text = Path(path).read_text(encoding="ascii")
    lines = text.splitlines()
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    header = json.loads(lines[0])
    if header.get("format") != DATASET_FORMAT:
        raise ValueError(f"{path}: not a {DATASET_FORMAT} file")
    if header.get("version") != DATASET_VERSION:
        raise ValueError(f"{path}: unsupported version {header.get('version')!r}")
    kind = header["kind"]
    transitions = [record_to_transition(json.loads(line), kind) for line in lines[1:]]
    if header.get("count") != len(transitions):
        raise ValueError(
            f"{path}: header says {header.get('count')} records, found {len(transitions)}"
        )
    return transitions, header


def append_training_log(path, rows) -> None:
    """Append (iteration, loss, mean_abs_td) rows, writing the header once."""
    path = Path(path)
    fresh = not path.exists() or path.stat().st_size == 0
    with path.open("a", encoding="ascii") as fh:
        if fresh:
            fh.write(LOG_HEADER + "\n")
        for iteration, loss, mean_abs_td in rows:
            fh.write(f"{iteration},{loss!r},{mean_abs_td!r}\n")


def read_training_log(path) -> list[tuple[int, float, float]]:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != LOG_HEADER:
        raise ValueError(f"{path}: missing training-log header")
    rows = []
    for line in lines[1:]:
        it, loss, td = line.split(",")
        rows.append((int(it), float(loss), float(td)))
    return rows
