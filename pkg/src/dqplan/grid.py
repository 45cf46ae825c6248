"""Deterministic rocks-and-diamonds grid environment.

Levels are rectangular character grids surrounded by walls. The avatar
turns and walks in the four cardinal directions, digs dirt by walking
through it, collects gems by stepping onto them, breaks the boulder it
is facing with USE, and finishes the level by stepping onto the exit
once it holds enough gems. Nothing falls and nothing else moves, so the
transition function is deterministic and fully known.

Coordinates are (x, y) with x growing to the right and y growing
downwards, matching the row/column layout of the level text.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

WALL = "w"
BOULDER = "o"
GEM = "x"
PLAYER = "A"
EXIT = "e"
DIRT = "."
EMPTY = "-"

TILE_CHARS = frozenset((WALL, BOULDER, GEM, PLAYER, EXIT, DIRT, EMPTY))

# Hard bound on level side length; the state encoder uses a fixed canvas.
MAX_SIDE = 30

DEFAULT_GEMS_NEEDED = 9

Cell = tuple[int, int]


class Orientation(Enum):
    NORTH = "north"
    SOUTH = "south"
    EAST = "east"
    WEST = "west"


class Action(Enum):
    UP = "up"
    DOWN = "down"
    LEFT = "left"
    RIGHT = "right"
    USE = "use"


MOVE_ACTIONS = (Action.UP, Action.DOWN, Action.LEFT, Action.RIGHT)

ACTION_ORIENTATION = {
    Action.UP: Orientation.NORTH,
    Action.DOWN: Orientation.SOUTH,
    Action.LEFT: Orientation.WEST,
    Action.RIGHT: Orientation.EAST,
}

ORIENTATION_DELTA = {
    Orientation.NORTH: (0, -1),
    Orientation.SOUTH: (0, 1),
    Orientation.WEST: (-1, 0),
    Orientation.EAST: (1, 0),
}


class LevelError(ValueError):
    """Raised when level text violates the format contract."""


class SubgoalKind(Enum):
    GEM = "gem"
    EXIT = "exit"


@dataclass(frozen=True)
class Subgoal:
    """A single planner goal: pick up the gem at ``cell`` or leave via the exit."""

    kind: SubgoalKind
    cell: Cell


@dataclass(frozen=True)
class CompoundSubgoal:
    """All subgoals open in a state, in canonical order (gems by (y, x), exit last)."""

    subgoals: tuple[Subgoal, ...]


@dataclass(frozen=True)
class LevelSpec:
    """Immutable level geometry as parsed from text.

    ``tiles`` holds one string per row; ``tiles[y][x]`` is the tile code
    at (x, y).
    """

    width: int
    height: int
    tiles: tuple[str, ...]

    def tile_at(self, x: int, y: int) -> str:
        return self.tiles[y][x]


@dataclass(frozen=True)
class GameState:
    """Full game state. Walls and the exit cell are static; the rest evolves."""

    width: int
    height: int
    wall_cells: frozenset[Cell]
    player_cell: Cell
    orientation: Orientation
    gem_cells: frozenset[Cell]
    boulder_cells: frozenset[Cell]
    dirt_cells: frozenset[Cell]
    exit_cell: Cell
    gems_collected: int
    exited: bool


def parse_level(text: str) -> LevelSpec:
    """Parse level text into a LevelSpec, validating the format contract.

    Requirements: rectangular, side lengths between 3 and MAX_SIDE, only
    known tile codes, a fully walled border, exactly one avatar and
    exactly one exit, and neither of those on the border.
    """
    lines = text.splitlines()
    if lines and lines[-1] == "":
        lines = lines[:-1]
    if not lines:
        raise LevelError("empty level text")
    height = len(lines)
    width = len(lines[0])
    for y, line in enumerate(lines):
        if len(line) != width:
            raise LevelError(f"row {y} has length {len(line)}, expected {width}")
    if width < 3 or height < 3:
        raise LevelError(f"level {width}x{height} too small, need at least 3x3")
    if width > MAX_SIDE or height > MAX_SIDE:
        raise LevelError(f"level {width}x{height} exceeds {MAX_SIDE}x{MAX_SIDE}")
    players = []
    exits = []
    for y, line in enumerate(lines):
        for x, ch in enumerate(line):
            if ch not in TILE_CHARS:
                raise LevelError(f"unknown tile {ch!r} at ({x}, {y})")
            border = x == 0 or y == 0 or x == width - 1 or y == height - 1
            if border and ch != WALL:
                raise LevelError(f"border cell ({x}, {y}) is {ch!r}, must be wall")
            if ch == PLAYER:
                players.append((x, y))
            elif ch == EXIT:
                exits.append((x, y))
    if len(players) != 1:
        raise LevelError(f"expected exactly one avatar, found {len(players)}")
    if len(exits) != 1:
        raise LevelError(f"expected exactly one exit, found {len(exits)}")
    return LevelSpec(width=width, height=height, tiles=tuple(lines))


def render_level(level: LevelSpec) -> str:
    """Inverse of parse_level: emit level text with a trailing newline."""
    return "\n".join(level.tiles) + "\n"


def initial_state(level: LevelSpec) -> GameState:
    walls = set()
    gems = set()
    boulders = set()
    dirt = set()
    player = None
    exit_cell = None
    for y in range(level.height):
        for x in range(level.width):
            ch = level.tile_at(x, y)
            if ch == WALL:
                walls.add((x, y))
            elif ch == GEM:
                gems.add((x, y))
            elif ch == BOULDER:
                boulders.add((x, y))
            elif ch == DIRT:
                dirt.add((x, y))
            elif ch == PLAYER:
                player = (x, y)
            elif ch == EXIT:
                exit_cell = (x, y)
    assert player is not None and exit_cell is not None
    return GameState(
        width=level.width,
        height=level.height,
        wall_cells=frozenset(walls),
        player_cell=player,
        orientation=Orientation.SOUTH,
        gem_cells=frozenset(gems),
        boulder_cells=frozenset(boulders),
        dirt_cells=frozenset(dirt),
        exit_cell=exit_cell,
        gems_collected=0,
        exited=False,
    )


def render_state(state: GameState) -> str:
    """Render a state back to level text. The avatar covers the tile under it."""
    grid = [[EMPTY] * state.width for _ in range(state.height)]
    for (x, y) in state.wall_cells:
        grid[y][x] = WALL
    for (x, y) in state.dirt_cells:
        grid[y][x] = DIRT
    for (x, y) in state.gem_cells:
        grid[y][x] = GEM
    for (x, y) in state.boulder_cells:
        grid[y][x] = BOULDER
    ex, ey = state.exit_cell
    grid[ey][ex] = EXIT
    px, py = state.player_cell
    grid[py][px] = PLAYER
    return "\n".join("".join(row) for row in grid) + "\n"


def apply_action(
    state: GameState, action: Action, gems_needed: int = DEFAULT_GEMS_NEEDED
) -> GameState:
    """Deterministic one-step transition.

    Movement actions first reorient: if the avatar is not already facing
    the direction of the action, only the orientation changes. A second
    press moves. Moving into a wall or boulder is a no-op that still
    consumes the step. Walking onto dirt removes it; onto a gem collects
    it; onto the exit with gems_collected >= gems_needed ends the level.
    USE breaks the boulder directly ahead, if any, and is otherwise a
    no-op. Acting on an exited state is a contract violation.
    """
    if state.exited:
        raise ValueError("cannot act on an exited state")
    if action is Action.USE:
        dx, dy = ORIENTATION_DELTA[state.orientation]
        px, py = state.player_cell
        target = (px + dx, py + dy)
        if target in state.boulder_cells:
            return replace(state, boulder_cells=state.boulder_cells - {target})
        return state
    wanted = ACTION_ORIENTATION[action]
    if state.orientation is not wanted:
        return replace(state, orientation=wanted)
    dx, dy = ORIENTATION_DELTA[wanted]
    px, py = state.player_cell
    target = (px + dx, py + dy)
    if target in state.wall_cells or target in state.boulder_cells:
        return state
    gems = state.gem_cells
    dirt = state.dirt_cells
    collected = state.gems_collected
    if target in gems:
        gems = gems - {target}
        collected += 1
    if target in dirt:
        dirt = dirt - {target}
    exited = target == state.exit_cell and collected >= gems_needed
    return replace(
        state,
        player_cell=target,
        gem_cells=gems,
        dirt_cells=dirt,
        gems_collected=collected,
        exited=exited,
    )


def formulate_goals(state: GameState) -> CompoundSubgoal:
    """Remaining gems (sorted by (y, x)) plus the exit, as individual subgoals."""
    gems = sorted(state.gem_cells, key=lambda c: (c[1], c[0]))
    subgoals = [Subgoal(SubgoalKind.GEM, cell) for cell in gems]
    subgoals.append(Subgoal(SubgoalKind.EXIT, state.exit_cell))
    return CompoundSubgoal(subgoals=tuple(subgoals))


def state_fingerprint(state: GameState, include_orientation: bool = True) -> tuple:
    """Hashable canonical key for dedup and search closed sets.

    Orientation is optional because the subgoal-level state encoding does
    not see it, so two states differing only in orientation must dedup to
    the same key in that context.
    """
    key = (
        state.player_cell,
        tuple(sorted(state.gem_cells)),
        tuple(sorted(state.boulder_cells)),
        tuple(sorted(state.dirt_cells)),
        state.gems_collected,
        state.exited,
    )
    if include_orientation:
        key = key + (state.orientation.value,)
    return key


def trajectory_count(gems_total: int, gems_needed: int) -> int:
    """Number of distinct ordered ways to collect gems_needed of gems_total gems."""
    if gems_needed < 0 or gems_total < 0 or gems_needed > gems_total:
        raise ValueError(f"invalid gem counts {gems_total=} {gems_needed=}")
    return math.comb(gems_total, gems_needed) * math.factorial(gems_needed)
