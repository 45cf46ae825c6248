"""Shared fixtures and hypothesis strategies."""

from __future__ import annotations

from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from dqplan import grid

settings.register_profile(
    "default",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


INTERIOR_TILES = (grid.EMPTY, grid.DIRT, grid.GEM, grid.BOULDER, grid.WALL)


@st.composite
def level_texts(draw, min_side: int = 4, max_side: int = 9) -> str:
    """Random valid walled level with one avatar and one exit."""
    width = draw(st.integers(min_side, max_side))
    height = draw(st.integers(min_side, max_side))
    cells = [
        [
            grid.WALL
            if x == 0 or y == 0 or x == width - 1 or y == height - 1
            else draw(st.sampled_from(INTERIOR_TILES))
            for x in range(width)
        ]
        for y in range(height)
    ]
    interior = [(x, y) for y in range(1, height - 1) for x in range(1, width - 1)]
    spots = draw(st.permutations(interior))
    (px, py), (ex, ey) = spots[0], spots[1]
    cells[py][px] = grid.PLAYER
    cells[ey][ex] = grid.EXIT
    return "\n".join("".join(row) for row in cells) + "\n"


@st.composite
def game_states(draw, min_side: int = 4, max_side: int = 9):
    text = draw(level_texts(min_side, max_side))
    return grid.initial_state(grid.parse_level(text))


def actions_strategy(max_size: int = 40):
    return st.lists(st.sampled_from(list(grid.Action)), max_size=max_size)
