"""Grid navigation: absolute cell-to-cell moves, 4-connected."""

from __future__ import annotations

from collections import deque
from functools import lru_cache
from typing import Dict, List

from .core import (
    ActionRecord,
    Cell,
    MazeLayout,
    MazeMove,
    MazeState,
    Outcome,
    UnsolvableError,
    ViolationTag,
)

# expansion order is part of the contract: up, down, left, right
DIRECTIONS = ((-1, 0), (1, 0), (0, -1), (0, 1))
DIRECTION_NAMES = {(-1, 0): "move_up", (1, 0): "move_down", (0, -1): "move_left", (0, 1): "move_right"}


def free_neighbors(layout: MazeLayout, cell: Cell) -> List[Cell]:
    blocked = set(layout.obstacles)
    out = []
    for dr, dc in DIRECTIONS:
        nxt = (cell[0] + dr, cell[1] + dc)
        if layout.in_bounds(nxt) and nxt not in blocked:
            out.append(nxt)
    return out


def legal_actions(state: MazeState) -> List[ActionRecord]:
    return [ActionRecord.maze(state.agent, n) for n in free_neighbors(state.layout, state.agent)]


def check(state: MazeState, move: MazeMove):
    """Fault kind for ``move`` in ``state`` or None when legal. Checks run in a
    fixed order so every illegal move gets exactly one tag."""
    layout = state.layout
    if not (layout.in_bounds(move.src) and layout.in_bounds(move.dst)):
        return "out_of_grid"
    if move.src != state.agent:
        return "precondition_mismatch"
    if abs(move.src[0] - move.dst[0]) + abs(move.src[1] - move.dst[1]) != 1:
        return "diagonal_move"
    if move.dst in layout.obstacles:
        return "into_obstacle"
    return None


def apply(state: MazeState, move: MazeMove, step_index: int = 0) -> Outcome:
    kind = check(state, move)
    if kind is None:
        return Outcome(MazeState(state.layout, move.dst, state.violations))
    tag = ViolationTag(kind, step_index)
    # entering an obstacle is physically possible; every other fault is a no-op
    agent = move.dst if kind == "into_obstacle" else state.agent
    return Outcome(MazeState(state.layout, agent, state.violations + (tag,)), tag)


@lru_cache(maxsize=4096)
def distance_field(layout: MazeLayout, target: Cell) -> Dict[Cell, int]:
    """BFS distances to ``target`` for every free cell reachable from it."""
    dist = {target: 0}
    queue = deque([target])
    while queue:
        cell = queue.popleft()
        for n in free_neighbors(layout, cell):
            if n not in dist:
                dist[n] = dist[cell] + 1
                queue.append(n)
    return dist


def distance(state: MazeState, target: Cell) -> float:
    field = distance_field(state.layout, target)
    if state.agent in field:
        return field[state.agent]
    if state.agent in state.layout.obstacles:
        # the only way out of an obstacle cell is one legal step to a free neighbour
        exits = [field[n] for n in free_neighbors(state.layout, state.agent) if n in field]
        return 1 + min(exits) if exits else float("inf")
    return float("inf")


def solve(state: MazeState, target: Cell) -> List[ActionRecord]:
    """Shortest move sequence by BFS from the agent; ties resolved by expansion order."""
    start = state.agent
    parent = {start: None}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        if cell == target:
            break
        for n in free_neighbors(state.layout, cell):
            if n not in parent:
                parent[n] = cell
                queue.append(n)
    if target not in parent:
        raise UnsolvableError(f"goal {target} unreachable from {start}")
    path = [target]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    path.reverse()
    return [ActionRecord.maze(a, b) for a, b in zip(path, path[1:])]
