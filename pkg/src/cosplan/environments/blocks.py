"""Blocks world on five labelled columns with no height cap."""

from __future__ import annotations

import heapq
import itertools
from functools import lru_cache
from typing import List, Optional, Tuple

from .core import ActionRecord, BlockMove, BlocksState, Outcome, UnsolvableError, ViolationTag

Columns = Tuple[Tuple[int, ...], ...]


def legal_actions(state: BlocksState) -> List[ActionRecord]:
    out = []
    tops = sorted((stack[-1], c) for c, stack in enumerate(state.columns) if stack)
    for block, src in tops:
        for dst in range(state.layout.num_columns):
            if dst != src:
                out.append(ActionRecord.block(block, src, dst))
    return out


def check(state: BlocksState, move: BlockMove) -> Optional[str]:
    ncols = state.layout.num_columns
    if not 0 <= move.block_id < state.layout.num_blocks:
        return "unknown_object"
    if not (0 <= move.from_col < ncols and 0 <= move.to_col < ncols) or move.from_col == move.to_col:
        return "invalid_column"
    stack = state.columns[move.from_col]
    if move.block_id not in stack:
        return "precondition_mismatch"
    if stack[-1] != move.block_id:
        return "nontop_block"
    if move.level is not None and move.level != len(state.columns[move.to_col]) + 1:
        return "midair_placement"
    return None


def move_top(columns: Columns, src: int, dst: int) -> Columns:
    cols = list(columns)
    block = cols[src][-1]
    cols[src] = cols[src][:-1]
    cols[dst] = cols[dst] + (block,)
    return tuple(cols)


def apply(state: BlocksState, move: BlockMove, step_index: int = 0) -> Outcome:
    kind = check(state, move)
    if kind is None:
        cols = move_top(state.columns, move.from_col, move.to_col)
        return Outcome(BlocksState(state.layout, cols, state.violations))
    tag = ViolationTag(kind, step_index)
    return Outcome(BlocksState(state.layout, state.columns, state.violations + (tag,)), tag)


def _placed(columns: Columns, goal: Columns) -> int:
    placed = 0
    for stack, target in zip(columns, goal):
        for a, b in zip(stack, target):
            if a != b:
                break
            placed += 1
    return placed


def misplaced(columns: Columns, goal: Columns) -> int:
    """Blocks not resting on a goal-correct foundation; each must move at least once."""
    return sum(len(s) for s in columns) - _placed(columns, goal)


@lru_cache(maxsize=64)
def _goal_foundations(goal: Columns):
    """block -> set of blocks beneath it in the goal."""
    out = {}
    for stack in goal:
        for i, b in enumerate(stack):
            out[b] = frozenset(stack[:i])
    return out


def lower_bound(columns: Columns, goal: Columns) -> int:
    """Admissible move count: every misplaced block moves once, and a block
    stacked above a still-misplaced member of its own goal foundation must move
    off before that block can settle, so it moves at least twice."""
    found = _goal_foundations(goal)
    h = 0
    for stack, target in zip(columns, goal):
        ok = 0
        for a, b in zip(stack, target):
            if a != b:
                break
            ok += 1
        loose = set()
        for b in stack[ok:]:
            h += 1
            if loose and not loose.isdisjoint(found[b]):
                h += 1
            loose.add(b)
    return h


def _successors(columns: Columns):
    # (block_id, dest_col) lexicographic
    tops = sorted((stack[-1], c) for c, stack in enumerate(columns) if stack)
    for block, src in tops:
        for dst in range(len(columns)):
            if dst != src:
                yield block, src, dst


@lru_cache(maxsize=200_000)
def _search(start: Columns, goal: Columns) -> Tuple[Tuple[int, int, int], ...]:
    """A* over configurations with the admissible :func:`lower_bound`; nodes are
    re-opened when a shorter path appears, so the first goal pop is optimal."""
    if start == goal:
        return ()
    if sorted(itertools.chain.from_iterable(start)) != sorted(itertools.chain.from_iterable(goal)):
        raise UnsolvableError("initial and goal hold different blocks")
    counter = itertools.count()
    g_best = {start: 0}
    parent = {start: None}
    heap = [(lower_bound(start, goal), 0, next(counter), start)]
    while heap:
        _, neg_g, _, cols = heapq.heappop(heap)
        g = -neg_g
        if g > g_best[cols]:
            continue
        if cols == goal:
            moves = []
            while parent[cols] is not None:
                prev, mv = parent[cols]
                moves.append(mv)
                cols = prev
            return tuple(reversed(moves))
        for block, src, dst in _successors(cols):
            nxt = move_top(cols, src, dst)
            ng = g + 1
            if ng < g_best.get(nxt, 1 << 30):
                g_best[nxt] = ng
                parent[nxt] = (cols, (block, src, dst))
                # ties on f go to the deeper node
                heapq.heappush(heap, (ng + lower_bound(nxt, goal), -ng, next(counter), nxt))
    raise UnsolvableError("goal configuration unreachable")


def solve(state: BlocksState, goal: Columns) -> List[ActionRecord]:
    return [ActionRecord.block(b, s, d) for b, s, d in _search(state.columns, tuple(goal))]


def distance(state: BlocksState, goal: Columns) -> float:
    try:
        return len(_search(state.columns, tuple(goal)))
    except UnsolvableError:
        return float("inf")
