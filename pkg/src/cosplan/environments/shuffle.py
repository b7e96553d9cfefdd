"""Tile shuffle: a permutation of image patches restored by pairwise swaps."""

from __future__ import annotations

from typing import List, Optional, Sequence

from .core import ActionRecord, Outcome, ShuffleState, TileSwap, UnsolvableError, ViolationTag


def legal_actions(state: ShuffleState) -> List[ActionRecord]:
    n = state.size
    return [ActionRecord.swap(state.cell(i), state.cell(j)) for i in range(n) for j in range(i + 1, n)]


def _in_grid(state: ShuffleState, cell) -> bool:
    return 0 <= cell[0] < state.grid[0] and 0 <= cell[1] < state.grid[1]


def check(state: ShuffleState, swap: TileSwap) -> Optional[str]:
    if not (_in_grid(state, swap.pos_a) and _in_grid(state, swap.pos_b)) or swap.pos_a == swap.pos_b:
        return "invalid_tile"
    return None


def apply(state: ShuffleState, swap: TileSwap, step_index: int = 0) -> Outcome:
    kind = check(state, swap)
    if kind is not None:
        tag = ViolationTag(kind, step_index)
        return Outcome(ShuffleState(state.grid, state.perm, state.violations + (tag,)), tag)
    perm = list(state.perm)
    a, b = state.index(swap.pos_a), state.index(swap.pos_b)
    perm[a], perm[b] = perm[b], perm[a]
    return Outcome(ShuffleState(state.grid, tuple(perm), state.violations))


def cycle_count(perm: Sequence[int]) -> int:
    seen = [False] * len(perm)
    cycles = 0
    for i in range(len(perm)):
        if not seen[i]:
            cycles += 1
            j = i
            while not seen[j]:
                seen[j] = True
                j = perm[j]
    return cycles


def relative(perm: Sequence[int], goal: Sequence[int]) -> List[int]:
    """Permutation taking each cell to the cell its tile occupies in ``goal``."""
    if sorted(perm) != sorted(goal) or len(set(perm)) != len(perm):
        raise UnsolvableError("perm and goal are not permutations of the same tiles")
    home = {tile: i for i, tile in enumerate(goal)}
    return [home[t] for t in perm]


def distance(state: ShuffleState, goal: Sequence[int]) -> int:
    rel = relative(state.perm, goal)
    return len(rel) - cycle_count(rel)


def solve(state: ShuffleState, goal: Sequence[int]) -> List[ActionRecord]:
    """Place each cell's goal tile in turn; every swap splits a cycle, giving
    exactly n - cycles swaps."""
    relative(state.perm, goal)
    cur = list(state.perm)
    where = {t: i for i, t in enumerate(cur)}
    plan = []
    for i, want in enumerate(goal):
        if cur[i] != want:
            j = where[want]
            plan.append(ActionRecord.swap(state.cell(i), state.cell(j)))
            where[cur[i]], where[want] = j, i
            cur[i], cur[j] = cur[j], cur[i]
    return plan
