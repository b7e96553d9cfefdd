"""State machines and optimal solvers for maze, blocks and shuffle."""

from __future__ import annotations

from dataclasses import replace
from typing import List, NamedTuple, Optional, Sequence, Tuple

from . import blocks, maze, shuffle
from .core import (
    BLOCKS,
    DOMAINS,
    FREETEXT,
    MAZE,
    SHUFFLE,
    SYNTHETIC_DOMAINS,
    VIOLATION_KINDS,
    ActionParseError,
    ActionRecord,
    BlockMove,
    BlocksLayout,
    BlocksState,
    Cell,
    DomainMismatchError,
    EnvError,
    EnvState,
    FreeText,
    MazeLayout,
    MazeMove,
    MazeState,
    Outcome,
    ShuffleState,
    TileSwap,
    UnsolvableError,
    ViolationTag,
    format_payload,
    parse_action,
)

_MODULES = {MAZE: maze, BLOCKS: blocks, SHUFFLE: shuffle}

__all__ = [
    "BLOCKS", "DOMAINS", "FREETEXT", "MAZE", "SHUFFLE", "SYNTHETIC_DOMAINS", "VIOLATION_KINDS",
    "ActionParseError", "ActionRecord", "BlockMove", "BlocksLayout", "BlocksState", "Cell",
    "DomainMismatchError", "EnvError", "EnvState", "FreeText", "MazeLayout", "MazeMove", "MazeState",
    "Outcome", "ShuffleState", "TileSwap", "UnsolvableError", "ViolationTag", "Trajectory",
    "apply", "distance_to_goal", "format_payload", "inverse", "is_goal", "legal_actions",
    "parse_action", "same_layout", "simulate", "solve", "clear_violations",
]


def _module(state):
    try:
        return _MODULES[state.domain]
    except (AttributeError, KeyError):
        raise DomainMismatchError(f"not a synthetic-domain state: {state!r}") from None


def _target(state, goal):
    if state.domain != goal.domain:
        raise DomainMismatchError(f"{state.domain} state vs {goal.domain} goal")
    if not same_layout(state, goal):
        raise DomainMismatchError("state and goal do not share a layout")
    if state.domain == MAZE:
        return goal.agent
    return goal.key


def same_layout(a, b) -> bool:
    if a.domain != b.domain:
        return False
    if a.domain == SHUFFLE:
        return a.grid == b.grid
    return a.layout == b.layout


def legal_actions(state: EnvState) -> List[ActionRecord]:
    return _module(state).legal_actions(state)


def apply(state: EnvState, action: ActionRecord, step_index: int = 0) -> Outcome:
    """Apply one action. Illegal actions return a fault tag together with the
    post-fault state instead of raising; only a domain mismatch raises."""
    mod = _module(state)
    if action.domain != state.domain:
        raise DomainMismatchError(f"{action.domain} action applied to {state.domain} state")
    return mod.apply(state, action.payload, step_index)


def solve(initial: EnvState, goal: EnvState) -> List[ActionRecord]:
    return _module(initial).solve(initial, _target(initial, goal))


def distance_to_goal(state: EnvState, goal: EnvState) -> float:
    return _module(state).distance(state, _target(state, goal))


def is_goal(state: EnvState, goal: EnvState) -> bool:
    return state.key == goal.key


def clear_violations(state: EnvState) -> EnvState:
    return replace(state, violations=())


def inverse(action: ActionRecord) -> ActionRecord:
    p = action.payload
    if isinstance(p, MazeMove):
        return ActionRecord.maze(p.dst, p.src)
    if isinstance(p, BlockMove):
        return ActionRecord.block(p.block_id, p.to_col, p.from_col)
    if isinstance(p, TileSwap):
        return action
    raise DomainMismatchError("free-text actions have no inverse")


class Trajectory(NamedTuple):
    states: Tuple[EnvState, ...]  # len(actions) + 1 entries, initial first
    faults: Tuple[Optional[ViolationTag], ...]

    @property
    def final(self) -> EnvState:
        return self.states[-1]

    @property
    def clean(self) -> bool:
        return all(f is None for f in self.faults)


def simulate(state: EnvState, actions: Sequence[ActionRecord], first_step: int = 0) -> Trajectory:
    states, faults = [state], []
    for i, a in enumerate(actions):
        out = apply(states[-1], a, first_step + i)
        states.append(out.state)
        faults.append(out.fault)
    return Trajectory(tuple(states), tuple(faults))
