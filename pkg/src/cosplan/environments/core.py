"""Shared value types for the three synthetic domains.

Everything here is an immutable value; states compare by configuration plus
their recorded violations.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple, Union

Cell = Tuple[int, int]

MAZE, BLOCKS, SHUFFLE, FREETEXT = "maze", "blocks", "shuffle", "freetext"
DOMAINS = (MAZE, BLOCKS, SHUFFLE, FREETEXT)
SYNTHETIC_DOMAINS = (MAZE, BLOCKS, SHUFFLE)

VIOLATION_KINDS = (
    "diagonal_move",
    "out_of_grid",
    "into_obstacle",
    "precondition_mismatch",
    "nontop_block",
    "invalid_column",
    "midair_placement",
    "unknown_object",
    "invalid_tile",
)


class EnvError(Exception):
    """Base class for environment errors."""


class DomainMismatchError(EnvError, ValueError):
    pass


class UnsolvableError(EnvError):
    pass


class ActionParseError(EnvError, ValueError):
    pass


@dataclass(frozen=True)
class ViolationTag:
    kind: str
    step_index: int = 0

    def __post_init__(self):
        if self.kind not in VIOLATION_KINDS:
            raise ValueError(f"unknown violation kind {self.kind!r}")


# -- action payloads ---------------------------------------------------------


@dataclass(frozen=True)
class MazeMove:
    src: Cell
    dst: Cell


@dataclass(frozen=True)
class BlockMove:
    block_id: int
    from_col: int
    to_col: int
    # only set for explicit placements ("... at level L"); 1-based
    level: Optional[int] = None


@dataclass(frozen=True)
class TileSwap:
    pos_a: Cell
    pos_b: Cell


@dataclass(frozen=True)
class FreeText:
    text: str


Payload = Union[MazeMove, BlockMove, TileSwap, FreeText]

_PAYLOAD_DOMAIN = {MazeMove: MAZE, BlockMove: BLOCKS, TileSwap: SHUFFLE, FreeText: FREETEXT}


def format_payload(payload: Payload) -> str:
    if isinstance(payload, MazeMove):
        (r, c), (r2, c2) = payload.src, payload.dst
        return f"[{r}, {c}] -> [{r2}, {c2}]"
    if isinstance(payload, BlockMove):
        text = f"Move block {payload.block_id} from column {payload.from_col} to column {payload.to_col}"
        if payload.level is not None:
            text += f" at level {payload.level}"
        return text
    if isinstance(payload, TileSwap):
        (r, c), (r2, c2) = payload.pos_a, payload.pos_b
        return f"Swap patch at position ({r}, {c}) with patch at position ({r2}, {c2})"
    if isinstance(payload, FreeText):
        return payload.text
    raise TypeError(f"not an action payload: {payload!r}")


@dataclass(frozen=True)
class ActionRecord:
    domain: str
    payload: Payload
    text: str = field(default="", compare=False)

    def __post_init__(self):
        expected = _PAYLOAD_DOMAIN[type(self.payload)]
        if self.domain != expected:
            raise DomainMismatchError(f"{type(self.payload).__name__} payload in {self.domain} action")
        object.__setattr__(self, "text", format_payload(self.payload))

    def __str__(self):
        return self.text

    @classmethod
    def maze(cls, src: Cell, dst: Cell) -> "ActionRecord":
        return cls(MAZE, MazeMove(tuple(src), tuple(dst)))

    @classmethod
    def block(cls, block_id: int, from_col: int, to_col: int, level: Optional[int] = None) -> "ActionRecord":
        return cls(BLOCKS, BlockMove(block_id, from_col, to_col, level))

    @classmethod
    def swap(cls, pos_a: Cell, pos_b: Cell) -> "ActionRecord":
        return cls(SHUFFLE, TileSwap(tuple(pos_a), tuple(pos_b)))

    @classmethod
    def free(cls, text: str) -> "ActionRecord":
        return cls(FREETEXT, FreeText(text))


_INT = r"(-?\d+)"
_MAZE_RE = re.compile(rf"^\[\s*{_INT}\s*,\s*{_INT}\s*\]\s*->\s*\[\s*{_INT}\s*,\s*{_INT}\s*\]$")
_BLOCK_RE = re.compile(
    rf"^Move block {_INT} from column[ _]{_INT} to column[ _]{_INT}(?: at level {_INT})?\.?$"
)
_SWAP_RE = re.compile(
    rf"^Swap patch at position \(\s*{_INT}\s*,\s*{_INT}\s*\) with patch at position \(\s*{_INT}\s*,\s*{_INT}\s*\)$"
)


def parse_action(text: str, domain: Optional[str] = None) -> ActionRecord:
    """Parse canonical action text. Unrecognised text is free text only when
    ``domain`` is ``freetext``; otherwise it is an error."""
    s = text.strip()
    m = _MAZE_RE.match(s)
    if m and domain in (None, MAZE):
        a, b, c, d = map(int, m.groups())
        return ActionRecord.maze((a, b), (c, d))
    m = _BLOCK_RE.match(s)
    if m and domain in (None, BLOCKS):
        b, x, y, lvl = m.groups()
        return ActionRecord.block(int(b), int(x), int(y), None if lvl is None else int(lvl))
    m = _SWAP_RE.match(s)
    if m and domain in (None, SHUFFLE):
        a, b, c, d = map(int, m.groups())
        return ActionRecord.swap((a, b), (c, d))
    if domain == FREETEXT:
        return ActionRecord.free(text)
    raise ActionParseError(f"cannot parse {domain or 'any'} action from {text!r}")


# -- states ------------------------------------------------------------------


@dataclass(frozen=True)
class MazeLayout:
    rows: int
    cols: int
    obstacles: Tuple[Cell, ...]
    start: Cell
    goal: Cell

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(sorted(tuple(o) for o in self.obstacles)))
        object.__setattr__(self, "start", tuple(self.start))
        object.__setattr__(self, "goal", tuple(self.goal))

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.rows and 0 <= cell[1] < self.cols


@dataclass(frozen=True)
class MazeState:
    layout: MazeLayout
    agent: Cell
    violations: Tuple[ViolationTag, ...] = ()

    domain = MAZE

    def __post_init__(self):
        object.__setattr__(self, "agent", tuple(self.agent))

    @property
    def key(self):
        return self.agent


@dataclass(frozen=True)
class BlocksLayout:
    num_blocks: int
    colors: Tuple[str, ...]
    num_columns: int = 5

    def __post_init__(self):
        object.__setattr__(self, "colors", tuple(self.colors))
        if len(self.colors) != self.num_blocks:
            raise ValueError("one color per block required")


@dataclass(frozen=True)
class BlocksState:
    layout: BlocksLayout
    columns: Tuple[Tuple[int, ...], ...]
    violations: Tuple[ViolationTag, ...] = ()

    domain = BLOCKS

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(tuple(c) for c in self.columns))

    @property
    def key(self):
        return self.columns

    def locate(self, block_id: int) -> Optional[Tuple[int, int]]:
        """(column, 0-based level) of a block, or None."""
        for c, stack in enumerate(self.columns):
            if block_id in stack:
                return c, stack.index(block_id)
        return None


@dataclass(frozen=True)
class ShuffleState:
    grid: Tuple[int, int]
    perm: Tuple[int, ...]
    violations: Tuple[ViolationTag, ...] = ()

    domain = SHUFFLE

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(self.grid))
        object.__setattr__(self, "perm", tuple(self.perm))

    @property
    def key(self):
        return self.perm

    @property
    def size(self) -> int:
        return self.grid[0] * self.grid[1]

    def index(self, cell: Cell) -> int:
        return cell[0] * self.grid[1] + cell[1]

    def cell(self, index: int) -> Cell:
        return divmod(index, self.grid[1])


EnvState = Union[MazeState, BlocksState, ShuffleState]


class Outcome(NamedTuple):
    """Result of applying one action: the successor state and the fault, if any."""

    state: EnvState
    fault: Optional[ViolationTag] = None

    @property
    def ok(self) -> bool:
        return self.fault is None
