"""Benchmark instance generation: problems, one injected error, two MCQs,
and deterministic dataset (de)serialization."""

from __future__ import annotations

import hashlib
import json
import random
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from . import environments as env
from .environments import (
    BLOCKS,
    FREETEXT,
    MAZE,
    SHUFFLE,
    ActionRecord,
    BlocksLayout,
    BlocksState,
    MazeLayout,
    MazeState,
    ShuffleState,
)
from .environments import maze as maze_env

SCHEMA_VERSION = 1
NONE_OF_THE_ABOVE = "None of the above"
LABELS = "ABCDEFGHIJ"

OPTION_TAGS = (
    "correct",
    "no_correction_distractor",
    "illegal_distractor",
    "wrong_goal_distractor",
    "perturbed_distractor",
    "context_action",
    "none_of_above",
)

ERROR_KINDS = {
    MAZE: {"in_context": ("diagonal_move", "into_obstacle", "detour"), "out_context": ("out_of_grid",)},
    BLOCKS: {
        "in_context": ("nontop_block", "midair_placement", "detour"),
        "out_context": ("unknown_object", "invalid_column"),
    },
}

BLOCK_COLORS = ("red", "green", "blue", "yellow", "purple", "orange", "pink", "cyan", "brown", "gray")

# default initial-context lengths; shuffle draws 3 or 4 steps
DEFAULT_CONTEXT_LEN = {MAZE: 2, BLOCKS: 2}
SHUFFLE_CONTEXT_CHOICES = ((3, 0.3), (4, 0.7))


class GenerationError(RuntimeError):
    pass


class KindUnavailable(GenerationError):
    """No action of the requested error kind exists in this state."""


class DatasetError(ValueError):
    pass


class _Reject(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class ErrorSpec:
    category: str  # illegal | suboptimal
    locality: str  # in_context | out_context
    kind: str  # violation kind or "detour"
    position: int = -1

    def __post_init__(self):
        if self.category not in ("illegal", "suboptimal"):
            raise ValueError(f"bad error category {self.category!r}")
        if self.locality not in ("in_context", "out_context"):
            raise ValueError(f"bad error locality {self.locality!r}")

    @classmethod
    def for_kind(cls, kind: str, position: int = -1) -> "ErrorSpec":
        locality = "out_context" if kind in ("out_of_grid", "unknown_object", "invalid_column") else "in_context"
        return cls("suboptimal" if kind == "detour" else "illegal", locality, kind, position)


@dataclass
class MCQ:
    options: Dict[str, Union[List[ActionRecord], str]]
    correct_label: str
    option_tags: Dict[str, str]

    @property
    def labels(self) -> List[str]:
        return list(self.options)

    def label_for_tag(self, tag: str) -> List[str]:
        return [k for k, t in self.option_tags.items() if t == tag]

    def to_dict(self) -> Dict[str, Any]:
        opts = {k: v if isinstance(v, str) else [a.text for a in v] for k, v in self.options.items()}
        return {"options": opts, "correct_label": self.correct_label, "option_tags": dict(self.option_tags)}

    @classmethod
    def from_dict(cls, d: Dict[str, Any], domain: str) -> "MCQ":
        options = {}
        for k in sorted(d["options"]):
            v = d["options"][k]
            options[k] = v if isinstance(v, str) else [env.parse_action(t, domain) for t in v]
        return cls(options, d["correct_label"], dict(d["option_tags"]))


@dataclass
class ForgeConfig:
    maze_rows: Tuple[int, int] = (4, 8)
    maze_cols: Tuple[int, int] = (4, 8)
    obstacle_count: Tuple[int, int] = (0, 5)
    maze_min_distance: int = 3
    num_blocks: Tuple[int, int] = (3, 8)
    scramble_moves: Tuple[int, int] = (8, 16)
    shuffle_grids: Tuple[Tuple[int, int], ...] = ((3, 3),)
    context_len: Optional[int] = None
    error_position: Optional[int] = None
    in_context_ratio: float = 0.5
    error_free: bool = False
    text_only: bool = False
    n_options: int = 5
    k_reveal: Optional[int] = None
    num_errors: int = 1
    max_attempts: int = 100

    def to_dict(self) -> Dict[str, Any]:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ForgeConfig":
        known = {f.name for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            if k not in known:
                raise DatasetError(f"unknown config field {k!r}")
            if isinstance(v, list):
                v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
            kw[k] = v
        return cls(**kw)

    def with_overrides(self, **kw) -> "ForgeConfig":
        d = asdict(self)
        d.update({k: v for k, v in kw.items() if v is not None})
        return ForgeConfig(**d)

    def range_issues(self) -> List[str]:
        """Settings outside the benchmark's published ranges."""
        issues = []
        if self.maze_rows[0] < 3 or self.maze_rows[1] > 8 or self.maze_cols[0] < 3 or self.maze_cols[1] > 8:
            issues.append("maze size must stay within 3x3..8x8")
        if self.obstacle_count[0] < 0 or self.obstacle_count[1] > 5:
            issues.append("obstacle count must be 0..5")
        if self.num_blocks[0] < 3 or self.num_blocks[1] > 8:
            issues.append("block count must be 3..8")
        for g in self.shuffle_grids:
            if not (2 <= g[0] <= 3 and 2 <= g[1] <= 3):
                issues.append(f"shuffle grid {g} outside 2x2..3x3")
        if not 2 <= self.n_options <= 10:
            issues.append("n_options must be 2..10")
        if not 0.0 <= self.in_context_ratio <= 1.0:
            issues.append("in_context_ratio must be in [0, 1]")
        return issues


@dataclass
class TaskInstance:
    id: str
    domain: str
    seed: int
    initial: Any
    goal: Any
    context: List[ActionRecord]
    error_index: Optional[int] = None
    error_spec: Optional[ErrorSpec] = None
    step_mcq: Optional[MCQ] = None
    error_mcq: Optional[MCQ] = None
    render_refs: List[str] = field(default_factory=list)
    flags: Dict[str, Any] = field(default_factory=dict)

    @property
    def remaining_length(self) -> int:
        return len(self.step_mcq.options[self.step_mcq.correct_label]) if self.step_mcq else 0

    def post_context_state(self):
        return env.clear_violations(env.simulate(self.initial, self.context).final)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "domain": self.domain,
            "seed": self.seed,
            "initial": state_to_dict(self.initial),
            "goal": state_to_dict(self.goal),
            "context": [a.text for a in self.context],
            "error_index": self.error_index,
            "error_spec": asdict(self.error_spec) if self.error_spec else None,
            "step_mcq": self.step_mcq.to_dict() if self.step_mcq else None,
            "error_mcq": self.error_mcq.to_dict() if self.error_mcq else None,
            "render_refs": list(self.render_refs),
            "flags": dict(self.flags),
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "TaskInstance":
        missing = {"id", "domain", "context", "step_mcq"} - set(d)
        if missing:
            raise DatasetError(f"instance missing field(s): {sorted(missing)}")
        domain = d["domain"]
        return cls(
            id=d["id"],
            domain=domain,
            seed=int(d.get("seed", 0)),
            initial=state_from_dict(d.get("initial"), domain),
            goal=state_from_dict(d.get("goal"), domain),
            context=[env.parse_action(t, domain) for t in d["context"]],
            error_index=d.get("error_index"),
            error_spec=ErrorSpec(**d["error_spec"]) if d.get("error_spec") else None,
            step_mcq=MCQ.from_dict(d["step_mcq"], domain) if d.get("step_mcq") else None,
            error_mcq=MCQ.from_dict(d["error_mcq"], domain) if d.get("error_mcq") else None,
            render_refs=list(d.get("render_refs", [])),
            flags=dict(d.get("flags", {})),
        )


# -- state (de)serialization -----------------------------------------------------


def state_to_dict(state) -> Optional[Dict[str, Any]]:
    if state is None:
        return None
    if isinstance(state, MazeState):
        lay = state.layout
        return {"rows": lay.rows, "cols": lay.cols, "obstacles": [list(o) for o in lay.obstacles],
                "start": list(lay.start), "goal": list(lay.goal), "agent": list(state.agent)}
    if isinstance(state, BlocksState):
        return {"num_blocks": state.layout.num_blocks, "colors": list(state.layout.colors),
                "num_columns": state.layout.num_columns, "columns": [list(c) for c in state.columns]}
    if isinstance(state, ShuffleState):
        return {"grid": list(state.grid), "perm": list(state.perm)}
    if isinstance(state, dict):
        return dict(state)
    raise TypeError(f"cannot serialize {state!r}")


def state_from_dict(d: Optional[Dict[str, Any]], domain: str):
    if d is None:
        return None
    if domain == MAZE:
        lay = MazeLayout(d["rows"], d["cols"], [tuple(o) for o in d["obstacles"]], d["start"], d["goal"])
        return MazeState(lay, tuple(d["agent"]))
    if domain == BLOCKS:
        lay = BlocksLayout(d["num_blocks"], d["colors"], d.get("num_columns", 5))
        return BlocksState(lay, d["columns"])
    if domain == SHUFFLE:
        return ShuffleState(tuple(d["grid"]), tuple(d["perm"]))
    # free-text items keep whatever description they carry
    return dict(d)


# -- problem sampling ------------------------------------------------------------------


def _sample_maze(cfg: ForgeConfig, rng: random.Random):
    rows = rng.randint(*cfg.maze_rows)
    cols = rng.randint(*cfg.maze_cols)
    cells = [(r, c) for r in range(rows) for c in range(cols)]
    k = min(rng.randint(*cfg.obstacle_count), len(cells) - 2)
    picked = rng.sample(cells, k + 2)
    start, goal, obstacles = picked[0], picked[1], picked[2:]
    layout = MazeLayout(rows, cols, obstacles, start, goal)
    d = maze_env.distance(MazeState(layout, start), goal)
    if d == float("inf"):
        raise _Reject("maze goal unreachable")
    if d < cfg.maze_min_distance:
        raise _Reject("maze start too close to goal")
    return MazeState(layout, start), MazeState(layout, goal)


def _sample_blocks(cfg: ForgeConfig, rng: random.Random):
    n = rng.randint(*cfg.num_blocks)
    layout = BlocksLayout(n, rng.sample(BLOCK_COLORS, n))
    columns = [[] for _ in range(layout.num_columns)]
    ids = list(range(n))
    rng.shuffle(ids)
    for b in ids:
        columns[rng.randrange(layout.num_columns)].append(b)
    initial = BlocksState(layout, columns)
    # goal by a short random walk so plans stay short and cheap to solve
    state, last = initial, None
    for _ in range(rng.randint(*cfg.scramble_moves)):
        moves = [a for a in env.legal_actions(state) if last is None or a != env.inverse(last)]
        last = rng.choice(moves)
        state = env.apply(state, last).state
    if state.key == initial.key:
        raise _Reject("scramble returned to the start")
    return initial, BlocksState(layout, state.columns)


def _sample_shuffle(cfg: ForgeConfig, rng: random.Random):
    grid = tuple(rng.choice(cfg.shuffle_grids))
    n = grid[0] * grid[1]
    perm = list(range(n))
    rng.shuffle(perm)
    return ShuffleState(grid, tuple(perm)), ShuffleState(grid, tuple(range(n)))


_SAMPLERS = {MAZE: _sample_maze, BLOCKS: _sample_blocks, SHUFFLE: _sample_shuffle}


# -- error injection ---------------------------------------------------------------


def _maze_error(state: MazeState, goal: MazeState, kind: str, rng: random.Random) -> ActionRecord:
    lay = state.layout
    r, c = state.agent
    d = env.distance_to_goal(state, goal)
    if kind == "diagonal_move":
        cands = [(r + dr, c + dc) for dr in (-1, 1) for dc in (-1, 1)]
        cands = [x for x in cands if lay.in_bounds(x) and x not in lay.obstacles]
    elif kind == "into_obstacle":
        cands = []
        for dr, dc in maze_env.DIRECTIONS:
            x = (r + dr, c + dc)
            if x in lay.obstacles and env.distance_to_goal(MazeState(lay, x), goal) == d + 1:
                cands.append(x)
    elif kind == "detour":
        cands = [x for x in maze_env.free_neighbors(lay, state.agent)
                 if env.distance_to_goal(MazeState(lay, x), goal) == d + 1]
    elif kind == "out_of_grid":
        # a single step over the border, so the move still reads as plausible
        cands = [(r + dr, c + dc) for dr, dc in maze_env.DIRECTIONS if not lay.in_bounds((r + dr, c + dc))]
    else:
        raise KindUnavailable(f"{kind} is not a maze error kind")
    if not cands:
        raise KindUnavailable(f"no {kind} move from {state.agent}")
    return ActionRecord.maze(state.agent, rng.choice(cands))


def _blocks_error(state: BlocksState, goal: BlocksState, kind: str, rng: random.Random) -> ActionRecord:
    cols = state.columns
    ncols = state.layout.num_columns
    n = state.layout.num_blocks
    tops = [(s[-1], c) for c, s in enumerate(cols) if s]
    if kind == "nontop_block":
        cands = [(b, c) for c, s in enumerate(cols) for b in s[:-1]]
        if not cands:
            raise KindUnavailable("every block is already on top")
        b, c = rng.choice(cands)
        return ActionRecord.block(b, c, rng.choice([x for x in range(ncols) if x != c]))
    if kind == "midair_placement":
        b, c = rng.choice(tops)
        t = rng.choice([x for x in range(ncols) if x != c])
        return ActionRecord.block(b, c, t, len(cols[t]) + 2 + rng.randrange(2))
    if kind == "detour":
        d = env.distance_to_goal(state, goal)
        cands = [a for a in env.legal_actions(state)
                 if env.distance_to_goal(env.apply(state, a).state, goal) == d + 1]
        if not cands:
            raise KindUnavailable("no detour move")
        return rng.choice(cands)
    if kind == "unknown_object":
        b = rng.randrange(n, max(n + 2, 10))
        c = rng.randrange(ncols)
        return ActionRecord.block(b, c, rng.choice([x for x in range(ncols) if x != c]))
    if kind == "invalid_column":
        b, c = rng.choice(tops)
        return ActionRecord.block(b, c, rng.randrange(ncols, ncols + 5))
    raise KindUnavailable(f"{kind} is not a blocks error kind")


def inject_error(context_state, goal, spec: ErrorSpec, rng: random.Random) -> ActionRecord:
    """One erroneous action of ``spec.kind`` taken from ``context_state``.

    Raises :class:`KindUnavailable` when the state offers no such action.
    """
    if context_state.domain == MAZE:
        action = _maze_error(context_state, goal, spec.kind, rng)
    elif context_state.domain == BLOCKS:
        action = _blocks_error(context_state, goal, spec.kind, rng)
    else:
        raise KindUnavailable(f"{context_state.domain} takes no injected errors")
    out = env.apply(context_state, action)
    if spec.kind == "detour":
        assert out.ok
    else:
        assert out.fault is not None and out.fault.kind == spec.kind, (spec.kind, out.fault)
    return action


# -- step MCQ ------------------------------------------------------------------


def _nominal_state(pre, action: ActionRecord):
    """Where the agent would believe it is had a faulting action gone through,
    or None when that belief is not a representable state."""
    p = action.payload
    if pre.domain == MAZE:
        if pre.layout.in_bounds(p.dst) and p.dst not in pre.layout.obstacles and p.dst != pre.agent:
            return MazeState(pre.layout, p.dst)
        return None
    if pre.domain == BLOCKS:
        out = env.apply(pre, action)
        if out.fault is not None and out.fault.kind == "nontop_block":
            cols = [list(s) for s in pre.columns]
            cols[p.from_col].remove(p.block_id)
            cols[p.to_col].append(p.block_id)
            return BlocksState(pre.layout, cols)
    return None


def is_winning(true_state, goal, actions: Sequence[ActionRecord]) -> bool:
    """True when ``actions`` runs clean from ``true_state`` and either reaches the
    goal or is an optimal prefix (each step shortens the distance by one)."""
    traj = env.simulate(true_state, actions)
    if not traj.clean:
        return False
    if env.is_goal(traj.final, goal):
        return True
    return env.distance_to_goal(true_state, goal) - env.distance_to_goal(traj.final, goal) == len(actions)


def _truncate(actions, k):
    return list(actions) if k is None else list(actions[:k])


def _illegal_action(state, rng: random.Random) -> Optional[ActionRecord]:
    if state.domain == MAZE:
        kinds = ["diagonal_move", "out_of_grid", "into_obstacle"]
        rng.shuffle(kinds)
        for kind in kinds:
            try:
                return _maze_error(state, state, kind, rng) if kind != "into_obstacle" else _obstacle_step(state, rng)
            except KindUnavailable:
                continue
        return None
    if state.domain == BLOCKS:
        kinds = ["nontop_block", "midair_placement", "unknown_object"]
        rng.shuffle(kinds)
        for kind in kinds:
            try:
                return _blocks_error(state, state, kind, rng)
            except KindUnavailable:
                continue
    return None


def _obstacle_step(state: MazeState, rng: random.Random) -> ActionRecord:
    r, c = state.agent
    cands = [(r + dr, c + dc) for dr, dc in maze_env.DIRECTIONS if (r + dr, c + dc) in state.layout.obstacles]
    if not cands:
        raise KindUnavailable("no adjacent obstacle")
    return ActionRecord.maze(state.agent, rng.choice(cands))


def _wrong_goal(true_state, goal, correct, rng: random.Random, k):
    """Clean plan towards a nearby but different terminal state."""
    j = rng.randrange(len(correct)) if k is None else rng.randrange(min(len(correct), k))
    traj = env.simulate(true_state, correct[:j])
    here = env.clear_violations(traj.final)
    if true_state.domain == MAZE:
        lay = here.layout
        field_ = maze_env.distance_field(lay, here.agent)
        cells = [x for x in field_ if x != goal.agent and x != here.agent]
        if not cells:
            return None
        target = MazeState(lay, rng.choice(cells))
    elif true_state.domain == BLOCKS:
        alt = rng.choice(env.legal_actions(goal))
        target = env.apply(goal, alt).state
    else:
        return None
    tail = env.solve(here, target)
    if not tail:
        return None
    return list(correct[:j]) + tail[: len(correct) - j + 1]


def _perturbed(true_state, correct, rng: random.Random, k):
    acts = list(correct)
    span = len(acts) if k is None else min(len(acts), k)
    if true_state.domain == SHUFFLE:
        choice = rng.choice(["index", "drop", "reorder"])
        i = rng.randrange(span)
        if choice == "index":
            p = acts[i].payload
            cells = [true_state.cell(x) for x in range(true_state.size)]
            others = [x for x in cells if x not in (p.pos_a, p.pos_b)]
            if not others:
                return None
            if rng.random() < 0.5:
                acts[i] = ActionRecord.swap(rng.choice(others), p.pos_b)
            else:
                acts[i] = ActionRecord.swap(p.pos_a, rng.choice(others))
            return acts
        if choice == "drop":
            if len(acts) < 2:
                return None
            del acts[i]
            return acts
        # reorder two neighbouring swaps that share a cell (they do not commute)
        if i + 1 >= len(acts):
            return None
        a, b = acts[i].payload, acts[i + 1].payload
        if not ({a.pos_a, a.pos_b} & {b.pos_a, b.pos_b}):
            return None
        acts[i], acts[i + 1] = acts[i + 1], acts[i]
        return acts
    choice = rng.choice(["swap", "drop"])
    if choice == "swap":
        if len(acts) < 2:
            return None
        i = rng.randrange(min(span, len(acts) - 1))
        if acts[i] == acts[i + 1]:
            return None
        acts[i], acts[i + 1] = acts[i + 1], acts[i]
        return acts
    if len(acts) < 2:
        return None
    del acts[rng.randrange(span)]
    return acts


def _distractor(kind, true_state, goal, correct, rng, k):
    if kind == "illegal_distractor":
        limit = len(correct) if k is None else min(len(correct), k - 1)
        i = rng.randint(0, max(limit, 0))
        here = env.clear_violations(env.simulate(true_state, correct[:i]).final)
        bad = _illegal_action(here, rng)
        return None if bad is None else list(correct[:i]) + [bad] + list(correct[i:])
    if kind == "wrong_goal_distractor":
        return _wrong_goal(true_state, goal, correct, rng, k)
    if kind == "perturbed_distractor":
        return _perturbed(true_state, correct, rng, k)
    raise ValueError(kind)


def _no_correction(initial, goal, context, error_index, true_state):
    """Continuation that ignores the error: optimal from the state the context
    would have produced without it. Returns (actions, counterfactual state);
    the state is None when the belief behind the option is not representable."""
    traj = env.simulate(initial, context)
    pre = env.clear_violations(traj.states[error_index])
    err = context[error_index]
    after = env.clear_violations(traj.states[error_index + 1])
    tail = context[error_index + 1:]
    if tail:
        cf = env.simulate(pre, tail)
        if not cf.clean or cf.final.key == true_state.key:
            return None, None
        cf_state = env.clear_violations(cf.final)
        cand = env.solve(cf_state, goal)
        return (cand, cf_state) if cand else (None, None)
    if after.key != pre.key:
        return env.solve(pre, goal) or None, pre
    nominal = _nominal_state(pre, err)
    if nominal is not None and not env.is_goal(nominal, goal):
        cand = env.solve(nominal, goal)
        if cand and not is_winning(true_state, goal, cand):
            return cand, nominal
    # otherwise "undo" the phantom action before carrying on as planned
    return [env.inverse(err)] + env.solve(pre, goal), None


def counterfactual_state(instance: TaskInstance):
    """State against which the no-correction option reaches the goal, or None
    when that belief is not a representable state."""
    if instance.error_index is None or instance.domain not in (MAZE, BLOCKS):
        return None
    true_state = instance.post_context_state()
    return _no_correction(instance.initial, instance.goal, instance.context, instance.error_index, true_state)[1]


def build_step_mcq(draft: TaskInstance, n_options: int, k_reveal: Optional[int], rng: random.Random) -> MCQ:
    """Correct continuation, the no-correction cheat (for erroneous contexts) and
    sampled distractors, shuffled and labelled."""
    if not 2 <= n_options <= len(LABELS):
        raise ValueError("n_options must be between 2 and 10")
    initial, goal, context = draft.initial, draft.goal, draft.context
    traj = env.simulate(initial, context)
    true_state = env.clear_violations(traj.final)
    no_corr = None
    if draft.error_index is None:
        correct = env.solve(true_state, goal)
    else:
        i = draft.error_index
        pre = env.clear_violations(traj.states[i])
        changed = pre.key != traj.states[i + 1].key
        if i == len(context) - 1 and changed:
            correct = [env.inverse(context[i])] + env.solve(pre, goal)
        else:
            correct = env.solve(true_state, goal)
        no_corr, _ = _no_correction(initial, goal, context, i, true_state)
        if no_corr is None and i == len(context) - 1:
            raise _Reject("no no-correction distractor")
    if not correct:
        raise _Reject("nothing left to do after the context")
    shown_correct = _truncate(correct, k_reveal)
    if not is_winning(true_state, goal, shown_correct):
        raise _Reject("correct option is not clean and optimal")
    entries = [(shown_correct, "correct")]
    seen = {tuple(a.text for a in shown_correct)}
    if no_corr is not None:
        shown = _truncate(no_corr, k_reveal)
        key = tuple(a.text for a in shown)
        if key in seen or is_winning(true_state, goal, shown):
            raise _Reject("no-correction option indistinguishable from the correct one")
        entries.append((shown, "no_correction_distractor"))
        seen.add(key)
    kinds = ["perturbed_distractor"] if draft.domain == SHUFFLE else \
        ["illegal_distractor", "wrong_goal_distractor", "perturbed_distractor"]
    attempts = 0
    while len(entries) < n_options:
        attempts += 1
        if attempts > 60 * n_options:
            raise _Reject("not enough distinct distractors")
        kind = rng.choice(kinds)
        cand = _distractor(kind, true_state, goal, correct, rng, k_reveal)
        if not cand:
            continue
        cand = _truncate(cand, k_reveal)
        key = tuple(a.text for a in cand)
        if not cand or key in seen or is_winning(true_state, goal, cand):
            continue
        seen.add(key)
        entries.append((cand, kind))
    rng.shuffle(entries)
    options, tags, correct_label = {}, {}, None
    for label, (acts, tag) in zip(LABELS, entries):
        options[label] = acts
        tags[label] = tag
        if tag == "correct":
            correct_label = label
    return MCQ(options, correct_label, tags)


def build_error_mcq(instance: TaskInstance) -> MCQ:
    if instance.domain == SHUFFLE:
        raise ValueError("shuffle instances carry no error-detection question")
    options, tags = {}, {}
    for i, action in enumerate(instance.context):
        label = LABELS[i]
        options[label] = [action]
        tags[label] = "correct" if i == instance.error_index else "context_action"
    none_label = LABELS[len(instance.context)]
    options[none_label] = NONE_OF_THE_ABOVE
    tags[none_label] = "correct" if instance.error_index is None else "none_of_above"
    correct = none_label if instance.error_index is None else LABELS[instance.error_index]
    return MCQ(options, correct, tags)


# -- instance generation -------------------------------------------------------------


def instance_seed(master_seed: int, index: int) -> int:
    digest = hashlib.blake2b(f"{master_seed}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _context_len(domain: str, cfg: ForgeConfig, rng: random.Random) -> int:
    if cfg.context_len is not None:
        return cfg.context_len
    if domain == SHUFFLE:
        lengths, weights = zip(*SHUFFLE_CONTEXT_CHOICES)
        return rng.choices(lengths, weights)[0]
    return DEFAULT_CONTEXT_LEN[domain]


def _attempt(domain, cfg, rng, seed, instance_id, locality) -> TaskInstance:
    initial, goal = _SAMPLERS[domain](cfg, rng)
    ctx_len = _context_len(domain, cfg, rng)
    if ctx_len < 1:
        raise GenerationError("context length must be at least 1")
    plan = env.solve(initial, goal)
    error_free = cfg.error_free or domain == SHUFFLE
    error_index, spec = None, None
    if error_free:
        if len(plan) <= ctx_len:
            raise _Reject("plan shorter than the context")
        context = plan[:ctx_len]
    else:
        pos = ctx_len - 1 if cfg.error_position is None else cfg.error_position
        if not 0 <= pos < ctx_len:
            raise GenerationError(f"error position {pos} outside context of length {ctx_len}")
        if len(plan) <= pos:
            raise _Reject("plan shorter than the error position")
        pre = env.simulate(initial, plan[:pos]).final
        kinds = list(ERROR_KINDS[domain][locality])
        rng.shuffle(kinds)
        err = None
        for kind in kinds:
            try:
                err = inject_error(pre, goal, ErrorSpec.for_kind(kind, pos), rng)
                spec = ErrorSpec.for_kind(kind, pos)
                break
            except KindUnavailable:
                continue
        if err is None:
            raise _Reject(f"no {locality} error available")
        after = env.clear_violations(env.apply(pre, err).state)
        tail = []
        n_tail = ctx_len - pos - 1
        if n_tail:
            cont = env.solve(after, goal)
            if len(cont) <= n_tail:
                raise _Reject("continuation reaches the goal inside the context")
            tail = cont[:n_tail]
        context = plan[:pos] + [err] + tail
        error_index = pos
    true_state = env.clear_violations(env.simulate(initial, context).final)
    if env.is_goal(true_state, goal):
        raise _Reject("context already reaches the goal")
    draft = TaskInstance(
        id=instance_id,
        domain=domain,
        seed=seed,
        initial=initial,
        goal=goal,
        context=context,
        error_index=error_index,
        error_spec=spec,
        render_refs=[f"{instance_id}_pair.png"],
        flags={"error_free": bool(error_free), "text_only": bool(cfg.text_only),
               "k_reveal": cfg.k_reveal, "n_options": cfg.n_options},
    )
    draft.step_mcq = build_step_mcq(draft, cfg.n_options, cfg.k_reveal, rng)
    if domain != SHUFFLE:
        draft.error_mcq = build_error_mcq(draft)
    return draft


def generate_instance(domain: str, config: Optional[ForgeConfig] = None, seed: int = 0,
                      instance_id: Optional[str] = None) -> TaskInstance:
    """Deterministic in (domain, config, seed); rejection-samples up to
    ``config.max_attempts`` problems."""
    cfg = config or ForgeConfig()
    if domain not in _SAMPLERS:
        raise GenerationError(f"cannot generate {domain!r} instances")
    if cfg.num_errors != 1:
        raise NotImplementedError("only single-error contexts are supported")
    if cfg.text_only and domain == SHUFFLE:
        raise GenerationError("shuffle instances have no text-only form")
    instance_id = instance_id or f"{domain}-{seed:016x}"
    rng = random.Random(seed)
    # locality is drawn once so rejected attempts cannot skew the in/out mix
    locality = "in_context" if rng.random() < cfg.in_context_ratio else "out_context"
    reasons: Counter = Counter()
    for _ in range(cfg.max_attempts):
        try:
            return _attempt(domain, cfg, rng, seed, instance_id, locality)
        except _Reject as r:
            reasons[r.reason] += 1
    raise GenerationError(f"{domain} seed {seed}: gave up after {cfg.max_attempts} attempts {dict(reasons)}")


def generate_dataset(domain: str, count: int, master_seed: int, config: Optional[ForgeConfig] = None,
                     workers: int = 1) -> List[TaskInstance]:
    cfg = config or ForgeConfig()
    jobs = [(domain, cfg, instance_seed(master_seed, i), f"{domain}-{master_seed}-{i:05d}") for i in range(count)]
    if workers <= 1:
        return [generate_instance(*j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(workers) as pool:
        # map preserves index order no matter which worker finishes first
        return list(pool.map(_generate_job, jobs, chunksize=16))


def _generate_job(job):
    return generate_instance(*job)


# -- validation ---------------------------------------------------------------------


@dataclass
class ValidationReport:
    instance_id: str
    failures: List[Tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def fail(self, check: str, detail: str):
        self.failures.append((check, detail))

    def __str__(self):
        if self.ok:
            return f"{self.instance_id}: ok"
        return f"{self.instance_id}: " + "; ".join(f"{c}: {d}" for c, d in self.failures)


def validate_instance(instance: TaskInstance, threshold: float = 0.75) -> ValidationReport:
    from .backends import OracleBackend  # deferred: backends pulls in the engine

    report = ValidationReport(instance.id)
    domain = instance.domain
    try:
        again = TaskInstance.from_dict(json.loads(json.dumps(instance.to_dict())))
        if again.to_dict() != instance.to_dict():
            report.fail("round_trip", "instance changes through serialization")
    except Exception as exc:  # noqa: BLE001 - any failure is a report line
        report.fail("round_trip", repr(exc))
    texts = [a.text for a in instance.context]
    for mcq in (instance.step_mcq, instance.error_mcq):
        if mcq:
            for v in mcq.options.values():
                if not isinstance(v, str):
                    texts.extend(a.text for a in v)
    for t in texts:
        try:
            if env.parse_action(t, domain).text != t and domain != FREETEXT:
                report.fail("parse", t)
        except env.ActionParseError:
            report.fail("parse", t)
    if domain not in env.SYNTHETIC_DOMAINS or instance.initial is None:
        return report

    mcq = instance.step_mcq
    true_state = instance.post_context_state()
    winners = [k for k, v in mcq.options.items() if is_winning(true_state, instance.goal, v)]
    if winners != [mcq.correct_label]:
        report.fail("unique_goal_option", f"winning options {winners}, correct {mcq.correct_label}")
    if list(mcq.option_tags.values()).count("correct") != 1:
        report.fail("unique_goal_option", "correct tag count != 1")

    default = instance.error_index is not None and instance.error_index == len(instance.context) - 1
    no_corr = mcq.label_for_tag("no_correction_distractor")
    if default and len(no_corr) != 1:
        report.fail("no_correction", f"{len(no_corr)} no-correction options")
    if instance.error_index is None and no_corr:
        report.fail("no_correction", "error-free instance carries a no-correction option")
    if default and len(no_corr) == 1 and instance.flags.get("k_reveal") is None:
        cf = counterfactual_state(instance)
        if cf is not None:
            traj = env.simulate(cf, mcq.options[no_corr[0]])
            if not (traj.clean and env.is_goal(traj.final, instance.goal)):
                report.fail("no_correction", "does not reach the goal from the counterfactual state")

    oracle = OracleBackend()
    for i, score in enumerate(step_scores(instance, oracle)):
        is_err = i == instance.error_index
        if is_err and score / 100.0 > threshold:
            report.fail("error_step_score", f"step {i} scores {score}")
        if not is_err and score / 100.0 <= threshold:
            report.fail("clean_step_score", f"step {i} scores {score}")
    return report


def step_scores(instance: TaskInstance, oracle) -> List[float]:
    """Oracle similarity of each context action taken on its own from its true
    pre-state."""
    from .scene_graph import from_state

    goal_sg = from_state(instance.goal)
    traj = env.simulate(instance.initial, instance.context)
    scores = []
    for i, action in enumerate(instance.context):
        base = from_state(env.clear_violations(traj.states[i]))
        after = oracle.simulate(base, action)
        scores.append(oracle.similarity(after, goal_sg, baseline=base))
    return scores


# -- dataset I/O ----------------------------------------------------------------------


def dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


@dataclass
class DatasetManifest:
    domain: str
    count: int
    master_seed: int
    config: Dict[str, Any]
    avg_context_length: float
    avg_remaining_length: float
    instance_ids: List[str]
    schema_version: int = SCHEMA_VERSION

    def to_dict(self):
        return asdict(self)


def _averages(instances: Sequence[TaskInstance]) -> Tuple[float, float]:
    if not instances:
        return 0.0, 0.0
    ctx = sum(len(i.context) for i in instances) / len(instances)
    rem = sum(i.remaining_length for i in instances) / len(instances)
    return round(ctx, 6), round(rem, 6)


def write_dataset(instances: Sequence[TaskInstance], out_dir, master_seed: int = 0,
                  config: Optional[ForgeConfig] = None, render: bool = True) -> DatasetManifest:
    out = Path(out_dir)
    (out / "instances").mkdir(parents=True, exist_ok=True)
    domains = sorted({i.domain for i in instances}) or ["none"]
    ctx, rem = _averages(instances)
    manifest = DatasetManifest(
        domain=domains[0] if len(domains) == 1 else "mixed",
        count=len(instances),
        master_seed=master_seed,
        config=(config or ForgeConfig()).to_dict(),
        avg_context_length=ctx,
        avg_remaining_length=rem,
        instance_ids=[i.id for i in instances],
    )
    for inst in instances:
        (out / "instances" / f"{inst.id}.json").write_text(dumps(inst.to_dict()), encoding="utf-8")
    if render:
        from .renderer import write_pair

        (out / "images").mkdir(exist_ok=True)
        for inst in instances:
            if inst.domain in env.SYNTHETIC_DOMAINS:
                write_pair(inst, out / "images")
    (out / "manifest.json").write_text(dumps(manifest.to_dict()), encoding="utf-8")
    return manifest


def read_dataset(in_dir) -> Tuple[DatasetManifest, List[TaskInstance]]:
    root = Path(in_dir)
    raw = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DatasetError(f"schema_version {version!r} does not match supported {SCHEMA_VERSION}")
    try:
        manifest = DatasetManifest(**raw)
    except TypeError as exc:
        raise DatasetError(f"malformed manifest: {exc}") from None
    instances = []
    for iid in manifest.instance_ids:
        doc = json.loads((root / "instances" / f"{iid}.json").read_text(encoding="utf-8"))
        instances.append(TaskInstance.from_dict(doc))
    ctx, rem = _averages(instances)
    if (ctx, rem) != (manifest.avg_context_length, manifest.avg_remaining_length):
        raise DatasetError("manifest averages do not match the stored instances")
    return manifest, instances
