"""Scene graphs: structured state documents built from environment states,
updated action by action, scored against a goal graph and validated when
they come from a model.

Document layout (keys in this order)::

    {"objects": [{"name", "type", "state", "position", "properties"}, ...],
     "relationships": [{"relationship", "subject", "object"}, ...],
     "environment": {"global_constraints", "valid_actions", "boundary_conditions"},
     "action_history": [{"step", "action", "affected_entities",
                         "state_changes": [{"entity", "property", "old_value", "new_value"}],
                         "validity"}, ...]}

Block positions use the "column_X, level_Y" strings with both indices
starting at 1, while action text numbers columns from 0.
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import jsonschema

from .environments import (
    BLOCKS,
    FREETEXT,
    MAZE,
    SHUFFLE,
    ActionParseError,
    ActionRecord,
    BlockMove,
    BlocksLayout,
    BlocksState,
    DomainMismatchError,
    EnvState,
    MazeLayout,
    MazeMove,
    MazeState,
    ShuffleState,
    TileSwap,
    parse_action,
)


class SchemaError(ValueError):
    """Raised by :func:`validate_document`; ``errors`` lists path-addressed problems."""

    def __init__(self, errors: List[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass
class SceneGraph:
    domain: str
    objects: List[Dict[str, Any]]
    relationships: List[Dict[str, Any]] = field(default_factory=list)
    environment: Dict[str, Any] = field(default_factory=dict)
    action_history: List[Dict[str, Any]] = field(default_factory=list)

    def to_document(self) -> Dict[str, Any]:
        doc = {"objects": self.objects, "relationships": self.relationships}
        if self.environment:
            doc["environment"] = self.environment
        doc["action_history"] = self.action_history
        return copy.deepcopy(doc)

    def to_json(self, indent: Optional[int] = None) -> str:
        return json.dumps(self.to_document(), indent=indent)

    def digest(self) -> str:
        blob = json.dumps(self.to_document(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def copy(self) -> "SceneGraph":
        return copy.deepcopy(self)

    def without_history(self) -> "SceneGraph":
        g = self.copy()
        g.action_history = []
        return g

    def object(self, name: str) -> Optional[Dict[str, Any]]:
        for o in self.objects:
            if o["name"] == name:
                return o
        return None

    @property
    def violation_count(self) -> int:
        return sum(1 for h in self.action_history if not h["validity"])


# -- construction -------------------------------------------------------------

MAZE_ENVIRONMENT_ACTIONS = ["move_up", "move_down", "move_left", "move_right"]


def block_position(col: int, level: int) -> str:
    return f"column_{col + 1}, level_{level + 1}"


_BLOCK_POS = re.compile(r"^\s*column_(\d+)\s*,\s*level_(\d+)\s*$")


def parse_block_position(pos: str):
    m = _BLOCK_POS.match(pos)
    if not m:
        raise ValueError(f"bad block position {pos!r}")
    return int(m.group(1)) - 1, int(m.group(2)) - 1


def _maze_objects(agent, layout) -> List[Dict[str, Any]]:
    objs = [
        {"name": "agent", "type": "green_circle", "state": "active", "position": list(agent), "properties": {}},
        {"name": "goal", "type": "blue_circle", "state": "target", "position": list(layout.goal), "properties": {}},
    ]
    for i, cell in enumerate(layout.obstacles, 1):
        objs.append(
            {"name": f"obstacle_{i}", "type": "red_rectangle", "state": "blocking",
             "position": list(cell), "properties": {}}
        )
    return objs


def _blocks_parts(columns, colors: Dict[int, str]):
    objects, rels = [], []
    for c, stack in enumerate(columns):
        for lvl, b in enumerate(stack):
            objects.append(
                {"name": f"block_{b}", "type": "block", "state": "resting" if lvl == 0 else "stacked",
                 "position": block_position(c, lvl), "properties": {"color": colors[b]}}
            )
        for lower, upper in zip(stack, stack[1:]):
            rels.append({"relationship": "on_top", "subject": f"block_{upper}", "object": f"block_{lower}"})
    for c in range(len(columns) - 1):
        for lvl in range(min(len(columns[c]), len(columns[c + 1]))):
            rels.append(
                {"relationship": "beside", "subject": f"block_{columns[c][lvl]}",
                 "object": f"block_{columns[c + 1][lvl]}"}
            )
    return objects, rels


def _shuffle_objects(grid, perm) -> List[Dict[str, Any]]:
    rows, cols = grid
    objs = []
    for tile in range(len(perm)):
        pos = perm.index(tile)
        objs.append(
            {"name": f"tile_{tile}", "type": "tile",
             "state": "in_place" if pos == tile else "displaced",
             "position": list(divmod(pos, cols)), "properties": {"home": list(divmod(tile, cols))}}
        )
    return objs


def from_state(state: EnvState) -> SceneGraph:
    """Deterministic graph for a synthetic-domain state (history empty)."""
    if isinstance(state, MazeState):
        lay = state.layout
        return SceneGraph(
            MAZE,
            _maze_objects(state.agent, lay),
            [],
            {"global_constraints": {"dimensions": [lay.rows, lay.cols]},
             "valid_actions": list(MAZE_ENVIRONMENT_ACTIONS),
             "boundary_conditions": ["(0,0) is top-left", "only horizontal and vertical moves",
                                     "obstacles may not be entered"]},
        )
    if isinstance(state, BlocksState):
        colors = dict(enumerate(state.layout.colors))
        objects, rels = _blocks_parts(state.columns, colors)
        return SceneGraph(
            BLOCKS,
            objects,
            rels,
            {"global_constraints": {"columns": state.layout.num_columns},
             "valid_actions": ["move"],
             "boundary_conditions": [f"blocks must remain within {state.layout.num_columns} columns",
                                     "only one block can be moved at a time",
                                     "only the top block of a column can be moved"]},
        )
    if isinstance(state, ShuffleState):
        return SceneGraph(
            SHUFFLE,
            _shuffle_objects(state.grid, state.perm),
            [],
            {"global_constraints": {"grid": list(state.grid)},
             "valid_actions": ["swap"],
             "boundary_conditions": ["(0,0) is the top-left patch", "swaps exchange two distinct patches"]},
        )
    raise DomainMismatchError(f"cannot build a scene graph from {state!r}")


# -- incremental update ----------------------------------------------------------


def _grid_dims(sg: SceneGraph, key: str):
    return tuple(sg.environment.get("global_constraints", {})[key])


def _maze_update(sg: SceneGraph, move: MazeMove):
    rows, cols = _grid_dims(sg, "dimensions")
    agent = sg.object("agent")
    here = tuple(agent["position"])
    blocked = {tuple(o["position"]) for o in sg.objects if o["type"] == "red_rectangle"}

    def inside(cell):
        return 0 <= cell[0] < rows and 0 <= cell[1] < cols

    if not (inside(move.src) and inside(move.dst)) or move.src != here:
        return False, []
    if abs(move.src[0] - move.dst[0]) + abs(move.src[1] - move.dst[1]) != 1:
        return False, []
    valid = move.dst not in blocked
    # entering an obstacle cell still relocates the agent
    agent["position"] = list(move.dst)
    return valid, [{"entity": "agent", "property": "position", "old_value": list(here), "new_value": list(move.dst)}]


def _blocks_columns(sg: SceneGraph):
    ncols = sg.environment.get("global_constraints", {}).get("columns", 5)
    cells = {}
    for o in sg.objects:
        if o["type"] == "block":
            c, lvl = parse_block_position(o["position"])
            cells[(c, lvl)] = int(o["name"].split("_", 1)[1])
    columns = []
    for c in range(ncols):
        stack = []
        while (c, len(stack)) in cells:
            stack.append(cells[(c, len(stack))])
        columns.append(tuple(stack))
    return columns


def _blocks_update(sg: SceneGraph, move: BlockMove):
    columns = _blocks_columns(sg)
    ncols = len(columns)
    if sg.object(f"block_{move.block_id}") is None:
        return False, []
    if not (0 <= move.from_col < ncols and 0 <= move.to_col < ncols) or move.from_col == move.to_col:
        return False, []
    src = columns[move.from_col]
    if not src or src[-1] != move.block_id:
        return False, []
    if move.level is not None and move.level != len(columns[move.to_col]) + 1:
        return False, []
    columns[move.from_col] = src[:-1]
    columns[move.to_col] = columns[move.to_col] + (move.block_id,)
    before = {o["name"]: (o["position"], o["state"]) for o in sg.objects}
    colors = {int(o["name"].split("_", 1)[1]): o["properties"].get("color") for o in sg.objects}
    objects, rels = _blocks_parts(columns, colors)
    changes = []
    # the moved block first, then anything that shifted
    order = sorted(objects, key=lambda o: o["name"] != f"block_{move.block_id}")
    for o in order:
        old_pos, old_state = before[o["name"]]
        if old_pos != o["position"]:
            changes.append({"entity": o["name"], "property": "position", "old_value": old_pos, "new_value": o["position"]})
        if old_state != o["state"]:
            changes.append({"entity": o["name"], "property": "state", "old_value": old_state, "new_value": o["state"]})
    sg.objects, sg.relationships = objects, rels
    return True, changes


def _shuffle_update(sg: SceneGraph, swap: TileSwap):
    rows, cols = _grid_dims(sg, "grid")
    a, b = tuple(swap.pos_a), tuple(swap.pos_b)
    if a == b or not all(0 <= p[0] < rows and 0 <= p[1] < cols for p in (a, b)):
        return False, []
    ta = next(o for o in sg.objects if tuple(o["position"]) == a)
    tb = next(o for o in sg.objects if tuple(o["position"]) == b)
    changes = []
    for tile, new in ((ta, b), (tb, a)):
        old = tile["position"]
        tile["position"] = list(new)
        changes.append({"entity": tile["name"], "property": "position", "old_value": old, "new_value": list(new)})
        new_state = "in_place" if list(new) == tile["properties"]["home"] else "displaced"
        if new_state != tile["state"]:
            changes.append({"entity": tile["name"], "property": "state", "old_value": tile["state"], "new_value": new_state})
            tile["state"] = new_state
    return True, changes


def update(sg: SceneGraph, action) -> SceneGraph:
    """Return a new graph with ``action`` applied and one history entry appended.

    Illegal actions are recorded with ``validity`` false rather than raised.
    The rules are evaluated on the graph itself, independently of the
    environment module.
    """
    if isinstance(action, str):
        action = parse_action(action, sg.domain if sg.domain != FREETEXT else FREETEXT)
    out = sg.copy()
    p = action.payload
    if sg.domain == MAZE and isinstance(p, MazeMove):
        valid, changes = _maze_update(out, p)
    elif sg.domain == BLOCKS and isinstance(p, BlockMove):
        valid, changes = _blocks_update(out, p)
    elif sg.domain == SHUFFLE and isinstance(p, TileSwap):
        valid, changes = _shuffle_update(out, p)
    elif sg.domain == FREETEXT:
        valid, changes = True, []
    else:
        raise DomainMismatchError(f"{action.domain} action on a {sg.domain} scene graph")
    step = out.action_history[-1]["step"] + 1 if out.action_history else 0
    out.action_history.append(
        {"step": step, "action": action.text, "affected_entities": sorted({c["entity"] for c in changes}),
         "state_changes": changes, "validity": bool(valid)}
    )
    return out


def rewind(sg: SceneGraph) -> SceneGraph:
    """Undo every recorded state change, recovering the graph the history started from."""
    out = sg.copy()
    for entry in reversed(out.action_history):
        for ch in reversed(entry["state_changes"]):
            obj = out.object(ch["entity"])
            if obj is not None:
                obj[ch["property"]] = copy.deepcopy(ch["old_value"])
    out.action_history = []
    if out.domain == BLOCKS:
        colors = {int(o["name"].split("_", 1)[1]): o["properties"].get("color") for o in out.objects}
        out.objects, out.relationships = _blocks_parts(_blocks_columns(out), colors)
    return out


def to_state(sg: SceneGraph, like: EnvState) -> EnvState:
    """Read the configuration back out of a graph, borrowing the static layout from ``like``."""
    if isinstance(like, MazeState):
        return MazeState(like.layout, tuple(sg.object("agent")["position"]))
    if isinstance(like, BlocksState):
        return BlocksState(like.layout, tuple(_blocks_columns(sg))[: like.layout.num_columns])
    if isinstance(like, ShuffleState):
        cols = like.grid[1]
        perm = [0] * like.size
        for o in sg.objects:
            r, c = o["position"]
            perm[r * cols + c] = int(o["name"].split("_", 1)[1])
        return ShuffleState(like.grid, tuple(perm))
    raise DomainMismatchError("no synthetic state to read into")


def graph_state(sg: SceneGraph) -> EnvState:
    """Rebuild a synthetic-domain state, layout included, from the graph alone."""
    if sg.domain == MAZE:
        rows, cols = _grid_dims(sg, "dimensions")
        agent = tuple(sg.object("agent")["position"])
        goal = tuple(sg.object("goal")["position"])
        obstacles = [tuple(o["position"]) for o in sg.objects if o["type"] == "red_rectangle"]
        return MazeState(MazeLayout(rows, cols, obstacles, agent, goal), agent)
    if sg.domain == BLOCKS:
        blocks = sorted((int(o["name"].split("_", 1)[1]), o["properties"].get("color", "")) for o in sg.objects
                        if o["type"] == "block")
        columns = _blocks_columns(sg)
        layout = BlocksLayout(len(blocks), [c for _, c in blocks], len(columns))
        return BlocksState(layout, columns)
    if sg.domain == SHUFFLE:
        rows, cols = _grid_dims(sg, "grid")
        return to_state(sg, ShuffleState((rows, cols), tuple(range(rows * cols))))
    raise DomainMismatchError(f"no synthetic state behind a {sg.domain} graph")


# -- similarity ----------------------------------------------------------------


@dataclass(frozen=True)
class SimilarityWeights:
    violation_penalty: float = 30.0
    regression_penalty: float = 30.0


@dataclass(frozen=True)
class SimilarityScore:
    value: float
    goal_match_percent: float
    violation_count: int
    distance_regressed: bool

    @property
    def breakdown(self) -> Dict[str, Any]:
        return {"goal_match_percent": self.goal_match_percent, "violation_count": self.violation_count,
                "distance_regressed": self.distance_regressed}


def similarity(
    sg: SceneGraph,
    goal_sg: SceneGraph,
    distance_regressed: Optional[bool] = None,
    weights: SimilarityWeights = SimilarityWeights(),
) -> SimilarityScore:
    """Oracle score in [0, 100]: positional goal match minus fixed penalties
    for invalid history entries and for a distance regression."""
    if sg.domain != goal_sg.domain:
        raise DomainMismatchError(f"cannot compare {sg.domain} graph with {goal_sg.domain} goal")
    positions = {o["name"]: o["position"] for o in sg.objects}
    goal_objects = goal_sg.objects
    matched = sum(1 for o in goal_objects if positions.get(o["name"]) == o["position"])
    match = matched / len(goal_objects) if goal_objects else 1.0
    violations = sg.violation_count
    regressed = bool(distance_regressed)
    value = 100.0 * match - weights.violation_penalty * violations - weights.regression_penalty * regressed
    return SimilarityScore(min(100.0, max(0.0, value)), 100.0 * match, violations, regressed)


# -- validation of external documents -----------------------------------------------

_POSITION = {"anyOf": [{"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                       {"type": "string"}]}

_GRAPH_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["objects"],
    "properties": {
        "objects": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "type", "state", "position", "properties"],
                "properties": {
                    "name": {"type": "string"},
                    "type": {"type": "string"},
                    "state": {"type": "string"},
                    "position": _POSITION,
                    "properties": {"type": "object"},
                },
            },
        },
        "relationships": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["relationship", "subject", "object"],
                "properties": {"relationship": {"type": "string"}, "subject": {"type": "string"},
                               "object": {"type": "string"}},
            },
        },
        "environment": {
            "type": "object",
            "additionalProperties": False,
            "required": ["global_constraints", "valid_actions", "boundary_conditions"],
            "properties": {
                "global_constraints": {"type": "object"},
                "valid_actions": {"type": "array", "items": {"type": "string"}},
                "boundary_conditions": {"type": "array", "items": {"type": "string"}},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dimensions"],
            "properties": {
                "dimensions": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                "coordinates": {"type": "string"},
            },
        },
        "action_history": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["step", "action", "affected_entities", "state_changes", "validity"],
                "properties": {
                    "step": {"type": "integer"},
                    "action": {"type": "string"},
                    "affected_entities": {"type": "array", "items": {"type": "string"}},
                    "state_changes": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["entity", "property", "old_value", "new_value"],
                            "properties": {"entity": {"type": "string"}, "property": {"type": "string"},
                                           "old_value": {}, "new_value": {}},
                        },
                    },
                    "validity": {"type": "boolean"},
                },
            },
        },
    },
}

_WRAPPERS = ("scene_graph", "initial_scene_graph", "target_scene_graph", "goal_scene_graph",
             "intermediate_scene_graph")

_VALIDATOR = jsonschema.Draft7Validator(_GRAPH_SCHEMA)


def unwrap_document(doc: Any) -> Any:
    """Strip a single ``{"<role>_scene_graph": {...}}`` wrapper (a sibling
    ``metrics`` block is tolerated)."""
    if isinstance(doc, dict):
        keys = set(doc) - {"metrics"}
        if len(keys) == 1:
            (k,) = keys
            if k in _WRAPPERS and isinstance(doc[k], dict):
                return doc[k]
    return doc


def _path(parts) -> str:
    return "/" + "/".join(str(p) for p in parts)


def schema_errors(doc: Any) -> List[str]:
    scored_reply = isinstance(doc, dict) and "metrics" in doc
    doc = unwrap_document(doc)
    if not isinstance(doc, dict):
        return ["/: document must be an object"]
    errors = []
    for err in sorted(_VALIDATOR.iter_errors(doc), key=lambda e: list(e.absolute_path)):
        if err.validator == "required":
            missing = re.findall(r"'([^']+)' is a required property", err.message)
            for key in missing:
                errors.append(f"{_path(list(err.absolute_path) + [key])}: missing required key")
        elif err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            for key in extra:
                errors.append(f"{_path(list(err.absolute_path) + [key])}: unexpected key")
        else:
            errors.append(f"{_path(err.absolute_path)}: {err.message}")
    # grid-world documents and scored evaluation replies may omit relationships
    if "relationships" not in doc and "grid" not in doc and not scored_reply:
        errors.append("/relationships: missing required key")
    if errors:
        return errors
    names = [o["name"] for o in doc["objects"]]
    seen = set()
    for i, n in enumerate(names):
        if n in seen:
            errors.append(f"/objects/{i}/name: duplicate object name {n!r}")
        seen.add(n)
    for i, rel in enumerate(doc.get("relationships", [])):
        for end in ("subject", "object"):
            if rel[end] not in seen:
                errors.append(f"/relationships/{i}/{end}: references unknown object {rel[end]!r}")
    steps = [h["step"] for h in doc.get("action_history", [])]
    for i in range(1, len(steps)):
        if steps[i] <= steps[i - 1]:
            errors.append(f"/action_history/{i}/step: steps must strictly increase")
    return errors


def validate_document(doc: Any, domain: str = FREETEXT) -> SceneGraph:
    """Check an externally produced graph document and load it.

    Raises :class:`SchemaError` listing every problem with its JSON path.
    """
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise SchemaError([f"/: not valid JSON ({exc.msg})"]) from None
    errors = schema_errors(doc)
    if errors:
        raise SchemaError(errors)
    doc = copy.deepcopy(unwrap_document(doc))
    env = doc.get("environment", {})
    if not env and "grid" in doc:
        env = {"global_constraints": {"dimensions": doc["grid"]["dimensions"]},
               "valid_actions": list(MAZE_ENVIRONMENT_ACTIONS),
               "boundary_conditions": [doc["grid"].get("coordinates", "(0,0) is top-left")]}
    return SceneGraph(domain, doc["objects"], doc.get("relationships", []), env, doc.get("action_history", []))


__all__ = [
    "SceneGraph", "SchemaError", "SimilarityScore", "SimilarityWeights", "from_state", "update",
    "similarity", "validate_document", "schema_errors", "unwrap_document", "rewind", "to_state",
    "block_position", "parse_block_position", "graph_state", "ActionParseError", "ActionRecord",
]
