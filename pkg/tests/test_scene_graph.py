import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cosplan import environments as env
from cosplan.environments import (
    ActionRecord,
    BlocksLayout,
    BlocksState,
    DomainMismatchError,
    MazeLayout,
    MazeState,
    ShuffleState,
    parse_action,
)
from cosplan.scene_graph import (
    SceneGraph,
    SchemaError,
    from_state,
    graph_state,
    rewind,
    schema_errors,
    similarity,
    to_state,
    unwrap_document,
    update,
    validate_document,
)

from conftest import FIXTURES

COLORS = {0: "purple", 1: "orange", 2: "green", 3: "pink", 4: "light_pink", 5: "red", 6: "blue", 7: "yellow"}


@pytest.fixture(scope="module")
def walk_blocks():
    return json.loads((FIXTURES / "walkthrough_blocks.json").read_text())["replies"]


@pytest.fixture
def walk_state():
    # the walkthrough's initial arrangement with columns shifted to 0-based
    lay = BlocksLayout(8, [COLORS[i] for i in range(8)])
    return BlocksState(lay, [(2,), (0, 7), (1, 6, 5), (3,), (4,)])


def _rels(doc, kind):
    return {(r["subject"], r["object"]) for r in doc["relationships"] if r["relationship"] == kind}


class TestFromState:
    def test_walkthrough_stacking(self, walk_state, walk_blocks):
        ours = from_state(walk_state).to_document()
        theirs = walk_blocks[0]
        assert _rels(ours, "on_top") == _rels(theirs, "on_top")
        assert _rels(theirs, "beside") <= _rels(ours, "beside")
        pos = {o["name"]: o["position"] for o in theirs["objects"]}
        assert {o["name"]: o["position"] for o in ours["objects"]} == pos

    def test_block_states(self, walk_state):
        objs = {o["name"]: o for o in from_state(walk_state).objects}
        assert objs["block_5"]["state"] == "stacked"
        assert objs["block_1"]["state"] == "resting"
        assert objs["block_4"]["properties"] == {"color": "light_pink"}

    def test_maze_objects(self):
        lay = MazeLayout(6, 5, [(3, 2), (2, 2)], (5, 0), (2, 4))
        doc = from_state(MazeState(lay, (5, 0))).to_document()
        by_name = {o["name"]: o for o in doc["objects"]}
        assert by_name["agent"]["position"] == [5, 0]
        assert by_name["goal"]["position"] == [2, 4]
        assert doc["environment"]["global_constraints"]["dimensions"] == [6, 5]

    def test_shuffle_tiles(self):
        g = from_state(ShuffleState((2, 2), (1, 0, 2, 3)))
        states = sorted(o["state"] for o in g.objects)
        assert states == ["displaced", "displaced", "in_place", "in_place"]

    def test_json_is_stable(self, walk_state):
        a, b = from_state(walk_state), from_state(walk_state)
        assert a.to_json() == b.to_json() and a.digest() == b.digest()


class TestUpdate:
    def test_walkthrough_first_move_is_invalid(self, walk_state):
        # block 7 sits on block 0, so moving block 0 breaks the top-only rule
        g = update(from_state(walk_state), parse_action("Move block 0 from column 1 to column 4", "blocks"))
        entry = g.action_history[-1]
        assert entry["validity"] is False
        assert g.without_history() == from_state(walk_state).without_history()

    def test_history_entry(self, walk_state):
        g = update(from_state(walk_state), parse_action("Move block 7 from column 1 to column 4", "blocks"))
        entry = g.action_history[-1]
        assert entry["step"] == 0 and entry["validity"] is True
        assert entry["affected_entities"] == ["block_7"]
        change = next(c for c in entry["state_changes"] if c["property"] == "position")
        assert (change["old_value"], change["new_value"]) == ("column_2, level_2", "column_5, level_2")

    def test_input_not_mutated(self, walk_state):
        g = from_state(walk_state)
        before = g.to_json()
        update(g, parse_action("Move block 5 from column 2 to column 0", "blocks"))
        assert g.to_json() == before

    def test_string_action(self, walk_state):
        g = from_state(walk_state)
        a = update(g, "Move block 5 from column 2 to column 0")
        b = update(g, parse_action("Move block 5 from column 2 to column 0", "blocks"))
        assert a == b

    def test_obstacle_entry_recorded(self):
        lay = MazeLayout(3, 3, [(1, 1)], (1, 0), (1, 2))
        g = update(from_state(MazeState(lay, (1, 0))), ActionRecord.maze((1, 0), (1, 1)))
        assert g.violation_count == 1
        assert graph_state(g).agent == (1, 1)

    def test_rewind_and_round_trip(self, walk_state):
        g = from_state(walk_state)
        moved = update(update(g, "Move block 5 from column 2 to column 0"), "Move block 6 from column 2 to column 3")
        assert rewind(moved).without_history() == g.without_history()
        assert to_state(moved, walk_state).columns == ((2, 5), (0, 7), (1,), (3, 6), (4,))

    def test_cross_domain_action(self, walk_state):
        with pytest.raises(DomainMismatchError):
            update(from_state(walk_state), ActionRecord.maze((0, 0), (0, 1)))


class TestSimilarity:
    def test_goal_is_100(self, walk_state):
        g = from_state(walk_state)
        assert similarity(g, g).value == 100.0

    def test_penalties(self, walk_state):
        g = from_state(walk_state)
        bad = update(g, "Move block 0 from column 1 to column 4")
        s = similarity(bad, g, distance_regressed=True)
        assert s.violation_count == 1 and s.distance_regressed
        assert s.value == 100 - 30 - 30

    def test_clamped_at_zero(self, walk_state):
        g = from_state(walk_state)
        for _ in range(5):
            g = update(g, "Move block 0 from column 1 to column 4")
        assert similarity(g, from_state(walk_state)).value == 0.0

    def test_partial_match(self):
        lay = MazeLayout(3, 3, [], (0, 0), (2, 2))
        s = similarity(from_state(MazeState(lay, (0, 0))), from_state(MazeState(lay, (2, 2))))
        # agent differs, goal marker matches
        assert s.goal_match_percent == pytest.approx(50.0)

    def test_domain_mismatch(self, walk_state):
        with pytest.raises(DomainMismatchError):
            similarity(from_state(walk_state), from_state(ShuffleState((2, 2), (0, 1, 2, 3))))


class TestValidation:
    def test_walkthrough_documents_validate(self, walk_blocks):
        for doc in walk_blocks:
            validate_document(doc, "blocks")

    def test_grid_variant_validates(self):
        doc = json.loads((FIXTURES / "walkthrough_maze.json").read_text())["replies"][0]
        g = validate_document(doc, "maze")
        assert {o["name"] for o in g.objects} == {"agent", "goal", "obstacle_1", "obstacle_2"}

    def test_missing_relationships_reported(self):
        with pytest.raises(SchemaError) as err:
            validate_document({"objects": []}, "blocks")
        assert "/relationships: missing required key" in err.value.errors

    def test_unknown_endpoint(self, walk_blocks):
        doc = json.loads(json.dumps(walk_blocks[0]))
        doc["relationships"].append({"relationship": "on_top", "subject": "block_9", "object": "block_0"})
        assert any("block_9" in e for e in schema_errors(doc))

    def test_duplicate_names(self, walk_blocks):
        doc = json.loads(json.dumps(walk_blocks[0]))
        doc["objects"].append(dict(doc["objects"][0]))
        with pytest.raises(SchemaError):
            validate_document(doc, "blocks")

    def test_extra_keys_rejected(self, walk_blocks):
        doc = json.loads(json.dumps(walk_blocks[0]))
        doc["objects"][0]["colour"] = "green"
        with pytest.raises(SchemaError):
            validate_document(doc, "blocks")

    def test_steps_must_increase(self, walk_blocks):
        doc = json.loads(json.dumps(walk_blocks[3]))
        doc["action_history"][1]["step"] = 0
        with pytest.raises(SchemaError):
            validate_document(doc, "blocks")

    def test_unwrap(self, walk_blocks):
        assert unwrap_document({"scene_graph": walk_blocks[0]}) == walk_blocks[0]

    def test_round_trip(self, walk_state):
        g = update(from_state(walk_state), "Move block 5 from column 2 to column 0")
        assert validate_document(json.loads(g.to_json()), "blocks") == g


# commutation over generated states (the acceptance suite runs the 10k sweep)


@st.composite
def maze_pairs(draw):
    rows, cols = draw(st.integers(2, 6)), draw(st.integers(2, 6))
    cells = [(r, c) for r in range(rows) for c in range(cols)]
    start, goal = draw(st.lists(st.sampled_from(cells), min_size=2, max_size=2, unique=True))
    obstacles = draw(st.lists(st.sampled_from([c for c in cells if c not in (start, goal)]), max_size=4, unique=True))
    agent = draw(st.sampled_from(cells))
    state = MazeState(MazeLayout(rows, cols, obstacles, start, goal), agent)
    src = draw(st.sampled_from([agent, (agent[0] + 1, agent[1])]))
    dr, dc = draw(st.sampled_from([(-1, 0), (1, 0), (0, -1), (0, 1), (1, 1), (0, 2)]))
    return state, ActionRecord.maze(src, (src[0] + dr, src[1] + dc))


@st.composite
def shuffle_pairs(draw):
    rows, cols = draw(st.sampled_from([(2, 2), (2, 3), (3, 3)]))
    perm = tuple(draw(st.permutations(list(range(rows * cols)))))
    cell = st.tuples(st.integers(-1, rows), st.integers(-1, cols))
    return ShuffleState((rows, cols), perm), ActionRecord.swap(draw(cell), draw(cell))


class TestCommutation:
    @given(st.one_of(maze_pairs(), shuffle_pairs()))
    @settings(max_examples=300, deadline=None)
    def test_apply_then_graph_equals_graph_then_update(self, pair):
        state, action = pair
        out = env.apply(state, action)
        via_graph = update(from_state(state), action)
        assert from_state(out.state).without_history() == via_graph.without_history()
        assert via_graph.action_history[-1]["validity"] == out.ok
