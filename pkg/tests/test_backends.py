import json

import httpx
import pytest

from cosplan.backends import (
    BackendError,
    OracleBackend,
    RandomBackend,
    RemoteBackend,
    RemoteConfig,
    ReplayTransport,
    RetriesExhausted,
    UnsupportedInstance,
    extract_json,
    extract_score,
    make_backend,
)
from cosplan.prompts import build_prompt
from cosplan.scene_graph import from_state
from cosplan.task_forge import generate_instance

SECRET = "sk-test-do-not-store"


def completion(content, status=200, headers=None):
    return httpx.Response(status, headers=headers,
                          json={"choices": [{"message": {"role": "assistant", "content": content}}]})


class Script:
    """MockTransport handler answering from a list of responses."""

    def __init__(self, *responses):
        self.responses = list(responses)
        self.seen = []

    def __call__(self, request):
        self.seen.append(request)
        return self.responses.pop(0)


def remote(handler, tmp_path=None, **kw):
    cfg = RemoteConfig(endpoint="http://reasoner.test/v1/chat", model="m", cache_dir=str(tmp_path) if tmp_path else None,
                       **kw)
    sleeps = []
    backend = RemoteBackend(cfg, transport=httpx.MockTransport(handler), sleep=sleeps.append)
    return backend, sleeps


@pytest.fixture(scope="module")
def maze():
    return generate_instance("maze", seed=31)


class TestOracle:
    def test_graphs(self, maze):
        oracle = OracleBackend()
        assert oracle.query_graph(maze, "initial") == from_state(maze.initial)
        assert oracle.query_graph(maze, "goal") == from_state(maze.goal)
        with pytest.raises(ValueError):
            oracle.query_graph(maze, "middle")

    def test_freetext_unsupported(self, walkthrough):
        _, inst = walkthrough("blocks")
        with pytest.raises(UnsupportedInstance):
            OracleBackend().query_graph(inst, "initial")

    def test_answers_correctly(self, maze):
        oracle = OracleBackend()
        assert oracle.answer_mcq(build_prompt(maze, "cot", "step")) == maze.step_mcq.correct_label


class TestRandom:
    def test_reproducible(self, maze):
        prompt = build_prompt(maze, "vanilla", "step")
        assert RandomBackend(4).answer_mcq(prompt) == RandomBackend(4).answer_mcq(prompt)
        picks = {RandomBackend(s).answer_mcq(prompt) for s in range(40)}
        assert picks == set(maze.step_mcq.labels)

    def test_make_backend(self):
        assert isinstance(make_backend("oracle"), OracleBackend)
        assert make_backend("random:7").seed == 7
        assert make_backend("remote", endpoint="http://x", model="y").cfg.model == "y"
        with pytest.raises(ValueError):
            make_backend("psychic")


class TestReplyParsing:
    @pytest.mark.parametrize("text, expected", [
        ('{"similarity": 85}', 85.0),
        ('Sure!\n```json\n{"score": 40.5}\n```', 40.5),
        ('{"metrics": {"similarity_with_target_scene_graph": 92}}', 92.0),
        ("I would say 70 out of 100.", 70.0),
    ])
    def test_scores(self, text, expected):
        assert extract_score(text) == expected

    def test_no_score(self):
        with pytest.raises(ValueError):
            extract_score("no idea")

    def test_json_with_trailing_prose(self):
        assert extract_json('here: {"a": [1, 2]} hope that helps {') == {"a": [1, 2]}


class TestRemote:
    def test_cache_hit_skips_network(self, tmp_path):
        handler = Script(completion("A"))
        backend, _ = remote(handler, tmp_path)
        assert backend.chat("q") == "A"
        again, _ = remote(Script(), tmp_path)
        assert again.chat("q") == "A"
        assert (backend.network_calls, again.network_calls) == (1, 0)

    def test_cache_layout(self, tmp_path):
        backend, _ = remote(Script(completion("A")), tmp_path)
        backend.chat("q")
        files = [p for p in tmp_path.rglob("*") if p.is_file()]
        assert len(files) == 1 and files[0].parent.name == files[0].name[:2]

    def test_retry_after_honoured(self):
        handler = Script(completion("", 429, {"Retry-After": "7"}), completion("B"))
        backend, sleeps = remote(handler)
        assert backend.chat("q") == "B"
        assert sleeps == [7.0]

    def test_backoff_on_server_error(self):
        handler = Script(completion("", 503), completion("", 503), completion("C"))
        backend, sleeps = remote(handler, backoff_base=1.0)
        assert backend.chat("q") == "C"
        assert sleeps == [1.0, 2.0]

    def test_retries_exhausted(self):
        handler = Script(*[completion("", 500) for _ in range(3)])
        backend, sleeps = remote(handler, max_retries=2)
        with pytest.raises(RetriesExhausted):
            backend.chat("q")
        assert backend.network_calls == 3 and len(sleeps) == 3

    def test_client_error_not_retried(self):
        backend, _ = remote(Script(completion("", 400)))
        with pytest.raises(BackendError) as err:
            backend.chat("q")
        assert not isinstance(err.value, RetriesExhausted)
        assert backend.network_calls == 1

    def test_credential_only_in_header(self, tmp_path, monkeypatch):
        monkeypatch.setenv("COSPLAN_API_KEY", SECRET)
        handler = Script(completion("A"))
        backend, _ = remote(handler, tmp_path)
        backend.chat("q")
        request = handler.seen[0]
        assert request.headers["Authorization"] == f"Bearer {SECRET}"
        assert SECRET not in request.content.decode()
        for p in tmp_path.rglob("*"):
            if p.is_file():
                assert SECRET not in p.read_text()
        assert SECRET not in json.dumps(backend.cfg.public_dict())

    def test_deterministic_body(self):
        handler = Script(completion("A"))
        backend, _ = remote(handler)
        backend.chat("q", [b"png"])
        body = json.loads(handler.seen[0].content)
        assert body["temperature"] == 0 and body["model"] == "m"
        assert body["messages"][0]["content"][1]["image_url"]["url"].startswith("data:image/png;base64,")

    def test_malformed_graph_reprompts_once(self, maze):
        good = from_state(maze.initial).to_json()
        handler = Script(completion("not json"), completion(good))
        backend, _ = remote(handler)
        assert backend.query_graph(maze, "initial") == from_state(maze.initial)
        assert backend.network_calls == 2
        assert "not a valid scene graph" in json.loads(handler.seen[1].content)["messages"][0]["content"][0]["text"]

    def test_malformed_graph_twice_fails(self, maze):
        handler = Script(completion('{"objects": []}'), completion("still wrong"))
        backend, _ = remote(handler)
        with pytest.raises(BackendError):
            backend.query_graph(maze, "initial")
        assert backend.network_calls == 2

    def test_similarity_clamped(self, maze):
        g = from_state(maze.goal)
        backend, _ = remote(Script(completion('{"similarity": 140}')))
        assert backend.similarity(g, g) == 100.0

    def test_unreadable_similarity(self, maze):
        g = from_state(maze.goal)
        backend, _ = remote(Script(completion("cannot compare")))
        with pytest.raises(BackendError):
            backend.similarity(g, g)


class TestReplayTransport:
    def test_serves_in_order_then_500(self):
        transport = ReplayTransport(["one", "two"])
        backend = RemoteBackend(RemoteConfig(endpoint="http://r.test", max_retries=0), transport=transport,
                                sleep=lambda s: None)
        assert [backend.chat("a"), backend.chat("b")] == ["one", "two"]
        with pytest.raises(RetriesExhausted):
            backend.chat("c")
        assert len(transport.requests) == 3
