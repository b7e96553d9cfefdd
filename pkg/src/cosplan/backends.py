"""Reasoner backends: the symbolic oracle, a seeded random guesser and a
remote chat-completion client with an on-disk response cache."""

from __future__ import annotations

import abc
import base64
import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import httpx

from . import environments as env
from .environments import SYNTHETIC_DOMAINS
from .prompts import graph_request, similarity_request, simulate_request
from .scene_graph import (
    SceneGraph,
    SchemaError,
    SimilarityWeights,
    from_state,
    graph_state,
    rewind,
    similarity,
    update,
    validate_document,
)

log = logging.getLogger(__name__)


class BackendError(RuntimeError):
    pass


class UnsupportedInstance(BackendError):
    pass


class RetriesExhausted(BackendError):
    """The endpoint kept failing; callers should stop rather than keep queueing work."""


class ReasonerBackend(abc.ABC):
    """QUERY / SIMULATE / SIMILARITY / ANSWER."""

    name = "backend"

    @abc.abstractmethod
    def query_graph(self, instance, role: str) -> SceneGraph: ...

    @abc.abstractmethod
    def simulate(self, sg: SceneGraph, action) -> SceneGraph: ...

    @abc.abstractmethod
    def similarity(self, sg: SceneGraph, goal_sg: SceneGraph, baseline: Optional[SceneGraph] = None) -> float: ...

    @abc.abstractmethod
    def answer_mcq(self, prompt) -> str: ...


# -- oracle --------------------------------------------------------------------------


def _aligned(target, like):
    """Move a goal/baseline state onto ``like``'s layout (maze layouts also record a start cell)."""
    if like.domain == env.MAZE:
        return env.MazeState(like.layout, target.agent)
    return target


class OracleBackend(ReasonerBackend):
    """Exact simulation in place of a vision-language model.

    The score is progress based: a graph whose goal is still reachable counts as a
    full goal match, and any step that failed to shorten the distance since the
    baseline (the history start unless given) sets the regression penalty.
    """

    name = "oracle"

    def __init__(self, weights: SimilarityWeights = SimilarityWeights()):
        self.weights = weights

    def query_graph(self, instance, role: str) -> SceneGraph:
        if instance.domain not in SYNTHETIC_DOMAINS or instance.initial is None:
            raise UnsupportedInstance(f"oracle cannot read {instance.domain} instance {instance.id}")
        if role not in ("initial", "goal"):
            raise ValueError(f"unknown role {role!r}")
        return from_state(instance.initial if role == "initial" else instance.goal)

    def simulate(self, sg: SceneGraph, action) -> SceneGraph:
        out = update(sg, action)
        # the graph rules and the environment must agree on every step
        outcome = env.apply(graph_state(sg), action)
        if graph_state(out).key != outcome.state.key or out.action_history[-1]["validity"] != outcome.ok:
            raise BackendError(f"scene graph and environment disagree on {action.text!r}")
        return out

    def similarity(self, sg: SceneGraph, goal_sg: SceneGraph, baseline: Optional[SceneGraph] = None, **_) -> float:
        return self.score(sg, goal_sg, baseline).value

    def score(self, sg, goal_sg, baseline=None):
        state = graph_state(sg)
        goal = _aligned(graph_state(goal_sg), state)
        base_graph = baseline if baseline is not None else rewind(sg)
        base = _aligned(graph_state(base_graph), state)
        steps = len(sg.action_history) - (len(baseline.action_history) if baseline is not None else 0)
        d = env.distance_to_goal(state, goal)
        d0 = env.distance_to_goal(base, goal)
        regressed = d == float("inf") or d0 - d < steps
        if d == float("inf"):
            projected = sg
        else:
            projected = SceneGraph(sg.domain, goal_sg.objects, goal_sg.relationships, goal_sg.environment,
                                   sg.action_history)
        return similarity(projected, goal_sg, regressed, self.weights)

    def answer_mcq(self, prompt) -> str:
        from .sgi import run_sgi

        return run_sgi(prompt.instance, self, prompt.task).label


# -- random --------------------------------------------------------------------------


class RandomBackend(ReasonerBackend):
    """Uniform guesses, reproducible per (seed, instance, task); graph work goes to the oracle."""

    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._oracle = OracleBackend()

    def query_graph(self, instance, role):
        return self._oracle.query_graph(instance, role)

    def simulate(self, sg, action):
        return self._oracle.simulate(sg, action)

    def similarity(self, sg, goal_sg, baseline=None, **kw):
        return self._oracle.similarity(sg, goal_sg, baseline)

    def answer_mcq(self, prompt) -> str:
        rng = random.Random(f"{self.seed}:{prompt.instance.id}:{prompt.task}")
        return rng.choice(list(prompt.labels))


# -- remote ---------------------------------------------------------------------------


@dataclass
class RemoteConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-4o"
    credential_env: str = "COSPLAN_API_KEY"
    timeout: float = 60.0
    max_retries: int = 4
    max_parallel: int = 4
    deterministic: bool = True
    cache_dir: Optional[str] = None
    backoff_base: float = 0.5
    backoff_cap: float = 30.0

    def public_dict(self) -> Dict[str, Any]:
        """Settings safe to record; the credential itself is never read here."""
        return {"endpoint": self.endpoint, "model": self.model, "credential_env": self.credential_env,
                "deterministic": self.deterministic}


class ResponseCache:
    """Content-addressed reply store laid out as ``{digest[:2]}/{digest}``."""

    def __init__(self, root):
        self.root = Path(root)
        self._locks: Dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def lock(self, digest: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(digest, threading.Lock())

    def path(self, digest: str) -> Path:
        return self.root / digest[:2] / digest

    def get(self, digest: str) -> Optional[str]:
        p = self.path(digest)
        if not p.exists():
            return None
        return json.loads(p.read_text(encoding="utf-8"))["content"]

    def put(self, digest: str, content: str):
        p = self.path(digest)
        p.parent.mkdir(parents=True, exist_ok=True)
        tmp = p.with_suffix(".tmp")
        tmp.write_text(json.dumps({"digest": digest, "content": content}), encoding="utf-8")
        tmp.replace(p)


_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.S)


def extract_json(text: str) -> Any:
    """Parse the first JSON object in a model reply (code fences allowed)."""
    m = _FENCE.search(text)
    if m:
        text = m.group(1)
    start = text.find("{")
    if start < 0:
        raise ValueError("no JSON object in reply")
    obj, _ = json.JSONDecoder().raw_decode(text[start:])
    return obj


def extract_score(text: str) -> float:
    try:
        doc = extract_json(text)
    except ValueError:
        doc = None
    if isinstance(doc, dict):
        for key in ("similarity", "score", "similarity_with_target_scene_graph"):
            if isinstance(doc.get(key), (int, float)):
                return float(doc[key])
        metrics = doc.get("metrics")
        if isinstance(metrics, dict) and isinstance(metrics.get("similarity_with_target_scene_graph"), (int, float)):
            return float(metrics["similarity_with_target_scene_graph"])
    m = re.search(r"-?\d+(?:\.\d+)?", text)
    if not m:
        raise ValueError("no score in reply")
    return float(m.group(0))


class RemoteBackend(ReasonerBackend):
    """Chat-completion client. Replies are cached by request digest so runs can
    be resumed and replayed without the network."""

    name = "remote"

    def __init__(self, cfg: RemoteConfig, transport: Optional[httpx.BaseTransport] = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.cfg = cfg
        self.cache = ResponseCache(cfg.cache_dir) if cfg.cache_dir else None
        self._slots = threading.BoundedSemaphore(cfg.max_parallel)
        self._client = httpx.Client(timeout=cfg.timeout, transport=transport)
        self._sleep = sleep
        self.network_calls = 0
        self._count_lock = threading.Lock()

    def close(self):
        self._client.close()

    # wire ------------------------------------------------------------------

    def _body(self, text: str, images: Sequence[bytes] = ()) -> Dict[str, Any]:
        parts: List[Dict[str, Any]] = [{"type": "text", "text": text}]
        for png in images:
            url = "data:image/png;base64," + base64.b64encode(png).decode("ascii")
            parts.append({"type": "image_url", "image_url": {"url": url}})
        body: Dict[str, Any] = {"model": self.cfg.model, "messages": [{"role": "user", "content": parts}]}
        if self.cfg.deterministic:
            body["temperature"] = 0
            body["seed"] = 0
        return body

    def _headers(self) -> Dict[str, str]:
        key = os.environ.get(self.cfg.credential_env)
        return {"Authorization": f"Bearer {key}"} if key else {}

    def chat(self, text: str, images: Sequence[bytes] = ()) -> str:
        body = self._body(text, images)
        digest = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()
        if self.cache is None:
            return self._post(body)
        with self.cache.lock(digest):
            hit = self.cache.get(digest)
            if hit is not None:
                return hit
            content = self._post(body)
            self.cache.put(digest, content)
            return content

    def _post(self, body) -> str:
        last = None
        for attempt in range(self.cfg.max_retries + 1):
            wait = min(self.cfg.backoff_cap, self.cfg.backoff_base * 2 ** attempt)
            try:
                with self._slots:
                    with self._count_lock:
                        self.network_calls += 1
                    resp = self._client.post(self.cfg.endpoint, json=body, headers=self._headers())
            except httpx.TransportError as exc:
                last = exc
                log.warning("transport error (attempt %d): %s", attempt + 1, exc)
                self._sleep(wait)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = BackendError(f"HTTP {resp.status_code}")
                retry_after = resp.headers.get("Retry-After")
                if resp.status_code == 429 and retry_after:
                    try:
                        wait = float(retry_after)
                    except ValueError:
                        pass
                log.warning("HTTP %d (attempt %d), retrying in %.1fs", resp.status_code, attempt + 1, wait)
                self._sleep(wait)
                continue
            if resp.status_code >= 400:
                raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, ValueError) as exc:
                raise BackendError(f"malformed completion: {exc}") from None
        raise RetriesExhausted(f"gave up after {self.cfg.max_retries + 1} attempts: {last}")

    # graph calls with one repair round -------------------------------------------

    def _graph_call(self, text: str, images: Sequence[bytes], domain: str) -> SceneGraph:
        reply = self.chat(text, images)
        try:
            return validate_document(extract_json(reply), domain)
        except (SchemaError, ValueError) as exc:
            problems = exc.errors if isinstance(exc, SchemaError) else [str(exc)]
        retry = text + "\n\nYour previous reply was not a valid scene graph:\n- " + "\n- ".join(problems) + \
            "\nReply again with corrected JSON only."
        reply = self.chat(retry, images)
        try:
            return validate_document(extract_json(reply), domain)
        except (SchemaError, ValueError) as exc:
            raise BackendError(f"invalid scene graph after reprompt: {exc}") from None

    def query_graph(self, instance, role: str) -> SceneGraph:
        from .renderer import pair_png, text_serialize

        if instance.flags.get("text_only"):
            state = instance.initial if role == "initial" else instance.goal
            return self._graph_call(graph_request(role, instance.domain) + "\n" + text_serialize(state), (),
                                    instance.domain)
        images = [pair_png(instance)] if instance.initial is not None else []
        return self._graph_call(graph_request(role, instance.domain), images, instance.domain)

    def simulate(self, sg: SceneGraph, action) -> SceneGraph:
        return self._graph_call(simulate_request(sg.to_json(indent=2), action.text), (), sg.domain)

    def similarity(self, sg, goal_sg, baseline=None, **_) -> float:
        reply = self.chat(similarity_request(sg.to_json(indent=2), goal_sg.to_json(indent=2)))
        try:
            return min(100.0, max(0.0, extract_score(reply)))
        except ValueError as exc:
            raise BackendError(f"unreadable similarity reply: {exc}") from None

    def answer_mcq(self, prompt) -> str:
        return self.chat(prompt.text, prompt.images())


class ReplayTransport(httpx.BaseTransport):
    """Serves canned assistant replies in order, as a chat-completion endpoint would."""

    def __init__(self, replies: Sequence[str]):
        self.replies = list(replies)
        self.requests: List[Dict[str, Any]] = []

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        self.requests.append(json.loads(request.content))
        if len(self.requests) > len(self.replies):
            return httpx.Response(500, json={"error": "transcript exhausted"})
        content = self.replies[len(self.requests) - 1]
        return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": content}}]})

    @classmethod
    def from_file(cls, path) -> "ReplayTransport":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls([r if isinstance(r, str) else json.dumps(r) for r in doc["replies"]])


def make_backend(spec: str, endpoint: Optional[str] = None, model: Optional[str] = None,
                 cache_dir: Optional[str] = None, max_parallel: int = 4) -> ReasonerBackend:
    """``oracle``, ``random`` / ``random:SEED`` or ``remote``."""
    name, _, arg = spec.partition(":")
    if name == "oracle":
        return OracleBackend()
    if name == "random":
        return RandomBackend(int(arg) if arg else 0)
    if name == "remote":
        cfg = RemoteConfig(max_parallel=max_parallel, cache_dir=cache_dir)
        if endpoint:
            cfg.endpoint = endpoint
        if model:
            cfg.model = model
        return RemoteBackend(cfg)
    raise ValueError(f"unknown backend {spec!r}")
