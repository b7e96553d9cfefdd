"""Scene Graph Incremental update: simulate every action on a scene graph and
pick options by similarity to the goal graph."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import List, Optional

from .prompts import MethodConfig
from .task_forge import NONE_OF_THE_ABOVE


class SGIError(RuntimeError):
    pass


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TraceRecord:
    phase: str
    input_digest: str
    graph_digest: str
    score: Optional[float] = None

    def to_dict(self):
        return {"phase": self.phase, "input_digest": self.input_digest, "graph_digest": self.graph_digest,
                "score": self.score}


@dataclass
class SGIResult:
    label: str
    scores: dict
    trace: List[TraceRecord] = field(default_factory=list)
    calls: dict = field(default_factory=lambda: {"query": 0, "simulate": 0, "similarity": 0})


class _Run:
    def __init__(self, backend):
        self.backend = backend
        self.trace: List[TraceRecord] = []
        self.calls = {"query": 0, "simulate": 0, "similarity": 0}

    def query(self, instance, role):
        self.calls["query"] += 1
        sg = self.backend.query_graph(instance, role)
        self.trace.append(TraceRecord(f"query:{role}", _digest(f"{instance.id}:{role}"), sg.digest()))
        return sg

    def simulate(self, sg, action, phase):
        self.calls["simulate"] += 1
        out = self.backend.simulate(sg, action)
        self.trace.append(TraceRecord(phase, _digest(sg.digest() + action.text), out.digest()))
        return out

    def similarity(self, sg, goal_sg, phase, **kw):
        self.calls["similarity"] += 1
        score = float(self.backend.similarity(sg, goal_sg, **kw))
        if not 0.0 <= score <= 100.0:
            raise SGIError(f"similarity {score} outside [0, 100]")
        self.trace.append(TraceRecord(phase, _digest(sg.digest() + goal_sg.digest()), sg.digest(), score))
        return score


def sgi_step_completion(instance, backend, cfg: Optional[MethodConfig] = None) -> SGIResult:
    """Fold the context into the initial graph, then fold each option from that
    shared graph and keep the option closest to the goal (earliest label on ties)."""
    mcq = instance.step_mcq
    if mcq is None:
        raise SGIError(f"{instance.id} has no step-completion question")
    run = _Run(backend)
    s0 = run.query(instance, "initial")
    sg_goal = run.query(instance, "goal")
    sc = s0
    for action in instance.context:
        sc = run.simulate(sc, action, "context")
    sc_digest = sc.digest()
    scores = {}
    for label, actions in mcq.options.items():
        sm = sc
        for action in actions:
            sm = run.simulate(sm, action, f"option:{label}")
        if sc.digest() != sc_digest:
            raise SGIError("backend mutated the shared context graph")
        scores[label] = run.similarity(sm, sg_goal, f"score:{label}", baseline=sc)
    best = max(scores.values())
    label = next(k for k in mcq.options if scores[k] == best)
    return SGIResult(label, scores, run.trace, run.calls)


def sgi_error_detection(instance, backend, cfg: Optional[MethodConfig] = None) -> SGIResult:
    """Score the graph after every context action; the weakest step is the
    error unless even it clears the threshold."""
    cfg = cfg or MethodConfig()
    mcq = instance.error_mcq
    if mcq is None:
        raise SGIError(f"{instance.id} has no error-detection question")
    labels = list(mcq.options)
    none_label = next(k for k, v in mcq.options.items() if v == NONE_OF_THE_ABOVE)
    run = _Run(backend)
    sc = run.query(instance, "initial")
    sg_goal = run.query(instance, "goal")
    sims = []
    for i, action in enumerate(instance.context):
        sc = run.simulate(sc, action, "context")
        sims.append(run.similarity(sc, sg_goal, f"score:{labels[i]}"))
    scores = {labels[i]: s for i, s in enumerate(sims)}
    if not sims:
        return SGIResult(none_label, scores, run.trace, run.calls)
    worst = min(sims)
    i_min = sims.index(worst)
    label = none_label if worst / 100.0 > cfg.error_threshold else labels[i_min]
    return SGIResult(label, scores, run.trace, run.calls)


def run_sgi(instance, backend, task: str, cfg: Optional[MethodConfig] = None) -> SGIResult:
    if task == "step":
        return sgi_step_completion(instance, backend, cfg)
    if task == "error":
        return sgi_error_detection(instance, backend, cfg)
    raise SGIError(f"unknown task {task!r}")
