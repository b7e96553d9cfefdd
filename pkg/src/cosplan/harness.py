"""Evaluation runs, ablation sweeps and report tables."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from .backends import BackendError, ReasonerBackend, RetriesExhausted
from .environments import MAZE, SHUFFLE
from .prompts import UNPARSEABLE, MethodConfig, build_prompt, parse_choice
from .sgi import SGIError, run_sgi
from .task_forge import ForgeConfig, TaskInstance, generate_dataset

log = logging.getLogger(__name__)

SWEEPS = ("n_options", "k_reveal", "context_length", "obstacle_count", "in_context_ratio", "error_free", "text_only")
# a label is flagged when its share of answers exceeds both this and twice chance
BIAS_SHARE = 0.5


class EvalAborted(RuntimeError):
    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


@dataclass(frozen=True)
class EvalRecord:
    instance_id: str
    task: str
    method: str
    backend: str
    chosen: str
    correct: bool
    chosen_tag: Optional[str]
    trace_ref: Optional[str] = None
    errored: bool = False
    ambiguous: bool = False
    latency: float = field(default=0.0, compare=False)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "EvalRecord":
        return cls(**d)


def _trace_ref(trace) -> str:
    blob = json.dumps([t.to_dict() for t in trace], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _mcq(instance, task):
    return instance.step_mcq if task == "step" else instance.error_mcq


def evaluate_instance(instance: TaskInstance, task: str, backend: ReasonerBackend,
                      cfg: MethodConfig) -> EvalRecord:
    mcq = _mcq(instance, task)
    start = time.perf_counter()
    trace_ref = None
    ambiguous = False
    try:
        if cfg.method == "sgi":
            result = run_sgi(instance, backend, task, cfg)
            label, trace_ref = result.label, _trace_ref(result.trace)
        else:
            graphs = None
            if cfg.method == "sg":
                graphs = (backend.query_graph(instance, "initial"), backend.query_graph(instance, "goal"))
            prompt = build_prompt(instance, cfg.method, task, graphs)
            choice = parse_choice(backend.answer_mcq(prompt), prompt.labels)
            label = choice.label or UNPARSEABLE
            ambiguous = choice.ambiguous
    except RetriesExhausted:
        raise
    except (BackendError, SGIError) as exc:
        log.warning("%s errored: %s", instance.id, exc)
        return EvalRecord(instance.id, task, cfg.method, backend.name, UNPARSEABLE, False, None, None, True, False,
                          time.perf_counter() - start)
    return EvalRecord(instance.id, task, cfg.method, backend.name, label, label == mcq.correct_label,
                      mcq.option_tags.get(label), trace_ref, False, ambiguous, time.perf_counter() - start)


def evaluate(instances: Sequence[TaskInstance], task: str, backend: ReasonerBackend,
             cfg: Optional[MethodConfig] = None, parallel: int = 1) -> List[EvalRecord]:
    """Evaluate every instance carrying a ``task`` question; records come back in instance-id order.

    If the backend exhausts its retries the run stops and :class:`EvalAborted`
    carries whatever finished.
    """
    cfg = cfg or MethodConfig()
    todo = [i for i in instances if _mcq(i, task) is not None]
    skipped = len(instances) - len(todo)
    if skipped:
        log.info("skipping %d instances without a %s question", skipped, task)
    done: Dict[str, EvalRecord] = {}
    failure = None
    with ThreadPoolExecutor(max(1, parallel)) as pool:
        futures = {pool.submit(evaluate_instance, inst, task, backend, cfg): inst.id for inst in todo}
        for fut, iid in futures.items():
            try:
                done[iid] = fut.result()
            except RetriesExhausted as exc:
                failure = exc
                for other in futures:
                    other.cancel()
                break
    if failure is not None:
        for fut, iid in futures.items():
            if iid not in done and fut.done() and not fut.cancelled() and fut.exception() is None:
                done[iid] = fut.result()
    records = [done[k] for k in sorted(done)]
    if failure is not None:
        raise EvalAborted(str(failure), records)
    return records


# -- reports --------------------------------------------------------------------------


@dataclass
class ReportBundle:
    dataset: str
    task: str
    method: str
    backend: str
    total: int
    correct: int
    errored: int
    top1: float
    option_histogram: Dict[str, int]
    tag_histogram: Dict[str, int]
    cheat_rate: Optional[float]
    random_step: Optional[float]
    random_error: Optional[float]
    empirical_random: Optional[float] = None
    exclude_errors: bool = False
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def biased_labels(self) -> List[str]:
        n = sum(self.option_histogram.values())
        chance = self.random_step if self.task == "step" else self.random_error
        limit = max(BIAS_SHARE, 2 * chance) if chance else BIAS_SHARE
        return sorted(k for k, v in self.option_histogram.items() if n and v / n > limit)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "ReportBundle":
        return cls(**d)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "ReportBundle":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def analytic_baselines(instances: Sequence[TaskInstance]):
    """Mean chance accuracy over the actual dataset: 1/#options for step completion
    and 1/(L+1) for error detection."""
    steps = [1.0 / len(i.step_mcq.options) for i in instances if i.step_mcq is not None]
    errs = [1.0 / (len(i.context) + 1) for i in instances if i.error_mcq is not None]
    return (sum(steps) / len(steps) if steps else None, sum(errs) / len(errs) if errs else None)


def summarize(records: Sequence[EvalRecord], instances: Sequence[TaskInstance], dataset: str,
              exclude_errors: bool = False, params: Optional[Dict[str, Any]] = None) -> ReportBundle:
    if not records:
        raise ValueError("no records to summarize")
    task, method, backend = records[0].task, records[0].method, records[0].backend
    errored = sum(r.errored for r in records)
    correct = sum(r.correct for r in records)
    denom = len(records) - errored if exclude_errors else len(records)
    hist = Counter(r.chosen for r in records)
    tags = Counter(r.chosen_tag or "none" for r in records)
    cheat = None
    if task == "step":
        cheat = sum(r.chosen_tag == "no_correction_distractor" for r in records) / len(records)
    wanted = {r.instance_id for r in records}
    rs, re_ = analytic_baselines([i for i in instances if i.id in wanted])
    top1 = correct / denom if denom else 0.0
    return ReportBundle(dataset, task, method, backend, len(records), correct, errored, top1,
                        dict(sorted(hist.items())), dict(sorted(tags.items())), cheat, rs, re_,
                        top1 if backend == "random" else None, exclude_errors, dict(params or {}))


def records_csv(records: Iterable[EvalRecord]) -> str:
    buf = io.StringIO()
    cols = list(EvalRecord.__dataclass_fields__)
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in records:
        w.writerow(r.to_dict())
    return buf.getvalue()


_TABLE_COLS = ("dataset", "task", "method", "backend", "params", "n", "top1", "random", "cheat", "top_label", "flag")


def _row(b: ReportBundle) -> List[str]:
    n = sum(b.option_histogram.values())
    top_label, top_count = max(b.option_histogram.items(), key=lambda kv: (kv[1], kv[0])) if n else ("-", 0)
    rand = b.random_step if b.task == "step" else b.random_error
    return [b.dataset, b.task, b.method, b.backend, ",".join(f"{k}={v}" for k, v in sorted(b.params.items())) or "-",
            str(b.total), f"{100 * b.top1:.1f}", "-" if rand is None else f"{100 * rand:.1f}",
            "-" if b.cheat_rate is None else f"{100 * b.cheat_rate:.1f}",
            f"{top_label}:{100 * top_count / n:.0f}%" if n else "-", "BIAS" if b.biased_labels else ""]


def format_table(bundles: Sequence[ReportBundle]) -> str:
    rows = [list(_TABLE_COLS)] + [_row(b) for b in bundles]
    widths = [max(len(r[i]) for r in rows) for i in range(len(_TABLE_COLS))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"


def table_csv(bundles: Sequence[ReportBundle]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_TABLE_COLS)
    for b in bundles:
        w.writerow(_row(b))
    return buf.getvalue()


def plot_curves(bundles: Sequence[ReportBundle], path) -> Optional[Path]:
    """Accuracy against the swept parameter, one line per (dataset, task, method, backend)."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib missing; no plot written")
        return None
    swept = [b for b in bundles if len(b.params) == 1]
    if not swept:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    groups: Dict[tuple, List[ReportBundle]] = {}
    for b in swept:
        groups.setdefault((b.dataset, b.task, b.method, b.backend), []).append(b)
    for key, bs in sorted(groups.items()):
        xs = [next(iter(b.params.values())) for b in bs]
        xs = [float(x) if not isinstance(x, bool) else int(x) for x in xs]
        order = sorted(range(len(xs)), key=xs.__getitem__)
        ax.plot([xs[i] for i in order], [100 * bs[i].top1 for i in order], marker="o", label="/".join(key))
    ax.set_xlabel(next(iter(swept[0].params)))
    ax.set_ylabel("top-1 (%)")
    ax.set_ylim(0, 105)
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path


# -- ablations ------------------------------------------------------------------------


class UnsupportedSweep(ValueError):
    pass


def sweep_config(base: ForgeConfig, domain: str, sweep: str, value) -> ForgeConfig:
    if sweep not in SWEEPS:
        raise UnsupportedSweep(f"unknown sweep {sweep!r}")
    if sweep == "n_options":
        return base.with_overrides(n_options=int(value))
    if sweep == "k_reveal":
        return base.with_overrides(k_reveal=int(value))
    if sweep == "context_length":
        return base.with_overrides(context_len=int(value))
    if sweep == "obstacle_count":
        if domain != MAZE:
            raise UnsupportedSweep("obstacle_count applies to maze only")
        return base.with_overrides(obstacle_count=(int(value), int(value)))
    if sweep == "in_context_ratio":
        if domain == SHUFFLE:
            raise UnsupportedSweep("shuffle contexts carry no error")
        return base.with_overrides(in_context_ratio=float(value))
    if sweep == "error_free":
        return base.with_overrides(error_free=bool(value))
    if domain == SHUFFLE:
        raise UnsupportedSweep("shuffle has no text-only form")
    return base.with_overrides(text_only=bool(value))


def parse_sweep_value(sweep: str, text: str):
    if sweep in ("error_free", "text_only"):
        if text.lower() in ("1", "true", "yes"):
            return True
        if text.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if sweep == "in_context_ratio":
        return float(text)
    return int(text)


def ablate(domain: str, sweep: str, values: Sequence, task: str, backend: ReasonerBackend,
           count: int = 200, seed: int = 0, base: Optional[ForgeConfig] = None,
           cfg: Optional[MethodConfig] = None, parallel: int = 1, workers: int = 1) -> List[ReportBundle]:
    """One bundle per swept value; unsupported combinations are skipped with a notice."""
    base = base or ForgeConfig()
    bundles = []
    for value in values:
        try:
            fc = sweep_config(base, domain, sweep, value)
        except UnsupportedSweep as exc:
            log.warning("skipping %s=%s on %s: %s", sweep, value, domain, exc)
            continue
        instances = generate_dataset(domain, count, seed, fc, workers)
        records = evaluate(instances, task, backend, cfg, parallel)
        if not records:
            log.warning("skipping %s=%s on %s: no %s questions", sweep, value, domain, task)
            continue
        bundles.append(summarize(records, instances, domain, params={sweep: value}))
    return bundles
