"""Pipeline state machine: prompt -> plan -> HDL -> verify -> baseline ->
detect/retrieve/fix/optimize loop -> best design.

State is persisted per design as an append-only JSONL event log plus one
snapshot per completed round, which gives crash-resume: restarting from the
store continues with identical behavior under mock backends (gateway call
cursors are recorded in the snapshot and replayed into the mock provider).
"""

from __future__ import annotations

import itertools
import json
import threading
import time
from dataclasses import dataclass, field, asdict
from decimal import Decimal
from pathlib import Path

from . import agents, ragstore
from .agents import AgentContext, DesignSpec, FixProposal, HdlArtifact
from .errors import (
    DivisionByZeroBaseline,
    FabflowError,
    NoViableCandidates,
)
from .flowexec import FlowConfig, RunJob, run_parallel
from .gateway import CostSummary, accumulate_cost
from .issues import DetectionThresholds, IssueSet, detect
from .metrics import RunMetrics
from .ragstore import IndexHandle, build_index
from .registry import ParameterRegistry, load_registry

SCHEMA_VERSION = 1

PHASES = ("planning", "generating", "verifying", "baselining", "optimizing",
          "done", "aborted")

PRIORITY_WEIGHTS = {
    "area": (0.6, 0.2, 0.2),
    "delay": (0.2, 0.6, 0.2),
    "power": (0.2, 0.2, 0.6),
    "balanced": (1 / 3, 1 / 3, 1 / 3),
}

STALE_IMPROVEMENT_FRACTION = 0.001  # round must improve best cost by >= 0.1%


@dataclass(frozen=True)
class OptimizationGoal:
    priority: str = "balanced"
    weights: tuple[float, float, float] = PRIORITY_WEIGHTS["balanced"]
    stop_after_runs: int = 100
    stop_after_stale_rounds: int = 3

    def __post_init__(self):
        if self.priority not in PRIORITY_WEIGHTS:
            raise ValueError(f"unknown priority {self.priority!r}")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be non-negative")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")
        if self.stop_after_runs < 1 or self.stop_after_stale_rounds < 1:
            raise ValueError("stop caps must be positive")

    @classmethod
    def preset(cls, priority: str, stop_after_runs: int = 100,
               stop_after_stale_rounds: int = 3) -> "OptimizationGoal":
        return cls(priority=priority, weights=PRIORITY_WEIGHTS[priority],
                   stop_after_runs=stop_after_runs,
                   stop_after_stale_rounds=stop_after_stale_rounds)

    def priority_dimensions(self) -> list[str]:
        if self.priority == "balanced":
            return ["area", "delay", "power"]
        return [self.priority]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "OptimizationGoal":
        return cls(priority=raw["priority"], weights=tuple(raw["weights"]),
                   stop_after_runs=raw["stop_after_runs"],
                   stop_after_stale_rounds=raw["stop_after_stale_rounds"])


def scalar_cost(metrics: RunMetrics, goal: OptimizationGoal,
                baseline: RunMetrics) -> float:
    """Weighted normalized PPA cost; the baseline scores exactly 1."""
    for name in ("area_um2", "critical_path_delay_ps", "power_uw"):
        base = getattr(baseline, name)
        if base is None or base == 0:
            raise DivisionByZeroBaseline(f"baseline {name} is {base}")
    w_area, w_delay, w_power = goal.weights
    return (w_area * (metrics.area_um2 / baseline.area_um2)
            + w_delay * (metrics.critical_path_delay_ps / baseline.critical_path_delay_ps)
            + w_power * (metrics.power_uw / baseline.power_uw))


# ---------------------------------------------------------------------------
# history

@dataclass(frozen=True)
class HistoryEntry:
    job_id: str
    config: FlowConfig
    status: str
    metrics: RunMetrics | None
    issues: IssueSet
    origin: str  # "baseline", "fix", "optimizer", ...
    proposal: dict | None
    scalar_cost: float | None

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "config": self.config.to_dict(),
            "status": self.status,
            "metrics": self.metrics.to_dict() if self.metrics else None,
            "issues": [i.to_dict() for i in self.issues],
            "origin": self.origin,
            "proposal": self.proposal,
            "scalar_cost": self.scalar_cost,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "HistoryEntry":
        from .issues import Issue
        return cls(
            job_id=raw["job_id"],
            config=FlowConfig.from_dict(raw["config"]),
            status=raw["status"],
            metrics=RunMetrics.from_dict(raw["metrics"]) if raw["metrics"] else None,
            issues=IssueSet.of(Issue(**i) for i in raw["issues"]),
            origin=raw["origin"],
            proposal=raw["proposal"],
            scalar_cost=raw["scalar_cost"],
        )


class OptimizationHistory:
    """Append-only record of every flow run; tracks the best entry."""

    def __init__(self):
        self.entries: list[HistoryEntry] = []
        self.best_index: int | None = None

    def append(self, entry: HistoryEntry) -> None:
        self.entries.append(entry)
        if entry.scalar_cost is not None and entry.status == "succeeded":
            if (self.best_index is None
                    or entry.scalar_cost < self.entries[self.best_index].scalar_cost):
                self.best_index = len(self.entries) - 1

    @property
    def best(self) -> HistoryEntry | None:
        return None if self.best_index is None else self.entries[self.best_index]

    def tried_hashes(self) -> set[str]:
        return {e.config.content_hash() for e in self.entries}

    def render_lines(self) -> list[str]:
        lines = []
        for i, e in enumerate(self.entries):
            cost = f"{e.scalar_cost:.4f}" if e.scalar_cost is not None else "n/a"
            lines.append(f"- run {i} [{e.origin}] {e.status}, cost {cost}, "
                         f"job {e.job_id}")
        return lines

    def to_dict(self) -> dict:
        return {"entries": [e.to_dict() for e in self.entries],
                "best_index": self.best_index}

    @classmethod
    def from_dict(cls, raw: dict) -> "OptimizationHistory":
        history = cls()
        history.entries = [HistoryEntry.from_dict(e) for e in raw["entries"]]
        history.best_index = raw["best_index"]
        return history


# ---------------------------------------------------------------------------
# pipeline state

@dataclass
class PipelineState:
    design_id: str
    phase: str = "planning"
    spec: DesignSpec | None = None
    hdl: HdlArtifact | None = None
    incumbent_config: FlowConfig | None = None
    baseline_metrics: RunMetrics | None = None
    history: OptimizationHistory = field(default_factory=OptimizationHistory)
    goal: OptimizationGoal = field(default_factory=OptimizationGoal)
    round_index: int = 0
    runs_done: int = 0
    stale_rounds: int = 0
    abort_cause: str | None = None
    ledger: list[dict] = field(default_factory=list)  # gateway results
    gateway_tag_counts: dict = field(default_factory=dict)

    def set_phase(self, phase: str) -> None:
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        self.phase = phase

    def cost_summary(self) -> CostSummary:
        total = Decimal(0)
        per_tag: dict[str, Decimal] = {}
        for entry in self.ledger:
            cost = Decimal(entry["cost_usd"])
            total += cost
            per_tag[entry["tag"]] = per_tag.get(entry["tag"], Decimal(0)) + cost
        return CostSummary(total_usd=total, per_tag=per_tag)

    def record_gateway_results(self, results) -> None:
        for result in results:
            self.ledger.append({
                "tag": result.tag,
                "cost_usd": str(result.cost_usd),
                "input_tokens": result.input_tokens,
                "output_tokens": result.output_tokens,
            })
            self.gateway_tag_counts[result.tag] = \
                self.gateway_tag_counts.get(result.tag, 0) + 1

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "design_id": self.design_id,
            "phase": self.phase,
            "spec": self.spec.to_dict() if self.spec else None,
            "hdl": self.hdl.to_dict() if self.hdl else None,
            "incumbent_config": (self.incumbent_config.to_dict()
                                 if self.incumbent_config else None),
            "baseline_metrics": (self.baseline_metrics.to_dict()
                                 if self.baseline_metrics else None),
            "history": self.history.to_dict(),
            "goal": self.goal.to_dict(),
            "round_index": self.round_index,
            "runs_done": self.runs_done,
            "stale_rounds": self.stale_rounds,
            "abort_cause": self.abort_cause,
            "ledger": self.ledger,
            "gateway_tag_counts": self.gateway_tag_counts,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineState":
        state = cls(design_id=raw["design_id"])
        state.phase = raw["phase"]
        state.spec = DesignSpec.from_dict(raw["spec"]) if raw["spec"] else None
        state.hdl = HdlArtifact.from_dict(raw["hdl"]) if raw["hdl"] else None
        state.incumbent_config = (FlowConfig.from_dict(raw["incumbent_config"])
                                  if raw["incumbent_config"] else None)
        state.baseline_metrics = (RunMetrics.from_dict(raw["baseline_metrics"])
                                  if raw["baseline_metrics"] else None)
        state.history = OptimizationHistory.from_dict(raw["history"])
        state.goal = OptimizationGoal.from_dict(raw["goal"])
        state.round_index = raw["round_index"]
        state.runs_done = raw["runs_done"]
        state.stale_rounds = raw["stale_rounds"]
        state.abort_cause = raw["abort_cause"]
        state.ledger = list(raw["ledger"])
        state.gateway_tag_counts = dict(raw["gateway_tag_counts"])
        return state


# ---------------------------------------------------------------------------
# persistence

class StateStore:
    """Append-only event log + per-round snapshots under state/<design>/."""

    def __init__(self, root: str | Path, design_id: str):
        self.dir = Path(root) / design_id
        self.dir.mkdir(parents=True, exist_ok=True)
        self.events_path = self.dir / "events.jsonl"
        self._lock = threading.Lock()
        self._seq = self._last_seq()
        self._listeners: list = []

    def _last_seq(self) -> int:
        if not self.events_path.exists():
            return 0
        last = 0
        for line in self.events_path.read_text().splitlines():
            if line.strip():
                last = json.loads(line)["seq"]
        return last

    def subscribe(self, callback) -> None:
        with self._lock:
            self._listeners.append(callback)

    def unsubscribe(self, callback) -> None:
        with self._lock:
            if callback in self._listeners:
                self._listeners.remove(callback)

    def append_event(self, event_type: str, data: dict) -> dict:
        with self._lock:
            self._seq += 1
            event = {"schema_version": SCHEMA_VERSION, "seq": self._seq,
                     "ts": time.time(), "type": event_type, "data": data}
            with open(self.events_path, "a") as f:
                f.write(json.dumps(event, default=str) + "\n")
            listeners = list(self._listeners)
        for callback in listeners:
            callback(event)
        return event

    def events(self, after_seq: int = 0) -> list[dict]:
        if not self.events_path.exists():
            return []
        out = []
        for line in self.events_path.read_text().splitlines():
            if line.strip():
                event = json.loads(line)
                if event["seq"] > after_seq:
                    out.append(event)
        return out

    def write_snapshot(self, state: PipelineState) -> Path:
        path = self.dir / f"snapshot-{state.round_index:04d}.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(state.to_dict(), indent=2, default=str))
        tmp.rename(path)
        return path

    def load_latest_snapshot(self) -> PipelineState | None:
        snapshots = sorted(self.dir.glob("snapshot-*.json"))
        if not snapshots:
            return None
        return PipelineState.from_dict(json.loads(snapshots[-1].read_text()))


# ---------------------------------------------------------------------------
# backend bundle

@dataclass
class BackendSet:
    provider: object
    flow_backend: object
    lint_backend: object
    answer_source: object
    registry: ParameterRegistry = field(default_factory=load_registry)
    index: IndexHandle | None = None
    corpus_dir: str | None = None
    optimizer: object | None = None  # defaults to the LLM optimizer
    thresholds: DetectionThresholds = field(default_factory=DetectionThresholds)
    parallelism: int = 4
    retrieval_depth: int = ragstore.DEFAULT_RETRIEVAL_DEPTH
    budget_chars: int = ragstore.DEFAULT_BUDGET_CHARS
    run_root: str = "runs"
    state_root: str = "state"
    baseline_fix_attempts: int = 5
    abort_event: threading.Event | None = None

    def ensure_index(self) -> IndexHandle:
        if self.index is None:
            if self.corpus_dir is None:
                from importlib import resources
                self.corpus_dir = str(resources.files("fabflow.data") / "corpus")
            self.index = build_index(self.corpus_dir)
        return self.index


class LlmOptimizer:
    """Default optimizer: asks the model for candidate configurations."""

    def propose(self, payload, goal, k, context, registry, incumbent,
                tried_hashes) -> list[FlowConfig]:
        return agents.propose_optimizations(
            payload, goal, k, context, registry, incumbent, tried_hashes)


class GridOptimizer:
    """Exhaustive-grid mock optimizer: proposes untried grid points in a
    fixed deterministic order. Used by the oracle-optimality suite."""

    def __init__(self, grid: dict[str, list]):
        self.grid = {name: list(values) for name, values in grid.items()}

    def points(self) -> list[dict]:
        names = list(self.grid)
        return [dict(zip(names, combo))
                for combo in itertools.product(*(self.grid[n] for n in names))]

    def propose(self, payload, goal, k, context, registry, incumbent,
                tried_hashes) -> list[FlowConfig]:
        candidates = []
        seen = set(tried_hashes)
        for point in self.points():
            candidate = incumbent.with_changes(point)
            digest = candidate.content_hash()
            if digest in seen:
                continue
            seen.add(digest)
            candidates.append(candidate)
            if len(candidates) == k:
                break
        if not candidates:
            raise NoViableCandidates("grid exhausted")
        return candidates


# ---------------------------------------------------------------------------
# pipeline driver

class _EventingAnswerSource:
    """Wraps an answer source so planner Q&A lands in the event log."""

    def __init__(self, inner, store: StateStore):
        self.inner = inner
        self.store = store
        self._counter = 0

    def answer(self, question: str) -> str:
        self._counter += 1
        qid = self._counter
        self.store.append_event("question", {"question_id": qid,
                                             "question": question})
        answer = self.inner.answer(question)
        self.store.append_event("answer", {"question_id": qid, "answer": answer})
        return answer


def derive_initial_config(spec: DesignSpec, backends: BackendSet,
                          source_files=()) -> FlowConfig:
    """Registry defaults refined by retrieval over the design description.

    Prior-config chunks matched by the description contribute any
    'PARAM = value' assignments whose keys are registered.
    """
    import re as _re
    registry = backends.registry
    params = registry.defaults()
    index = backends.ensure_index()
    query = ragstore.Query(text=f"{spec.name} {spec.functional_description}")
    retrieved = ragstore.retrieve(index, [query], n=backends.retrieval_depth)
    assign_re = _re.compile(r"([A-Z][A-Z0-9_]+)\s*=\s*([^,;\n]+)")
    for chunk, score in retrieved.entries:
        if chunk.kind != "prior_config" or score <= 0:
            continue
        for name, raw_value in assign_re.findall(chunk.body):
            if name not in registry:
                continue
            definition = registry.get(name)
            value: object = raw_value.strip()
            try:
                if definition.type == "int":
                    value = int(float(value))
                elif definition.type == "real":
                    value = float(value)
                elif definition.type == "bool":
                    value = value.lower() in ("true", "1", "yes")
                definition.validate(value)
            except Exception:
                continue
            params[name] = value
        break  # best-scoring prior config only
    return FlowConfig.of(spec.name, params, source_files=source_files)


def _record_run(state: PipelineState, store: StateStore, job: RunJob,
                origin: str, proposal: dict | None,
                goal: OptimizationGoal, thresholds: DetectionThresholds) -> HistoryEntry:
    issues = IssueSet.of([])
    cost = None
    if job.metrics is not None:
        issues = detect(job.metrics, job.errors, thresholds)
        if job.status == "succeeded" and state.baseline_metrics is not None:
            cost = scalar_cost(job.metrics, goal, state.baseline_metrics)
    entry = HistoryEntry(job_id=job.job_id, config=job.config, status=job.status,
                         metrics=job.metrics, issues=issues, origin=origin,
                         proposal=proposal, scalar_cost=cost)
    state.history.append(entry)
    state.runs_done += 1
    store.append_event("run_metrics", {
        "job_id": job.job_id,
        "status": job.status,
        "origin": origin,
        "metrics": job.metrics.to_dict() if job.metrics else None,
        "scalar_cost": cost,
        "issues": [i.to_dict() for i in issues],
    })
    return entry


def _set_phase(state: PipelineState, store: StateStore, phase: str) -> None:
    state.set_phase(phase)
    store.append_event("phase", {"phase": phase})


def _aborted(state: PipelineState, store: StateStore, cause: Exception | str) -> PipelineState:
    state.abort_cause = f"{type(cause).__name__}: {cause}" if isinstance(
        cause, Exception) else str(cause)
    _set_phase(state, store, "aborted")
    store.write_snapshot(state)
    return state


def _check_abort(backends: BackendSet) -> bool:
    return backends.abort_event is not None and backends.abort_event.is_set()


def _assemble_round_payload(state: PipelineState, backends: BackendSet,
                            entry: HistoryEntry):
    issues = entry.issues
    queries = ragstore.formulate_queries(issues, entry.config, state.goal)
    index = backends.ensure_index()
    retrieved = (ragstore.retrieve(index, queries, n=backends.retrieval_depth)
                 if queries else None)
    payload = ragstore.assemble_prompt(
        entry.metrics, [], state.history, entry.config, retrieved,
        goal=state.goal, budget_chars=backends.budget_chars)
    return issues, retrieved, payload


def optimize_round(state: PipelineState, backends: BackendSet, store: StateStore,
                   context: AgentContext, k: int) -> bool:
    """One detect/retrieve/propose/run round. Returns True if stale."""
    best_before = state.history.best
    assert best_before is not None and best_before.metrics is not None
    issues, retrieved, payload = _assemble_round_payload(state, backends, best_before)

    optimizer = backends.optimizer or LlmOptimizer()
    try:
        candidates = optimizer.propose(
            payload, state.goal, k, context, backends.registry,
            state.incumbent_config, state.history.tried_hashes())
    except NoViableCandidates:
        state.stale_rounds += 1
        state.round_index += 1
        store.append_event("round", {"round": state.round_index, "stale": True,
                                     "reason": "no viable candidates",
                                     "runs_done": state.runs_done})
        store.write_snapshot(state)
        return True

    jobs = run_parallel(
        backends.flow_backend, candidates, backends.parallelism,
        Path(backends.run_root), registry=backends.registry,
        start_ordinal=state.runs_done,
        on_status=lambda job: store.append_event(
            "job_status", {"job_id": job.job_id, "status": job.status}))
    state.record_gateway_results(context.results)
    context.results.clear()

    cost_before = best_before.scalar_cost
    for job in jobs:
        _record_run(state, store, job, origin="optimizer", proposal=None,
                    goal=state.goal, thresholds=backends.thresholds)

    best_after = state.history.best
    improved = (best_after.scalar_cost is not None and cost_before is not None
                and best_after.scalar_cost
                < cost_before * (1 - STALE_IMPROVEMENT_FRACTION))
    stale = not improved
    if stale:
        state.stale_rounds += 1
    else:
        state.stale_rounds = 0
    state.incumbent_config = best_after.config
    state.round_index += 1
    store.append_event("round", {
        "round": state.round_index, "stale": stale,
        "best_cost": best_after.scalar_cost, "runs_done": state.runs_done})
    store.write_snapshot(state)
    return stale


def _optimization_loop(state: PipelineState, backends: BackendSet,
                       store: StateStore, context: AgentContext) -> None:
    goal = state.goal
    while (state.runs_done < goal.stop_after_runs
           and state.stale_rounds < goal.stop_after_stale_rounds):
        if _check_abort(backends):
            raise _UserAbort()
        k = min(backends.parallelism, goal.stop_after_runs - state.runs_done)
        optimize_round(state, backends, store, context, k)


class _UserAbort(FabflowError):
    def __str__(self):
        return "abort requested"


def run_pipeline(prompt: str, goal: OptimizationGoal, backends: BackendSet,
                 design_id: str | None = None,
                 store: StateStore | None = None) -> PipelineState:
    """Execute all phases. Agent and backend failures become an aborted
    state with a recorded cause; this function does not raise for them.

    When ``design_id`` is given the store opens immediately and planner
    questions stream into the event log live (service mode); otherwise the
    design id is taken from the planned specification and the recorded Q&A
    is replayed into the log afterwards.
    """
    context = AgentContext(backends.provider)
    if design_id is not None:
        store = store or StateStore(backends.state_root, design_id)
        store.append_event("phase", {"phase": "planning"})
        answer_source = _EventingAnswerSource(backends.answer_source, store)
    else:
        answer_source = backends.answer_source

    try:
        spec = agents.plan(prompt, answer_source, context)
    except FabflowError as e:
        state = PipelineState(design_id=design_id or "unplanned")
        if store is None:
            store = StateStore(backends.state_root, state.design_id)
            store.append_event("phase", {"phase": "planning"})
        state.record_gateway_results(context.results)
        context.results.clear()
        return _aborted(state, store, e)

    state = PipelineState(design_id=design_id or spec.name, goal=goal)
    state.spec = spec
    if store is None:
        store = StateStore(backends.state_root, state.design_id)
        store.append_event("phase", {"phase": "planning"})
        # replay planner Q&A into the log for UI reconstruction
        for qid, (q, a) in enumerate(spec.clarifications, start=1):
            store.append_event("question", {"question_id": qid, "question": q})
            store.append_event("answer", {"question_id": qid, "answer": a})
    state.record_gateway_results(context.results)
    context.results.clear()

    try:
        if _check_abort(backends):
            raise _UserAbort()
        _set_phase(state, store, "generating")
        hdl = agents.generate_hdl(spec, context)
        state.record_gateway_results(context.results)
        context.results.clear()

        _set_phase(state, store, "verifying")
        hdl = agents.verify_hdl(hdl, backends.lint_backend, context)
        state.hdl = hdl
        state.record_gateway_results(context.results)
        context.results.clear()

        _set_phase(state, store, "baselining")
        config = derive_initial_config(
            spec, backends, source_files=[p for p, _ in hdl.source_files])
        baseline_entry = None
        pending_proposal: dict | None = None
        for attempt in range(backends.baseline_fix_attempts):
            if _check_abort(backends):
                raise _UserAbort()
            jobs = run_parallel(
                backends.flow_backend, [config], 1, Path(backends.run_root),
                registry=backends.registry, start_ordinal=state.runs_done,
                on_status=lambda job: store.append_event(
                    "job_status", {"job_id": job.job_id, "status": job.status}))
            job = jobs[0]
            if job.status == "succeeded":
                state.baseline_metrics = job.metrics
                baseline_entry = _record_run(
                    state, store, job, origin="baseline",
                    proposal=pending_proposal, goal=goal,
                    thresholds=backends.thresholds)
                break
            # flow failed: detect, retrieve, ask for a config fix, retry
            _record_run(state, store, job, origin="baseline-attempt",
                        proposal=pending_proposal, goal=goal,
                        thresholds=backends.thresholds)
            if attempt + 1 >= backends.baseline_fix_attempts:
                break
            issues = detect(job.metrics or RunMetrics(design_name=spec.name),
                            job.errors, backends.thresholds)
            queries = ragstore.formulate_queries(issues, config, goal)
            retrieved = ragstore.retrieve(backends.ensure_index(), queries,
                                          n=backends.retrieval_depth)
            payload = ragstore.assemble_prompt(
                job.metrics or RunMetrics(design_name=spec.name), job.errors,
                state.history, config, retrieved, goal=goal,
                budget_chars=backends.budget_chars)
            proposal = agents.propose_fix(issues, payload, context,
                                          backends.registry)
            pending_proposal = proposal.to_dict()
            if proposal.target == "flow_config":
                config = config.with_changes(
                    {key: new for key, _, new in proposal.changes})
            state.record_gateway_results(context.results)
            context.results.clear()
        state.record_gateway_results(context.results)
        context.results.clear()
        if baseline_entry is None:
            raise FabflowError(
                f"no successful baseline run within "
                f"{backends.baseline_fix_attempts} attempts")
        state.incumbent_config = baseline_entry.config
        store.write_snapshot(state)

        _set_phase(state, store, "optimizing")
        _optimization_loop(state, backends, store, context)

        _set_phase(state, store, "done")
        store.append_event("done", {"best_cost": state.history.best.scalar_cost,
                                    "runs_done": state.runs_done})
        store.write_snapshot(state)
        return state
    except FabflowError as e:
        state.record_gateway_results(context.results)
        context.results.clear()
        return _aborted(state, store, e)


def resume_pipeline(design_id: str, backends: BackendSet,
                    goal: OptimizationGoal | None = None) -> PipelineState:
    """Continue a persisted pipeline from its latest snapshot.

    With a mock provider, gateway cursors recorded in the snapshot are
    replayed so the resumed run consumes the script exactly where the
    interrupted run would have.
    """
    store = StateStore(backends.state_root, design_id)
    state = store.load_latest_snapshot()
    if state is None:
        raise FabflowError(f"no snapshot for design {design_id!r}")
    if goal is not None:
        state.goal = goal
    fast_forward = getattr(backends.provider, "fast_forward", None)
    if callable(fast_forward):
        fast_forward(state.gateway_tag_counts)
    context = AgentContext(backends.provider)
    try:
        if state.phase in ("optimizing", "done"):
            if state.phase == "done" and goal is None:
                return state
            _set_phase(state, store, "optimizing")
            _optimization_loop(state, backends, store, context)
            _set_phase(state, store, "done")
            store.append_event("done", {
                "best_cost": state.history.best.scalar_cost,
                "runs_done": state.runs_done})
            store.write_snapshot(state)
            return state
        raise FabflowError(
            f"cannot resume from phase {state.phase!r}; only optimization "
            "rounds are resumable")
    except FabflowError as e:
        state.record_gateway_results(context.results)
        return _aborted(state, store, e)


# ---------------------------------------------------------------------------
# corpus promotion

def promote_successful_chunks(state: PipelineState, corpus_dir: str | Path) -> list[str]:
    """Credit retrieval chunks cited by cost-improving fixes and serialize
    the winning configuration as a prior-config chunk. Returns bumped ids."""
    if state.phase != "done":
        raise FabflowError("promotion requires a completed pipeline")
    bumped: list[str] = []
    best_cost_so_far: float | None = None
    for entry in state.history.entries:
        if entry.scalar_cost is None:
            continue
        improved = best_cost_so_far is None or entry.scalar_cost < best_cost_so_far
        if improved:
            best_cost_so_far = entry.scalar_cost
            for chunk_id in (entry.proposal or {}).get("provenance_chunks", ()):
                ragstore.increment_reference_count(corpus_dir, chunk_id)
                bumped.append(chunk_id)
    best = state.history.best
    if best is not None:
        params = ", ".join(f"{k} = {v}" for k, v in best.config.parameters)
        description = state.spec.functional_description if state.spec else ""
        chunk = ragstore.DocChunk(
            id=f"prior_{state.design_id}",
            kind="prior_config",
            title=f"Prior config: {state.design_id}",
            body=(f"{state.design_id}: {description}\n"
                  f"Best configuration (scalar cost "
                  f"{best.scalar_cost:.4f}): {params}."),
            parameter_names=tuple(k for k, _ in best.config.parameters),
            reference_count=1,
        )
        ragstore.write_chunk(corpus_dir, chunk)
    return bumped
