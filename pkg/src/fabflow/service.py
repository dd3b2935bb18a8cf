"""HTTP service exposing designs, live event streams, and run metrics.

One design maps to one pipeline thread plus one on-disk state store. The
event stream is server-sent events (SSE) with the event sequence number as
the SSE id, so clients resume after a disconnect by passing the last seen
sequence (``?after=`` or the standard Last-Event-ID header).
"""

from __future__ import annotations

import json
import queue
import threading
import uuid
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse

from .errors import AnswerSourceClosed, DesignNotFound, FabflowError
from .metrics import read_metrics_json
from .orchestrator import (
    OptimizationGoal,
    PipelineState,
    StateStore,
    resume_pipeline,
    run_pipeline,
)

TERMINAL_PHASES = ("done", "aborted")

DEFAULT_ANSWER_TIMEOUT_S = 600.0


class QueueAnswerSource:
    """Blocks the planner until an answer arrives over HTTP.

    The pending question is exposed so the API can reject answers when no
    question is outstanding; abort or timeout unblocks the pipeline with
    AnswerSourceClosed, which the orchestrator turns into an aborted state.
    """

    def __init__(self, abort_event: threading.Event,
                 timeout_s: float = DEFAULT_ANSWER_TIMEOUT_S):
        self._queue: queue.Queue[str] = queue.Queue()
        self._abort = abort_event
        self._timeout_s = timeout_s
        self._lock = threading.Lock()
        self.pending_question: str | None = None

    def answer(self, question: str) -> str:
        with self._lock:
            self.pending_question = question
        try:
            waited = 0.0
            while waited < self._timeout_s:
                if self._abort.is_set():
                    raise AnswerSourceClosed("design aborted while waiting")
                try:
                    return self._queue.get(timeout=0.1)
                except queue.Empty:
                    waited += 0.1
            raise AnswerSourceClosed(
                f"no answer within {self._timeout_s}s for {question!r}")
        finally:
            with self._lock:
                self.pending_question = None

    def submit(self, answer: str) -> bool:
        with self._lock:
            if self.pending_question is None:
                return False
        self._queue.put(answer)
        return True


class DesignRecord:
    """Book-keeping for one design owned by the service."""

    def __init__(self, design_id: str, backends, store: StateStore,
                 goal: OptimizationGoal):
        self.design_id = design_id
        self.backends = backends
        self.store = store
        self.goal = goal
        self.thread: threading.Thread | None = None
        self.state: PipelineState | None = None

    @property
    def running(self) -> bool:
        return self.thread is not None and self.thread.is_alive()

    def phase(self) -> str:
        if self.state is not None and not self.running:
            return self.state.phase
        phase = "planning"
        for event in self.store.events():
            if event["type"] == "phase":
                phase = event["data"]["phase"]
        return phase


def _goal_from_doc(doc: dict | None) -> OptimizationGoal:
    doc = doc or {}
    return OptimizationGoal.preset(
        doc.get("priority", "balanced"),
        stop_after_runs=int(doc.get("stop_after_runs", 100)),
        stop_after_stale_rounds=int(doc.get("stop_after_stale_rounds", 3)))


def create_app(backends_factory, answer_timeout_s: float = DEFAULT_ANSWER_TIMEOUT_S,
               frontend_dist: str | Path | None = "frontend/dist") -> FastAPI:
    """Build the API around a per-design backend factory.

    ``backends_factory(design_id)`` must return a fresh BackendSet; the
    service installs its own abort event and queue-backed answer source.
    """
    app = FastAPI(title="fabflow", version="0.1.0")
    designs: dict[str, DesignRecord] = {}
    registry_lock = threading.Lock()

    def get_record(design_id: str) -> DesignRecord:
        with registry_lock:
            record = designs.get(design_id)
        if record is None:
            raise DesignNotFound(design_id)
        return record

    @app.exception_handler(DesignNotFound)
    async def design_not_found(request: Request, exc: DesignNotFound):
        return JSONResponse(status_code=404,
                            content={"error": f"unknown design {exc}"})

    @app.post("/designs", status_code=201)
    def create_design(body: dict):
        prompt = body.get("prompt", "")
        if not prompt:
            return JSONResponse(status_code=422,
                                content={"error": "prompt is required"})
        design_id = body.get("design_id") or f"d-{uuid.uuid4().hex[:12]}"
        with registry_lock:
            if design_id in designs:
                return JSONResponse(
                    status_code=409,
                    content={"error": f"design {design_id} already exists"})
            backends = backends_factory(design_id)
            backends.abort_event = threading.Event()
            backends.answer_source = QueueAnswerSource(
                backends.abort_event, timeout_s=answer_timeout_s)
            goal = _goal_from_doc(body.get("goal"))
            store = StateStore(backends.state_root, design_id)
            record = DesignRecord(design_id, backends, store, goal)
            designs[design_id] = record

        def work():
            record.state = run_pipeline(prompt, goal, backends,
                                        design_id=design_id, store=store)

        record.thread = threading.Thread(target=work, daemon=True,
                                         name=f"pipeline-{design_id}")
        record.thread.start()
        return {"design_id": design_id, "goal": goal.to_dict()}

    @app.get("/designs/{design_id}")
    def get_design(design_id: str):
        record = get_record(design_id)
        events = record.store.events()
        runs, best_cost = 0, None
        for event in events:
            if event["type"] == "run_metrics":
                runs += 1
                cost = event["data"].get("scalar_cost")
                if cost is not None and event["data"]["status"] == "succeeded":
                    best_cost = cost if best_cost is None else min(best_cost, cost)
        doc = {
            "design_id": design_id,
            "phase": record.phase(),
            "running": record.running,
            "goal": record.goal.to_dict(),
            "runs_done": runs,
            "best_cost": best_cost,
            "last_seq": events[-1]["seq"] if events else 0,
            "pending_question": record.backends.answer_source.pending_question,
            "abort_cause": record.state.abort_cause if record.state else None,
        }
        if record.state is not None:
            doc["cost"] = record.state.cost_summary().to_dict()
        return doc

    @app.post("/designs/{design_id}/answers")
    def post_answer(design_id: str, body: dict):
        record = get_record(design_id)
        answer = body.get("answer")
        if not isinstance(answer, str) or not answer:
            return JSONResponse(status_code=422,
                                content={"error": "answer is required"})
        if not record.backends.answer_source.submit(answer):
            return JSONResponse(status_code=409,
                                content={"error": "no question is pending"})
        return {"accepted": True}

    @app.post("/designs/{design_id}/goal")
    def post_goal(design_id: str, body: dict):
        record = get_record(design_id)
        if record.running:
            return JSONResponse(
                status_code=409,
                content={"error": "design is running; abort it first"})
        try:
            goal = _goal_from_doc(body)
        except (ValueError, TypeError) as e:
            return JSONResponse(status_code=422, content={"error": str(e)})
        record.goal = goal

        def work():
            try:
                record.state = resume_pipeline(design_id, record.backends,
                                               goal=goal)
            except FabflowError as e:
                record.store.append_event("error", {"message": str(e)})

        record.thread = threading.Thread(target=work, daemon=True,
                                         name=f"resume-{design_id}")
        record.thread.start()
        return {"design_id": design_id, "goal": goal.to_dict()}

    @app.post("/designs/{design_id}/abort")
    def post_abort(design_id: str):
        record = get_record(design_id)
        record.backends.abort_event.set()
        return {"design_id": design_id, "aborting": True}

    @app.get("/designs/{design_id}/events")
    def get_events(design_id: str, request: Request, after: int | None = None):
        record = get_record(design_id)
        if after is None:
            header = request.headers.get("last-event-id")
            after = int(header) if header and header.isdigit() else 0

        def stream():
            live: queue.Queue = queue.Queue()
            record.store.subscribe(live.put)
            try:
                cursor = after
                for event in record.store.events(after_seq=cursor):
                    cursor = event["seq"]
                    yield _sse(event)
                    if _is_terminal(event):
                        return
                if record.phase() in TERMINAL_PHASES and not record.running:
                    return
                while True:
                    try:
                        event = live.get(timeout=30.0)
                    except queue.Empty:
                        yield ": keepalive\n\n"
                        continue
                    if event["seq"] <= cursor:
                        continue
                    cursor = event["seq"]
                    yield _sse(event)
                    if _is_terminal(event):
                        return
            finally:
                record.store.unsubscribe(live.put)

        return StreamingResponse(stream(), media_type="text/event-stream")

    @app.get("/designs/{design_id}/runs/{job_id}/metrics")
    def get_run_metrics(design_id: str, job_id: str):
        record = get_record(design_id)
        run_root = Path(record.backends.run_root)
        for path in sorted(run_root.glob(f"*/{job_id}/metrics.json")):
            return read_metrics_json(path).to_dict()
        return JSONResponse(status_code=404,
                            content={"error": f"no metrics for job {job_id}"})

    dist = Path(frontend_dist) if frontend_dist else None
    if dist is not None and dist.is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(dist), html=True), name="ui")

    return app


def _is_terminal(event: dict) -> bool:
    """The 'done' summary event (or the aborted phase event) closes streams."""
    return event["type"] == "done" or (
        event["type"] == "phase" and event["data"].get("phase") == "aborted")


def _sse(event: dict) -> str:
    return (f"id: {event['seq']}\n"
            f"event: {event['type']}\n"
            f"data: {json.dumps(event, default=str)}\n\n")
