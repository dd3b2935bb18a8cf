"""Flow run execution behind a backend abstraction, plus the parallel scheduler.

Two backends ship: a subprocess backend that launches the real external
flow binary in its own working directory, and a simulated backend whose
closed-form PPA model (coefficients in a versioned model file) makes
desk-scale optimization experiments deterministic and fast.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import signal
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from importlib import resources
from pathlib import Path

from .errors import (
    BackendNotFound,
    FlowTimeout,
    ParameterOutOfRange,
    RunDirectoryConflict,
)
from .metrics import FlowErrorRecord, RunMetrics, parse_run_artifacts, write_metrics_json
from .registry import FLOW_STAGES, ParameterRegistry, load_registry


@dataclass(frozen=True)
class FlowConfig:
    """One flow run's parameter map plus design identity."""

    design_name: str
    parameters: tuple[tuple[str, object], ...]  # ordered (name, value) pairs
    source_files: tuple[str, ...] = ()
    pdk_id: str = "sky130A"

    def __post_init__(self):
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", self.design_name):
            raise ValueError(f"design_name {self.design_name!r} is not an identifier")

    @classmethod
    def of(cls, design_name: str, parameters: dict, source_files=(),
           pdk_id: str = "sky130A") -> "FlowConfig":
        return cls(design_name=design_name,
                   parameters=tuple(parameters.items()),
                   source_files=tuple(str(p) for p in source_files),
                   pdk_id=pdk_id)

    @property
    def param_map(self) -> dict:
        return dict(self.parameters)

    def with_changes(self, changes: dict) -> "FlowConfig":
        merged = self.param_map
        merged.update(changes)
        return FlowConfig.of(self.design_name, merged, self.source_files, self.pdk_id)

    def content_hash(self) -> str:
        blob = json.dumps({"design": self.design_name,
                           "parameters": sorted(self.param_map.items(), key=str),
                           "pdk": self.pdk_id}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_dict(self) -> dict:
        return {"design_name": self.design_name, "parameters": self.param_map,
                "source_files": list(self.source_files), "pdk_id": self.pdk_id}

    @classmethod
    def from_dict(cls, raw: dict) -> "FlowConfig":
        return cls.of(raw["design_name"], raw["parameters"],
                      raw.get("source_files", ()), raw.get("pdk_id", "sky130A"))


JOB_STATUSES = ("queued", "running", "succeeded", "failed")
_ALLOWED_TRANSITIONS = {("queued", "running"), ("running", "succeeded"),
                        ("running", "failed")}


@dataclass
class RunJob:
    job_id: str
    config: FlowConfig
    run_directory: str
    status: str = "queued"
    started_at: float | None = None
    finished_at: float | None = None
    metrics: RunMetrics | None = None
    errors: list[FlowErrorRecord] = field(default_factory=list)

    def transition(self, status: str) -> None:
        if (self.status, status) not in _ALLOWED_TRANSITIONS:
            raise ValueError(f"illegal status transition {self.status} -> {status}")
        self.status = status


# ---------------------------------------------------------------------------
# simulated backend

class SimulatedModel:
    """Closed-form PPA model; all coefficients come from the model file."""

    def __init__(self, path: str | Path | None = None):
        if path is None:
            text = resources.files("fabflow.data").joinpath("sim_model.json").read_text()
        else:
            text = Path(path).read_text()
        self.raw = json.loads(text)

    def _design_coeffs(self, design_name: str) -> dict:
        return self.raw["designs"].get(design_name, self.raw["default_design"])

    def ppa(self, config: FlowConfig, registry: ParameterRegistry) -> RunMetrics:
        params = dict(registry.defaults(), **config.param_map)
        registry.validate_config(config.param_map)
        coeffs = self._design_coeffs(config.design_name)

        util = float(params["FP_CORE_UTIL"])
        density = float(params["PL_TARGET_DENSITY"])
        strategy = params["SYNTH_STRATEGY"]
        clock_ns = float(params["CLOCK_PERIOD"])

        util_factor = util / self.raw["area_util_ref_pct"]  # increasing in util
        area = (coeffs["base_area_um2"] / util_factor
                * self.raw["strategy_area_factor"][strategy])
        delay = coeffs["intrinsic_delay_ps"] * self.raw["strategy_delay_factor"][strategy]
        if density > self.raw["density_knee"]:
            delay += self.raw["density_delay_penalty_ps"]
        power = (self.raw["power_alpha_uw_per_um2"] * area
                 + self.raw["power_beta_uw_ps"] / delay)
        clock_ps = clock_ns * 1000.0
        setup_slack = clock_ps - delay
        drc = 0
        threshold = self.raw["drc_density_threshold"]
        if density > threshold:
            drc = math.ceil((density - threshold) * 100) * self.raw["drc_per_centile_over"]
        die_area = area / (util / 100.0)
        side = math.sqrt(die_area)
        return RunMetrics(
            design_name=config.design_name,
            area_um2=area,
            die_width_um=side,
            die_height_um=side,
            critical_path_delay_ps=delay,
            clock_period_ps=clock_ps,
            worst_setup_slack_ps=setup_slack,
            worst_hold_slack_ps=self.raw["hold_slack_ps"],
            power_uw=power,
            placement_utilization_pct=util,
            drc_violation_count=drc,
            lvs_error_count=0,
        )


def simulated_ppa(config: FlowConfig, model: SimulatedModel | None = None,
                  registry: ParameterRegistry | None = None) -> RunMetrics:
    """Deterministic PPA for a config; raises ParameterOutOfRange on bad values."""
    return (model or SimulatedModel()).ppa(config, registry or load_registry())


class SimulatedBackend:
    """Writes a canonical metrics.json produced by the closed-form model.

    ``failure_plan`` injects failures: a list consumed in run order whose
    entries are either None (succeed) or a flow stage name (fail there).
    ``fail_stage`` fails every run at the given stage.
    """

    default_timeout_s = 60.0

    def __init__(self, model: SimulatedModel | None = None,
                 registry: ParameterRegistry | None = None,
                 duration_s: float = 0.0, fail_stage: str | None = None,
                 failure_plan: list[str | None] | None = None):
        self.model = model or SimulatedModel()
        self.registry = registry or load_registry()
        self.duration_s = duration_s
        self.fail_stage = fail_stage
        self._failure_plan = list(failure_plan) if failure_plan else None
        self._lock = threading.Lock()
        self._running = 0
        self.high_water_mark = 0

    def _next_failure(self) -> str | None:
        if self._failure_plan is not None:
            with self._lock:
                if self._failure_plan:
                    return self._failure_plan.pop(0)
            return None
        return self.fail_stage

    def run(self, config: FlowConfig, run_directory: Path) -> int:
        with self._lock:
            self._running += 1
            self.high_water_mark = max(self.high_water_mark, self._running)
        try:
            if self.duration_s:
                time.sleep(self.duration_s)
            fail_stage = self._next_failure()
            if fail_stage:
                log = run_directory / f"{fail_stage}.log"
                log.write_text(f"[ERROR] SIMFAIL: injected failure at {fail_stage}\n")
                return 1
            metrics = self.model.ppa(config, self.registry)
            write_metrics_json(metrics, run_directory / "metrics.json")
            return 0
        finally:
            with self._lock:
                self._running -= 1


# ---------------------------------------------------------------------------
# subprocess backend

class SubprocessBackend:
    """Launches the external flow binary as a child process.

    The flow's native configuration (a JSON map of parameters) is written
    into the run directory; stdout/stderr are captured to ``flow.log``.
    On timeout the whole process group is killed and a synthetic error
    record is written for the last stage observed in the log.
    """

    default_timeout_s = 3600.0

    def __init__(self, flow_command: list[str], pdk_root: str | None = None,
                 env: dict | None = None):
        if not flow_command:
            raise BackendNotFound("empty flow command")
        self.flow_command = list(flow_command)
        self.pdk_root = pdk_root
        self.env = dict(env or {})

    def run(self, config: FlowConfig, run_directory: Path,
            timeout_s: float = default_timeout_s) -> int:
        binary = self.flow_command[0]
        from shutil import which
        if which(binary) is None and not Path(binary).exists():
            raise BackendNotFound(f"flow binary {binary!r} not found")
        (run_directory / "config.json").write_text(
            json.dumps(dict(config.param_map, DESIGN_NAME=config.design_name,
                            VERILOG_FILES=list(config.source_files)),
                       indent=2, default=str))
        env = dict(os.environ, **self.env)
        if self.pdk_root:
            env["PDK_ROOT"] = self.pdk_root
            env["PDK"] = config.pdk_id
        log_path = run_directory / "flow.log"
        with open(log_path, "w") as log:
            proc = subprocess.Popen(
                self.flow_command + [str(run_directory / "config.json")],
                cwd=run_directory, stdout=log, stderr=subprocess.STDOUT,
                env=env, start_new_session=True)
            try:
                return proc.wait(timeout=timeout_s)
            except subprocess.TimeoutExpired:
                os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
                proc.wait()
                stage = _last_stage_in_log(log_path)
                with open(log_path, "a") as f:
                    f.write(f"[ERROR] TIMEOUT: wall limit {timeout_s}s exceeded "
                            f"during {stage}\n")
                return 124


def _last_stage_in_log(log_path: Path) -> str:
    last = "synthesis"
    try:
        for line in log_path.read_text(errors="ignore").splitlines():
            lowered = line.lower()
            for stage in FLOW_STAGES:
                if stage in lowered:
                    last = stage
    except OSError:
        pass
    return last


# ---------------------------------------------------------------------------
# execution and scheduling

def _ensure_run_directory(run_directory: Path) -> None:
    if run_directory.exists() and any(run_directory.iterdir()):
        raise RunDirectoryConflict(f"{run_directory} exists and is not empty")
    run_directory.mkdir(parents=True, exist_ok=True)


def execute(backend, config: FlowConfig, run_directory: str | Path,
            registry: ParameterRegistry | None = None,
            timeout_s: float | None = None) -> tuple[RunMetrics, list[FlowErrorRecord]]:
    """Run one flow job and parse its artifacts.

    Flow-level failure (nonzero exit) is reported through FlowErrorRecords,
    never as an exception; exceptions are reserved for precondition and
    infrastructure problems.
    """
    registry = registry or load_registry()
    registry.validate_config(config.param_map)
    run_directory = Path(run_directory)
    _ensure_run_directory(run_directory)
    if timeout_s is None:
        timeout_s = getattr(backend, "default_timeout_s", 3600.0)
    if isinstance(backend, SubprocessBackend):
        backend.run(config, run_directory, timeout_s=timeout_s)
    else:
        backend.run(config, run_directory)
    metrics, errors = parse_run_artifacts(run_directory)
    if metrics.design_name != config.design_name:
        metrics = RunMetrics.from_dict(
            dict(metrics.to_dict(), design_name=config.design_name))
    return metrics, errors


def make_job_id(ordinal: int, config: FlowConfig) -> str:
    return f"{ordinal:03d}-{config.content_hash()[:8]}"


def run_parallel(backend, configs: list[FlowConfig], parallelism: int,
                 run_root: str | Path, registry: ParameterRegistry | None = None,
                 timeout_s: float | None = None, on_status=None,
                 start_ordinal: int = 0) -> list[RunJob]:
    """Execute configs with at most ``parallelism`` concurrent jobs.

    Result order matches input order; one job's failure never cancels
    siblings. ``on_status`` (if given) receives each job after every status
    change, serialized under a single lock.
    """
    if not configs:
        raise ValueError("configs must be non-empty")
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    registry = registry or load_registry()
    run_root = Path(run_root)
    status_lock = threading.Lock()

    def notify(job: RunJob) -> None:
        if on_status is not None:
            with status_lock:
                on_status(job)

    jobs = []
    for i, config in enumerate(configs):
        job_id = make_job_id(start_ordinal + i, config)
        run_dir = run_root / config.design_name / job_id
        jobs.append(RunJob(job_id=job_id, config=config, run_directory=str(run_dir)))

    def work(job: RunJob) -> None:
        job.started_at = time.time()
        job.transition("running")
        notify(job)
        try:
            metrics, errors = execute(backend, job.config, job.run_directory,
                                      registry=registry, timeout_s=timeout_s)
            job.metrics = metrics
            job.errors = errors
            job.transition("failed" if errors else "succeeded")
        except Exception as e:  # job isolation: record, never propagate
            job.errors = [FlowErrorRecord(stage="synthesis", code="EXEC",
                                          message=str(e), log_path="")]
            job.transition("failed")
        finally:
            job.finished_at = time.time()
            notify(job)

    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = [pool.submit(work, job) for job in jobs]
        for future in futures:
            future.result()
    return jobs


def bench_parallel(n_jobs: int = 20, duration_s: float = 0.5,
                   parallelism: int = 4, run_root: str | Path | None = None) -> dict:
    """Measure the wall-clock speedup of parallel vs sequential scheduling
    on fixed-duration simulated jobs."""
    import tempfile
    registry = load_registry()
    configs = [FlowConfig.of("bench", {"FP_CORE_UTIL": 40 + (i % 40)})
               for i in range(n_jobs)]

    def timed(p: int, tag: str) -> tuple[float, int]:
        backend = SimulatedBackend(duration_s=duration_s, registry=registry)
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(run_root) / tag if run_root else Path(tmp)
            started = time.monotonic()
            run_parallel(backend, configs, p, root, registry=registry)
            return time.monotonic() - started, backend.high_water_mark

    sequential_s, hwm_1 = timed(1, "p1")
    parallel_s, hwm_p = timed(parallelism, f"p{parallelism}")
    return {
        "jobs": n_jobs,
        "duration_s": duration_s,
        "parallelism": parallelism,
        "sequential_wall_s": sequential_s,
        "parallel_wall_s": parallel_s,
        "speedup": sequential_s / parallel_s,
        "high_water_mark_sequential": hwm_1,
        "high_water_mark_parallel": hwm_p,
    }
