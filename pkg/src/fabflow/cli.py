"""Command-line interface: thin adapters over the library.

Every command reads the same TOML configuration (``--config``), validated
strictly: unknown keys are rejected and numeric settings are range-checked.
Failures map to exit codes by error family so scripts can branch on them;
see docs/cli.md for the table.
"""

from __future__ import annotations

import csv
import io
import json
import sys
import threading
from pathlib import Path

import click

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - version-dependent import
    import tomli as tomllib

from . import ragstore
from .agents import ScriptedAnswerSource, StubLint, VerilatorLint
from .errors import (
    AgentError,
    ConfigValidationError,
    DesignNotFound,
    FabflowError,
    FlowExecError,
    GatewayError,
    MetricsError,
    OrchestratorError,
    RagStoreError,
)
from .flowexec import SimulatedBackend, SubprocessBackend, bench_parallel
from .gateway import HttpProvider, MockProvider
from .metrics import compute_delta
from .orchestrator import (
    BackendSet,
    OptimizationGoal,
    StateStore,
    promote_successful_chunks,
    resume_pipeline,
    run_pipeline,
)
from .registry import load_registry

EXIT_OK = 0
EXIT_FAILURE = 1  # generic FabflowError / aborted pipeline
# click reserves 2 for usage errors
EXIT_METRICS = 3
EXIT_RAGSTORE = 4
EXIT_GATEWAY = 5
EXIT_AGENT = 6
EXIT_FLOWEXEC = 7
EXIT_ORCHESTRATOR = 8
EXIT_CONFIG = 9

_ERROR_EXIT_CODES = (
    (ConfigValidationError, EXIT_CONFIG),
    (MetricsError, EXIT_METRICS),
    (RagStoreError, EXIT_RAGSTORE),
    (GatewayError, EXIT_GATEWAY),
    (AgentError, EXIT_AGENT),
    (FlowExecError, EXIT_FLOWEXEC),
    (OrchestratorError, EXIT_ORCHESTRATOR),
    (FabflowError, EXIT_FAILURE),
)


def exit_code_for(error: Exception) -> int:
    for family, code in _ERROR_EXIT_CODES:
        if isinstance(error, family):
            return code
    return EXIT_FAILURE


def _fail(error: Exception) -> "click.exceptions.Exit":
    click.echo(f"error: {error}", err=True)
    return SystemExit(exit_code_for(error))


# ---------------------------------------------------------------------------
# configuration

_CONFIG_SCHEMA = {
    "provider": {"kind", "script_dir", "base_url", "model", "api_key_env"},
    "flow": {"kind", "command", "pdk_root", "duration_s", "timeout_s"},
    "lint": {"kind", "verilator_bin"},
    "paths": {"run_root", "state_root", "corpus_dir"},
    "optimization": {"parallelism", "retrieval_depth", "budget_chars",
                     "baseline_fix_attempts"},
}

_DEFAULT_CONFIG = {
    "provider": {"kind": "mock", "script_dir": None, "base_url": "",
                 "model": "", "api_key_env": "FABFLOW_API_KEY"},
    "flow": {"kind": "simulated", "command": [], "pdk_root": None,
             "duration_s": 0.0, "timeout_s": 3600.0},
    "lint": {"kind": "stub", "verilator_bin": "verilator"},
    "paths": {"run_root": "runs", "state_root": "state", "corpus_dir": None},
    "optimization": {"parallelism": 4, "retrieval_depth": 5,
                     "budget_chars": 24000, "baseline_fix_attempts": 5},
}

_RANGE_CHECKS = {
    ("optimization", "parallelism"): (1, 256),
    ("optimization", "retrieval_depth"): (1, 100),
    ("optimization", "budget_chars"): (1000, 10_000_000),
    ("optimization", "baseline_fix_attempts"): (1, 100),
    ("flow", "duration_s"): (0.0, 86400.0),
    ("flow", "timeout_s"): (0.1, 604800.0),
}


def load_config(path: str | None) -> dict:
    """Strictly validated TOML settings merged over built-in defaults."""
    config = {section: dict(values) for section, values in _DEFAULT_CONFIG.items()}
    if path is not None:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
        for section, values in raw.items():
            if section not in _CONFIG_SCHEMA:
                raise ConfigValidationError(section, "unknown section")
            if not isinstance(values, dict):
                raise ConfigValidationError(section, "expected a table")
            for key, value in values.items():
                if key not in _CONFIG_SCHEMA[section]:
                    raise ConfigValidationError(f"{section}.{key}", "unknown key")
                config[section][key] = value
    for (section, key), (lo, hi) in _RANGE_CHECKS.items():
        value = config[section][key]
        if not isinstance(value, (int, float)) or isinstance(value, bool) \
                or not (lo <= value <= hi):
            raise ConfigValidationError(
                f"{section}.{key}", f"must be a number in [{lo}, {hi}], got {value!r}")
    if config["provider"]["kind"] not in ("mock", "http"):
        raise ConfigValidationError("provider.kind", "must be 'mock' or 'http'")
    if config["flow"]["kind"] not in ("simulated", "subprocess"):
        raise ConfigValidationError("flow.kind",
                                    "must be 'simulated' or 'subprocess'")
    if config["lint"]["kind"] not in ("stub", "verilator"):
        raise ConfigValidationError("lint.kind", "must be 'stub' or 'verilator'")
    if config["flow"]["kind"] == "subprocess" and not config["flow"]["command"]:
        raise ConfigValidationError("flow.command",
                                    "required when flow.kind = 'subprocess'")
    return config


def build_backends(config: dict, answers: list[str] | None = None) -> BackendSet:
    provider_cfg = config["provider"]
    if provider_cfg["kind"] == "mock":
        provider = MockProvider(script_dir=provider_cfg["script_dir"])
    else:
        provider = HttpProvider(base_url=provider_cfg["base_url"],
                                model=provider_cfg["model"],
                                api_key_env=provider_cfg["api_key_env"])
    flow_cfg = config["flow"]
    if flow_cfg["kind"] == "simulated":
        flow_backend = SimulatedBackend(duration_s=flow_cfg["duration_s"])
    else:
        flow_backend = SubprocessBackend(list(flow_cfg["command"]),
                                         pdk_root=flow_cfg["pdk_root"])
    lint_cfg = config["lint"]
    lint_backend = (StubLint([[]]) if lint_cfg["kind"] == "stub"
                    else VerilatorLint(lint_cfg["verilator_bin"]))
    opt = config["optimization"]
    return BackendSet(
        provider=provider,
        flow_backend=flow_backend,
        lint_backend=lint_backend,
        answer_source=ScriptedAnswerSource(answers or []),
        corpus_dir=config["paths"]["corpus_dir"],
        parallelism=opt["parallelism"],
        retrieval_depth=opt["retrieval_depth"],
        budget_chars=opt["budget_chars"],
        baseline_fix_attempts=opt["baseline_fix_attempts"],
        run_root=config["paths"]["run_root"],
        state_root=config["paths"]["state_root"],
    )


def _goal_from_options(priority, runs, stale_rounds) -> OptimizationGoal:
    return OptimizationGoal.preset(priority, stop_after_runs=runs,
                                   stop_after_stale_rounds=stale_rounds)


def _state_summary(state) -> dict:
    best = state.history.best
    return {
        "design_id": state.design_id,
        "phase": state.phase,
        "runs_done": state.runs_done,
        "round_index": state.round_index,
        "best_cost": best.scalar_cost if best else None,
        "best_job": best.job_id if best else None,
        "abort_cause": state.abort_cause,
        "cost": state.cost_summary().to_dict(),
    }


def _emit(doc: dict, as_json: bool) -> None:
    if as_json:
        click.echo(json.dumps(doc, indent=2, default=str))
        return
    for key, value in doc.items():
        click.echo(f"{key}: {value}")


config_option = click.option("--config", "config_path", type=click.Path(exists=True),
                             default=None, help="TOML settings file.")
json_option = click.option("--json", "as_json", is_flag=True,
                           help="Emit machine-readable JSON.")


@click.group()
@click.version_option(package_name="fabflow")
def main():
    """Natural-language-to-layout flow orchestration."""


@main.command()
@click.argument("prompt")
@config_option
@json_option
@click.option("--answers", "answers_path", type=click.Path(exists=True),
              help="Text file with one planner answer per line.")
@click.option("--priority", type=click.Choice(["area", "delay", "power",
                                               "balanced"]), default="balanced")
@click.option("--runs", type=int, default=100, show_default=True,
              help="Stop after this many flow runs.")
@click.option("--stale-rounds", type=int, default=3, show_default=True,
              help="Stop after this many non-improving rounds.")
@click.option("--design-id", default=None, help="Override the design id.")
def new(prompt, config_path, as_json, answers_path, priority, runs,
        stale_rounds, design_id):
    """Run the full pipeline for a natural-language design PROMPT."""
    try:
        config = load_config(config_path)
        answers = []
        if answers_path:
            answers = [line for line in
                       Path(answers_path).read_text().splitlines() if line]
        backends = build_backends(config, answers=answers)
        goal = _goal_from_options(priority, runs, stale_rounds)
        state = run_pipeline(prompt, goal, backends, design_id=design_id)
    except FabflowError as e:
        raise _fail(e)
    _emit(_state_summary(state), as_json)
    if state.phase == "aborted":
        raise SystemExit(EXIT_FAILURE)


def _load_state(config, design_id):
    store = StateStore(config["paths"]["state_root"], design_id)
    state = store.load_latest_snapshot()
    if state is None:
        raise DesignNotFound(design_id)
    return store, state


@main.command()
@click.argument("design_id")
@config_option
@json_option
def status(design_id, config_path, as_json):
    """Show the persisted status of a design."""
    try:
        config = load_config(config_path)
        store, state = _load_state(config, design_id)
    except FabflowError as e:
        raise _fail(e)
    doc = _state_summary(state)
    doc["last_seq"] = store.events()[-1]["seq"] if store.events() else 0
    _emit(doc, as_json)


@main.command()
@click.argument("design_id")
@config_option
@json_option
@click.option("--priority", type=click.Choice(["area", "delay", "power",
                                               "balanced"]), default="balanced")
@click.option("--runs", type=int, default=100, show_default=True)
@click.option("--stale-rounds", type=int, default=3, show_default=True)
def optimize(design_id, config_path, as_json, priority, runs, stale_rounds):
    """Resume optimization of a persisted design with a (new) goal."""
    try:
        config = load_config(config_path)
        backends = build_backends(config)
        goal = _goal_from_options(priority, runs, stale_rounds)
        state = resume_pipeline(design_id, backends, goal=goal)
    except FabflowError as e:
        raise _fail(e)
    _emit(_state_summary(state), as_json)
    if state.phase == "aborted":
        raise SystemExit(EXIT_FAILURE)


@main.command()
@click.argument("design_id")
@config_option
@json_option
@click.option("--csv", "as_csv", is_flag=True, help="Emit CSV.")
def report(design_id, config_path, as_json, as_csv):
    """Baseline-versus-best PPA comparison for a design."""
    try:
        config = load_config(config_path)
        _, state = _load_state(config, design_id)
        best = state.history.best
        if state.baseline_metrics is None or best is None or best.metrics is None:
            raise OrchestratorError(
                f"design {design_id} has no completed baseline and best run")
        delta = compute_delta(state.baseline_metrics, best.metrics)
    except FabflowError as e:
        raise _fail(e)

    def fmt(value):
        return "n/a" if value is None else f"{value:.2f}"

    rows = [
        ("area_um2", state.baseline_metrics.area_um2, best.metrics.area_um2,
         delta.area_delta_pct),
        ("delay_ps", state.baseline_metrics.critical_path_delay_ps,
         best.metrics.critical_path_delay_ps, delta.delay_delta_pct),
        ("power_uw", state.baseline_metrics.power_uw, best.metrics.power_uw,
         delta.power_delta_pct),
    ]
    if as_json:
        click.echo(json.dumps({
            "design_id": design_id,
            "best_job": best.job_id,
            "best_cost": best.scalar_cost,
            "rows": [{"metric": m, "baseline": b, "best": o, "delta_pct": d}
                     for m, b, o, d in rows],
        }, indent=2))
        return
    if as_csv:
        out = io.StringIO()
        writer = csv.writer(out)
        writer.writerow(["metric", "baseline", "best", "delta_pct"])
        for metric, baseline, best_value, delta_pct in rows:
            writer.writerow([metric, baseline, best_value, f"{delta_pct:.2f}"])
        click.echo(out.getvalue().rstrip("\n"))
        return
    click.echo(f"design {design_id}: best job {best.job_id} "
               f"(cost {fmt(best.scalar_cost)})")
    click.echo(f"{'metric':<10} {'baseline':>14} {'best':>14} {'delta %':>9}")
    for metric, baseline, best_value, delta_pct in rows:
        click.echo(f"{metric:<10} {baseline:>14.2f} {best_value:>14.2f} "
                   f"{delta_pct:>+9.2f}")


@main.group()
def corpus():
    """Inspect and maintain the retrieval corpus."""


def _corpus_dir(config) -> str:
    corpus_dir = config["paths"]["corpus_dir"]
    if corpus_dir is None:
        from importlib import resources
        corpus_dir = str(resources.files("fabflow.data") / "corpus")
    return corpus_dir


@corpus.command("build")
@config_option
@json_option
def corpus_build(config_path, as_json):
    """Index the corpus and report its size."""
    try:
        config = load_config(config_path)
        index = ragstore.build_index(_corpus_dir(config))
    except FabflowError as e:
        raise _fail(e)
    kinds: dict[str, int] = {}
    for chunk in index.chunks.values():
        kinds[chunk.kind] = kinds.get(chunk.kind, 0) + 1
    _emit({"corpus_dir": _corpus_dir(config), "chunks": len(index),
           "by_kind": kinds}, as_json)


@corpus.command("query")
@click.argument("text")
@config_option
@json_option
@click.option("-n", "depth", type=int, default=5, show_default=True)
def corpus_query(text, config_path, as_json, depth):
    """Rank corpus chunks against a query string."""
    try:
        config = load_config(config_path)
        index = ragstore.build_index(_corpus_dir(config))
        retrieved = ragstore.retrieve(index, [ragstore.Query(text=text)], n=depth)
    except FabflowError as e:
        raise _fail(e)
    if as_json:
        click.echo(json.dumps([
            {"id": c.id, "kind": c.kind, "title": c.title, "score": s,
             "reference_count": c.reference_count}
            for c, s in retrieved.entries], indent=2))
        return
    for chunk, score in retrieved.entries:
        click.echo(f"{score:8.3f}  [{chunk.kind}] {chunk.id}: {chunk.title}")


@corpus.command("promote")
@click.argument("design_id")
@config_option
@json_option
def corpus_promote(design_id, config_path, as_json):
    """Fold a completed design's lessons back into the corpus."""
    try:
        config = load_config(config_path)
        _, state = _load_state(config, design_id)
        bumped = promote_successful_chunks(state, _corpus_dir(config))
    except FabflowError as e:
        raise _fail(e)
    _emit({"design_id": design_id, "bumped": bumped,
           "prior_chunk": f"prior_{design_id}"}, as_json)


@main.command()
@config_option
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(config_path, host, port):
    """Serve the HTTP API (and the web UI when frontend/dist exists)."""
    try:
        config = load_config(config_path)
    except FabflowError as e:
        raise _fail(e)
    import uvicorn
    from .service import create_app

    def factory(design_id: str) -> BackendSet:
        return build_backends(config)

    uvicorn.run(create_app(factory), host=host, port=port)


@main.command("bench-parallel")
@json_option
@click.option("--jobs", type=int, default=20, show_default=True)
@click.option("--duration", type=float, default=0.5, show_default=True)
@click.option("--parallelism", type=int, default=4, show_default=True)
def bench_parallel_cmd(as_json, jobs, duration, parallelism):
    """Measure scheduler speedup on fixed-duration simulated jobs."""
    try:
        result = bench_parallel(n_jobs=jobs, duration_s=duration,
                                parallelism=parallelism)
    except FabflowError as e:
        raise _fail(e)
    if as_json:
        click.echo(json.dumps(result, indent=2))
        return
    click.echo(f"jobs={result['jobs']} duration={result['duration_s']}s "
               f"parallelism={result['parallelism']}")
    click.echo(f"sequential: {result['sequential_wall_s']:.2f}s   "
               f"parallel: {result['parallel_wall_s']:.2f}s   "
               f"speedup: {result['speedup']:.2f}x")
    click.echo(f"high-water marks: sequential={result['high_water_mark_sequential']} "
               f"parallel={result['high_water_mark_parallel']}")


if __name__ == "__main__":
    main()
