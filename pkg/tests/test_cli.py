import json

import pytest
from click.testing import CliRunner

from fabflow.cli import EXIT_CONFIG, EXIT_ORCHESTRATOR, EXIT_RAGSTORE, main
from tests.conftest import fenced, optimize_entry, pipeline_scripts

OPTIMIZE_ENTRIES = [
    optimize_entry({"FP_CORE_UTIL": 55}, {"FP_CORE_UTIL": 60}),
    optimize_entry({"FP_CORE_UTIL": 70}, {"FP_CORE_UTIL": 75}),
]


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def workspace(tmp_path):
    """Script directory + TOML config pointing all paths into tmp."""
    scripts = pipeline_scripts(optimize=OPTIMIZE_ENTRIES)
    script_dir = tmp_path / "mock_script"
    for tag, entries in scripts.items():
        tag_dir = script_dir / tag
        tag_dir.mkdir(parents=True)
        for i, entry in enumerate(entries):
            (tag_dir / f"{i}.txt").write_text(entry)
    config = tmp_path / "fabflow.toml"
    config.write_text(f"""\
[provider]
kind = "mock"
script_dir = "{script_dir}"

[paths]
run_root = "{tmp_path / 'runs'}"
state_root = "{tmp_path / 'state'}"

[optimization]
parallelism = 2
""")
    return tmp_path, str(config)


def run_new(runner, config, *extra):
    return runner.invoke(main, ["new", "build a multiplier", "--config", config,
                                "--priority", "area", "--runs", "3",
                                "--design-id", "spm", *extra])


# ---------------------------------------------------------------------------
# new / status / optimize

def test_new_runs_pipeline_to_done(runner, workspace):
    _, config = workspace
    result = run_new(runner, config, "--json")
    assert result.exit_code == 0, result.output
    doc = json.loads(result.output)
    assert doc["phase"] == "done"
    assert doc["runs_done"] == 3
    assert doc["best_cost"] <= 1.0


def test_new_plain_output(runner, workspace):
    _, config = workspace
    result = run_new(runner, config)
    assert result.exit_code == 0
    assert "phase: done" in result.output


def test_new_with_answers_file(runner, tmp_path, workspace):
    base, config = workspace
    planner_dir = base / "mock_script" / "planner"
    design = (planner_dir / "0.txt").read_text()
    (planner_dir / "0.txt").write_text(fenced("questions", ["Width?"]))
    (planner_dir / "1.txt").write_text(design)
    answers = tmp_path / "answers.txt"
    answers.write_text("8 bits\n")
    result = run_new(runner, config, "--answers", str(answers), "--json")
    assert result.exit_code == 0, result.output
    assert json.loads(result.output)["phase"] == "done"


def test_new_aborted_pipeline_exits_nonzero(runner, tmp_path, workspace):
    base, _ = workspace
    empty_config = tmp_path / "empty.toml"
    empty_dir = tmp_path / "no_scripts"
    empty_dir.mkdir()
    empty_config.write_text(f"""\
[provider]
script_dir = "{empty_dir}"

[paths]
state_root = "{tmp_path / 'state2'}"
""")
    result = runner.invoke(main, ["new", "x", "--config", str(empty_config)])
    assert result.exit_code == 1
    assert "aborted" in result.output


def test_status_reads_persisted_design(runner, workspace):
    _, config = workspace
    assert run_new(runner, config).exit_code == 0
    result = runner.invoke(main, ["status", "spm", "--config", config, "--json"])
    assert result.exit_code == 0
    doc = json.loads(result.output)
    assert doc["phase"] == "done"
    assert doc["last_seq"] > 0


def test_status_unknown_design_exit_code(runner, workspace):
    _, config = workspace
    result = runner.invoke(main, ["status", "ghost", "--config", config])
    assert result.exit_code == EXIT_ORCHESTRATOR


def test_optimize_resumes_with_more_runs(runner, workspace):
    _, config = workspace
    assert run_new(runner, config, "--json").exit_code == 0
    result = runner.invoke(main, ["optimize", "spm", "--config", config,
                                  "--priority", "area", "--runs", "5", "--json"])
    assert result.exit_code == 0, result.output
    doc = json.loads(result.output)
    assert doc["phase"] == "done"
    assert doc["runs_done"] == 5


# ---------------------------------------------------------------------------
# report

def test_report_table_and_csv_and_json(runner, workspace):
    _, config = workspace
    assert run_new(runner, config).exit_code == 0

    table = runner.invoke(main, ["report", "spm", "--config", config])
    assert table.exit_code == 0
    assert "delta %" in table.output

    csv_out = runner.invoke(main, ["report", "spm", "--config", config, "--csv"])
    assert csv_out.exit_code == 0
    lines = csv_out.output.strip().splitlines()
    assert lines[0] == "metric,baseline,best,delta_pct"
    assert len(lines) == 4

    json_out = runner.invoke(main, ["report", "spm", "--config", config, "--json"])
    doc = json.loads(json_out.output)
    rows = {r["metric"]: r for r in doc["rows"]}
    # the area-goal run must not regress area: delta is negative or zero
    assert rows["area_um2"]["delta_pct"] <= 0
    # CLI report deltas must agree with the library arithmetic
    expected = (rows["area_um2"]["best"] / rows["area_um2"]["baseline"] - 1) * 100
    assert rows["area_um2"]["delta_pct"] == pytest.approx(expected)


# ---------------------------------------------------------------------------
# corpus

def test_corpus_build_reports_shipped_size(runner):
    result = runner.invoke(main, ["corpus", "build", "--json"])
    assert result.exit_code == 0
    doc = json.loads(result.output)
    assert doc["chunks"] >= 40
    assert doc["by_kind"]["parameter_doc"] > 0


def test_corpus_query_ranks_clock_period_first(runner):
    result = runner.invoke(main, [
        "corpus", "query",
        "OpenLane timing optimization CLOCK_PERIOD violation", "--json"])
    assert result.exit_code == 0
    ranked = json.loads(result.output)
    assert ranked[0]["id"] == "clock_period"


def test_corpus_build_empty_dir_exit_code(runner, tmp_path):
    empty = tmp_path / "corpus"
    empty.mkdir()
    config = tmp_path / "c.toml"
    config.write_text(f'[paths]\ncorpus_dir = "{empty}"\n')
    result = runner.invoke(main, ["corpus", "build", "--config", str(config)])
    assert result.exit_code == EXIT_RAGSTORE


def test_corpus_promote_writes_prior_chunk(runner, tmp_path, workspace):
    base, config = workspace
    corpus = tmp_path / "corpus_copy"
    import shutil
    from importlib import resources
    shutil.copytree(str(resources.files("fabflow.data") / "corpus"), corpus)
    config_text = (base / "fabflow.toml").read_text()
    promote_config = tmp_path / "promote.toml"
    promote_config.write_text(config_text.replace(
        "[optimization]", f'corpus_dir = "{corpus}"\n\n[optimization]'))
    assert run_new(runner, str(promote_config)).exit_code == 0
    result = runner.invoke(main, ["corpus", "promote", "spm", "--config",
                                  str(promote_config), "--json"])
    assert result.exit_code == 0, result.output
    assert (corpus / "prior_config" / "prior_spm.md").exists()


# ---------------------------------------------------------------------------
# configuration validation

def test_unknown_config_key_rejected(runner, tmp_path):
    config = tmp_path / "bad.toml"
    config.write_text("[provider]\nflavor = \"vanilla\"\n")
    result = runner.invoke(main, ["status", "x", "--config", str(config)])
    assert result.exit_code == EXIT_CONFIG
    assert "provider.flavor" in result.output


def test_unknown_config_section_rejected(runner, tmp_path):
    config = tmp_path / "bad.toml"
    config.write_text("[telemetry]\nenabled = true\n")
    result = runner.invoke(main, ["status", "x", "--config", str(config)])
    assert result.exit_code == EXIT_CONFIG


def test_out_of_range_config_value_rejected(runner, tmp_path):
    config = tmp_path / "bad.toml"
    config.write_text("[optimization]\nparallelism = 0\n")
    result = runner.invoke(main, ["status", "x", "--config", str(config)])
    assert result.exit_code == EXIT_CONFIG
    assert "optimization.parallelism" in result.output


def test_subprocess_flow_requires_command(runner, tmp_path):
    config = tmp_path / "bad.toml"
    config.write_text('[flow]\nkind = "subprocess"\n')
    result = runner.invoke(main, ["status", "x", "--config", str(config)])
    assert result.exit_code == EXIT_CONFIG


# ---------------------------------------------------------------------------
# bench-parallel

def test_bench_parallel_json(runner):
    result = runner.invoke(main, ["bench-parallel", "--jobs", "6",
                                  "--duration", "0.05", "--parallelism", "3",
                                  "--json"])
    assert result.exit_code == 0
    doc = json.loads(result.output)
    assert doc["speedup"] > 1.0
    assert doc["high_water_mark_parallel"] <= 3


def test_help_lists_commands(runner):
    result = runner.invoke(main, ["--help"])
    assert result.exit_code == 0
    for command in ("new", "status", "optimize", "report", "corpus", "serve",
                    "bench-parallel"):
        assert command in result.output
