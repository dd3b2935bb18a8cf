import json

import pytest

from fabflow.agents import ScriptedAnswerSource, StubLint
from fabflow.flowexec import SimulatedBackend
from fabflow.gateway import MockProvider
from fabflow.orchestrator import BackendSet
from fabflow.registry import load_registry
from fabflow.ragstore import build_index

# Reference comparison table for eight benchmark designs:
# (name, baseline (area um^2, delay ps, power uW), optimized triple,
#  printed percentage deltas).
BENCHMARK_ROWS = [
    ("c880",     (7229, 15284, 77),      (4650, 9955, 32),      (-35.68, -34.86, -58.44)),
    ("c2670",    (5833, 15046, 266),     (3883, 9877, 81),      (-33.43, -34.35, -69.55)),
    ("c5315",    (67600, 18284, 127),    (62500, 12955, 112),   (-7.54, -29.15, -11.81)),
    ("s298",     (1727, 6970, 98),       (1564, 5737, 64),      (-9.44, -17.69, -34.69)),
    ("s349",     (5863, 8141, 206),      (4472, 5607, 132),     (-23.73, -31.13, -35.92)),
    ("s838",     (29576, 12268, 3319),   (19683, 9758, 1974),   (-33.45, -20.46, -40.52)),
    ("c6288",    (61317, 21607, 1505),   (27771, 17765, 1213),  (-54.71, -17.78, -19.40)),
    ("mult16_pipelined", (90979, 11720, 4521), (58071, 7584, 2409), (-36.17, -35.29, -46.72)),
]


# ---------------------------------------------------------------------------
# shared mock-pipeline fixtures

SPM_DESIGN_DOC = {
    "name": "spm",
    "functional_description": "serial parallel multiplier with ready/valid io",
    "inputs": [["clk", 1], ["rst", 1], ["a", 8], ["b", 8]],
    "outputs": [["p", 16]],
    "ppa_priority": "area",
}

SPM_VERILOG = "// file: spm.v\nmodule spm(input clk, input rst);\nendmodule\n"


def fenced(tag, payload):
    body = payload if isinstance(payload, str) else json.dumps(payload)
    return f"```{tag}\n{body}\n```"


def pipeline_scripts(optimize=(), fix=(), logic_check_rounds=1):
    """Standard mock script: direct design, trivial decomposition, one HDL
    file, clean verification; optimize/fix entries supplied per test."""
    return {
        "planner": [fenced("design", SPM_DESIGN_DOC)],
        "decompose": [fenced("modules", [])],
        "hdl": [fenced("verilog", SPM_VERILOG)],
        "logic_check": [fenced("findings", [])] * logic_check_rounds,
        "optimize": list(optimize),
        "fix": list(fix),
    }


def optimize_entry(*param_maps):
    return fenced("configs", list(param_maps))


def make_backends(tmp_path, scripts, *, optimizer=None, parallelism=4,
                  flow_backend=None, answers=(), **overrides):
    backends = BackendSet(
        provider=MockProvider(scripts),
        flow_backend=flow_backend or SimulatedBackend(),
        lint_backend=StubLint([[]]),
        answer_source=ScriptedAnswerSource(list(answers)),
        optimizer=optimizer,
        parallelism=parallelism,
        run_root=str(tmp_path / "runs"),
        state_root=str(tmp_path / "state"),
    )
    for name, value in overrides.items():
        setattr(backends, name, value)
    return backends


@pytest.fixture(scope="session")
def registry():
    return load_registry()


@pytest.fixture(scope="session")
def seed_index():
    from importlib import resources
    return build_index(str(resources.files("fabflow.data") / "corpus"))
