"""Record a scripted 12-run pipeline over the real HTTP/SSE API.

Writes the raw SSE stream and the final design document into
frontend/tests/fixtures/ so the frontend test suite can replay a
faithful wire-format trace without running the Python service.

Run from the repository root:

    python frontend/scripts/record-trace.py
"""

import json
import sys
import tempfile
import time
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parents[2]
sys.path.insert(0, str(REPO_ROOT))

from fastapi.testclient import TestClient  # noqa: E402

from fabflow.service import create_app  # noqa: E402
from tests.conftest import (  # noqa: E402
    fenced,
    make_backends,
    optimize_entry,
    pipeline_scripts,
)

OPTIMIZE_ROUNDS = [
    optimize_entry({"FP_CORE_UTIL": 55}, {"FP_CORE_UTIL": 60},
                   {"FP_CORE_UTIL": 70}, {"FP_CORE_UTIL": 75}),
    optimize_entry({"FP_CORE_UTIL": 80}, {"FP_CORE_UTIL": 85},
                   {"FP_CORE_UTIL": 90}, {"FP_CORE_UTIL": 95}),
    optimize_entry({"FP_CORE_UTIL": 45}, {"FP_CORE_UTIL": 40},
                   {"FP_CORE_UTIL": 35}, {"FP_CORE_UTIL": 30}),
]


def wait_until(predicate, timeout_s=60.0):
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        value = predicate()
        if value:
            return value
        time.sleep(0.05)
    raise TimeoutError("condition not reached")


def main():
    out_dir = REPO_ROOT / "frontend" / "tests" / "fixtures"
    out_dir.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix="fabflow-trace-"))

    scripts = pipeline_scripts(optimize=OPTIMIZE_ROUNDS)
    # one planning question so the trace exercises the Q&A dialogue
    design_entry = scripts["planner"][0]
    scripts["planner"] = [fenced("questions", ["Operand width?"]), design_entry]

    app = create_app(lambda design_id: make_backends(tmp / design_id, scripts),
                     frontend_dist=None)
    client = TestClient(app)

    created = client.post("/designs", json={
        "prompt": "build a serial parallel multiplier",
        "design_id": "spm",
        "goal": {"priority": "area", "stop_after_runs": 12},
    })
    assert created.status_code == 201, created.text

    wait_until(lambda: client.get("/designs/spm").json()["pending_question"])
    answered = client.post("/designs/spm/answers", json={"answer": "8 bits"})
    assert answered.status_code == 200, answered.text

    doc = wait_until(lambda: (lambda d: d if d["phase"] in ("done", "aborted")
                              and not d["running"] else None)(
                                  client.get("/designs/spm").json()))
    assert doc["phase"] == "done", doc

    with client.stream("GET", "/designs/spm/events") as response:
        raw = "".join(response.iter_text())

    (out_dir / "events.sse.txt").write_text(raw)
    (out_dir / "design.json").write_text(json.dumps(doc, indent=2) + "\n")
    event_count = raw.count("\nevent: ") + raw.startswith("event: ")
    print(f"wrote {event_count} events, last_seq={doc['last_seq']}, "
          f"best_cost={doc['best_cost']}")


if __name__ == "__main__":
    main()
