"""Flow report parsing and PPA comparison arithmetic.

Canonical interchange format is one ``metrics.json`` per run, carrying the
RunMetrics field names directly. Adapters additionally understand the
flow-native report shapes found in a run directory:

* ``metrics.csv``  — single header row + single value row, column names
  mapped through an alias table;
* STA text reports (``*.rpt``) — lines of the form
  ``<signed number>  slack (VIOLATED|MET)``, in ps;
* DRC reports (``drc.rpt`` / ``*_drc.rpt``) — one ``VIOLATION`` line per
  violation, or an explicit ``Total violations: N`` summary;
* log files (``*.log``) — UTF-8, line-oriented; error lines begin with
  ``[ERROR]`` and become FlowErrorRecords attributed to the stage named
  in the file name.

Absent optional fields stay ``None`` (never fabricated zeros). When only
slack and clock period are available, critical-path delay is derived as
``clock_period - worst_setup_slack`` (standard STA identity).
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .errors import (
    DivisionByZeroBaseline,
    DivisionByZeroReference,
    MalformedReport,
    MissingReports,
)
from .registry import FLOW_STAGES

ABSENT = None  # documented sentinel for optional metric fields

# numeric fields that may legitimately be absent after parsing
_OPTIONAL_FIELDS = (
    "area_um2", "die_width_um", "die_height_um", "critical_path_delay_ps",
    "clock_period_ps", "worst_setup_slack_ps", "worst_hold_slack_ps",
    "power_uw", "placement_utilization_pct", "run_wall_seconds",
)


@dataclass
class RunMetrics:
    """Structured PPA + violation counts extracted from one flow run."""

    design_name: str
    area_um2: float | None = ABSENT
    die_width_um: float | None = ABSENT
    die_height_um: float | None = ABSENT
    critical_path_delay_ps: float | None = ABSENT
    clock_period_ps: float | None = ABSENT
    worst_setup_slack_ps: float | None = ABSENT
    worst_hold_slack_ps: float | None = ABSENT
    power_uw: float | None = ABSENT
    placement_utilization_pct: float | None = ABSENT
    drc_violation_count: int = 0
    lvs_error_count: int = 0
    run_wall_seconds: float | None = ABSENT
    area_source: str = "cell"  # provenance: "cell" or "die"

    def __post_init__(self):
        for name in ("area_um2", "die_width_um", "die_height_um",
                     "critical_path_delay_ps", "clock_period_ps"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if self.power_uw is not None and self.power_uw < 0:
            raise ValueError(f"power_uw must be non-negative, got {self.power_uw}")
        u = self.placement_utilization_pct
        if u is not None and not (0.0 <= u <= 100.0):
            raise ValueError(f"placement_utilization_pct must be in [0,100], got {u}")
        for name in ("drc_violation_count", "lvs_error_count"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")
        if self.run_wall_seconds is not None and self.run_wall_seconds < 0:
            raise ValueError("run_wall_seconds must be non-negative")
        if self.area_source not in ("cell", "die"):
            raise ValueError(f"area_source must be 'cell' or 'die', got {self.area_source!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunMetrics":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in raw.items() if k in known})


@dataclass(frozen=True)
class FlowErrorRecord:
    """One error observed in a flow log, attributed to a flow stage."""

    stage: str
    code: str
    message: str
    log_path: str

    def __post_init__(self):
        if self.stage not in FLOW_STAGES:
            raise ValueError(f"unknown flow stage {self.stage!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "FlowErrorRecord":
        return cls(**{k: raw[k] for k in ("stage", "code", "message", "log_path")})


@dataclass(frozen=True)
class PpaDelta:
    """Percentage change from baseline to optimized; negative = improvement."""

    baseline: RunMetrics
    optimized: RunMetrics
    area_delta_pct: float
    delay_delta_pct: float
    power_delta_pct: float


@dataclass(frozen=True)
class PpaRatio:
    """Element-wise candidate/reference ratios; < 1 means candidate wins."""

    numerator_source: str
    denominator_source: str
    area_ratio: float | None
    delay_ratio: float | None
    power_ratio: float | None


# ---------------------------------------------------------------------------
# canonical JSON round trip

def write_metrics_json(metrics: RunMetrics, path: str | Path) -> None:
    Path(path).write_text(json.dumps(metrics.to_dict(), indent=2) + "\n")


def read_metrics_json(path: str | Path) -> RunMetrics:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise MalformedReport(path, e.pos, e.msg) from e
    except UnicodeDecodeError as e:
        raise MalformedReport(path, e.start, "invalid UTF-8") from e
    if not isinstance(raw, dict) or "design_name" not in raw:
        raise MalformedReport(path, 0, "not a metrics document")
    try:
        return RunMetrics.from_dict(raw)
    except (TypeError, ValueError) as e:
        raise MalformedReport(path, 0, str(e)) from e


# ---------------------------------------------------------------------------
# flow-native adapters

_CSV_ALIASES = {
    "design_name": ("design_name", "design", "design_nam"),
    "area_um2": ("area_um2", "CellArea_um^2", "cellarea_um^2", "CoreArea_um^2"),
    "die_width_um": ("die_width_um", "DieWidth_um"),
    "die_height_um": ("die_height_um", "DieHeight_um"),
    "critical_path_delay_ps": ("critical_path_delay_ps", "CriticalPathDelay_ps"),
    "clock_period_ps": ("clock_period_ps", "ClockPeriod_ps"),
    "worst_setup_slack_ps": ("worst_setup_slack_ps", "WorstSetupSlack_ps", "wns_ps"),
    "worst_hold_slack_ps": ("worst_hold_slack_ps", "WorstHoldSlack_ps"),
    "power_uw": ("power_uw", "Power_uW", "power_typical_uW"),
    "placement_utilization_pct": ("placement_utilization_pct", "Utilization_pct", "OpenDP_Util"),
    "drc_violation_count": ("drc_violation_count", "Magic_violations", "drc_violations"),
    "lvs_error_count": ("lvs_error_count", "lvs_errors", "LVS_errors"),
    "run_wall_seconds": ("run_wall_seconds", "runtime_s"),
}

_INT_FIELDS = ("drc_violation_count", "lvs_error_count")


def _parse_metrics_csv(path: Path) -> dict:
    text = path.read_text(encoding="utf-8", errors="strict")
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if len(rows) < 2:
        raise MalformedReport(path, 0, "need a header row and a value row")
    header, values = rows[0], rows[1]
    if len(values) != len(header):
        raise MalformedReport(path, 0, "value row width differs from header")
    by_col = {h.strip(): v.strip() for h, v in zip(header, values)}
    out: dict = {}
    for fieldname, aliases in _CSV_ALIASES.items():
        for alias in aliases:
            if alias in by_col:
                raw = by_col[alias]
                if fieldname == "design_name":
                    out[fieldname] = raw
                else:
                    try:
                        out[fieldname] = (int(float(raw)) if fieldname in _INT_FIELDS
                                          else float(raw))
                    except ValueError as e:
                        offset = text.find(raw, text.find("\n"))
                        raise MalformedReport(path, max(offset, 0),
                                              f"bad value {raw!r} for {alias}") from e
                break
    return out


_SLACK_RE = re.compile(
    r"(-?\d+(?:\.\d+)?)\s+slack\s+\((VIOLATED|MET)\)", re.IGNORECASE)
_HOLD_HINT_RE = re.compile(r"path type:\s*min|\bhold\b", re.IGNORECASE)
_SETUP_HINT_RE = re.compile(r"path type:\s*max|\bsetup\b", re.IGNORECASE)


def _parse_sta_report(path: Path) -> dict:
    """Extract worst setup/hold slack (ps) from an STA text report."""
    out: dict = {}
    kind = "setup"  # reports default to max-path sections
    found = False
    for line in path.read_text(encoding="utf-8", errors="strict").splitlines():
        if _HOLD_HINT_RE.search(line) and "slack" not in line.lower():
            kind = "hold"
        elif _SETUP_HINT_RE.search(line) and "slack" not in line.lower():
            kind = "setup"
        m = _SLACK_RE.search(line)
        if m:
            found = True
            value = float(m.group(1))
            key = f"worst_{kind}_slack_ps"
            if key not in out or value < out[key]:
                out[key] = value
    if not found:
        raise MalformedReport(path, 0, "no slack lines found")
    return out


_DRC_TOTAL_RE = re.compile(r"total\s+violations?\s*:\s*(\d+)", re.IGNORECASE)
_DRC_LINE_RE = re.compile(r"^\s*violation", re.IGNORECASE)


def _parse_drc_report(path: Path) -> dict:
    text = path.read_text(encoding="utf-8", errors="strict")
    m = _DRC_TOTAL_RE.search(text)
    if m:
        return {"drc_violation_count": int(m.group(1))}
    count = sum(1 for line in text.splitlines() if _DRC_LINE_RE.match(line))
    return {"drc_violation_count": count}


_ERROR_LINE_RE = re.compile(r"^\[ERROR\]\s*(?:([A-Z0-9_-]+):)?\s*(.*)$")


def _stage_from_name(name: str) -> str:
    lowered = name.lower()
    for stage in FLOW_STAGES:
        if stage in lowered:
            return stage
    if "route" in lowered:
        return "routing"
    if "place" in lowered:
        return "placement"
    if "synth" in lowered:
        return "synthesis"
    return "synthesis"


def _parse_log(path: Path) -> list[FlowErrorRecord]:
    stage = _stage_from_name(path.name)
    records = []
    for line in path.read_text(encoding="utf-8", errors="strict").splitlines():
        m = _ERROR_LINE_RE.match(line.strip())
        if m:
            records.append(FlowErrorRecord(
                stage=stage, code=m.group(1) or "",
                message=m.group(2).strip(), log_path=str(path)))
    return records


def parse_run_artifacts(run_directory: str | Path) -> tuple[RunMetrics, list[FlowErrorRecord]]:
    """Parse every recognized report under ``run_directory``.

    Later sources never overwrite a field already set by the canonical
    ``metrics.json``; unrecognized files are ignored.
    """
    root = Path(run_directory)
    if not root.is_dir():
        raise MissingReports(f"{root} is not a directory")

    fields: dict = {}
    errors: list[FlowErrorRecord] = []
    recognized = 0

    def merge(new: dict) -> None:
        for k, v in new.items():
            fields.setdefault(k, v)

    canonical = sorted(root.rglob("metrics.json"))
    for path in canonical:
        merge(read_metrics_json(path).to_dict())
        recognized += 1

    for path in sorted(root.rglob("metrics.csv")):
        try:
            merge(_parse_metrics_csv(path))
        except UnicodeDecodeError as e:
            raise MalformedReport(path, e.start, "invalid UTF-8") from e
        recognized += 1

    for path in sorted(root.rglob("*.rpt")):
        name = path.name.lower()
        try:
            if "drc" in name:
                merge(_parse_drc_report(path))
            else:
                merge(_parse_sta_report(path))
        except MalformedReport:
            if "sta" in name or "timing" in name or "drc" in name:
                raise
            continue  # some other .rpt we do not understand
        except UnicodeDecodeError as e:
            raise MalformedReport(path, e.start, "invalid UTF-8") from e
        recognized += 1

    for path in sorted(root.rglob("*.log")):
        try:
            errors.extend(_parse_log(path))
        except UnicodeDecodeError as e:
            raise MalformedReport(path, e.start, "invalid UTF-8") from e
        recognized += 1

    if recognized == 0:
        raise MissingReports(f"no recognized report files under {root}")

    # STA identity: delay = clock period - worst setup slack
    if (fields.get("critical_path_delay_ps") is None
            and fields.get("clock_period_ps") is not None
            and fields.get("worst_setup_slack_ps") is not None):
        fields["critical_path_delay_ps"] = (
            fields["clock_period_ps"] - fields["worst_setup_slack_ps"])

    fields.setdefault("design_name", root.name)
    # area_source stays "cell" unless only die dimensions were reported
    if fields.get("area_um2") is None and \
            fields.get("die_width_um") is not None and \
            fields.get("die_height_um") is not None:
        fields["area_um2"] = fields["die_width_um"] * fields["die_height_um"]
        fields["area_source"] = "die"

    try:
        metrics = RunMetrics.from_dict(fields)
    except (TypeError, ValueError) as e:
        raise MalformedReport(root, 0, f"inconsistent fields: {e}") from e
    return metrics, errors


# ---------------------------------------------------------------------------
# comparison arithmetic

def _require(m: RunMetrics, names=("area_um2", "critical_path_delay_ps", "power_uw")):
    for n in names:
        if getattr(m, n) is None:
            raise ValueError(f"metric {n} is absent on {m.design_name}")


def compute_delta(baseline: RunMetrics, optimized: RunMetrics) -> PpaDelta:
    """Percentage deltas (optimized - baseline) / baseline * 100, per metric."""
    _require(baseline)
    _require(optimized)
    pairs = {
        "area": (baseline.area_um2, optimized.area_um2),
        "delay": (baseline.critical_path_delay_ps, optimized.critical_path_delay_ps),
        "power": (baseline.power_uw, optimized.power_uw),
    }
    deltas = {}
    for name, (base, opt) in pairs.items():
        if base == 0:
            raise DivisionByZeroBaseline(f"baseline {name} is 0")
        deltas[name] = (opt - base) / base * 100.0
    return PpaDelta(baseline=baseline, optimized=optimized,
                    area_delta_pct=deltas["area"],
                    delay_delta_pct=deltas["delay"],
                    power_delta_pct=deltas["power"])


def compute_ratio(candidate: RunMetrics, reference: RunMetrics) -> PpaRatio:
    """Element-wise candidate / reference; absent on either side stays None."""
    pairs = {
        "area": (candidate.area_um2, reference.area_um2),
        "delay": (candidate.critical_path_delay_ps, reference.critical_path_delay_ps),
        "power": (candidate.power_uw, reference.power_uw),
    }
    ratios = {}
    for name, (cand, ref) in pairs.items():
        if cand is None or ref is None:
            ratios[name] = None
            continue
        if ref == 0:
            raise DivisionByZeroReference(f"reference {name} is 0")
        ratios[name] = cand / ref
    return PpaRatio(numerator_source=candidate.design_name,
                    denominator_source=reference.design_name,
                    area_ratio=ratios["area"],
                    delay_ratio=ratios["delay"],
                    power_ratio=ratios["power"])
