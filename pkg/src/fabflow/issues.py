"""Rule-based detection of design problems from parsed run metrics.

Maps (RunMetrics, flow errors) to a deterministic, severity-ranked issue
set. The utilization thresholds and the slack severity cut are heuristics,
not tool-mandated values; they ship as tunable configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

from .metrics import FlowErrorRecord, RunMetrics

CATEGORIES = ("timing", "area_congestion", "routing", "drc", "lvs", "flow_failure")
SEVERITIES = ("critical", "warning", "info")  # sort order: critical first


@dataclass(frozen=True)
class Issue:
    category: str
    severity: str
    location: str   # flow stage or report locus
    evidence: str   # the triggering value, e.g. "worst_setup_slack_ps = -210"
    suggested_topic: str = ""

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.severity not in SEVERITIES:
            raise ValueError(f"unknown severity {self.severity!r}")
        if not self.evidence:
            raise ValueError("evidence must be non-empty")

    def sort_key(self):
        return (SEVERITIES.index(self.severity), CATEGORIES.index(self.category),
                self.location, self.evidence)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class IssueSet:
    """Issues sorted critical-first, then by category order; total order."""

    issues: tuple[Issue, ...]

    def __len__(self):
        return len(self.issues)

    def __iter__(self):
        return iter(self.issues)

    def __bool__(self):
        return bool(self.issues)

    @classmethod
    def of(cls, issues) -> "IssueSet":
        return cls(issues=tuple(sorted(issues, key=Issue.sort_key)))


@dataclass(frozen=True)
class DetectionThresholds:
    utilization_warning_pct: float = 70.0
    utilization_critical_pct: float = 85.0
    slack_critical_fraction: float = 0.10  # |slack| > this fraction of period

    def validate(self):
        if not (0 < self.utilization_warning_pct <= self.utilization_critical_pct <= 100):
            raise ValueError("utilization thresholds must satisfy 0 < warn <= crit <= 100")
        if self.slack_critical_fraction <= 0:
            raise ValueError("slack_critical_fraction must be positive")


def _slack_issue(kind: str, slack: float, clock_period: float | None,
                 thresholds: DetectionThresholds) -> Issue:
    severity = "warning"
    if clock_period and abs(slack) > thresholds.slack_critical_fraction * clock_period:
        severity = "critical"
    return Issue(
        category="timing",
        severity=severity,
        location="signoff" if kind == "hold" else "cts",
        evidence=f"worst_{kind}_slack_ps = {slack:g}",
        suggested_topic=f"{kind} timing violation CLOCK_PERIOD",
    )


def detect(metrics: RunMetrics, errors: list[FlowErrorRecord] | None = None,
           thresholds: DetectionThresholds = DetectionThresholds()) -> IssueSet:
    """Apply the detection rule table. Total function: absent fields fire no rule."""
    thresholds.validate()
    errors = errors or []
    issues: list[Issue] = []

    if metrics.worst_setup_slack_ps is not None and metrics.worst_setup_slack_ps < 0:
        issues.append(_slack_issue("setup", metrics.worst_setup_slack_ps,
                                   metrics.clock_period_ps, thresholds))
    if metrics.worst_hold_slack_ps is not None and metrics.worst_hold_slack_ps < 0:
        issues.append(_slack_issue("hold", metrics.worst_hold_slack_ps,
                                   metrics.clock_period_ps, thresholds))

    util = metrics.placement_utilization_pct
    if util is not None and util > thresholds.utilization_warning_pct:
        severity = ("critical" if util > thresholds.utilization_critical_pct
                    else "warning")
        issues.append(Issue(
            category="area_congestion", severity=severity, location="placement",
            evidence=f"placement_utilization_pct = {util:g}",
            suggested_topic="area congestion FP_CORE_UTIL PL_TARGET_DENSITY"))

    if metrics.drc_violation_count > 0:
        issues.append(Issue(
            category="drc", severity="critical", location="signoff",
            evidence=f"drc_violation_count = {metrics.drc_violation_count}",
            suggested_topic="DRC violations routing density"))

    if metrics.lvs_error_count > 0:
        issues.append(Issue(
            category="lvs", severity="critical", location="signoff",
            evidence=f"lvs_error_count = {metrics.lvs_error_count}",
            suggested_topic="LVS errors connectivity"))

    for err in errors:
        issues.append(Issue(
            category="flow_failure", severity="critical", location=err.stage,
            evidence=f"[{err.stage}] {err.code or 'ERROR'}: {err.message}",
            suggested_topic=f"{err.stage} flow error"))

    return IssueSet.of(issues)
