"""Specialized agents: planner, HDL generator, verifier, flow fixer, optimizer.

Each agent is a bounded, deterministic control loop around the llm gateway.
Agents prompt the model to emit a fenced machine-readable block (questions,
design, modules, verilog, findings, changes, configs); a tolerant parser
extracts it and one reprompt is allowed on parse failure. All proposed
configuration keys are validated against the known-parameter registry.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, asdict

from .errors import (
    AnswerSourceClosed,
    GenerationEmpty,
    LintBackendUnavailable,
    NoViableCandidates,
    ParameterOutOfRange,
    PlanningIncomplete,
    UnknownParameter,
    UnparseableProposal,
    VerificationExhausted,
)
from .flowexec import FlowConfig
from .gateway import GenerationRequest, GenerationResult, Provider
from .issues import IssueSet
from .ragstore import PromptPayload
from .registry import ParameterRegistry

PPA_PRIORITIES = ("area", "delay", "power", "balanced")

DEFAULT_PLANNER_ROUNDS = 5
DEFAULT_MAX_REPAIRS = 4
DEFAULT_REPROMPTS = 1


# ---------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class DesignSpec:
    name: str
    functional_description: str
    inputs: tuple[tuple[str, int], ...]
    outputs: tuple[tuple[str, int], ...]
    architecture_notes: str = ""
    ppa_priority: str = "balanced"
    clarifications: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", self.name):
            raise ValueError(f"design name {self.name!r} is not an identifier")
        if not self.outputs:
            raise ValueError("design must declare at least one output")
        for port, width in (*self.inputs, *self.outputs):
            if width < 1:
                raise ValueError(f"port {port}: width must be >= 1")
        if self.ppa_priority not in PPA_PRIORITIES:
            raise ValueError(f"unknown ppa_priority {self.ppa_priority!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "DesignSpec":
        return cls(
            name=raw["name"],
            functional_description=raw.get("functional_description", ""),
            inputs=tuple((p, int(w)) for p, w in raw.get("inputs", ())),
            outputs=tuple((p, int(w)) for p, w in raw.get("outputs", ())),
            architecture_notes=raw.get("architecture_notes", ""),
            ppa_priority=raw.get("ppa_priority", "balanced"),
            clarifications=tuple((q, a) for q, a in raw.get("clarifications", ())),
        )


_MODULE_DECL_RE = r"\bmodule\s+{name}\b"


@dataclass(frozen=True)
class HdlArtifact:
    top_module: str
    source_files: tuple[tuple[str, str], ...]  # (path, text)
    lint_clean: bool = False
    logic_check_notes: str = ""
    revision: int = 0

    def __post_init__(self):
        pattern = re.compile(_MODULE_DECL_RE.format(name=re.escape(self.top_module)))
        if not any(pattern.search(text) for _, text in self.source_files):
            raise ValueError(
                f"top module {self.top_module!r} not declared in any source file")
        if self.revision < 0:
            raise ValueError("revision must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "HdlArtifact":
        return cls(top_module=raw["top_module"],
                   source_files=tuple((p, t) for p, t in raw["source_files"]),
                   lint_clean=raw.get("lint_clean", False),
                   logic_check_notes=raw.get("logic_check_notes", ""),
                   revision=raw.get("revision", 0))


@dataclass(frozen=True)
class FixProposal:
    target: str  # flow_config | hdl_source
    changes: tuple[tuple[str, object, object], ...]  # (key_or_path, old, new)
    justification: str = ""
    provenance_chunks: tuple[str, ...] = ()

    def __post_init__(self):
        if self.target not in ("flow_config", "hdl_source"):
            raise ValueError(f"unknown fix target {self.target!r}")
        if not self.changes:
            raise ValueError("changes must be non-empty")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LintFinding:
    severity: str
    file: str
    line: int
    message: str


# ---------------------------------------------------------------------------
# lint backends

class StubLint:
    """Scripted lint backend; one findings list consumed per invocation.
    When the script runs out, the last entry repeats."""

    def __init__(self, script: list[list[LintFinding]]):
        self._script = [list(s) for s in script]
        self.call_log: list[list[LintFinding]] = []

    def run(self, source_files) -> list[LintFinding]:
        index = min(len(self.call_log), len(self._script) - 1)
        findings = list(self._script[index]) if self._script else []
        self.call_log.append(findings)
        return findings


class VerilatorLint:
    """Shells out to Verilator in lint-only mode."""

    def __init__(self, verilator_bin: str = "verilator"):
        self.verilator_bin = verilator_bin

    def run(self, source_files) -> list[LintFinding]:
        import subprocess
        import tempfile
        from pathlib import Path
        with tempfile.TemporaryDirectory() as tmp:
            paths = []
            for name, text in source_files:
                path = Path(tmp) / name
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(text)
                paths.append(str(path))
            try:
                proc = subprocess.run(
                    [self.verilator_bin, "--lint-only", "-Wall", *paths],
                    capture_output=True, text=True, timeout=120)
            except (FileNotFoundError, subprocess.TimeoutExpired) as e:
                raise LintBackendUnavailable(str(e)) from e
        findings = []
        pattern = re.compile(
            r"%(Warning|Error)[^:]*:\s*([^:]+):(\d+):(?:\d+:)?\s*(.*)")
        for line in proc.stderr.splitlines():
            m = pattern.match(line)
            if m:
                findings.append(LintFinding(
                    severity=m.group(1).lower(), file=m.group(2),
                    line=int(m.group(3)), message=m.group(4)))
        return findings


# ---------------------------------------------------------------------------
# answer sources

class ScriptedAnswerSource:
    """Supplies planner answers from a fixed list (non-interactive runs)."""

    def __init__(self, answers: list[str]):
        self._answers = list(answers)
        self._cursor = 0

    def answer(self, question: str) -> str:
        if self._cursor >= len(self._answers):
            raise AnswerSourceClosed(f"no answer left for {question!r}")
        value = self._answers[self._cursor]
        self._cursor += 1
        return value


# ---------------------------------------------------------------------------
# structured output extraction

_FENCE_RE = r"```{tag}\s*\n(.*?)```"


def extract_block(text: str, tag: str) -> str | None:
    m = re.search(_FENCE_RE.format(tag=re.escape(tag)), text, re.DOTALL)
    return m.group(1) if m else None


def extract_json_block(text: str, tag: str):
    block = extract_block(text, tag)
    if block is None:
        return None
    try:
        return json.loads(block)
    except json.JSONDecodeError as e:
        raise UnparseableProposal(f"bad JSON in {tag} block: {e}") from e


def _extract_verilog_files(text: str, default_name: str) -> list[tuple[str, str]]:
    """All ```verilog fences; an optional first-line '// file: x.v' names each."""
    files = []
    for m in re.finditer(_FENCE_RE.format(tag="verilog"), text, re.DOTALL):
        body = m.group(1)
        name = default_name
        first, _, rest = body.partition("\n")
        fm = re.match(r"//\s*file:\s*(\S+)", first.strip())
        if fm:
            name = fm.group(1)
            body = rest
        files.append((name, body.strip() + "\n"))
    return files


# ---------------------------------------------------------------------------
# agent record (shared gateway bookkeeping)

class AgentContext:
    """Carries the provider and collects every GenerationResult for the
    design's cost ledger."""

    def __init__(self, provider: Provider):
        self.provider = provider
        self.results: list[GenerationResult] = []

    def ask(self, tag: str, system_text: str, user_text: str) -> str:
        result = self.provider.generate(GenerationRequest(
            system_text=system_text, user_text=user_text, tag=tag))
        self.results.append(result)
        return result.text


# ---------------------------------------------------------------------------
# planner

_PLANNER_SYSTEM = (
    "You are a hardware design planner. Ask targeted questions about "
    "functionality, inputs and outputs, architecture, and PPA priority in a "
    "fenced ```questions block (JSON list of strings). When the intent is "
    "fully captured, emit the final specification in a fenced ```design "
    "block (JSON) instead.")


def plan(initial_prompt: str, answer_source, context: AgentContext,
         max_rounds: int = DEFAULT_PLANNER_ROUNDS) -> DesignSpec:
    """Question/answer rounds until the model emits a design block."""
    if not initial_prompt:
        raise ValueError("initial_prompt must be non-empty")
    clarifications: list[tuple[str, str]] = []
    for _ in range(max_rounds):
        transcript = initial_prompt
        if clarifications:
            transcript += "\n\nClarifications so far:\n" + "\n".join(
                f"Q: {q}\nA: {a}" for q, a in clarifications)
        text = context.ask("planner", _PLANNER_SYSTEM, transcript)
        design = extract_json_block(text, "design")
        if design is not None:
            design.setdefault("clarifications", [])
            design["clarifications"] = list(design["clarifications"]) + clarifications
            return DesignSpec.from_dict(design)
        questions = extract_json_block(text, "questions") or []
        for question in questions:
            clarifications.append((question, answer_source.answer(question)))
    raise PlanningIncomplete(
        f"no design specification after {max_rounds} rounds")


# ---------------------------------------------------------------------------
# HDL generation

_DECOMPOSE_SYSTEM = (
    "Decompose the hardware specification into submodules. Respond with a "
    "fenced ```modules block: a JSON list of {\"name\", \"description\"} "
    "objects (may be empty for trivial designs).")
_HDL_SYSTEM = (
    "Write synthesizable Verilog-2005 for the requested module in a fenced "
    "```verilog block.")


def generate_hdl(spec: DesignSpec, context: AgentContext) -> HdlArtifact:
    """Two-phase generation: decomposition, then per-submodule + top level."""
    spec_text = json.dumps(spec.to_dict(), indent=2)
    decomposition = context.ask("decompose", _DECOMPOSE_SYSTEM, spec_text)
    modules = extract_json_block(decomposition, "modules")
    if modules is None:
        raise GenerationEmpty("decomposition produced no modules block")

    files: list[tuple[str, str]] = []
    for module in modules:
        name = module["name"]
        text = context.ask("hdl", _HDL_SYSTEM,
                           f"Submodule {name}: {module.get('description', '')}\n"
                           f"Parent specification:\n{spec_text}")
        extracted = _extract_verilog_files(text, f"{name}.v")
        if not extracted:
            raise GenerationEmpty(f"no verilog block for submodule {name}")
        files.extend(extracted)

    submodule_names = [m["name"] for m in modules]
    top_text = context.ask(
        "hdl", _HDL_SYSTEM,
        f"Top-level module {spec.name} instantiating {submodule_names}.\n"
        f"Specification:\n{spec_text}")
    extracted = _extract_verilog_files(top_text, f"{spec.name}.v")
    if not extracted:
        raise GenerationEmpty("no verilog block for the top-level module")
    files.extend(extracted)
    return HdlArtifact(top_module=spec.name, source_files=tuple(files),
                       lint_clean=False, revision=0)


# ---------------------------------------------------------------------------
# verification

_LOGIC_CHECK_SYSTEM = (
    "Review the Verilog for logic errors, poor practices, and flow "
    "compatibility problems. Respond with a fenced ```findings block: a "
    "JSON list of {\"severity\", \"file\", \"line\", \"message\"} objects; "
    "an empty list means the code is acceptable.")
_REPAIR_SYSTEM = (
    "Repair the Verilog so the reported findings are resolved. Emit each "
    "corrected file as a fenced ```verilog block whose first line is "
    "'// file: <path>'.")


def _logic_check(artifact: HdlArtifact, context: AgentContext) -> list[LintFinding]:
    sources = "\n\n".join(f"// {p}\n{t}" for p, t in artifact.source_files)
    text = context.ask("logic_check", _LOGIC_CHECK_SYSTEM, sources)
    raw = extract_json_block(text, "findings")
    if raw is None:
        return []
    return [LintFinding(severity=f.get("severity", "warning"),
                        file=f.get("file", ""), line=int(f.get("line", 0)),
                        message=f.get("message", "")) for f in raw]


def verify_hdl(artifact: HdlArtifact, lint_backend, context: AgentContext,
               max_repairs: int = DEFAULT_MAX_REPAIRS) -> HdlArtifact:
    """Logic-check + lint loop with bounded repair generations.

    lint_clean is set only after a lint invocation with zero findings.
    """
    if not artifact.source_files:
        raise ValueError("artifact has no source text")
    current = artifact
    repairs = 0
    while True:
        logic_findings = _logic_check(current, context)
        try:
            lint_findings = lint_backend.run(current.source_files)
        except LintBackendUnavailable:
            raise
        except OSError as e:
            raise LintBackendUnavailable(str(e)) from e
        findings = logic_findings + list(lint_findings)
        if not findings:
            return HdlArtifact(
                top_module=current.top_module,
                source_files=current.source_files,
                lint_clean=True,
                logic_check_notes="clean",
                revision=current.revision)
        if repairs >= max_repairs:
            raise VerificationExhausted(
                f"{len(findings)} findings remain after {repairs} repairs",
                findings=findings, artifact=current)
        findings_text = "\n".join(
            f"{f.severity} {f.file}:{f.line} {f.message}" for f in findings)
        sources = "\n\n".join(f"// {p}\n{t}" for p, t in current.source_files)
        text = context.ask("repair", _REPAIR_SYSTEM,
                           f"Findings:\n{findings_text}\n\nSources:\n{sources}")
        replacements = _extract_verilog_files(text, "")
        if not replacements or any(not name for name, _ in replacements):
            raise GenerationEmpty("repair response contained no named verilog block")
        merged = dict(current.source_files)
        merged.update(replacements)
        current = HdlArtifact(
            top_module=current.top_module,
            source_files=tuple(merged.items()),
            lint_clean=False,
            logic_check_notes=findings_text,
            revision=current.revision + 1)
        repairs += 1


# ---------------------------------------------------------------------------
# flow fixer

_FIX_SYSTEM = (
    "Propose a fix for the reported flow issues. Respond with a fenced "
    "```changes block: JSON {\"target\": \"flow_config\"|\"hdl_source\", "
    "\"changes\": [{\"key\", \"old\", \"new\"}], \"justification\", "
    "\"chunks\": [chunk ids used]}.")


def _validate_changes(raw: dict, registry: ParameterRegistry) -> FixProposal:
    target = raw.get("target", "flow_config")
    changes = []
    for change in raw.get("changes", ()):
        key = change["key"]
        if target == "flow_config":
            if key not in registry:
                raise UnknownParameter(key)
            registry.validate_value(key, change["new"])
        changes.append((key, change.get("old"), change["new"]))
    return FixProposal(target=target, changes=tuple(changes),
                       justification=raw.get("justification", ""),
                       provenance_chunks=tuple(raw.get("chunks", ())))


def propose_fix(issues: IssueSet, payload: PromptPayload, context: AgentContext,
                registry: ParameterRegistry,
                reprompts: int = DEFAULT_REPROMPTS) -> FixProposal:
    """Ask for a structured change list; one reprompt on invalid output."""
    if not issues and not payload.errors_section:
        raise ValueError("nothing to fix: no issues and no errors")
    prompt = payload.render()
    last_error: Exception | None = None
    for attempt in range(1 + reprompts):
        if attempt and last_error is not None:
            prompt = (payload.render()
                      + f"\n\nYour previous proposal was rejected: {last_error}."
                      " Propose again using only registered parameters.")
        text = context.ask("fix", _FIX_SYSTEM, prompt)
        try:
            raw = extract_json_block(text, "changes")
            if raw is None:
                raise UnparseableProposal("no changes block in response")
            return _validate_changes(raw, registry)
        except (UnknownParameter, UnparseableProposal, ParameterOutOfRange,
                ValueError, KeyError, TypeError) as e:
            last_error = e
    if isinstance(last_error, UnknownParameter):
        raise last_error
    raise UnparseableProposal(str(last_error))


# ---------------------------------------------------------------------------
# optimizer

_OPTIMIZE_SYSTEM = (
    "Propose candidate flow configurations to improve the optimization "
    "goal. Respond with a fenced ```configs block: a JSON list of objects, "
    "each mapping registered parameter names to new values (changes "
    "relative to the current configuration).")


def propose_optimizations(payload: PromptPayload, goal, k: int,
                          context: AgentContext, registry: ParameterRegistry,
                          incumbent: FlowConfig,
                          tried_hashes: set[str],
                          reprompts: int = DEFAULT_REPROMPTS) -> list[FlowConfig]:
    """Up to k distinct, registry-valid candidate configs, none already tried."""
    if k < 1:
        raise ValueError("k must be >= 1")
    prompt = payload.render() + f"\n\nPropose up to {k} candidate configurations."
    last_error: Exception | None = None
    for attempt in range(1 + reprompts):
        if attempt:
            prompt += f"\n\nPrevious response rejected: {last_error}."
        text = context.ask("optimize", _OPTIMIZE_SYSTEM, prompt)
        try:
            raw = extract_json_block(text, "configs")
            if raw is None:
                raise UnparseableProposal("no configs block in response")
        except UnparseableProposal as e:
            last_error = e
            continue
        candidates: list[FlowConfig] = []
        seen = set(tried_hashes) | {incumbent.content_hash()}
        for changes in raw:
            try:
                for key, value in changes.items():
                    if key not in registry:
                        raise UnknownParameter(key)
                    registry.validate_value(key, value)
                candidate = incumbent.with_changes(changes)
            except (UnknownParameter, ParameterOutOfRange, AttributeError):
                continue  # invalid candidate: skip, keep the valid ones
            digest = candidate.content_hash()
            if digest in seen:
                continue
            seen.add(digest)
            candidates.append(candidate)
            if len(candidates) == k:
                break
        if candidates:
            return candidates
        last_error = NoViableCandidates("all candidates invalid or already tried")
    raise NoViableCandidates(str(last_error))
