"""Retrieval corpus and prompt assembly.

The corpus lives on disk as one markdown file per chunk under
``corpus/<kind>/<id>.md`` with a YAML front-matter header (id, kind, title,
parameter_names, reference_count) followed by the body text. Retrieval is
deterministic lexical scoring: case-insensitive token overlap, with tokens
found in the title or parameter names weighted 3x and body hits 1x, the
whole multiplied by ``log(1 + reference_count)``. Ties break by higher
reference_count, then lexicographic id, so the ranking is a total order.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, asdict
from pathlib import Path

import yaml

from .errors import (
    BudgetTooSmallForMandatorySections,
    DuplicateChunkId,
    EmptyCorpus,
    EmptyIndex,
)
from .issues import Issue, IssueSet

CHUNK_KINDS = ("parameter_doc", "flow_doc", "prior_config", "error_solution")

_TOKEN_RE = re.compile(r"[a-z0-9_]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class DocChunk:
    id: str
    kind: str
    title: str
    body: str
    parameter_names: tuple[str, ...] = ()
    reference_count: int = 1

    def __post_init__(self):
        if self.kind not in CHUNK_KINDS:
            raise ValueError(f"unknown chunk kind {self.kind!r}")
        if not self.body:
            raise ValueError(f"chunk {self.id}: body must be non-empty")
        if self.reference_count < 0:
            raise ValueError(f"chunk {self.id}: reference_count must be >= 0")


@dataclass(frozen=True)
class Query:
    text: str
    originating_issue: Issue | None = None
    goal_tag: str | None = None

    def __post_init__(self):
        if not self.text:
            raise ValueError("query text must be non-empty")


@dataclass(frozen=True)
class RetrievedContext:
    """Score-ranked union of per-query retrieval results, deduplicated by id."""

    entries: tuple[tuple[DocChunk, float], ...]
    per_query_depth: int


@dataclass(frozen=True)
class PromptPayload:
    """Prompt sections in fixed order: metrics, errors, history, config,
    retrieved context, goal."""

    metrics_section: str
    errors_section: str
    history_section: str
    config_section: str
    retrieved_section: str
    goal_section: str

    @property
    def total_size_chars(self) -> int:
        return sum(len(s) for s in self.sections())

    def sections(self) -> tuple[str, ...]:
        return (self.metrics_section, self.errors_section, self.history_section,
                self.config_section, self.retrieved_section, self.goal_section)

    def render(self) -> str:
        return "".join(self.sections())


# ---------------------------------------------------------------------------
# corpus files

def parse_chunk_text(text: str, *, default_id: str = "") -> DocChunk:
    """Parse front-matter + body chunk file content."""
    m = re.match(r"\A---\n(.*?)\n---\n?(.*)\Z", text, re.DOTALL)
    if not m:
        raise ValueError("missing front-matter delimiter")
    header = yaml.safe_load(m.group(1)) or {}
    body = m.group(2).strip()
    return DocChunk(
        id=str(header.get("id", default_id)),
        kind=str(header.get("kind", "flow_doc")),
        title=str(header.get("title", header.get("id", default_id))),
        body=body,
        parameter_names=tuple(header.get("parameter_names") or ()),
        reference_count=int(header.get("reference_count", 1)),
    )


def render_chunk_text(chunk: DocChunk) -> str:
    header = {
        "id": chunk.id,
        "kind": chunk.kind,
        "title": chunk.title,
        "parameter_names": list(chunk.parameter_names),
        "reference_count": chunk.reference_count,
    }
    return "---\n" + yaml.safe_dump(header, sort_keys=False).strip() + "\n---\n" \
        + chunk.body + "\n"


def write_chunk(corpus_dir: str | Path, chunk: DocChunk) -> Path:
    path = Path(corpus_dir) / chunk.kind / f"{chunk.id}.md"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_chunk_text(chunk))
    return path


def increment_reference_count(corpus_dir: str | Path, chunk_id: str) -> None:
    """Bump a chunk's reference_count on disk; no-op if the chunk is absent."""
    for path in sorted(Path(corpus_dir).rglob(f"{chunk_id}.md")):
        chunk = parse_chunk_text(path.read_text(), default_id=path.stem)
        if chunk.id == chunk_id:
            bumped = DocChunk(id=chunk.id, kind=chunk.kind, title=chunk.title,
                              body=chunk.body, parameter_names=chunk.parameter_names,
                              reference_count=chunk.reference_count + 1)
            path.write_text(render_chunk_text(bumped))
            return


# ---------------------------------------------------------------------------
# index

class IndexHandle:
    """Immutable lexical index over a chunk set."""

    def __init__(self, chunks: list[DocChunk]):
        self.chunks: dict[str, DocChunk] = {}
        self._heavy_tokens: dict[str, set[str]] = {}
        self._body_tokens: dict[str, set[str]] = {}
        for chunk in chunks:
            if chunk.id in self.chunks:
                raise DuplicateChunkId(chunk.id)
            self.chunks[chunk.id] = chunk
            self._heavy_tokens[chunk.id] = set(
                tokenize(chunk.title + " " + " ".join(chunk.parameter_names)))
            self._body_tokens[chunk.id] = set(tokenize(chunk.body))

    def __len__(self):
        return len(self.chunks)

    def score(self, chunk_id: str, query_tokens: list[str]) -> float:
        heavy = self._heavy_tokens[chunk_id]
        body = self._body_tokens[chunk_id]
        raw = 0.0
        for tok in query_tokens:
            if tok in heavy:
                raw += 3.0
            if tok in body:
                raw += 1.0
        return raw * math.log1p(self.chunks[chunk_id].reference_count)


def build_index(corpus_dir: str | Path) -> IndexHandle:
    root = Path(corpus_dir)
    chunks = []
    for path in sorted(root.rglob("*.md")):
        chunk = parse_chunk_text(path.read_text(), default_id=path.stem)
        chunks.append(chunk)
    if not chunks:
        raise EmptyCorpus(f"no chunk files under {root}")
    return IndexHandle(chunks)


# ---------------------------------------------------------------------------
# query formulation

FLOW_NAME = "OpenLane"

# category -> (category keyword, violation keyword, preferred parameters)
_CATEGORY_TEMPLATES = {
    "timing": ("timing optimization", "violation",
               ("CLOCK_PERIOD", "CTS_TARGET_SKEW", "SYNTH_STRATEGY")),
    "area_congestion": ("area congestion", "violation",
                        ("FP_CORE_UTIL", "PL_TARGET_DENSITY")),
    "routing": ("routing congestion", "violation",
                ("GRT_ADJUSTMENT", "RT_MAX_LAYER")),
    "drc": ("DRC", "violation", ("PL_TARGET_DENSITY", "DIODE_INSERTION_STRATEGY")),
    "lvs": ("LVS", "error", ("DIODE_INSERTION_STRATEGY",)),
    "flow_failure": ("flow failure", "error", ()),
}

# goal dimension -> canonical lever parameter
_GOAL_PARAMETERS = {"area": "FP_CORE_UTIL", "delay": "CLOCK_PERIOD",
                    "power": "SYNTH_SIZING"}


def _config_params(config) -> dict:
    if config is None:
        return {}
    return dict(getattr(config, "parameters", config))


def formulate_queries(issues: IssueSet, config=None, goal=None) -> list[Query]:
    """One query per issue plus one per goal dimension.

    Issue template: "<flow> <category keyword> <dominant parameter>
    <violation keyword>"; the dominant parameter is the first
    category-preferred parameter present in the configuration (falling back
    to the first preferred parameter).
    """
    params = _config_params(config)
    queries: list[Query] = []
    for issue in issues:
        keyword, violation_word, preferred = _CATEGORY_TEMPLATES[issue.category]
        dominant = next((p for p in preferred if p in params),
                        preferred[0] if preferred else "")
        parts = [FLOW_NAME, keyword] + ([dominant] if dominant else []) + [violation_word]
        queries.append(Query(text=" ".join(parts), originating_issue=issue))
    if goal is not None:
        for dim in goal.priority_dimensions():
            queries.append(Query(
                text=f"{dim.capitalize()} reduction via {_GOAL_PARAMETERS[dim]}",
                goal_tag=dim))
    return queries


# ---------------------------------------------------------------------------
# retrieval

def _rank_key(index: IndexHandle):
    def key(item):
        chunk, score = item
        return (-score, -chunk.reference_count, chunk.id)
    return key


def retrieve(index: IndexHandle, queries: list[Query], n: int = 5) -> RetrievedContext:
    """Per-query top-n, unioned and deduplicated by id keeping the max score."""
    if len(index) == 0:
        raise EmptyIndex("index holds no chunks")
    if n < 1:
        raise ValueError("n must be >= 1")
    best: dict[str, float] = {}
    for query in queries:
        qtokens = tokenize(query.text)
        scored = [(chunk, index.score(cid, qtokens))
                  for cid, chunk in index.chunks.items()]
        scored.sort(key=_rank_key(index))
        for chunk, score in scored[:n]:
            if chunk.id not in best or score > best[chunk.id]:
                best[chunk.id] = score
    entries = [(index.chunks[cid], score) for cid, score in best.items()]
    entries.sort(key=_rank_key(index))
    return RetrievedContext(entries=tuple(entries), per_query_depth=n)


# ---------------------------------------------------------------------------
# prompt assembly

DEFAULT_BUDGET_CHARS = 24000
DEFAULT_RETRIEVAL_DEPTH = 5


def _render_metrics(metrics) -> str:
    lines = ["## Run metrics"]
    for name, value in metrics.to_dict().items():
        if value is not None:
            lines.append(f"- {name}: {value}")
    return "\n".join(lines) + "\n"


def _render_errors(errors) -> str:
    if not errors:
        return ""
    lines = ["## Flow errors"]
    for err in errors:
        lines.append(f"- [{err.stage}] {err.code or 'ERROR'}: {err.message}")
    return "\n".join(lines) + "\n"


def _render_history_lines(history) -> list[str]:
    if history is None:
        return []
    render = getattr(history, "render_lines", None)
    if callable(render):
        return list(render())
    return [str(e) for e in getattr(history, "entries", [])]


def _render_config(config) -> str:
    lines = ["## Current configuration"]
    for name, value in _config_params(config).items():
        lines.append(f"- {name} = {value}")
    return "\n".join(lines) + "\n"


def _render_goal(goal) -> str:
    if goal is None:
        return ""
    return (f"## Optimization goal\npriority: {goal.priority}; weights "
            f"(area, delay, power) = {goal.weights}\n")


def _render_chunk(chunk: DocChunk, score: float) -> str:
    return f"### [{chunk.kind}] {chunk.title} (score {score:.3f})\n{chunk.body}\n"


def assemble_prompt(metrics, errors, history, config,
                    retrieved: RetrievedContext | None, goal=None,
                    budget_chars: int = DEFAULT_BUDGET_CHARS) -> PromptPayload:
    """Assemble the prompt sections in fixed order under a character budget.

    Over budget, retrieved chunks are dropped lowest-score-first, then
    history entries oldest-first. Metrics, errors, config, and goal are
    never truncated.
    """
    if budget_chars < 1000:
        raise ValueError("budget_chars must be >= 1000")

    metrics_section = _render_metrics(metrics)
    errors_section = _render_errors(errors)
    config_section = _render_config(config)
    goal_section = _render_goal(goal)
    mandatory = (len(metrics_section) + len(errors_section)
                 + len(config_section) + len(goal_section))
    if mandatory > budget_chars:
        raise BudgetTooSmallForMandatorySections(
            f"mandatory sections need {mandatory} chars, budget is {budget_chars}")

    history_lines = _render_history_lines(history)
    history_header = "## Optimization history\n" if history_lines else ""
    retrieved_entries = list(retrieved.entries) if retrieved else []
    retrieved_header = "## Retrieved context\n" if retrieved_entries else ""

    def sizes(kept_history: list[str], kept_chunks) -> int:
        hist = (history_header + "".join(line + "\n" for line in kept_history)
                if kept_history else "")
        retr = (retrieved_header + "".join(_render_chunk(c, s) for c, s in kept_chunks)
                if kept_chunks else "")
        return mandatory + len(hist) + len(retr), hist, retr

    kept_chunks = list(retrieved_entries)
    kept_history = list(history_lines)
    total, hist_text, retr_text = sizes(kept_history, kept_chunks)
    # drop retrieved lowest-score-first (entries are sorted descending)
    while total > budget_chars and kept_chunks:
        kept_chunks.pop()
        total, hist_text, retr_text = sizes(kept_history, kept_chunks)
    # then history oldest-first
    while total > budget_chars and kept_history:
        kept_history.pop(0)
        total, hist_text, retr_text = sizes(kept_history, kept_chunks)

    return PromptPayload(
        metrics_section=metrics_section,
        errors_section=errors_section,
        history_section=hist_text,
        config_section=config_section,
        retrieved_section=retr_text,
        goal_section=goal_section,
    )
