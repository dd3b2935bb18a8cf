"""fabflow: natural-language-to-layout flow orchestration.

Parses flow reports into structured PPA metrics, detects design issues,
retrieves targeted documentation, drives LLM agents for planning, HDL
generation, verification, and configuration repair, and schedules parallel
flow runs toward a user-defined PPA goal.
"""

from .agents import DesignSpec, FixProposal, HdlArtifact
from .flowexec import FlowConfig, RunJob, SimulatedBackend, SubprocessBackend, \
    bench_parallel, execute, run_parallel, simulated_ppa
from .gateway import GenerationRequest, GenerationResult, HttpProvider, \
    MockProvider, accumulate_cost, generate
from .issues import DetectionThresholds, Issue, IssueSet, detect
from .metrics import FlowErrorRecord, PpaDelta, PpaRatio, RunMetrics, \
    compute_delta, compute_ratio, parse_run_artifacts
from .orchestrator import BackendSet, GridOptimizer, OptimizationGoal, \
    OptimizationHistory, PipelineState, StateStore, promote_successful_chunks, \
    resume_pipeline, run_pipeline, scalar_cost
from .ragstore import DocChunk, Query, RetrievedContext, assemble_prompt, \
    build_index, formulate_queries, retrieve
from .registry import ParameterRegistry, load_registry

__version__ = "0.1.0"
