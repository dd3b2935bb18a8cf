/** Wire types mirrored from the fabflow HTTP/SSE API. */

export type Phase =
  | "planning"
  | "generating"
  | "verifying"
  | "baselining"
  | "optimizing"
  | "done"
  | "aborted";

export type EventType =
  | "phase"
  | "question"
  | "answer"
  | "job_status"
  | "run_metrics"
  | "round"
  | "done"
  | "error";

export type JobStatus = "queued" | "running" | "succeeded" | "failed";

/** One record of a design's append-only event log, as streamed over SSE. */
export interface FlowEvent {
  schema_version: number;
  seq: number;
  ts: number;
  type: EventType;
  data: Record<string, unknown>;
}

export interface RunMetricsDoc {
  design_name: string;
  area_um2: number | null;
  die_width_um: number | null;
  die_height_um: number | null;
  critical_path_delay_ps: number | null;
  clock_period_ps: number | null;
  worst_setup_slack_ps: number | null;
  worst_hold_slack_ps: number | null;
  power_uw: number | null;
  placement_utilization_pct: number | null;
  drc_violation_count: number;
  lvs_error_count: number;
  run_wall_seconds: number | null;
  area_source: "cell" | "die";
}

export interface GoalDoc {
  priority: string;
  weights: number[];
  stop_after_runs: number;
  stop_after_stale_rounds: number;
}

export interface CostDoc {
  total_usd: string;
  per_tag: Record<string, string>;
}

/** GET /designs/{id} response. */
export interface DesignDoc {
  design_id: string;
  phase: Phase;
  running: boolean;
  goal: GoalDoc;
  runs_done: number;
  best_cost: number | null;
  last_seq: number;
  pending_question: string | null;
  abort_cause: string | null;
  cost?: CostDoc;
}

/** POST /designs request body. */
export interface CreateDesignRequest {
  prompt: string;
  design_id?: string;
  goal?: Partial<GoalRequest>;
}

export interface GoalRequest {
  priority: string;
  stop_after_runs: number;
  stop_after_stale_rounds: number;
}

export interface CreateDesignResponse {
  design_id: string;
  goal: GoalDoc;
}
