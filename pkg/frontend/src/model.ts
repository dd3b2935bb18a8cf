/** Pure client-side state: a reducer folding the design's event stream
 * into everything the UI renders. Events are idempotent by sequence
 * number, so replays and reconnect overlaps cannot corrupt the view. */

import type {
  DesignDoc,
  FlowEvent,
  JobStatus,
  Phase,
  RunMetricsDoc,
} from "./types.js";

export interface RunRow {
  jobId: string;
  status: JobStatus;
  origin: string | null;
  metrics: RunMetricsDoc | null;
  scalarCost: number | null;
  /** flow stage where a failed run broke down, from its issue records */
  failureStage: string | null;
}

export interface DialogueTurn {
  questionId: number;
  question: string;
  answer: string | null;
}

export interface RoundRow {
  round: number;
  stale: boolean;
  runsDone: number;
}

export interface ClientState {
  designId: string | null;
  phase: Phase;
  lastSeq: number;
  runs: RunRow[];
  runsDone: number;
  bestCost: number | null;
  /** best-cost-so-far after each completed run; non-increasing */
  sparkline: number[];
  rounds: RoundRow[];
  dialogue: DialogueTurn[];
  done: boolean;
  abortCause: string | null;
  errors: string[];
}

export function initialState(designId: string | null = null): ClientState {
  return {
    designId,
    phase: "planning",
    lastSeq: 0,
    runs: [],
    runsDone: 0,
    bestCost: null,
    sparkline: [],
    rounds: [],
    dialogue: [],
    done: false,
    abortCause: null,
    errors: [],
  };
}

/** The single outstanding planner question, if any. */
export function pendingQuestion(state: ClientState): DialogueTurn | null {
  const last = state.dialogue[state.dialogue.length - 1];
  return last !== undefined && last.answer === null ? last : null;
}

export function applyEvent(state: ClientState, event: FlowEvent): ClientState {
  if (event.seq <= state.lastSeq) return state; // duplicate or stale
  const next: ClientState = { ...state, lastSeq: event.seq };
  const data = event.data;

  switch (event.type) {
    case "phase": {
      next.phase = data["phase"] as Phase;
      if (next.phase === "aborted") {
        next.abortCause = (data["cause"] as string | undefined) ?? null;
      }
      break;
    }
    case "question": {
      next.dialogue = [
        ...state.dialogue,
        {
          questionId: data["question_id"] as number,
          question: data["question"] as string,
          answer: null,
        },
      ];
      break;
    }
    case "answer": {
      const id = data["question_id"] as number;
      next.dialogue = state.dialogue.map((turn) =>
        turn.questionId === id && turn.answer === null
          ? { ...turn, answer: data["answer"] as string }
          : turn,
      );
      break;
    }
    case "job_status": {
      const jobId = data["job_id"] as string;
      const status = data["status"] as JobStatus;
      next.runs = upsertRun(state.runs, jobId, (row) => ({ ...row, status }));
      break;
    }
    case "run_metrics": {
      const jobId = data["job_id"] as string;
      const status = data["status"] as JobStatus;
      const cost = (data["scalar_cost"] as number | null) ?? null;
      const issues = (data["issues"] as Array<Record<string, unknown>>) ?? [];
      const failure = issues.find((i) => i["category"] === "flow_failure");
      next.runs = upsertRun(state.runs, jobId, (row) => ({
        ...row,
        status,
        origin: (data["origin"] as string | undefined) ?? row.origin,
        metrics: (data["metrics"] as RunMetricsDoc | null) ?? null,
        scalarCost: cost,
        failureStage:
          status === "failed" && failure !== undefined
            ? ((failure["location"] as string | undefined) ?? null)
            : row.failureStage,
      }));
      next.runsDone = state.runsDone + 1;
      if (status === "succeeded" && cost !== null) {
        next.bestCost =
          state.bestCost === null ? cost : Math.min(state.bestCost, cost);
      }
      if (next.bestCost !== null) {
        next.sparkline = [...state.sparkline, next.bestCost];
      }
      break;
    }
    case "round": {
      next.rounds = [
        ...state.rounds,
        {
          round: data["round"] as number,
          stale: data["stale"] as boolean,
          runsDone: data["runs_done"] as number,
        },
      ];
      break;
    }
    case "done": {
      next.done = true;
      const cost = (data["best_cost"] as number | null) ?? null;
      if (cost !== null) next.bestCost = cost;
      next.runsDone = data["runs_done"] as number;
      break;
    }
    case "error": {
      next.errors = [...state.errors, String(data["message"] ?? "error")];
      break;
    }
  }
  return next;
}

function upsertRun(
  runs: RunRow[],
  jobId: string,
  update: (row: RunRow) => RunRow,
): RunRow[] {
  const index = runs.findIndex((row) => row.jobId === jobId);
  if (index === -1) {
    const fresh: RunRow = {
      jobId,
      status: "queued",
      origin: null,
      metrics: null,
      scalarCost: null,
      failureStage: null,
    };
    return [...runs, update(fresh)];
  }
  return runs.map((row, i) => (i === index ? update(row) : row));
}

export function reduceAll(
  events: Iterable<FlowEvent>,
  start: ClientState = initialState(),
): ClientState {
  let state = start;
  for (const event of events) state = applyEvent(state, event);
  return state;
}

/** Seed a reducer state from GET /designs/{id} when no events are loaded. */
export function fromDesignDoc(doc: DesignDoc): ClientState {
  const state = initialState(doc.design_id);
  state.phase = doc.phase;
  state.runsDone = doc.runs_done;
  state.bestCost = doc.best_cost;
  state.done = doc.phase === "done";
  state.abortCause = doc.abort_cause;
  return state;
}

/** Costs and metrics render with exactly two decimal places. */
export function formatNumber(value: number | null): string {
  return value === null ? "—" : value.toFixed(2);
}

export function formatCost(value: number | null): string {
  return formatNumber(value);
}
