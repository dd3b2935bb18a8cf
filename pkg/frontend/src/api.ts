/** Thin typed client for the fabflow HTTP API. */

import type {
  CreateDesignRequest,
  CreateDesignResponse,
  DesignDoc,
  GoalRequest,
  RunMetricsDoc,
} from "./types.js";
import type { FetchLike } from "./sse.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type AnswerOutcome = "accepted" | "no-question-pending";
export type GoalOutcome = "resuming" | "still-running";

export class FabflowClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  eventsUrl(designId: string): string {
    return `${this.baseUrl}/designs/${encodeURIComponent(designId)}/events`;
  }

  async createDesign(body: CreateDesignRequest): Promise<CreateDesignResponse> {
    return this.request("POST", "/designs", body, 201);
  }

  async getDesign(designId: string): Promise<DesignDoc> {
    return this.request("GET", `/designs/${encodeURIComponent(designId)}`);
  }

  /** A 409 means no question is pending (already answered or never asked). */
  async submitAnswer(designId: string, answer: string): Promise<AnswerOutcome> {
    const response = await this.raw(
      "POST",
      `/designs/${encodeURIComponent(designId)}/answers`,
      { answer },
    );
    if (response.status === 409) return "no-question-pending";
    await this.ensureOk(response, 200);
    return "accepted";
  }

  /** A 409 means the pipeline is still running and must be aborted first. */
  async setGoal(
    designId: string,
    goal: Partial<GoalRequest>,
  ): Promise<GoalOutcome> {
    const response = await this.raw(
      "POST",
      `/designs/${encodeURIComponent(designId)}/goal`,
      goal,
    );
    if (response.status === 409) return "still-running";
    await this.ensureOk(response, 200);
    return "resuming";
  }

  async abort(designId: string): Promise<void> {
    const response = await this.raw(
      "POST",
      `/designs/${encodeURIComponent(designId)}/abort`,
    );
    await this.ensureOk(response, 200);
  }

  async runMetrics(designId: string, jobId: string): Promise<RunMetricsDoc> {
    return this.request(
      "GET",
      `/designs/${encodeURIComponent(designId)}/runs/${encodeURIComponent(jobId)}/metrics`,
    );
  }

  private async raw(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<Response> {
    return this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers:
        body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
  }

  private async ensureOk(response: Response, expected: number): Promise<void> {
    if (response.status !== expected) {
      let detail = response.statusText;
      try {
        const doc = (await response.json()) as { error?: string };
        if (doc.error) detail = doc.error;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
    expected = 200,
  ): Promise<T> {
    const response = await this.raw(method, path, body);
    await this.ensureOk(response, expected);
    return (await response.json()) as T;
  }
}
