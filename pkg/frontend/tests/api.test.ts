/** Client behavior against an in-process stand-in implementing the same
 * HTTP contract as the service: status codes, 409 semantics, and the
 * one-question-at-a-time planning dialogue. */

import { describe, expect, it } from "vitest";

import { ApiError, FabflowClient } from "../src/api.js";
import { initialState, reduceAll } from "../src/model.js";
import type { FetchLike } from "../src/sse.js";
import { autoAnswer, submitPlannerAnswer } from "../src/planning.js";
import type { DesignDoc, FlowEvent } from "../src/types.js";

interface MockDesign {
  doc: DesignDoc;
  questions: string[]; // remaining planner questions
}

/** Minimal in-memory twin of the design service. */
class MockServer {
  designs = new Map<string, MockDesign>();

  constructor(private readonly plannedQuestions: string[] = []) {}

  fetchImpl: FetchLike = async (url, init) => {
    const method = init?.method ?? "GET";
    const path = new URL(url, "http://test").pathname;
    const body = init?.body ? JSON.parse(String(init.body)) : {};

    if (method === "POST" && path === "/designs") {
      if (!body.prompt) return json(422, { error: "prompt is required" });
      const id = body.design_id ?? "generated";
      if (this.designs.has(id)) {
        return json(409, { error: `design ${id} already exists` });
      }
      const questions = [...this.plannedQuestions];
      this.designs.set(id, {
        questions,
        doc: {
          design_id: id,
          phase: "planning",
          running: true,
          goal: {
            priority: body.goal?.priority ?? "balanced",
            weights: [1 / 3, 1 / 3, 1 / 3],
            stop_after_runs: body.goal?.stop_after_runs ?? 100,
            stop_after_stale_rounds: 3,
          },
          runs_done: 0,
          best_cost: null,
          last_seq: 0,
          pending_question: questions[0] ?? null,
          abort_cause: null,
        },
      });
      if (questions.length === 0) this.finish(id);
      return json(201, {
        design_id: id,
        goal: this.designs.get(id)!.doc.goal,
      });
    }

    const match = path.match(/^\/designs\/([^/]+)(\/.*)?$/);
    if (!match) return json(404, { error: "not found" });
    const design = this.designs.get(match[1]!);
    if (!design) return json(404, { error: `unknown design ${match[1]}` });
    const rest = match[2] ?? "";

    if (method === "GET" && rest === "") return json(200, design.doc);

    if (method === "POST" && rest === "/answers") {
      if (typeof body.answer !== "string" || body.answer === "") {
        return json(422, { error: "answer is required" });
      }
      if (design.doc.pending_question === null) {
        return json(409, { error: "no question is pending" });
      }
      design.questions.shift();
      design.doc.pending_question = design.questions[0] ?? null;
      if (design.doc.pending_question === null) this.finish(design.doc.design_id);
      return json(200, { accepted: true });
    }

    if (method === "POST" && rest === "/goal") {
      if (design.doc.running) {
        return json(409, { error: "design is running; abort it first" });
      }
      design.doc.goal.priority = body.priority ?? design.doc.goal.priority;
      design.doc.running = true;
      return json(200, { design_id: design.doc.design_id, goal: design.doc.goal });
    }

    if (method === "POST" && rest === "/abort") {
      design.doc.phase = "aborted";
      design.doc.running = false;
      design.doc.abort_cause = "aborted by user";
      return json(200, { design_id: design.doc.design_id, aborting: true });
    }

    const metrics = rest.match(/^\/runs\/([^/]+)\/metrics$/);
    if (method === "GET" && metrics) {
      if (metrics[1] !== "job-1") {
        return json(404, { error: `no metrics for job ${metrics[1]}` });
      }
      return json(200, { design_name: design.doc.design_id, area_um2: 3004.62 });
    }

    return json(404, { error: "not found" });
  };

  private finish(id: string): void {
    const design = this.designs.get(id)!;
    design.doc.phase = "done";
    design.doc.running = false;
    design.doc.runs_done = 12;
    design.doc.best_cost = 0.81;
    design.doc.last_seq = 48;
  }
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

describe("FabflowClient", () => {
  it("creates a design and reads it back", async () => {
    const server = new MockServer();
    const client = new FabflowClient("", server.fetchImpl);
    const created = await client.createDesign({
      prompt: "build a multiplier",
      design_id: "spm",
      goal: { priority: "area" },
    });
    expect(created.design_id).toBe("spm");
    expect(created.goal.priority).toBe("area");
    const doc = await client.getDesign("spm");
    expect(doc.phase).toBe("done");
    expect(doc.runs_done).toBe(12);
  });

  it("maps duplicate designs and unknown designs to ApiError", async () => {
    const server = new MockServer();
    const client = new FabflowClient("", server.fetchImpl);
    await client.createDesign({ prompt: "x", design_id: "spm" });
    await expect(
      client.createDesign({ prompt: "x", design_id: "spm" }),
    ).rejects.toMatchObject({ name: "ApiError", status: 409 });
    await expect(client.getDesign("ghost")).rejects.toThrowError(ApiError);
  });

  it("rejects empty prompts with 422", async () => {
    const client = new FabflowClient("", new MockServer().fetchImpl);
    await expect(client.createDesign({ prompt: "" })).rejects.toMatchObject({
      status: 422,
    });
  });

  it("treats answer 409 as no-question-pending, not an error", async () => {
    const server = new MockServer(["Operand width?"]);
    const client = new FabflowClient("", server.fetchImpl);
    await client.createDesign({ prompt: "x", design_id: "spm" });
    expect(await client.submitAnswer("spm", "8 bits")).toBe("accepted");
    expect(await client.submitAnswer("spm", "again")).toBe(
      "no-question-pending",
    );
  });

  it("reports still-running when setting a goal mid-run", async () => {
    const server = new MockServer(["q?"]); // stays in planning -> running
    const client = new FabflowClient("", server.fetchImpl);
    await client.createDesign({ prompt: "x", design_id: "spm" });
    expect(await client.setGoal("spm", { priority: "area" })).toBe(
      "still-running",
    );
    await client.abort("spm");
    expect(await client.setGoal("spm", { priority: "area" })).toBe("resuming");
  });

  it("fetches run metrics and surfaces 404 for unknown jobs", async () => {
    const server = new MockServer();
    const client = new FabflowClient("", server.fetchImpl);
    await client.createDesign({ prompt: "x", design_id: "spm" });
    const metrics = await client.runMetrics("spm", "job-1");
    expect(metrics.area_um2).toBeCloseTo(3004.62);
    await expect(client.runMetrics("spm", "ghost")).rejects.toMatchObject({
      status: 404,
    });
  });
});

describe("planning dialogue", () => {
  const questionEvent: FlowEvent = {
    schema_version: 1,
    seq: 2,
    ts: 0,
    type: "question",
    data: { question_id: 1, question: "Operand width?" },
  };

  it("submits the locally pending question and reports acceptance", async () => {
    const server = new MockServer(["Operand width?"]);
    const client = new FabflowClient("", server.fetchImpl);
    await client.createDesign({ prompt: "x", design_id: "spm" });
    const state = reduceAll([questionEvent], initialState("spm"));
    const result = await submitPlannerAnswer(client, state, "8 bits");
    expect(result).toEqual({ kind: "accepted", question: "Operand width?" });
  });

  it("refuses to send when nothing is pending locally", async () => {
    const server = new MockServer(["Operand width?"]);
    const client = new FabflowClient("", server.fetchImpl);
    await client.createDesign({ prompt: "x", design_id: "spm" });
    const result = await submitPlannerAnswer(client, initialState("spm"), "hi");
    expect(result).toEqual({ kind: "nothing-pending" });
    // the server-side question is untouched
    expect((await client.getDesign("spm")).pending_question).toBe(
      "Operand width?",
    );
  });

  it("detects a stale local question when the server moved on", async () => {
    const server = new MockServer(["Operand width?"]);
    const client = new FabflowClient("", server.fetchImpl);
    await client.createDesign({ prompt: "x", design_id: "spm" });
    await client.submitAnswer("spm", "8 bits"); // answered elsewhere
    const state = reduceAll([questionEvent], initialState("spm"));
    const result = await submitPlannerAnswer(client, state, "8 bits");
    expect(result).toEqual({ kind: "stale-question" });
  });

  it("auto-answers the full question sequence in order", async () => {
    const server = new MockServer(["Width?", "Signed?"]);
    const client = new FabflowClient("", server.fetchImpl);
    await client.createDesign({ prompt: "x", design_id: "spm" });
    const used = await autoAnswer(client, "spm", ["8 bits", "unsigned"], 1);
    expect(used).toBe(2);
    expect((await client.getDesign("spm")).phase).toBe("done");
  });

  it("fails loudly when it runs out of prepared answers", async () => {
    const server = new MockServer(["Width?", "Signed?"]);
    const client = new FabflowClient("", server.fetchImpl);
    await client.createDesign({ prompt: "x", design_id: "spm" });
    await expect(autoAnswer(client, "spm", ["8 bits"], 1)).rejects.toThrow(
      /no prepared answer/,
    );
  });
});
