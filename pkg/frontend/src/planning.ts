/** Planning dialogue control: the service asks at most one question at a
 * time, and unsolicited answers are rejected with 409. This helper keeps
 * the client honest about that contract. */

import type { FabflowClient } from "./api.js";
import type { ClientState } from "./model.js";
import { pendingQuestion } from "./model.js";

export type SubmitResult =
  | { kind: "accepted"; question: string }
  | { kind: "nothing-pending" }
  | { kind: "stale-question" };

/**
 * Submit an answer to the question the local state believes is pending.
 * Reconciles with the server: if the server has already moved on, the
 * caller learns the local question was stale instead of seeing an error.
 */
export async function submitPlannerAnswer(
  client: FabflowClient,
  state: ClientState,
  answer: string,
): Promise<SubmitResult> {
  const turn = pendingQuestion(state);
  if (turn === null || state.designId === null) {
    return { kind: "nothing-pending" };
  }
  const outcome = await client.submitAnswer(state.designId, answer);
  if (outcome === "no-question-pending") {
    return { kind: "stale-question" };
  }
  return { kind: "accepted", question: turn.question };
}

/**
 * Answer every planner question from a prepared list as it arrives, until
 * the design leaves the planning phase. Mirrors non-interactive usage.
 */
export async function autoAnswer(
  client: FabflowClient,
  designId: string,
  answers: readonly string[],
  pollMs = 50,
  timeoutMs = 30_000,
): Promise<number> {
  let used = 0;
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    const doc = await client.getDesign(designId);
    if (doc.phase !== "planning" && doc.pending_question === null) return used;
    if (doc.pending_question !== null) {
      const answer = answers[used];
      if (answer === undefined) {
        throw new Error(`no prepared answer for: ${doc.pending_question}`);
      }
      if ((await client.submitAnswer(designId, answer)) === "accepted") {
        used += 1;
      }
    }
    await sleep(pollMs);
  }
  throw new Error("planning did not finish before the timeout");
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
