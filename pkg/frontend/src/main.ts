/** Browser entry point: a single-page dashboard over the design API. */

import { FabflowClient } from "./api.js";
import {
  applyEvent,
  formatCost,
  formatNumber,
  initialState,
  pendingQuestion,
  type ClientState,
} from "./model.js";
import { streamEvents } from "./sse.js";
import { submitPlannerAnswer } from "./planning.js";

const client = new FabflowClient("");
let state: ClientState = initialState();
let streaming = false;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

function render(): void {
  el("phase").textContent = state.phase;
  el("phase").dataset["phase"] = state.phase;
  el("best-cost").textContent = formatCost(state.bestCost);
  el("runs-done").textContent = String(state.runsDone);

  const question = pendingQuestion(state);
  el("question-box").hidden = question === null;
  if (question !== null) el("question-text").textContent = question.question;

  el("abort-cause").textContent = state.abortCause ?? "";

  const tbody = el<HTMLTableSectionElement>("runs-body");
  tbody.replaceChildren(
    ...state.runs.map((run) => {
      const tr = document.createElement("tr");
      const cells = [
        run.jobId,
        run.origin ?? "",
        run.status,
        formatNumber(run.metrics?.area_um2 ?? null),
        formatNumber(run.metrics?.critical_path_delay_ps ?? null),
        formatNumber(run.metrics?.power_uw ?? null),
        formatCost(run.scalarCost),
      ];
      for (const text of cells) {
        const td = document.createElement("td");
        td.textContent = text;
        tr.appendChild(td);
      }
      return tr;
    }),
  );

  renderSparkline(state.sparkline);
}

function renderSparkline(series: number[]): void {
  const svg = el("sparkline");
  if (series.length === 0) {
    svg.replaceChildren();
    return;
  }
  const width = 240;
  const height = 48;
  const max = Math.max(...series, 1e-9);
  const min = Math.min(...series);
  const span = max - min || 1;
  const points = series
    .map((value, i) => {
      const x = series.length === 1 ? 0 : (i / (series.length - 1)) * width;
      const y = height - ((value - min) / span) * (height - 4) - 2;
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
  const line = document.createElementNS("http://www.w3.org/2000/svg", "polyline");
  line.setAttribute("points", points);
  line.setAttribute("fill", "none");
  line.setAttribute("stroke", "currentColor");
  line.setAttribute("stroke-width", "1.5");
  svg.replaceChildren(line);
}

async function follow(designId: string): Promise<void> {
  if (streaming) return;
  streaming = true;
  state = initialState(designId);
  render();
  try {
    await streamEvents(client.eventsUrl(designId), {
      onEvent: (event) => {
        state = applyEvent(state, event);
        render();
      },
    });
  } finally {
    streaming = false;
  }
}

function wire(): void {
  el<HTMLFormElement>("new-form").addEventListener("submit", async (e) => {
    e.preventDefault();
    const prompt = el<HTMLInputElement>("prompt").value.trim();
    if (prompt === "") return;
    const created = await client.createDesign({
      prompt,
      goal: { priority: el<HTMLSelectElement>("priority").value },
    });
    void follow(created.design_id);
  });

  el<HTMLFormElement>("answer-form").addEventListener("submit", async (e) => {
    e.preventDefault();
    const input = el<HTMLInputElement>("answer");
    const result = await submitPlannerAnswer(client, state, input.value);
    if (result.kind === "accepted") input.value = "";
    render();
  });

  el<HTMLButtonElement>("abort-btn").addEventListener("click", () => {
    if (state.designId !== null) void client.abort(state.designId);
  });
}

if (typeof document !== "undefined") {
  wire();
}
