/** Incremental server-sent-events parsing plus a resumable event stream.
 *
 * The service uses the event sequence number as the SSE id, so after a
 * dropped connection the stream client reconnects with `?after=<last id>`
 * and a Last-Event-ID header and never re-delivers or skips an event.
 */

import type { FlowEvent } from "./types.js";

export interface SseMessage {
  id: string | null;
  event: string | null;
  data: string;
}

/** Feed arbitrary text chunks, get back complete SSE messages. */
export class SseParser {
  private buffer = "";

  push(chunk: string): SseMessage[] {
    this.buffer += chunk.replace(/\r\n/g, "\n").replace(/\r/g, "\n");
    const messages: SseMessage[] = [];
    let cut: number;
    while ((cut = this.buffer.indexOf("\n\n")) !== -1) {
      const block = this.buffer.slice(0, cut);
      this.buffer = this.buffer.slice(cut + 2);
      const message = parseBlock(block);
      if (message !== null) messages.push(message);
    }
    return messages;
  }
}

function parseBlock(block: string): SseMessage | null {
  let id: string | null = null;
  let event: string | null = null;
  const data: string[] = [];
  for (const line of block.split("\n")) {
    if (line === "" || line.startsWith(":")) continue; // comment / keepalive
    const colon = line.indexOf(":");
    const field = colon === -1 ? line : line.slice(0, colon);
    let value = colon === -1 ? "" : line.slice(colon + 1);
    if (value.startsWith(" ")) value = value.slice(1);
    if (field === "id") id = value;
    else if (field === "event") event = value;
    else if (field === "data") data.push(value);
  }
  if (id === null && event === null && data.length === 0) return null;
  return { id, event, data: data.join("\n") };
}

/** Parse a complete SSE response body. */
export function parseSseText(text: string): SseMessage[] {
  const parser = new SseParser();
  // a trailing blank line terminates the final message
  return parser.push(text.endsWith("\n\n") ? text : text + "\n\n");
}

export function toFlowEvent(message: SseMessage): FlowEvent {
  return JSON.parse(message.data) as FlowEvent;
}

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

export interface StreamOptions {
  /** resume after this sequence number (0 = from the beginning) */
  after?: number;
  onEvent: (event: FlowEvent) => void;
  fetchImpl?: FetchLike;
  /** reconnect at most this many times after premature stream ends */
  maxReconnects?: number;
}

/** True once the stream has delivered everything it ever will. */
export function isTerminalEvent(event: FlowEvent): boolean {
  return (
    event.type === "done" ||
    (event.type === "phase" && event.data["phase"] === "aborted")
  );
}

/**
 * Consume a design's event stream to completion, transparently resuming
 * from the last seen sequence number when the connection drops.
 * Resolves with the last sequence delivered.
 */
export async function streamEvents(
  eventsUrl: string,
  options: StreamOptions,
): Promise<number> {
  const fetchImpl = options.fetchImpl ?? fetch;
  const maxReconnects = options.maxReconnects ?? 5;
  let cursor = options.after ?? 0;
  let attempts = 0;

  for (;;) {
    const joiner = eventsUrl.includes("?") ? "&" : "?";
    const url = `${eventsUrl}${joiner}after=${cursor}`;
    const response = await fetchImpl(url, {
      headers: { Accept: "text/event-stream", "Last-Event-ID": String(cursor) },
    });
    if (!response.ok || response.body === null) {
      throw new Error(`event stream failed with status ${response.status}`);
    }

    const parser = new SseParser();
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    let terminal = false;
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      for (const message of parser.push(decoder.decode(value, { stream: true }))) {
        if (message.data === "") continue;
        const event = toFlowEvent(message);
        if (event.seq <= cursor) continue; // duplicate after reconnect
        cursor = event.seq;
        options.onEvent(event);
        if (isTerminalEvent(event)) terminal = true;
      }
      if (terminal) {
        await reader.cancel().catch(() => undefined);
        break;
      }
    }
    if (terminal) return cursor;
    attempts += 1;
    if (attempts > maxReconnects) {
      throw new Error(`event stream ended ${attempts} times before completion`);
    }
  }
}
