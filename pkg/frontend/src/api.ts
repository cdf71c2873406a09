/** HTTP client for the tutoring service: session management plus the
 * streaming ask call, yielding trace events as the server emits them. */

import { NdjsonParser } from './ndjson.js';
import type { AskOptions, TraceEvent } from './types.js';

export class StreamInterrupted extends Error {
  constructor() {
    super('connection dropped before the stream completed');
    this.name = 'StreamInterrupted';
  }
}

export async function createSession(
  serverUrl: string,
  mode: 'concept' | 'calculation',
): Promise<{ session_id: string; mode: string }> {
  const response = await fetch(`${serverUrl}/api/sessions`, {
    method: 'POST',
    headers: { 'Content-Type': 'application/json' },
    body: JSON.stringify({ mode }),
  });
  if (!response.ok) {
    throw new Error(`create session failed: ${response.status}`);
  }
  return (await response.json()) as { session_id: string; mode: string };
}

export async function fetchTranscript(serverUrl: string, sessionId: string): Promise<unknown> {
  const response = await fetch(`${serverUrl}/api/sessions/${sessionId}`);
  if (!response.ok) {
    throw new Error(`transcript fetch failed: ${response.status}`);
  }
  return response.json();
}

/** POST the question and yield each trace event in seq order. Throws
 * StreamInterrupted when the connection closes before the done event; the
 * session itself stays usable for the next ask. */
export async function* connectAndStream(
  serverUrl: string,
  sessionId: string,
  question: string,
  options: AskOptions = {},
): AsyncGenerator<TraceEvent> {
  const response = await fetch(`${serverUrl}/api/sessions/${sessionId}/ask`, {
    method: 'POST',
    headers: { 'Content-Type': 'application/json' },
    body: JSON.stringify({ question, options }),
  });
  if (!response.ok || response.body === null) {
    throw new Error(`ask failed: ${response.status}`);
  }

  const reader = response.body.getReader();
  const parser = new NdjsonParser();
  let sawDone = false;
  for (;;) {
    const { done, value } = await reader.read();
    if (done) break;
    for (const event of parser.push(value)) {
      sawDone = sawDone || event.event_type === 'done';
      yield event;
    }
  }
  for (const event of parser.flush()) {
    sawDone = sawDone || event.event_type === 'done';
    yield event;
  }
  if (!sawDone) {
    throw new StreamInterrupted();
  }
}
