/** Incremental NDJSON parsing.
 *
 * Network chunks can split a line (or even a UTF-8 codepoint) anywhere;
 * the parser buffers partial input and emits each complete line's object
 * exactly once, in stream order.
 */

import type { TraceEvent } from './types.js';

export class NdjsonParser {
  private buffer = '';
  private decoder = new TextDecoder('utf-8');

  /** Feed one chunk; returns every event completed by it. */
  push(chunk: Uint8Array | string): TraceEvent[] {
    this.buffer +=
      typeof chunk === 'string' ? chunk : this.decoder.decode(chunk, { stream: true });
    const events: TraceEvent[] = [];
    let newline = this.buffer.indexOf('\n');
    while (newline >= 0) {
      const line = this.buffer.slice(0, newline).trim();
      this.buffer = this.buffer.slice(newline + 1);
      if (line.length > 0) {
        events.push(JSON.parse(line) as TraceEvent);
      }
      newline = this.buffer.indexOf('\n');
    }
    return events;
  }

  /** Drain whatever remains after the stream closes (a final line without
   * a trailing newline still counts). */
  flush(): TraceEvent[] {
    this.buffer += this.decoder.decode();
    const line = this.buffer.trim();
    this.buffer = '';
    return line.length > 0 ? [JSON.parse(line) as TraceEvent] : [];
  }
}

/** Parse a whole NDJSON document at once (stored transcripts). */
export function parseNdjson(text: string): TraceEvent[] {
  const parser = new NdjsonParser();
  const events = parser.push(text);
  return events.concat(parser.flush());
}
