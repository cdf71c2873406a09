import { describe, expect, it } from 'vitest';

import { NdjsonParser, parseNdjson } from '../src/ndjson.js';
import type { TraceEvent } from '../src/types.js';

const FIXTURE_EVENTS: TraceEvent[] = [
  { event_type: 'retrieval', payload: { chunks: [{ chunk_id: 'd0:0001', text: 'fémur & tibia', similarity: 0.93, rank: 0 }] }, seq: 0 },
  { event_type: 'answer', payload: { answer: true, context: 'évidence', confidence: 0.8, parse_ok: true }, seq: 1 },
  { event_type: 'done', payload: {}, seq: 2 },
];

const FIXTURE_TEXT = FIXTURE_EVENTS.map((e) => JSON.stringify(e)).join('\n') + '\n';

describe('NdjsonParser', () => {
  it('parses a complete stream of three events in order', () => {
    const parser = new NdjsonParser();
    const events = [...parser.push(FIXTURE_TEXT), ...parser.flush()];
    expect(events).toEqual(FIXTURE_EVENTS);
  });

  it('parses identically when the stream is split at every byte offset', () => {
    const bytes = new TextEncoder().encode(FIXTURE_TEXT);
    for (let cut = 0; cut <= bytes.length; cut++) {
      const parser = new NdjsonParser();
      const events = [
        ...parser.push(bytes.slice(0, cut)),
        ...parser.push(bytes.slice(cut)),
        ...parser.flush(),
      ];
      expect(events, `split at byte ${cut}`).toEqual(FIXTURE_EVENTS);
    }
  });

  it('survives splits inside multibyte codepoints at every offset', () => {
    // Chunked transfer can cut a UTF-8 sequence in half; the decoder must
    // stitch it back together. The fixture includes 2-byte codepoints.
    const bytes = new TextEncoder().encode(FIXTURE_TEXT);
    for (let cut = 1; cut < bytes.length; cut++) {
      for (const second of [cut + 1, Math.min(bytes.length, cut + 3)]) {
        const parser = new NdjsonParser();
        const events = [
          ...parser.push(bytes.slice(0, cut)),
          ...parser.push(bytes.slice(cut, second)),
          ...parser.push(bytes.slice(second)),
          ...parser.flush(),
        ];
        expect(events).toEqual(FIXTURE_EVENTS);
      }
    }
  });

  it('emits a trailing line that has no newline on flush', () => {
    const parser = new NdjsonParser();
    const head = parser.push('{"event_type":"done","payload":{},"seq":0}');
    expect(head).toEqual([]);
    expect(parser.flush()).toEqual([{ event_type: 'done', payload: {}, seq: 0 }]);
  });

  it('skips blank lines', () => {
    const events = parseNdjson('\n\n{"event_type":"done","payload":{},"seq":0}\n\n');
    expect(events).toHaveLength(1);
  });

  it('yields events in seq order for large random chunkings', () => {
    const bytes = new TextEncoder().encode(FIXTURE_TEXT.repeat(20));
    let seed = 0xc0ffee;
    const rand = () => {
      seed = (seed * 1664525 + 1013904223) >>> 0;
      return seed / 2 ** 32;
    };
    const parser = new NdjsonParser();
    const events: TraceEvent[] = [];
    let offset = 0;
    while (offset < bytes.length) {
      const step = 1 + Math.floor(rand() * 17);
      events.push(...parser.push(bytes.slice(offset, offset + step)));
      offset += step;
    }
    events.push(...parser.flush());
    expect(events).toHaveLength(FIXTURE_EVENTS.length * 20);
    for (let i = 0; i < events.length; i++) {
      expect(events[i]!.seq).toBe(FIXTURE_EVENTS[i % 3]!.seq);
    }
  });
});
