/** Pure mapping from trace events to view blocks.
 *
 * renderEvent is total: whatever arrives in a payload, the worst outcome
 * is a raw-JSON fallback block, never a throw. Replaying a stored
 * transcript through the same function reproduces the live view.
 */

import type { Block, EvidenceChunk, TraceEvent } from './types.js';

function asString(value: unknown, fallback = ''): string {
  return typeof value === 'string' ? value : fallback;
}

function asFiniteNumber(value: unknown): number | null {
  if (typeof value === 'number' && Number.isFinite(value)) return value;
  if (typeof value === 'string' && value.trim() !== '' && Number.isFinite(Number(value))) {
    return Number(value);
  }
  return null;
}

function asBoolOrNull(value: unknown): boolean | null {
  return typeof value === 'boolean' ? value : null;
}

function rawBlock(event: unknown): Block {
  let json: string;
  try {
    json = JSON.stringify(event);
  } catch {
    json = String(event);
  }
  return { kind: 'raw', json: json ?? 'null' };
}

export function renderEvent(event: TraceEvent): Block[] {
  try {
    const payload = (event.payload ?? {}) as Record<string, unknown>;
    switch (event.event_type) {
      case 'retrieval': {
        const chunksRaw = Array.isArray(payload.chunks) ? payload.chunks : [];
        const chunks: EvidenceChunk[] = chunksRaw.map((c) => {
          const item = (c ?? {}) as Record<string, unknown>;
          return {
            chunkId: asString(item.chunk_id, '?'),
            text: asString(item.text),
            similarity: asFiniteNumber(item.similarity),
            rank: asFiniteNumber(item.rank),
          };
        });
        return [{ kind: 'evidence', chunks }];
      }
      case 'answer': {
        const confidence = asFiniteNumber(payload.confidence);
        return [
          {
            kind: 'answer',
            verdict: asBoolOrNull(payload.answer),
            confidencePct: confidence === null ? null : Math.round(confidence * 100),
            context: asString(payload.context),
            parseOk: payload.parse_ok !== false,
          },
        ];
      }
      case 'manager_turn':
        return [{ kind: 'agent', agent: 'manager', content: asString(payload.content) }];
      case 'solver_turn':
        return [{ kind: 'agent', agent: 'solver', content: asString(payload.content) }];
      case 'code_execution': {
        const returncode = asFiniteNumber(payload.returncode);
        return [
          {
            kind: 'code',
            code: asString(payload.code),
            stdout: asString(payload.stdout),
            stderr: asString(payload.stderr),
            returncode: returncode ?? -1,
            ok: returncode === 0,
          },
        ];
      }
      case 'reviewer_turn': {
        const score = asFiniteNumber(payload.score);
        const blocks: Block[] = [
          { kind: 'agent', agent: 'reviewer', content: asString(payload.content) },
        ];
        blocks.push({
          kind: 'score',
          score,
          correct: asBoolOrNull(payload.correct),
          label: score === null ? 'no score' : `${score}/100`,
        });
        return blocks;
      }
      case 'error':
        return [{ kind: 'error', message: asString(payload.message, 'unknown error') }];
      case 'done':
        return [{ kind: 'done' }];
      default:
        return [rawBlock(event)];
    }
  } catch {
    return [rawBlock(event)];
  }
}

export const MISSING_DONE_MESSAGE = 'stream ended before completion';

/** Render a full exchange; a stream that never reached its done event gets
 * an explicit error block appended so the gap is visible. */
export function renderExchange(events: TraceEvent[]): { blocks: Block[]; complete: boolean } {
  const blocks = events.flatMap((event) => renderEvent(event));
  const complete = events.some((event) => event.event_type === 'done');
  if (!complete) {
    blocks.push({ kind: 'error', message: MISSING_DONE_MESSAGE });
  }
  return { blocks, complete };
}
