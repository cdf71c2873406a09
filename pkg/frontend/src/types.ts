/** Wire and view types for the tutoring trace stream. */

export interface TraceEvent {
  event_type: string;
  payload: Record<string, unknown>;
  seq: number;
}

export interface EvidenceChunk {
  chunkId: string;
  text: string;
  similarity: number | null;
  rank: number | null;
}

/** One rendered block of an exchange. Blocks are plain data so rendering
 * stays testable without a DOM. */
export type Block =
  | { kind: 'evidence'; chunks: EvidenceChunk[] }
  | {
      kind: 'answer';
      verdict: boolean | null;
      confidencePct: number | null;
      context: string;
      parseOk: boolean;
    }
  | { kind: 'agent'; agent: 'manager' | 'solver' | 'reviewer'; content: string }
  | {
      kind: 'code';
      code: string;
      stdout: string;
      stderr: string;
      returncode: number;
      ok: boolean;
    }
  | { kind: 'score'; label: string; score: number | null; correct: boolean | null }
  | { kind: 'error'; message: string }
  | { kind: 'done' }
  | { kind: 'raw'; json: string };

export interface ExchangeView {
  question: string;
  blocks: Block[];
  complete: boolean;
}

export interface SessionView {
  sessionId: string;
  mode: 'concept' | 'calculation';
  exchanges: ExchangeView[];
}

export interface AskOptions {
  prompt_level?: number;
  temperature?: number;
  rag?: boolean;
  ground_truth?: string;
}
