/** Page wiring: one session per mode switch, one in-flight ask at a time,
 * incremental block rendering as events stream in. */

import { connectAndStream, createSession, StreamInterrupted } from './api.js';
import { blockToNode } from './dom.js';
import { renderEvent } from './render.js';
import type { AskOptions, TraceEvent } from './types.js';

const serverUrl = window.location.origin;

const modeSelect = document.getElementById('mode') as HTMLSelectElement;
const questionBox = document.getElementById('question') as HTMLTextAreaElement;
const groundTruthBox = document.getElementById('ground-truth') as HTMLTextAreaElement;
const promptLevel = document.getElementById('prompt-level') as HTMLSelectElement;
const temperature = document.getElementById('temperature') as HTMLInputElement;
const ragToggle = document.getElementById('rag') as HTMLInputElement;
const askButton = document.getElementById('ask') as HTMLButtonElement;
const resolveButton = document.getElementById('resolve') as HTMLButtonElement;
const exchangeList = document.getElementById('exchanges') as HTMLElement;
const statusLine = document.getElementById('status') as HTMLElement;

let sessionId: string | null = null;
let busy = false;
let lastQuestion = '';

function setStatus(text: string): void {
  statusLine.textContent = text;
}

function currentOptions(): AskOptions {
  const options: AskOptions = {
    prompt_level: Number(promptLevel.value),
    temperature: Number(temperature.value),
    rag: ragToggle.checked,
  };
  if (modeSelect.value === 'calculation' && groundTruthBox.value.trim()) {
    options.ground_truth = groundTruthBox.value.trim();
  }
  return options;
}

async function ensureSession(): Promise<string> {
  if (sessionId === null) {
    const created = await createSession(serverUrl, modeSelect.value as 'concept' | 'calculation');
    sessionId = created.session_id;
    setStatus(`session ${sessionId} (${created.mode})`);
  }
  return sessionId;
}

function appendExchange(question: string): HTMLElement {
  const container = document.createElement('section');
  container.className = 'exchange';
  const q = document.createElement('h3');
  q.textContent = question;
  container.appendChild(q);
  exchangeList.appendChild(container);
  return container;
}

async function ask(question: string): Promise<void> {
  if (busy || !question.trim()) return;
  busy = true;
  askButton.disabled = true;
  lastQuestion = question;
  const container = appendExchange(question);
  try {
    const sid = await ensureSession();
    setStatus('streaming...');
    for await (const event of connectAndStream(serverUrl, sid, question, currentOptions())) {
      renderInto(container, event);
    }
    setStatus('ready');
  } catch (err) {
    const message =
      err instanceof StreamInterrupted ? err.message : `request failed: ${String(err)}`;
    container.appendChild(blockToNode({ kind: 'error', message }));
    setStatus('ready (last exchange failed)');
  } finally {
    busy = false;
    askButton.disabled = false;
  }
}

function renderInto(container: HTMLElement, event: TraceEvent): void {
  for (const block of renderEvent(event)) {
    container.appendChild(blockToNode(block));
  }
  container.scrollIntoView({ block: 'end' });
}

modeSelect.addEventListener('change', () => {
  sessionId = null; // a mode switch starts a fresh session
  groundTruthBox.parentElement!.hidden = modeSelect.value !== 'calculation';
  setStatus('new session on next ask');
});

askButton.addEventListener('click', () => void ask(questionBox.value));
resolveButton.addEventListener('click', () => void ask(lastQuestion || questionBox.value));
questionBox.addEventListener('keydown', (ev) => {
  if (ev.key === 'Enter' && (ev.ctrlKey || ev.metaKey)) void ask(questionBox.value);
});

groundTruthBox.parentElement!.hidden = true;
setStatus('ready');
