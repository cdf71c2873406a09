/** Turn view blocks into DOM nodes. Kept dumb on purpose: all decisions
 * happen in render.ts, which is what the tests cover. */

import type { Block } from './types.js';

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function blockToNode(block: Block): HTMLElement {
  switch (block.kind) {
    case 'evidence': {
      const panel = el('details', 'block evidence');
      panel.appendChild(el('summary', 'evidence-title', `Evidence (${block.chunks.length} passages)`));
      for (const chunk of block.chunks) {
        const row = el('div', 'evidence-row');
        const sim = chunk.similarity === null ? '' : ` · sim ${chunk.similarity.toFixed(3)}`;
        row.appendChild(el('div', 'evidence-meta', `[${chunk.chunkId}]${sim}`));
        row.appendChild(el('div', 'evidence-text', chunk.text));
        panel.appendChild(row);
      }
      return panel;
    }
    case 'answer': {
      const card = el('div', 'block answer');
      const verdict =
        block.verdict === null ? 'Unparseable' : block.verdict ? 'True' : 'False';
      card.appendChild(el('div', `verdict ${block.parseOk ? 'ok' : 'bad'}`, verdict));
      if (block.confidencePct !== null) {
        const gauge = el('div', 'gauge');
        const fill = el('div', 'gauge-fill');
        fill.style.width = `${block.confidencePct}%`;
        gauge.appendChild(fill);
        gauge.appendChild(el('span', 'gauge-label', `${block.confidencePct}%`));
        card.appendChild(gauge);
      }
      if (block.context) card.appendChild(el('p', 'context', block.context));
      return card;
    }
    case 'agent': {
      const card = el('div', `block agent ${block.agent}`);
      card.appendChild(el('div', 'agent-name', block.agent));
      card.appendChild(el('pre', 'agent-content', block.content));
      return card;
    }
    case 'code': {
      const card = el('div', 'block code-card');
      const badge = el('span', `badge ${block.ok ? 'green' : 'red'}`, `exit ${block.returncode}`);
      card.appendChild(badge);
      card.appendChild(el('pre', 'code', block.code));
      if (block.stdout) card.appendChild(el('pre', 'stdout', block.stdout));
      if (block.stderr) card.appendChild(el('pre', 'stderr', block.stderr));
      return card;
    }
    case 'score': {
      const badge = el('div', 'block score-badge', block.label);
      if (block.correct !== null) {
        badge.classList.add(block.correct ? 'green' : 'red');
      }
      return badge;
    }
    case 'error':
      return el('div', 'block error', block.message);
    case 'done':
      return el('div', 'block done', 'done');
    case 'raw': {
      const card = el('div', 'block raw');
      card.appendChild(el('pre', 'raw-json', block.json));
      return card;
    }
  }
}
