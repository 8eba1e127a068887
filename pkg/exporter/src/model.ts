/**
 * Minimal transformer block with named capture points, used to sample the
 * activation distributions a checkpoint produces on a synthetic token batch.
 * Everything is plain loops over Float64Array; sizes stay small.
 */

import { Checkpoint } from './checkpoint.js';

export interface BlockWeights {
  dim: number;
  vocab: number;
  hidden: number;
  embed: Float64Array;      // [vocab, dim]
  ln1w: Float64Array;
  ln1b: Float64Array;
  wq: Float64Array;         // [dim, dim]
  wk: Float64Array;
  wv: Float64Array;
  wo: Float64Array;
  ln2w: Float64Array;
  ln2b: Float64Array;
  fc1: Float64Array;        // [dim, hidden]
  fc2: Float64Array;        // [hidden, dim]
}

const REQUIRED = [
  'embed.weight', 'ln1.weight', 'ln1.bias',
  'attn.q.weight', 'attn.k.weight', 'attn.v.weight', 'attn.o.weight',
  'ln2.weight', 'ln2.bias', 'mlp.fc1.weight', 'mlp.fc2.weight',
];

export const HOOK_POINTS = [
  'embed', 'ln1.out', 'attn.scores', 'attn.context', 'attn.out',
  'resid1', 'ln2.out', 'mlp.hidden', 'mlp.out', 'block.out',
] as const;

export type HookPoint = (typeof HOOK_POINTS)[number];

export function blockFromCheckpoint(ckpt: Checkpoint): BlockWeights {
  const missing = REQUIRED.filter((n) => !ckpt.has(n));
  if (missing.length) {
    throw new Error(`checkpoint is missing tensors: ${missing.join(', ')}`);
  }
  const g = (n: string) => ckpt.get(n)!;
  const [vocab, dim] = g('embed.weight').shape;
  const hidden = g('mlp.fc1.weight').shape[1];
  return {
    dim, vocab, hidden,
    embed: g('embed.weight').data,
    ln1w: g('ln1.weight').data, ln1b: g('ln1.bias').data,
    wq: g('attn.q.weight').data, wk: g('attn.k.weight').data,
    wv: g('attn.v.weight').data, wo: g('attn.o.weight').data,
    ln2w: g('ln2.weight').data, ln2b: g('ln2.bias').data,
    fc1: g('mlp.fc1.weight').data, fc2: g('mlp.fc2.weight').data,
  };
}

/** mulberry32: tiny, deterministic across platforms */
export class Rng {
  private state: number;
  private spare: number | null = null;

  constructor(seed: number) {
    this.state = seed >>> 0;
  }

  u32(): number {
    this.state = (this.state + 0x6d2b79f5) >>> 0;
    let t = this.state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return (t ^ (t >>> 14)) >>> 0;
  }

  uniform(): number {
    return this.u32() / 4294967296;
  }

  int(bound: number): number {
    return this.u32() % bound;
  }

  gauss(): number {
    if (this.spare !== null) {
      const v = this.spare;
      this.spare = null;
      return v;
    }
    let u = 0;
    let v = 0;
    let s = 0;
    do {
      u = this.uniform() * 2 - 1;
      v = this.uniform() * 2 - 1;
      s = u * u + v * v;
    } while (s === 0 || s >= 1);
    const k = Math.sqrt((-2 * Math.log(s)) / s);
    this.spare = v * k;
    return u * k;
  }
}

function matmul(x: Float64Array, w: Float64Array, rows: number, inner: number,
                cols: number): Float64Array {
  const out = new Float64Array(rows * cols);
  for (let i = 0; i < rows; i++) {
    for (let k = 0; k < inner; k++) {
      const a = x[i * inner + k];
      if (a === 0) continue;
      for (let j = 0; j < cols; j++) {
        out[i * cols + j] += a * w[k * cols + j];
      }
    }
  }
  return out;
}

function layernorm(x: Float64Array, w: Float64Array, b: Float64Array,
                   rows: number, dim: number): Float64Array {
  const out = new Float64Array(rows * dim);
  for (let i = 0; i < rows; i++) {
    let mean = 0;
    for (let j = 0; j < dim; j++) mean += x[i * dim + j];
    mean /= dim;
    let varSum = 0;
    for (let j = 0; j < dim; j++) {
      const d = x[i * dim + j] - mean;
      varSum += d * d;
    }
    const inv = 1 / Math.sqrt(varSum / dim + 1e-5);
    for (let j = 0; j < dim; j++) {
      out[i * dim + j] = (x[i * dim + j] - mean) * inv * w[j] + b[j];
    }
  }
  return out;
}

function gelu(x: Float64Array): Float64Array {
  const c = Math.sqrt(2 / Math.PI);
  return Float64Array.from(x, (v) => 0.5 * v * (1 + Math.tanh(c * (v + 0.044715 * v ** 3))));
}

function add(a: Float64Array, b: Float64Array): Float64Array {
  return Float64Array.from(a, (v, i) => v + b[i]);
}

/**
 * Run one block over a [seq] token vector, recording each requested capture
 * point. Single-head attention with causal masking.
 */
export function forwardBlock(w: BlockWeights, tokens: Int32Array,
                             hooks: readonly string[]): Map<string, Float64Array> {
  for (const h of hooks) {
    if (!(HOOK_POINTS as readonly string[]).includes(h)) {
      throw new Error(`unknown capture point: ${h} (layers: ${HOOK_POINTS.join(', ')})`);
    }
  }
  const seq = tokens.length;
  const d = w.dim;
  const captured = new Map<string, Float64Array>();
  const grab = (name: string, v: Float64Array) => {
    if (hooks.includes(name)) captured.set(name, Float64Array.from(v));
  };

  const x = new Float64Array(seq * d);
  for (let t = 0; t < seq; t++) {
    x.set(w.embed.subarray(tokens[t] * d, (tokens[t] + 1) * d), t * d);
  }
  grab('embed', x);

  const n1 = layernorm(x, w.ln1w, w.ln1b, seq, d);
  grab('ln1.out', n1);

  const q = matmul(n1, w.wq, seq, d, d);
  const k = matmul(n1, w.wk, seq, d, d);
  const v = matmul(n1, w.wv, seq, d, d);
  const scale = 1 / Math.sqrt(d);
  const scores = new Float64Array(seq * seq);
  for (let i = 0; i < seq; i++) {
    let maxs = -Infinity;
    for (let j = 0; j <= i; j++) {
      let s = 0;
      for (let c = 0; c < d; c++) s += q[i * d + c] * k[j * d + c];
      s *= scale;
      scores[i * seq + j] = s;
      if (s > maxs) maxs = s;
    }
    let denom = 0;
    for (let j = 0; j <= i; j++) {
      scores[i * seq + j] = Math.exp(scores[i * seq + j] - maxs);
      denom += scores[i * seq + j];
    }
    for (let j = 0; j <= i; j++) scores[i * seq + j] /= denom;
  }
  grab('attn.scores', scores);

  const ctx = new Float64Array(seq * d);
  for (let i = 0; i < seq; i++) {
    for (let j = 0; j <= i; j++) {
      const p = scores[i * seq + j];
      for (let c = 0; c < d; c++) ctx[i * d + c] += p * v[j * d + c];
    }
  }
  grab('attn.context', ctx);

  const attnOut = matmul(ctx, w.wo, seq, d, d);
  grab('attn.out', attnOut);

  const r1 = add(x, attnOut);
  grab('resid1', r1);

  const n2 = layernorm(r1, w.ln2w, w.ln2b, seq, d);
  grab('ln2.out', n2);

  const h1 = gelu(matmul(n2, w.fc1, seq, d, w.hidden));
  grab('mlp.hidden', h1);

  const mlpOut = matmul(h1, w.fc2, seq, w.hidden, d);
  grab('mlp.out', mlpOut);

  grab('block.out', add(r1, mlpOut));
  return captured;
}
