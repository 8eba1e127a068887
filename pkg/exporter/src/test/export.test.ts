import assert from 'node:assert/strict';
import { test } from 'node:test';
import * as fs from 'node:fs';
import * as os from 'node:os';
import * as path from 'node:path';

import { Checkpoint, encodeSafetensors, loadCheckpoint,
         parseSafetensors } from '../checkpoint.js';
import { exportActivations, exportWeights } from '../export.js';
import { HOOK_POINTS, Rng } from '../model.js';
import { computeStats, readTensor } from '../mkyt.js';

function tmpDir(): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), 'exp-'));
}

/** tiny single-block checkpoint with seeded gaussian weights */
export function makeFixture(dir: string, seed = 1234, dim = 32, vocab = 64,
                            hidden = 64): string {
  const rng = new Rng(seed);
  const g = (n: number, scale: number) =>
    Float64Array.from({ length: n }, () => rng.gauss() * scale);
  const ones = (n: number) => new Float64Array(n).fill(1);
  const ckpt: Checkpoint = new Map();
  ckpt.set('embed.weight', { shape: [vocab, dim], data: g(vocab * dim, 1.0) });
  ckpt.set('ln1.weight', { shape: [dim], data: ones(dim) });
  ckpt.set('ln1.bias', { shape: [dim], data: new Float64Array(dim) });
  for (const n of ['attn.q.weight', 'attn.k.weight', 'attn.v.weight', 'attn.o.weight']) {
    ckpt.set(n, { shape: [dim, dim], data: g(dim * dim, 1 / Math.sqrt(dim)) });
  }
  ckpt.set('ln2.weight', { shape: [dim], data: ones(dim) });
  ckpt.set('ln2.bias', { shape: [dim], data: new Float64Array(dim) });
  ckpt.set('mlp.fc1.weight', { shape: [dim, hidden], data: g(dim * hidden, 1 / Math.sqrt(dim)) });
  ckpt.set('mlp.fc2.weight', { shape: [hidden, dim], data: g(hidden * dim, 1 / Math.sqrt(hidden)) });
  const p = path.join(dir, 'block.safetensors');
  fs.writeFileSync(p, encodeSafetensors(ckpt));
  return p;
}

test('safetensors roundtrip', () => {
  const ckpt: Checkpoint = new Map();
  ckpt.set('a', { shape: [2, 2], data: Float64Array.of(1, 2, 3, 4) });
  ckpt.set('b.weight', { shape: [3], data: Float64Array.of(-0.5, 0, 0.5) });
  const back = parseSafetensors(encodeSafetensors(ckpt));
  assert.deepEqual([...back.get('a')!.data], [1, 2, 3, 4]);
  assert.deepEqual(back.get('b.weight')!.shape, [3]);
});

test('exported weights load back with matching manifest stats', () => {
  const dir = tmpDir();
  const ckpt = makeFixture(dir);
  const out = path.join(dir, 'weights');
  const manifest = exportWeights(ckpt, out);
  assert.equal(manifest.tensors.length, 11);
  for (const entry of manifest.tensors) {
    const t = readTensor(path.join(out, entry.file));
    assert.deepEqual(t.shape, entry.shape);
    const s = computeStats(t.data);
    for (const k of ['mean', 'std', 'min', 'max'] as const) {
      const denom = Math.max(Math.abs(entry.stats[k]), 1e-12);
      assert.ok(Math.abs(s[k] - entry.stats[k]) / denom < 1e-6,
                `${entry.name}.${k}: ${s[k]} vs ${entry.stats[k]}`);
    }
    assert.equal(s.count, entry.stats.count);
  }
});

test('re-export is byte-identical', () => {
  const dir = tmpDir();
  const ckpt = makeFixture(dir);
  const out1 = path.join(dir, 'w1');
  const out2 = path.join(dir, 'w2');
  exportWeights(ckpt, out1);
  exportWeights(ckpt, out2);
  for (const f of fs.readdirSync(out1)) {
    assert.deepEqual(fs.readFileSync(path.join(out1, f)),
                     fs.readFileSync(path.join(out2, f)), f);
  }
});

test('empty checkpoint path errors', () => {
  assert.throws(() => exportWeights('', tmpDir()), /must not be empty/);
});

test('zero-length batch errors', () => {
  const dir = tmpDir();
  const ckpt = makeFixture(dir);
  assert.throws(
    () => exportActivations(ckpt, { size: 0, seqLen: 8, seed: 0 }, [], tmpDir()),
    /at least one sample/);
});

test('unknown capture point errors with its name', () => {
  const dir = tmpDir();
  const ckpt = makeFixture(dir);
  assert.throws(
    () => exportActivations(ckpt, { size: 2, seqLen: 4, seed: 0 },
                            ['mlp.bogus'], tmpDir()),
    /mlp\.bogus/);
});

test('missing tensors reported by name', () => {
  const dir = tmpDir();
  const ckpt: Checkpoint = new Map();
  ckpt.set('embed.weight', { shape: [4, 2], data: new Float64Array(8) });
  const p = path.join(dir, 'partial.safetensors');
  fs.writeFileSync(p, encodeSafetensors(ckpt));
  assert.throws(
    () => exportActivations(p, { size: 1, seqLen: 2, seed: 0 }, [], tmpDir()),
    /ln1\.weight/);
});

test('activation export: files, shapes and stats agree', () => {
  const dir = tmpDir();
  const ckpt = makeFixture(dir);
  const out = path.join(dir, 'act');
  const manifest = exportActivations(ckpt, { size: 8, seqLen: 64, seed: 5 }, [], out);
  assert.equal(manifest.tensors.length, HOOK_POINTS.length);
  assert.deepEqual(manifest.batch, { size: 8, seqLen: 64, seed: 5 });
  for (const entry of manifest.tensors) {
    const t = readTensor(path.join(out, entry.file));
    assert.deepEqual(t.shape, entry.shape);
    assert.equal(t.shape[0], 8);
    const s = computeStats(t.data);
    const denom = Math.max(Math.abs(entry.stats.std), 1e-12);
    assert.ok(Math.abs(s.std - entry.stats.std) / denom < 1e-6, entry.name);
  }
});

test('same seed reproduces bytes, different seeds stay within 5% per hook', () => {
  const dir = tmpDir();
  const ckpt = makeFixture(dir);
  const a1 = path.join(dir, 'a1');
  const a2 = path.join(dir, 'a2');
  const b = path.join(dir, 'b');
  exportActivations(ckpt, { size: 8, seqLen: 64, seed: 7 }, [], a1);
  exportActivations(ckpt, { size: 8, seqLen: 64, seed: 7 }, [], a2);
  for (const f of fs.readdirSync(a1)) {
    assert.deepEqual(fs.readFileSync(path.join(a1, f)),
                     fs.readFileSync(path.join(a2, f)), f);
  }
  const m1 = exportActivations(ckpt, { size: 8, seqLen: 64, seed: 7 }, [], a1);
  const m2 = exportActivations(ckpt, { size: 8, seqLen: 64, seed: 8 }, [], b);
  for (let i = 0; i < m1.tensors.length; i++) {
    const s1 = m1.tensors[i].stats;
    const s2 = m2.tensors[i].stats;
    assert.ok(Math.abs(s1.std - s2.std) / s1.std < 0.05,
              `${m1.tensors[i].name} std: ${s1.std} vs ${s2.std}`);
    assert.ok(Math.abs(s1.mean - s2.mean) / s1.std < 0.05,
              `${m1.tensors[i].name} mean: ${s1.mean} vs ${s2.mean}`);
  }
});

test('json checkpoints load too', () => {
  const dir = tmpDir();
  const doc = { tensors: { 'w.weight': { shape: [2, 2], data: [1, 2, 3, 4] } } };
  const p = path.join(dir, 'ckpt.json');
  fs.writeFileSync(p, JSON.stringify(doc));
  const ckpt = loadCheckpoint(p);
  assert.deepEqual([...ckpt.get('w.weight')!.data], [1, 2, 3, 4]);
});
