/**
 * Weight and activation exporters. Both emit MKYT f32 files plus a JSON
 * manifest recording every file's shape and statistics, so the consuming
 * pipeline can cross-check what it loads.
 */

import * as fs from 'node:fs';
import * as path from 'node:path';

import { Checkpoint, loadCheckpoint } from './checkpoint.js';
import { BlockWeights, HOOK_POINTS, Rng, blockFromCheckpoint, forwardBlock } from './model.js';
import { TensorStats, computeStats, writeTensor } from './mkyt.js';

export interface ManifestEntry {
  name: string;
  file: string;
  shape: number[];
  stats: TensorStats;
}

export interface ExportManifest {
  model: string;
  kind: 'weights' | 'activations';
  tensors: ManifestEntry[];
  hooks?: string[];
  batch?: { size: number; seqLen: number; seed: number };
}

function safeFileName(name: string): string {
  return name.replace(/[^\w.-]+/g, '_') + '.mkyt';
}

function writeManifest(manifest: ExportManifest, outDir: string): string {
  const p = path.join(outDir, 'manifest.json');
  fs.writeFileSync(p, JSON.stringify(manifest, null, 2) + '\n');
  return p;
}

export function exportWeights(modelPath: string, outDir: string): ExportManifest {
  const ckpt = loadCheckpoint(modelPath);
  if (ckpt.size === 0) throw new Error(`checkpoint ${modelPath} holds no tensors`);
  fs.mkdirSync(outDir, { recursive: true });
  const tensors: ManifestEntry[] = [];
  for (const [name, t] of ckpt) {
    const file = safeFileName(name);
    writeTensor(path.join(outDir, file), { shape: t.shape, dtype: 'f32', data: t.data });
    // stats describe the emitted f32 payload exactly
    const f32 = Float64Array.from(t.data, Math.fround);
    tensors.push({ name, file, shape: t.shape, stats: computeStats(f32) });
  }
  const manifest: ExportManifest = {
    model: path.basename(modelPath), kind: 'weights', tensors,
  };
  writeManifest(manifest, outDir);
  return manifest;
}

export interface BatchSpec {
  size: number;
  seqLen: number;
  seed: number;
}

export function exportActivations(modelPath: string, batch: BatchSpec,
                                  hooks: readonly string[],
                                  outDir: string): ExportManifest {
  if (batch.size <= 0) throw new Error('batch must contain at least one sample');
  if (batch.seqLen <= 0) throw new Error('sequence length must be positive');
  const hookList = hooks.length ? [...hooks] : [...HOOK_POINTS];
  const ckpt = loadCheckpoint(modelPath);
  const block: BlockWeights = blockFromCheckpoint(ckpt);
  fs.mkdirSync(outDir, { recursive: true });
  const rng = new Rng(batch.seed);
  const perHook = new Map<string, Float64Array[]>();
  for (const h of hookList) perHook.set(h, []);
  for (let s = 0; s < batch.size; s++) {
    const tokens = new Int32Array(batch.seqLen);
    for (let t = 0; t < batch.seqLen; t++) tokens[t] = rng.int(block.vocab);
    const captured = forwardBlock(block, tokens, hookList);
    for (const h of hookList) perHook.get(h)!.push(captured.get(h)!);
  }
  const tensors: ManifestEntry[] = [];
  for (const h of hookList) {
    const slices = perHook.get(h)!;
    const per = slices[0].length;
    const data = new Float64Array(batch.size * per);
    slices.forEach((sl, i) => data.set(sl, i * per));
    const width = per / batch.seqLen;
    const shape = [batch.size, batch.seqLen, width];
    const file = safeFileName(h);
    writeTensor(path.join(outDir, file), { shape, dtype: 'f32', data });
    // manifest stats describe the emitted f32 payload, not the f64 source
    const f32 = Float64Array.from(data, Math.fround);
    tensors.push({ name: h, file, shape, stats: computeStats(f32) });
  }
  const manifest: ExportManifest = {
    model: path.basename(modelPath), kind: 'activations', tensors,
    hooks: hookList,
    batch: { size: batch.size, seqLen: batch.seqLen, seed: batch.seed },
  };
  writeManifest(manifest, outDir);
  return manifest;
}
