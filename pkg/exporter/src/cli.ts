#!/usr/bin/env node
/**
 * expquant-export weights <checkpoint> <outdir>
 * expquant-export activations <checkpoint> <outdir> [--hooks a,b] [--batch 8]
 *                 [--seq 16] [--seed 0]
 */

import { exportActivations, exportWeights } from './export.js';
import { HOOK_POINTS } from './model.js';

function flag(args: string[], name: string, fallback: string): string {
  const i = args.indexOf(name);
  return i >= 0 && i + 1 < args.length ? args[i + 1] : fallback;
}

export function main(argv: string[]): number {
  const [cmd, ckpt, outDir, ...rest] = argv;
  try {
    if (cmd === 'weights') {
      if (!ckpt || !outDir) throw new Error('usage: weights <checkpoint> <outdir>');
      const m = exportWeights(ckpt, outDir);
      console.log(`exported ${m.tensors.length} weight tensors -> ${outDir}/manifest.json`);
      return 0;
    }
    if (cmd === 'activations') {
      if (!ckpt || !outDir) throw new Error('usage: activations <checkpoint> <outdir>');
      const hooks = flag(rest, '--hooks', '');
      const m = exportActivations(
        ckpt,
        {
          size: parseInt(flag(rest, '--batch', '8'), 10),
          seqLen: parseInt(flag(rest, '--seq', '16'), 10),
          seed: parseInt(flag(rest, '--seed', '0'), 10),
        },
        hooks ? hooks.split(',') : [],
        outDir,
      );
      console.log(`exported ${m.tensors.length} activation captures -> ${outDir}/manifest.json`);
      return 0;
    }
    console.log('commands: weights | activations');
    console.log(`capture points: ${HOOK_POINTS.join(', ')}`);
    return cmd ? 1 : 0;
  } catch (e) {
    console.error(`error: ${(e as Error).message}`);
    return 2;
  }
}

process.exit(main(process.argv.slice(2)));
