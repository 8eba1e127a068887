/**
 * Local checkpoint readers. Two layouts are understood:
 *   *.safetensors — u64 LE header length, JSON header mapping tensor name to
 *                   { dtype, shape, data_offsets }, then the raw data block
 *   *.json        — { tensors: { name: { shape, data: number[] } } }
 */

import * as fs from 'node:fs';

export interface CheckpointTensor {
  shape: number[];
  data: Float64Array;
}

export type Checkpoint = Map<string, CheckpointTensor>;

function f16(h: number): number {
  const sign = h & 0x8000 ? -1 : 1;
  const exp = (h >>> 10) & 0x1f;
  const mant = h & 0x3ff;
  if (exp === 0) return sign * mant * 2 ** -24;
  if (exp === 31) return mant ? NaN : sign * Infinity;
  return sign * (1024 + mant) * 2 ** (exp - 25);
}

export function parseSafetensors(buf: Buffer, source = '<buffer>'): Checkpoint {
  if (buf.length < 8) throw new Error(`${source}: not a safetensors file`);
  const headerLen = Number(buf.readBigUInt64LE(0));
  if (8 + headerLen > buf.length) throw new Error(`${source}: truncated header`);
  const header = JSON.parse(buf.toString('utf8', 8, 8 + headerLen));
  const base = 8 + headerLen;
  const out: Checkpoint = new Map();
  for (const [name, infoRaw] of Object.entries(header)) {
    if (name === '__metadata__') continue;
    const info = infoRaw as { dtype: string; shape: number[]; data_offsets: [number, number] };
    const [b, e] = info.data_offsets;
    const n = info.shape.reduce((a, s) => a * s, 1);
    const data = new Float64Array(n);
    if (info.dtype === 'F32') {
      for (let i = 0; i < n; i++) data[i] = buf.readFloatLE(base + b + 4 * i);
    } else if (info.dtype === 'F16') {
      for (let i = 0; i < n; i++) data[i] = f16(buf.readUInt16LE(base + b + 2 * i));
    } else if (info.dtype === 'F64') {
      for (let i = 0; i < n; i++) data[i] = buf.readDoubleLE(base + b + 8 * i);
    } else {
      throw new Error(`${source}: unsupported dtype ${info.dtype} for ${name}`);
    }
    out.set(name, { shape: info.shape, data });
  }
  return out;
}

/** F32 writer, used for fixtures and round-trip tests. */
export function encodeSafetensors(tensors: Checkpoint): Buffer {
  const headerObj: Record<string, unknown> = {};
  let offset = 0;
  const payloads: Buffer[] = [];
  for (const [name, t] of tensors) {
    const bytes = 4 * t.data.length;
    headerObj[name] = {
      dtype: 'F32',
      shape: t.shape,
      data_offsets: [offset, offset + bytes],
    };
    const p = Buffer.alloc(bytes);
    for (let i = 0; i < t.data.length; i++) p.writeFloatLE(Math.fround(t.data[i]), 4 * i);
    payloads.push(p);
    offset += bytes;
  }
  const headerBuf = Buffer.from(JSON.stringify(headerObj), 'utf8');
  const lenBuf = Buffer.alloc(8);
  lenBuf.writeBigUInt64LE(BigInt(headerBuf.length), 0);
  return Buffer.concat([lenBuf, headerBuf, ...payloads]);
}

export function loadCheckpoint(path: string): Checkpoint {
  if (!path) throw new Error('checkpoint path must not be empty');
  if (!fs.existsSync(path)) throw new Error(`checkpoint not found: ${path}`);
  if (path.endsWith('.safetensors')) {
    return parseSafetensors(fs.readFileSync(path), path);
  }
  if (path.endsWith('.json')) {
    const doc = JSON.parse(fs.readFileSync(path, 'utf8'));
    const out: Checkpoint = new Map();
    for (const [name, t] of Object.entries(doc.tensors ?? {})) {
      const tt = t as { shape: number[]; data: number[] };
      out.set(name, { shape: tt.shape, data: Float64Array.from(tt.data) });
    }
    return out;
  }
  throw new Error(`unsupported checkpoint format: ${path}`);
}
