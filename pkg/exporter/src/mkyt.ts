/**
 * MKYT tensor container: magic "MKYT" | u16 version | u8 dtype | u8 rank |
 * rank x u32 extents (LE) | [fx16 only: u8 frac bits] | raw LE row-major data.
 * Dtype codes: 0 = f32, 1 = f16, 2 = fx16.
 */

import * as fs from 'node:fs';

export type Dtype = 'f32' | 'f16' | 'fx16';

const MAGIC = 0x54594b4d; // "MKYT" little-endian
const VERSION = 1;
const DTYPE_CODES: Record<Dtype, number> = { f32: 0, f16: 1, fx16: 2 };
const CODE_DTYPES: Record<number, Dtype> = { 0: 'f32', 1: 'f16', 2: 'fx16' };

export interface TensorData {
  shape: number[];
  dtype: Dtype;
  /** element values; fx16 values are raw stored integers */
  data: Float64Array;
  fracBits?: number;
}

export interface TensorStats {
  mean: number;
  std: number;
  min: number;
  max: number;
  count: number;
}

export function elementCount(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function computeStats(values: ArrayLike<number>): TensorStats {
  const n = values.length;
  if (n === 0) throw new Error('empty tensor has no statistics');
  let sum = 0;
  let min = Infinity;
  let max = -Infinity;
  for (let i = 0; i < n; i++) {
    const v = values[i];
    sum += v;
    if (v < min) min = v;
    if (v > max) max = v;
  }
  const mean = sum / n;
  let varSum = 0;
  for (let i = 0; i < n; i++) {
    const d = values[i] - mean;
    varSum += d * d;
  }
  return { mean, std: Math.sqrt(varSum / n), min, max, count: n };
}

function float16Bits(x: number): number {
  // round-to-nearest-even f64 -> f16 via f32 intermediate
  const f32 = new Float32Array(1);
  f32[0] = x;
  const bits = new Uint32Array(f32.buffer)[0];
  const sign = (bits >>> 16) & 0x8000;
  const em = bits & 0x7fffffff;
  if (em >= 0x47800000) return sign | (em > 0x7f800000 ? 0x7e00 : 0x7c00); // inf/nan
  if (em < 0x38800000) {
    // subnormal half
    const mant = (em & 0x7fffff) | 0x800000;
    const shift = 113 - (em >>> 23);
    if (shift > 24) return sign;
    let half = mant >>> shift;
    if ((mant >>> (shift - 1)) & 1) half += 1;
    return sign | half;
  }
  let half = ((em >>> 13) - 0x1c000) & 0x7fff;
  if (em & 0x1000) half += 1;
  return sign | half;
}

function float16Value(h: number): number {
  const sign = h & 0x8000 ? -1 : 1;
  const exp = (h >>> 10) & 0x1f;
  const mant = h & 0x3ff;
  if (exp === 0) return sign * mant * 2 ** -24;
  if (exp === 31) return mant ? NaN : sign * Infinity;
  return sign * (1024 + mant) * 2 ** (exp - 25);
}

export function encodeTensor(t: TensorData): Buffer {
  const n = elementCount(t.shape);
  if (t.data.length !== n) {
    throw new Error(`data length ${t.data.length} != prod(shape) ${n}`);
  }
  const headerLen = 8 + 4 * t.shape.length + (t.dtype === 'fx16' ? 1 : 0);
  const payloadLen = t.dtype === 'f32' ? 4 * n : 2 * n;
  const buf = Buffer.alloc(headerLen + payloadLen);
  buf.writeUInt32LE(MAGIC, 0);
  buf.writeUInt16LE(VERSION, 4);
  buf.writeUInt8(DTYPE_CODES[t.dtype], 6);
  buf.writeUInt8(t.shape.length, 7);
  let off = 8;
  for (const s of t.shape) {
    buf.writeUInt32LE(s, off);
    off += 4;
  }
  if (t.dtype === 'fx16') {
    buf.writeUInt8(t.fracBits ?? 0, off);
    off += 1;
  }
  for (let i = 0; i < n; i++) {
    if (t.dtype === 'f32') {
      buf.writeFloatLE(Math.fround(t.data[i]), off + 4 * i);
    } else if (t.dtype === 'f16') {
      buf.writeUInt16LE(float16Bits(t.data[i]), off + 2 * i);
    } else {
      buf.writeInt16LE(t.data[i], off + 2 * i);
    }
  }
  return buf;
}

export function decodeTensor(buf: Buffer, source = '<buffer>'): TensorData {
  if (buf.length < 8) throw new Error(`${source}: header shorter than 8 bytes`);
  if (buf.readUInt32LE(0) !== MAGIC) {
    throw new Error(`${source}: bad magic ${buf.toString('latin1', 0, 4)}`);
  }
  const version = buf.readUInt16LE(4);
  if (version !== VERSION) throw new Error(`${source}: unsupported version ${version}`);
  const dtype = CODE_DTYPES[buf.readUInt8(6)];
  if (dtype === undefined) throw new Error(`${source}: unknown dtype code`);
  const rank = buf.readUInt8(7);
  if (buf.length < 8 + 4 * rank) throw new Error(`${source}: truncated extent list`);
  const shape: number[] = [];
  let off = 8;
  for (let i = 0; i < rank; i++) {
    shape.push(buf.readUInt32LE(off));
    off += 4;
  }
  let fracBits = 0;
  if (dtype === 'fx16') {
    if (buf.length < off + 1) throw new Error(`${source}: missing frac-bits byte`);
    fracBits = buf.readUInt8(off);
    off += 1;
  }
  const n = elementCount(shape);
  const want = dtype === 'f32' ? 4 * n : 2 * n;
  if (buf.length - off < want) throw new Error(`${source}: truncated payload`);
  if (buf.length - off > want) throw new Error(`${source}: payload longer than shape implies`);
  const data = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    if (dtype === 'f32') data[i] = buf.readFloatLE(off + 4 * i);
    else if (dtype === 'f16') data[i] = float16Value(buf.readUInt16LE(off + 2 * i));
    else data[i] = buf.readInt16LE(off + 2 * i);
  }
  return { shape, dtype, data, fracBits };
}

export function writeTensor(path: string, t: TensorData): void {
  fs.writeFileSync(path, encodeTensor(t));
}

export function readTensor(path: string): TensorData {
  return decodeTensor(fs.readFileSync(path), path);
}

/** element values as plain numbers; fx16 is scaled by 2^-frac */
export function tensorValues(t: TensorData): Float64Array {
  if (t.dtype !== 'fx16') return t.data;
  const scale = 2 ** -(t.fracBits ?? 0);
  return Float64Array.from(t.data, (v) => v * scale);
}
