"""Binary tensor container and summary statistics.

File layout (version 1):
    magic "MKYT" | u16 version | u8 dtype {0=f32,1=f16,2=fx16} | u8 rank |
    rank x u32 extents (LE) | [fx16 only: u8 frac bits] | raw LE row-major data
"""

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"MKYT"
VERSION = 1

DTYPE_CODES = {"f32": 0, "f16": 1, "fx16": 2}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}
_NP_PAYLOAD = {"f32": "<f4", "f16": "<f2", "fx16": "<i2"}


class TensorFormatError(Exception):
    """Base class for tensor file problems."""


class BadMagicError(TensorFormatError):
    pass


class TruncatedFileError(TensorFormatError):
    pass


class ShapeMismatchError(TensorFormatError):
    pass


@dataclass
class Tensor:
    """Dense row-major tensor. f16 data is widened to float32 in memory;
    fx16 keeps raw int16 plus its fractional-bit count."""

    shape: tuple
    dtype: str  # "f32" | "f16" | "fx16"
    data: np.ndarray
    frac_bits: int = 0  # fx16 only

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        if any(s <= 0 for s in self.shape):
            raise ValueError(f"extents must be positive: {self.shape}")
        if self.dtype not in DTYPE_CODES:
            raise ValueError(f"unknown dtype {self.dtype!r}")
        n = int(np.prod(self.shape))
        self.data = np.ascontiguousarray(self.data).reshape(-1)
        if self.data.size != n:
            raise ShapeMismatchError(
                f"data length {self.data.size} != prod(shape) {n}")
        if self.dtype == "fx16":
            self.data = self.data.astype(np.int16)
        else:
            if self.dtype == "f16":
                # keep only f16-representable values so save/load is identity
                self.data = self.data.astype(np.float16).astype(np.float32)
            else:
                self.data = self.data.astype(np.float32)

    @property
    def size(self):
        return int(np.prod(self.shape))

    def values(self):
        """float64 view of the element values."""
        if self.dtype == "fx16":
            return self.data.astype(np.float64) / (1 << self.frac_bits)
        return self.data.astype(np.float64)

    def reshaped(self):
        return self.values().reshape(self.shape)


@dataclass
class TensorStats:
    mean: float
    std: float  # population (divide by N)
    min: float
    max: float
    count: int


def compute_stats(t):
    """Mean / population std / min / max over all elements."""
    v = t.values() if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ValueError("empty tensor has no statistics")
    return TensorStats(
        mean=float(np.mean(v)),
        std=float(np.std(v)),
        min=float(np.min(v)),
        max=float(np.max(v)),
        count=int(v.size),
    )


def save_tensor(t, path):
    header = MAGIC + struct.pack("<HBB", VERSION, DTYPE_CODES[t.dtype], len(t.shape))
    header += struct.pack(f"<{len(t.shape)}I", *t.shape)
    if t.dtype == "fx16":
        header += struct.pack("<B", t.frac_bits)
    if t.dtype == "f16":
        payload = t.data.astype(np.float16).astype(_NP_PAYLOAD["f16"]).tobytes()
    else:
        payload = t.data.astype(_NP_PAYLOAD[t.dtype]).tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def load_tensor(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise TruncatedFileError(f"{path}: header shorter than 8 bytes")
    if raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    version, dcode, rank = struct.unpack("<HBB", raw[4:8])
    if version != VERSION:
        raise TensorFormatError(f"{path}: unsupported version {version}")
    if dcode not in CODE_DTYPES:
        raise TensorFormatError(f"{path}: unknown dtype code {dcode}")
    dtype = CODE_DTYPES[dcode]
    off = 8
    if len(raw) < off + 4 * rank:
        raise TruncatedFileError(f"{path}: truncated extent list")
    shape = struct.unpack(f"<{rank}I", raw[off:off + 4 * rank])
    off += 4 * rank
    frac_bits = 0
    if dtype == "fx16":
        if len(raw) < off + 1:
            raise TruncatedFileError(f"{path}: missing frac-bits byte")
        frac_bits = raw[off]
        off += 1
    n = int(np.prod(shape)) if rank else 1
    want = n * 2 if dtype in ("f16", "fx16") else n * 4
    payload = raw[off:]
    if len(payload) < want:
        raise TruncatedFileError(f"{path}: payload {len(payload)}B < expected {want}B")
    if len(payload) > want:
        raise ShapeMismatchError(f"{path}: payload {len(payload)}B > expected {want}B")
    arr = np.frombuffer(payload, dtype=_NP_PAYLOAD[dtype]).copy()
    if dtype == "f16":
        arr = arr.astype(np.float32)
    return Tensor(shape=shape, dtype=dtype, data=arr, frac_bits=frac_bits)
