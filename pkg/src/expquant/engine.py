"""Histogram-based dot products and GEMM computed directly on 5-bit codes.

A pair of curve codes contributes through four signed occurrence counters
(indexed by the index sum, each operand's index, and a single sign cell)
instead of a multiply; finalization turns the counters into the dot product
with a handful of constant multiplies. Pairs touching the wide table bypass
the counters through a direct centroid multiply-accumulate. Because every
constant is rounded exactly once and powers of the base telescope exactly,
the finalized value matches a direct decode-and-multiply evaluation bit for
bit in the output format.
"""

from dataclasses import dataclass, field

import numpy as np

from .fixedpoint import (FX_ZERO, FixedScalar, QFormat, SaturationFlag,
                         fraction_ceil_log2)
from .quantize import (INDEX_MASK, OUTLIER_BIT, SIGN_BIT, QuantizedTensor,
                       Tensor, TensorDictionary, encode_tensor)

SOI_SLOTS = 15


class EngineError(Exception):
    pass


@dataclass
class CounterFile:
    """Signed occurrence counters for one in-flight dot product."""

    soi: np.ndarray = field(default_factory=lambda: np.zeros(SOI_SLOTS, dtype=np.int64))
    soa1: np.ndarray = field(default_factory=lambda: np.zeros(8, dtype=np.int64))
    sow1: np.ndarray = field(default_factory=lambda: np.zeros(8, dtype=np.int64))
    pom1: int = 0
    n_gauss: int = 0
    counter_bits: int = 32

    def check_conservation(self):
        return int(self.soi.sum()) == int(self.soa1.sum()) == int(self.sow1.sum()) == self.pom1


@dataclass
class EngineConstants:
    """Once-rounded per-tensor-pair constants shared by engine and oracle."""

    s_a: FixedScalar
    s_w: FixedScalar
    m_a: FixedScalar
    m_w: FixedScalar
    b: FixedScalar
    a_pow: list  # exact powers 0..14 of the once-rounded base
    dict_a: TensorDictionary
    dict_w: TensorDictionary

    @classmethod
    def from_dicts(cls, dict_a, dict_w):
        if dict_a.a_fx != dict_w.a_fx or dict_a.b_fx != dict_w.b_fx:
            raise EngineError("operand dictionaries fitted to different curves")
        base = dict_a.a_fx
        a_pow = [FixedScalar(base.num ** k, base.shift * k) for k in range(SOI_SLOTS)]
        return cls(
            s_a=dict_a.s_fx, s_w=dict_w.s_fx, m_a=dict_a.m_fx, m_w=dict_w.m_fx,
            b=dict_a.b_fx, a_pow=a_pow, dict_a=dict_a, dict_w=dict_w,
        )

    def output_format(self, n):
        """16-bit format whose span covers n worst-case element products."""
        bound = max(n, 1) * self.dict_a.max_abs_value() * self.dict_w.max_abs_value()
        if bound == 0:
            return QFormat(16, 15)
        frac = 16 - fraction_ceil_log2(2 * bound)
        return QFormat(16, max(0, min(15, frac)))


@dataclass
class OutlierAccumulator:
    """Exact running sum of grid-centroid products (one shared shift)."""

    shift: int
    total: int = 0

    def add(self, grid_a, grid_w):
        self.total += int(grid_a) * int(grid_w)

    def as_fixed(self):
        return FixedScalar(self.total, self.shift)


@dataclass
class DotResult:
    value: int               # stored int in `fmt`
    fmt: QFormat
    breakdown: dict          # term name -> exact Fraction
    saturated: bool = False

    def to_float(self):
        return self.value / (1 << self.fmt.frac)


def make_outlier_accumulator(dict_a, dict_w):
    return OutlierAccumulator(shift=dict_a.qfmt.frac + dict_w.qfmt.frac)


def accumulate_pair(cf, oacc, code_a, code_w, dict_a, dict_w):
    """Feed one code pair: curve/curve pairs update the four counters, any
    pair touching the wide table goes through the centroid MAC instead."""
    bits_a = code_a.pack5() if hasattr(code_a, "pack5") else int(code_a)
    bits_w = code_w.pack5() if hasattr(code_w, "pack5") else int(code_w)
    if (bits_a | bits_w) & OUTLIER_BIT:
        oacc.add(dict_a._decode_grid[bits_a], dict_w._decode_grid[bits_w])
        return
    idx_a = bits_a & INDEX_MASK
    idx_w = bits_w & INDEX_MASK
    sigma = 1 if ((bits_a ^ bits_w) & SIGN_BIT) == 0 else -1
    limit = (1 << (cf.counter_bits - 1)) - 1
    for slot in (cf.soi[idx_a + idx_w], cf.soa1[idx_a], cf.sow1[idx_w], cf.pom1):
        if abs(int(slot) + sigma) > limit:
            raise EngineError("counter saturation; widen counter_bits")
    cf.soi[idx_a + idx_w] += sigma
    cf.soa1[idx_a] += sigma
    cf.sow1[idx_w] += sigma
    cf.pom1 += sigma
    cf.n_gauss += 1


def _dot_apow(counts, a_pow):
    """Exact sum_k counts[k] * a_pow[k]."""
    total = FX_ZERO
    for k, c in enumerate(counts):
        c = int(c)
        if c:
            total = total + a_pow[k] * c
    return total


def finalize(cf, oacc, consts, aux_a, aux_w, out_fmt=None):
    """Scale the counters into the nine algebraic terms, add the wide-table
    accumulator, and round once into the output format.

    aux_a / aux_w are the signed per-index sign counts of each operand,
    restricted to slots where both codes were curve codes.
    """
    if aux_a is None or aux_w is None:
        raise EngineError("missing per-operand sign-count sums")
    if out_fmt is None:
        out_fmt = consts.output_format(cf.n_gauss)
    sA, sW, mA, mW, b = consts.s_a, consts.s_w, consts.m_a, consts.m_w, consts.b
    soi_sum = _dot_apow(cf.soi, consts.a_pow)
    soa1_sum = _dot_apow(cf.soa1, consts.a_pow)
    sow1_sum = _dot_apow(cf.sow1, consts.a_pow)
    aux_a_pow = _dot_apow(aux_a, consts.a_pow)
    aux_w_pow = _dot_apow(aux_w, consts.a_pow)
    n_theta_a = int(np.sum(aux_a))
    n_theta_w = int(np.sum(aux_w))
    terms = {
        "SoI": sA * sW * soi_sum,
        "SoA1": sA * sW * b * soa1_sum,
        "SoA2": sA * mW * aux_a_pow,
        "SoW1": sW * sA * b * sow1_sum,
        "SoW2": sW * mA * aux_w_pow,
        "PoM1": sA * sW * b * b * cf.pom1,
        "PoM2": sA * mW * b * n_theta_a,
        "PoM3": sW * mA * b * n_theta_w,
        "PoM4": mA * mW * cf.n_gauss,
        "outlier_acc": oacc.as_fixed(),
    }
    total = FX_ZERO
    for t in terms.values():
        total = total + t
    flag = SaturationFlag()
    value = total.round_into(out_fmt, flag)
    return DotResult(
        value=value, fmt=out_fmt,
        breakdown={k: v.to_fraction() for k, v in terms.items()},
        saturated=bool(flag),
    )


def _pair_masks(codes_a, codes_w):
    ot = ((codes_a | codes_w) & OUTLIER_BIT) != 0
    return ~ot, ot


def _signed_counts(idx, sigma, slots):
    pos = np.bincount(idx[sigma > 0], minlength=slots)
    neg = np.bincount(idx[sigma < 0], minlength=slots)
    return (pos - neg).astype(np.int64)


def stream_counters(codes_a, codes_w, dict_a, dict_w):
    """Vectorized equivalent of feeding every pair through accumulate_pair.

    Returns (CounterFile, OutlierAccumulator, aux_a, aux_w), with the aux
    sign counts restricted to pairs where both codes are curve codes.
    """
    codes_a = np.asarray(codes_a, dtype=np.uint8).reshape(-1)
    codes_w = np.asarray(codes_w, dtype=np.uint8).reshape(-1)
    if codes_a.size != codes_w.size:
        raise EngineError(f"length mismatch: {codes_a.size} vs {codes_w.size}")
    gauss, ot = _pair_masks(codes_a, codes_w)
    ga, gw = codes_a[gauss], codes_w[gauss]
    idx_a = (ga & INDEX_MASK).astype(np.int64)
    idx_w = (gw & INDEX_MASK).astype(np.int64)
    theta_a = np.where((ga & SIGN_BIT) != 0, -1, 1)
    theta_w = np.where((gw & SIGN_BIT) != 0, -1, 1)
    sigma = theta_a * theta_w
    cf = CounterFile()
    cf.soi = _signed_counts(idx_a + idx_w, sigma, SOI_SLOTS)
    cf.soa1 = _signed_counts(idx_a, sigma, 8)
    cf.sow1 = _signed_counts(idx_w, sigma, 8)
    cf.pom1 = int(sigma.sum())
    cf.n_gauss = int(sigma.size)
    oacc = make_outlier_accumulator(dict_a, dict_w)
    if np.any(ot):
        va = dict_a._decode_grid[codes_a[ot]]
        vw = dict_w._decode_grid[codes_w[ot]]
        oacc.total = int(np.sum(va * vw))
    aux_a = _signed_counts(idx_a, theta_a, 8)
    aux_w = _signed_counts(idx_w, theta_w, 8)
    return cf, oacc, aux_a, aux_w


def dot(q_a, q_w, consts=None, out_fmt=None):
    """Dot product of two 1-D quantized tensors via the counter pathway."""
    codes_a = q_a.codes if isinstance(q_a, QuantizedTensor) else np.asarray(q_a, dtype=np.uint8)
    codes_w = q_w.codes if isinstance(q_w, QuantizedTensor) else np.asarray(q_w, dtype=np.uint8)
    if consts is None:
        if not isinstance(q_a, QuantizedTensor) or not isinstance(q_w, QuantizedTensor):
            raise EngineError("raw code arrays need explicit EngineConstants")
        consts = EngineConstants.from_dicts(q_a.dict, q_w.dict)
    if out_fmt is None:
        out_fmt = consts.output_format(codes_a.size)
    cf, oacc, aux_a, aux_w = stream_counters(codes_a, codes_w, consts.dict_a, consts.dict_w)
    return finalize(cf, oacc, consts, aux_a, aux_w, out_fmt)


def gemm(q_a, q_w, consts=None):
    """out[i, j] = dot(row i of A, column j of W), one shared output format."""
    if len(q_a.shape) != 2 or len(q_w.shape) != 2:
        raise EngineError("gemm needs 2-D operands")
    m, k = q_a.shape
    k2, n = q_w.shape
    if k != k2:
        raise EngineError(f"inner dimensions differ: {k} vs {k2}")
    if consts is None:
        consts = EngineConstants.from_dicts(q_a.dict, q_w.dict)
    out_fmt = consts.output_format(k)
    rows = q_a.codes.reshape(m, k)
    cols = q_w.codes.reshape(k2, n)
    out = np.empty((m, n), dtype=np.int16)
    for i in range(m):
        for j in range(n):
            r = dot(rows[i], cols[:, j], consts, out_fmt)
            out[i, j] = r.value
    return Tensor(shape=(m, n), dtype="fx16", data=out.reshape(-1),
                  frac_bits=out_fmt.frac)


def requantize(out_tensor, dict_next):
    """Quantize a finished fixed-point activation tensor for the next layer;
    the next layer's precomputed sign sums ride along in the result."""
    return encode_tensor(out_tensor, dict_next)


def centroid_mac_oracle(codes_a, codes_w, dict_a, dict_w, out_fmt):
    """Direct evaluation: decode every pair and multiply-accumulate exactly,
    rounding once into the output format. Curve/curve pairs use the exact
    constant-derived values; pairs touching the wide table use the stored
    grid centroids, mirroring the lookup path.
    """
    codes_a = np.asarray(codes_a, dtype=np.uint8).reshape(-1)
    codes_w = np.asarray(codes_w, dtype=np.uint8).reshape(-1)
    joint = codes_a.astype(np.int64) * 32 + codes_w.astype(np.int64)
    hist = np.bincount(joint, minlength=1024)
    # align each side's exact values to one common shift so products share one
    exact_a = [dict_a.decode_exact(bits) if dict_a._code_valid[bits] else None
               for bits in range(32)]
    exact_w = [dict_w.decode_exact(bits) if dict_w._code_valid[bits] else None
               for bits in range(32)]
    shift_a = max((v.shift for v in exact_a if v is not None), default=0)
    shift_w = max((v.shift for v in exact_w if v is not None), default=0)
    num_a = [v.num << (shift_a - v.shift) if v is not None else None for v in exact_a]
    num_w = [v.num << (shift_w - v.shift) if v is not None else None for v in exact_w]
    grid_a = dict_a._decode_grid
    grid_w = dict_w._decode_grid
    gauss_total = 0
    grid_total = 0
    for k in np.nonzero(hist)[0]:
        p, q = int(k) >> 5, int(k) & 31
        cnt = int(hist[k])
        if (p | q) & OUTLIER_BIT:
            grid_total += cnt * int(grid_a[p]) * int(grid_w[q])
        else:
            gauss_total += cnt * num_a[p] * num_w[q]
    total = (FixedScalar(gauss_total, shift_a + shift_w)
             + FixedScalar(grid_total, dict_a.qfmt.frac + dict_w.qfmt.frac))
    flag = SaturationFlag()
    return total.round_into(out_fmt, flag)


def gemm_oracle(q_a, q_w, out_fmt=None):
    """Oracle GEMM over decoded values, same output format as gemm()."""
    m, k = q_a.shape
    k2, n = q_w.shape
    consts = EngineConstants.from_dicts(q_a.dict, q_w.dict)
    if out_fmt is None:
        out_fmt = consts.output_format(k)
    rows = q_a.codes.reshape(m, k)
    cols = q_w.codes.reshape(k2, n)
    out = np.empty((m, n), dtype=np.int16)
    for i in range(m):
        for j in range(n):
            out[i, j] = centroid_mac_oracle(rows[i], cols[:, j], q_a.dict,
                                            q_w.dict, out_fmt)
    return Tensor(shape=(m, n), dtype="fx16", data=out.reshape(-1),
                  frac_bits=out_fmt.frac)
