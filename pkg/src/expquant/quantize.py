"""Per-tensor dictionaries and 5-bit code encode/decode.

Each tensor gets two centroid tables derived from one fitted curve:
  * curve table: 8 magnitudes s*(a**i + b), i in [0,7], folded with a sign bit
  * wide table: up to 16 signed entries on the extended ladder i in [8,45]
    for the sparse large-magnitude values
A logical code is 5 bits: table-select, sign, 3-bit index. The dictionary
keeps both the exact scaled-integer form of every curve constant (shared with
the dot-product engine, so decomposition and direct evaluation agree exactly)
and the 16-bit grid image of every centroid (what decoding emits).
"""

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .fixedpoint import (FixedScalar, QFormat, ceil_log2, compute_frac,
                         significand_shift)
from .golden import ExpFit
from .tensorstore import Tensor, compute_stats

A_SHIFT = 13          # curve base a is rounded once into Q2.13
CONST_SIG_BITS = 21   # scale/shift/offset constants keep ~21 significant bits
OT_MAX_INT = 45       # extended ladder covers i in [8, OT_MAX_INT]
OT_TABLE_SIZE = 16

OUTLIER_BIT = 0x10
SIGN_BIT = 0x08
INDEX_MASK = 0x07

# exact powers of once-rounded curve bases, shared across dictionaries
_POW_CACHE = {}


@dataclass(frozen=True)
class Code:
    is_outlier: bool
    sign: int   # 0 positive, 1 negative
    index: int  # 3 bits

    def __post_init__(self):
        if not (0 <= self.index <= 7) or self.sign not in (0, 1):
            raise ValueError(f"invalid code fields: {self}")

    def pack5(self):
        return (OUTLIER_BIT if self.is_outlier else 0) | (self.sign << 3) | self.index

    @classmethod
    def from_bits(cls, bits):
        return cls(bool(bits & OUTLIER_BIT), (bits >> 3) & 1, bits & INDEX_MASK)


class DictionaryError(Exception):
    pass


@dataclass
class TensorDictionary:
    s: float
    m: float
    fit: ExpFit
    qfmt: QFormat
    # exact once-rounded constants (shared with the engine)
    s_fx: FixedScalar = field(repr=False, default=None)
    m_fx: FixedScalar = field(repr=False, default=None)
    a_fx: FixedScalar = field(repr=False, default=None)
    b_fx: FixedScalar = field(repr=False, default=None)
    # curve-table magnitudes on the 16-bit grid (stored ints)
    g_centroids: list = field(default_factory=list)
    # wide-table entries: ladder index, sign, signed grid centroid
    ot_ints: list = field(default_factory=list)
    ot_signs: list = field(default_factory=list)
    ot_centroids: list = field(default_factory=list)
    degenerate: bool = False

    def __post_init__(self):
        if self.s_fx is None:
            self.s_fx = FixedScalar.from_float(self.s, significand_shift(self.s, CONST_SIG_BITS))
        if self.m_fx is None:
            self.m_fx = FixedScalar.from_float(self.m, significand_shift(self.m, CONST_SIG_BITS))
        if self.degenerate:
            # all codes decode to the grid image of m; the engine constants
            # must agree with that exactly, so m is re-anchored on the grid
            self.m_fx = FixedScalar(self.m_fx.round_into(self.qfmt), self.qfmt.frac)
            self.s_fx = FixedScalar(0, 0)
        if self.a_fx is None:
            self.a_fx = FixedScalar.from_float(self.fit.a, A_SHIFT)
        if self.b_fx is None:
            self.b_fx = FixedScalar.from_float(self.fit.b, significand_shift(self.fit.b, CONST_SIG_BITS))
        if not self.degenerate and not self.g_centroids:
            self.g_centroids = [
                self.g_exact(i).round_into(self.qfmt) for i in range(8)
            ]
        self._check()
        self._build_tables()

    # -- exact curve values ------------------------------------------------

    def a_pow(self, i):
        """Exact i-th power of the once-rounded base: products of powers
        telescope exactly, which the engine decomposition relies on."""
        key = (self.a_fx.num, i)
        hit = _POW_CACHE.get(key)
        if hit is None:
            hit = FixedScalar(self.a_fx.num ** i, A_SHIFT * i)
            _POW_CACHE[key] = hit
        return hit

    def g_exact(self, i):
        """Exact curve magnitude s*(a**i + b) before any grid rounding."""
        return self.s_fx * (self.a_pow(i) + self.b_fx)

    def decode_exact(self, bits):
        """Exact value of a code: curve codes from the shared constants,
        wide-table codes from their stored grid centroid."""
        if self.degenerate:
            return self.m_fx
        is_ot = bool(bits & OUTLIER_BIT)
        sign = -1 if bits & SIGN_BIT else 1
        idx = bits & INDEX_MASK
        if is_ot:
            # wide table is addressed by (sign, index): the sign bit is
            # pinned to the stored centroid's sign, giving 8 slots per side
            k = self._ot_addr.get(bits & 0x0F)
            if k is None:
                raise DictionaryError(f"wide-table slot {bits & 0x0F:#06b} is empty")
            return FixedScalar(self.ot_centroids[k], self.qfmt.frac)
        return sign * self.g_exact(idx) + self.m_fx

    # -- grid tables ---------------------------------------------------------

    def _check(self):
        if self.degenerate:
            self._ot_addr = {}
            return
        if len(self.g_centroids) != 8:
            raise DictionaryError("need 8 curve magnitudes")
        if any(b < a for a, b in zip(self.g_centroids, self.g_centroids[1:])):
            raise DictionaryError("curve magnitudes must be ascending")
        if len(self.ot_ints) > OT_TABLE_SIZE:
            raise DictionaryError("wide table holds at most 16 entries")
        if any(not (8 <= i <= OT_MAX_INT) for i in self.ot_ints):
            raise DictionaryError("wide-table ladder indexes must lie in [8, 45]")
        # (sign, index) addressing: slot = sign bit + rank within that sign
        self._ot_addr = {}
        seen = [0, 0]
        for k, sg in enumerate(self.ot_signs):
            if seen[sg] >= 8:
                raise DictionaryError("wide table holds at most 8 entries per sign")
            self._ot_addr[(sg << 3) | seen[sg]] = k
            seen[sg] += 1

    def _build_tables(self):
        self._m_grid = self.m_fx.round_into(self.qfmt)
        # decode table: 5-bit pattern -> grid int (invalid -> marked)
        val = np.zeros(32, dtype=np.int64)
        ok = np.zeros(32, dtype=bool)
        cand = []  # (grid value, code bits, magnitude order, sign)
        if self.degenerate:
            val[:] = self._m_grid
            ok[:] = True
            cand.append((self._m_grid, 0, 0, 0))
        else:
            for i in range(8):
                gx = self.g_exact(i)
                for sign in (0, 1):
                    bits = (sign << 3) | i
                    v = ((-gx if sign else gx) + self.m_fx).round_into(self.qfmt)
                    val[bits] = v
                    ok[bits] = True
                    cand.append((v, bits, i, sign))
            for addr, k in self._ot_addr.items():
                bits = OUTLIER_BIT | addr
                val[bits] = self.ot_centroids[k]
                ok[bits] = True
                cand.append((self.ot_centroids[k], bits, self.ot_ints[k],
                             self.ot_signs[k]))
        self._decode_grid = val
        self._code_valid = ok
        # encode candidates: value-sorted, deduped keeping the smaller
        # magnitude (ties between +/- of one bin keep the positive side)
        cand.sort(key=lambda c: (c[0], c[2], c[3]))
        dedup = []
        for c in cand:
            if dedup and dedup[-1][0] == c[0]:
                continue
            dedup.append(c)
        self._cand_values = np.array([c[0] for c in dedup], dtype=np.int64)
        self._cand_bits = np.array([c[1] for c in dedup], dtype=np.uint8)
        self._cand_magkey = np.array([c[2] * 2 + c[3] for c in dedup], dtype=np.int64)

    def centroid_count(self):
        return int(self._cand_values.size)

    def max_abs_value(self):
        """Largest |value| any code can take, as an exact Fraction."""
        if getattr(self, "_max_abs", None) is None:
            best = Fraction(0)
            for bits in range(32):
                if not self._code_valid[bits]:
                    continue
                v = abs(self.decode_exact(bits).to_fraction())
                g = abs(Fraction(int(self._decode_grid[bits]), 1 << self.qfmt.frac))
                best = max(best, v, g)
            self._max_abs = best
        return self._max_abs

    def to_json_dict(self):
        return {
            "version": 1,
            "s": self.s,
            "m": self.m,
            "a": self.fit.a,
            "b": self.fit.b,
            "frac": self.qfmt.frac,
            "bits": self.qfmt.bits,
            "g_centroids": [int(g) for g in self.g_centroids],
            "ot": [[int(i), int(sg), int(c)] for i, sg, c in
                   zip(self.ot_ints, self.ot_signs, self.ot_centroids)],
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_json_dict(cls, doc):
        if doc.get("version") != 1:
            raise DictionaryError(f"unsupported sidecar version {doc.get('version')}")
        fit = ExpFit(a=doc["a"], b=doc["b"])
        ot = doc.get("ot", [])
        return cls(
            s=doc["s"], m=doc["m"], fit=fit,
            qfmt=QFormat(doc.get("bits", 16), doc["frac"]),
            g_centroids=list(doc.get("g_centroids", [])),
            ot_ints=[e[0] for e in ot],
            ot_signs=[e[1] for e in ot],
            ot_centroids=[e[2] for e in ot],
            degenerate=doc.get("degenerate", False),
        )


@dataclass
class QuantizedTensor:
    shape: tuple
    codes: np.ndarray  # uint8, 5-bit patterns
    dict: TensorDictionary
    # signed per-index sign counts over curve-coded positions; the engine's
    # precomputed-sum terms derive from these exactly
    aux_counts: np.ndarray = None

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.codes = np.asarray(self.codes, dtype=np.uint8).reshape(-1)
        if self.codes.size != int(np.prod(self.shape)):
            raise ValueError("code count != element count")
        if self.aux_counts is None:
            self.aux_counts = aux_counts_from_codes(self.codes)

    @property
    def size(self):
        return self.codes.size

    def aux_sum_theta(self):
        return int(self.aux_counts.sum())

    def outlier_fraction(self):
        return float(np.mean((self.codes & OUTLIER_BIT) != 0))


def aux_counts_from_codes(codes):
    """Signed sign-count per curve index: sum of theta over curve-coded slots."""
    codes = np.asarray(codes, dtype=np.uint8)
    gauss = (codes & OUTLIER_BIT) == 0
    idx = codes[gauss] & INDEX_MASK
    theta = np.where((codes[gauss] & SIGN_BIT) != 0, -1, 1)
    pos = np.bincount(idx[theta > 0], minlength=8)
    neg = np.bincount(idx[theta < 0], minlength=8)
    return (pos - neg).astype(np.int64)


def _default_qformat(stats):
    if stats.max > stats.min:
        return QFormat(16, compute_frac(16, stats.max, stats.min))
    # constant tensor: pick a frac that represents the single value
    span = 2.0 * max(abs(stats.mean), 0.5)
    return QFormat(16, max(0, min(15, 16 - ceil_log2(span))))


def _ladder_magnitudes(s, fit, upto=OT_MAX_INT):
    i = np.arange(upto + 1, dtype=np.float64)
    return s * (fit.a ** i + fit.b)


def select_outlier_bins(values, mean, s, fit, table_size=OT_TABLE_SIZE):
    """Pick the wide-table bins with the highest occupancy.

    Values map to the nearest rung of the extended magnitude ladder (edges at
    midpoints); whatever lands beyond rung 7 is binned per (sign, rung) and
    the top `table_size` bins win. Ties prefer the inner rung, then the
    positive side.
    """
    u = np.asarray(values, dtype=np.float64).reshape(-1) - mean
    mags = _ladder_magnitudes(s, fit)
    mids = (mags[1:] + mags[:-1]) / 2.0
    rung = np.searchsorted(mids, np.abs(u))
    far = rung >= 8
    if not np.any(far):
        return []
    sign = (u[far] < 0).astype(np.int64)
    key = (rung[far] - 8) * 2 + sign
    counts = np.bincount(key, minlength=(OT_MAX_INT - 7) * 2)
    # rank every candidate bin (zero-occupancy bins fill leftover capacity,
    # inner rungs first); sign addressing allows at most 8 entries per side
    order = sorted(range(counts.size),
                   key=lambda k: (-int(counts[k]), k // 2, k % 2))
    chosen = []
    per_sign = [0, 0]
    for k in order:
        if len(chosen) == table_size:
            break
        if per_sign[k % 2] >= 8:
            continue
        per_sign[k % 2] += 1
        chosen.append(k)
    chosen.sort(key=lambda k: (k // 2, k % 2))
    return [(k // 2 + 8, k % 2) for k in chosen]


def make_dictionary(s, m, fit, qfmt, ot_bins=()):
    """Assemble a dictionary from explicit parameters and wide-table bins."""
    if s == 0.0:
        return TensorDictionary(s=s, m=m, fit=fit, qfmt=qfmt, degenerate=True)
    d = TensorDictionary(s=s, m=m, fit=fit, qfmt=qfmt)
    ints, signs, cents = [], [], []
    largest_g = d.g_centroids[-1]
    used = set(int(v) for v in d._decode_grid[d._code_valid])
    per_sign = [0, 0]
    for oi, osign in ot_bins:
        mag = d.s_fx * (d.a_pow(oi) + d.b_fx)
        cent = ((-mag if osign else mag) + d.m_fx).round_into(qfmt)
        if mag.round_into(qfmt) <= largest_g or cent in used or per_sign[osign] >= 8:
            # grid too coarse to keep this rung distinct, or the sign's
            # address half is already full
            continue
        used.add(cent)
        per_sign[osign] += 1
        ints.append(oi)
        signs.append(osign)
        cents.append(cent)
    order = sorted(range(len(ints)), key=lambda k: (ints[k], signs[k]))
    return TensorDictionary(
        s=s, m=m, fit=fit, qfmt=qfmt,
        g_centroids=d.g_centroids,
        ot_ints=[ints[k] for k in order],
        ot_signs=[signs[k] for k in order],
        ot_centroids=[cents[k] for k in order],
    )


def build_tensor_dictionary(stats, fit, values):
    """Dictionary for one tensor: scale/shift from its stats, wide-table bins
    from its occupancy beyond the curve range, all centroids on the 16-bit grid."""
    if isinstance(values, Tensor):
        values = values.values()
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    qfmt = _default_qformat(stats)
    if stats.std == 0.0:
        return make_dictionary(0.0, stats.mean, fit, qfmt)
    bins = select_outlier_bins(values, stats.mean, stats.std, fit)
    return make_dictionary(stats.std, stats.mean, fit, qfmt, bins)


def profile_activations(sample_tensors, fit):
    """Pool activation samples and build one dictionary for the slot."""
    if not sample_tensors:
        raise ValueError("need at least one sample tensor")
    pooled = np.concatenate([
        (t.values() if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)).reshape(-1)
        for t in sample_tensors
    ])
    stats = compute_stats(pooled)
    return build_tensor_dictionary(stats, fit, pooled)


def _to_grid(values, qfmt):
    """Vectorized float -> grid ints, half away from zero, saturating."""
    v = np.asarray(values, dtype=np.float64)
    scaled = np.abs(v) * float(1 << qfmt.frac) + 0.5
    n = np.floor(scaled)
    n = np.where(np.isfinite(n), n, float(qfmt.int_max))
    n = np.where(v < 0, -n, n)
    return np.clip(n, qfmt.int_min, qfmt.int_max).astype(np.int64)


def encode_tensor(t, d):
    """Nearest-centroid codes over both tables, ties toward the smaller
    magnitude. Distances are exact grid-integer differences."""
    if isinstance(t, Tensor):
        if t.dtype == "fx16" and t.frac_bits == d.qfmt.frac:
            xq = t.data.astype(np.int64)
        else:
            xq = _to_grid(t.values(), d.qfmt)
        shape = t.shape
    else:
        arr = np.asarray(t, dtype=np.float64)
        shape = arr.shape if arr.shape else (arr.size,)
        xq = _to_grid(arr.reshape(-1), d.qfmt)
    cv = d._cand_values
    if cv.size == 1:
        codes = np.full(xq.size, d._cand_bits[0], dtype=np.uint8)
        return QuantizedTensor(shape=shape, codes=codes, dict=d)
    j = np.searchsorted(cv, xq)
    left = np.clip(j - 1, 0, cv.size - 1)
    right = np.clip(j, 0, cv.size - 1)
    dl = np.abs(xq - cv[left])
    dr = np.abs(cv[right] - xq)
    use_left = (dl < dr) | ((dl == dr) & (d._cand_magkey[left] <= d._cand_magkey[right]))
    pick = np.where(use_left, left, right)
    codes = d._cand_bits[pick]
    return QuantizedTensor(shape=shape, codes=codes, dict=d)


def decode_code(code, d):
    """Grid value of one code, as a float on the dictionary's grid."""
    bits = code.pack5() if isinstance(code, Code) else int(code)
    if not d._code_valid[bits]:
        raise DictionaryError(f"invalid code pattern {bits:#07b}")
    return float(d._decode_grid[bits]) / (1 << d.qfmt.frac)


def decode_tensor(q):
    d = q.dict
    bad = ~d._code_valid[q.codes]
    if np.any(bad):
        raise DictionaryError("quantized tensor contains invalid codes")
    grid = d._decode_grid[q.codes].astype(np.int16)
    return Tensor(shape=q.shape, dtype="fx16", data=grid, frac_bits=d.qfmt.frac)


def save_sidecar(d, path, aux_counts=None):
    doc = d.to_json_dict()
    if aux_counts is not None:
        doc["aux_counts"] = [int(c) for c in aux_counts]
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def load_sidecar(path):
    with open(path) as f:
        doc = json.load(f)
    d = TensorDictionary.from_json_dict(doc)
    aux = doc.get("aux_counts")
    return d, (np.asarray(aux, dtype=np.int64) if aux is not None else None)
