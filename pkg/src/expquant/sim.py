"""Cycle-approximate model of one compute tile.

Eight lane processors consume one code pair each per cycle and keep private
signed counters; a shared lookup/post-processing unit handles wide-table
pairs one at a time (colliding lanes hold) and later drains every counter
serially. Timing is modeled per 8-pair wave; functional results reuse the
exact engine arithmetic, so configuration changes never alter values.
"""

import io
from dataclasses import dataclass

import numpy as np

from .engine import (SOI_SLOTS, CounterFile, EngineConstants, EngineError,
                     finalize, make_outlier_accumulator)
from .quantize import INDEX_MASK, OUTLIER_BIT, SIGN_BIT, QuantizedTensor

CRF_ENTRIES = SOI_SLOTS + 8 + 8 + 1  # one drain or post-process pass touches all


@dataclass
class TileConfig:
    gpe_count: int = 8
    counter_bits: int = 8
    postproc_cycles_per_entry: int = 1
    opp_mac_cycles: int = 1

    def __post_init__(self):
        if self.gpe_count < 1:
            raise ValueError("need at least one lane")
        if self.counter_bits < 2:
            raise ValueError("counters need at least 2 bits")


@dataclass
class SimStats:
    total_cycles: int = 0
    stream_cycles: int = 0
    outlier_stall_cycles: int = 0
    postproc_cycles: int = 0
    drain_events: int = 0
    gpe_utilization: float = 0.0
    bytes_moved: int = 0
    result: object = None  # DotResult produced alongside the timing

    def check(self):
        return (self.total_cycles ==
                self.stream_cycles + self.outlier_stall_cycles + self.postproc_cycles)


def schedule_outliers(flags):
    """One scheduling step: pick the lowest-index lane holding a wide-table
    pair; every other flagged lane gets a hold."""
    flags = [bool(f) for f in flags]
    selected = None
    holds = [False] * len(flags)
    for i, f in enumerate(flags):
        if f and selected is None:
            selected = i
        elif f:
            holds[i] = True
    return selected, holds


class _Lane:
    """Private counters of one lane with width-limited cells and wide shadows."""

    __slots__ = ("limit", "soi", "soa1", "sow1", "pom1",
                 "sh_soi", "sh_soa1", "sh_sow1", "sh_pom1", "drains")

    def __init__(self, counter_bits):
        self.limit = (1 << (counter_bits - 1)) - 1
        self.soi = [0] * SOI_SLOTS
        self.soa1 = [0] * 8
        self.sow1 = [0] * 8
        self.pom1 = 0
        self.sh_soi = [0] * SOI_SLOTS
        self.sh_soa1 = [0] * 8
        self.sh_sow1 = [0] * 8
        self.sh_pom1 = 0
        self.drains = 0

    def _would_overflow(self, ia, iw, sigma):
        return (abs(self.soi[ia + iw] + sigma) > self.limit
                or abs(self.soa1[ia] + sigma) > self.limit
                or abs(self.sow1[iw] + sigma) > self.limit
                or abs(self.pom1 + sigma) > self.limit)

    def drain(self):
        for k in range(SOI_SLOTS):
            self.sh_soi[k] += self.soi[k]
            self.soi[k] = 0
        for k in range(8):
            self.sh_soa1[k] += self.soa1[k]
            self.soa1[k] = 0
            self.sh_sow1[k] += self.sow1[k]
            self.sow1[k] = 0
        self.sh_pom1 += self.pom1
        self.pom1 = 0
        self.drains += 1

    def update(self, ia, iw, sigma):
        drained = False
        if self._would_overflow(ia, iw, sigma):
            self.drain()
            drained = True
        self.soi[ia + iw] += sigma
        self.soa1[ia] += sigma
        self.sow1[iw] += sigma
        self.pom1 += sigma
        return drained

    def totals(self):
        soi = np.array([a + b for a, b in zip(self.soi, self.sh_soi)], dtype=np.int64)
        soa = np.array([a + b for a, b in zip(self.soa1, self.sh_soa1)], dtype=np.int64)
        sow = np.array([a + b for a, b in zip(self.sow1, self.sh_sow1)], dtype=np.int64)
        return soi, soa, sow, self.pom1 + self.sh_pom1


def simulate_dot_stream(codes_a, codes_w, cfg, dict_a=None, dict_w=None,
                        consts=None, out_fmt=None):
    """Stream equal-length code vectors through one tile.

    Per cycle up to gpe_count pairs issue; a cycle carrying c wide-table
    pairs serializes c-1 of them behind holds. A lane about to overflow a
    counter first dumps all its counters into wide shadows (one drain pass,
    CRF_ENTRIES cycles, reported in postproc_cycles). Functional output is
    bit-identical to the untimed engine.
    """
    if isinstance(codes_a, QuantizedTensor):
        dict_a = codes_a.dict
        codes_a = codes_a.codes
    if isinstance(codes_w, QuantizedTensor):
        dict_w = codes_w.dict
        codes_w = codes_w.codes
    codes_a = np.asarray(codes_a, dtype=np.uint8).reshape(-1)
    codes_w = np.asarray(codes_w, dtype=np.uint8).reshape(-1)
    if codes_a.size != codes_w.size:
        raise EngineError("stream lengths differ")
    if consts is None:
        consts = EngineConstants.from_dicts(dict_a, dict_w)
    n = codes_a.size
    g = cfg.gpe_count
    lanes = [_Lane(cfg.counter_bits) for _ in range(g)]
    oacc = make_outlier_accumulator(consts.dict_a, consts.dict_w)
    ga = consts.dict_a._decode_grid
    gw = consts.dict_w._decode_grid
    is_ot = ((codes_a | codes_w) & OUTLIER_BIT) != 0
    idx_a = (codes_a & INDEX_MASK).astype(np.int64)
    idx_w = (codes_w & INDEX_MASK).astype(np.int64)
    sigma = np.where(((codes_a ^ codes_w) & SIGN_BIT) != 0, -1, 1)
    stream_cycles = 0
    stall_cycles = 0
    drain_cycles = 0
    for start in range(0, n, g):
        stop = min(start + g, n)
        stream_cycles += 1
        wave_ot = 0
        for p in range(start, stop):
            lane = lanes[p - start]
            if is_ot[p]:
                wave_ot += 1
                oacc.add(ga[codes_a[p]], gw[codes_w[p]])
            else:
                if lane.update(int(idx_a[p]), int(idx_w[p]), int(sigma[p])):
                    drain_cycles += CRF_ENTRIES
        if wave_ot > 1:
            stall_cycles += (wave_ot - 1) * cfg.opp_mac_cycles
    # merge lanes into one counter file; lane partition never changes totals
    cf = CounterFile(counter_bits=cfg.counter_bits)
    for lane in lanes:
        soi, soa, sow, pom = lane.totals()
        cf.soi += soi
        cf.soa1 += soa
        cf.sow1 += sow
        cf.pom1 += pom
    gauss = ~is_ot
    cf.n_gauss = int(np.sum(gauss))
    theta_a = np.where((codes_a[gauss] & SIGN_BIT) != 0, -1, 1)
    theta_w = np.where((codes_w[gauss] & SIGN_BIT) != 0, -1, 1)
    aux_a = (np.bincount(idx_a[gauss][theta_a > 0], minlength=8)
             - np.bincount(idx_a[gauss][theta_a < 0], minlength=8)).astype(np.int64)
    aux_w = (np.bincount(idx_w[gauss][theta_w > 0], minlength=8)
             - np.bincount(idx_w[gauss][theta_w < 0], minlength=8)).astype(np.int64)
    result = finalize(cf, oacc, consts, aux_a, aux_w, out_fmt)
    post = drain_cycles + g * CRF_ENTRIES * cfg.postproc_cycles_per_entry + 1
    total = stream_cycles + stall_cycles + post
    stats = SimStats(
        total_cycles=total, stream_cycles=stream_cycles,
        outlier_stall_cycles=stall_cycles, postproc_cycles=post,
        drain_events=sum(l.drains for l in lanes),
        gpe_utilization=cf.n_gauss / (g * total) if total else 0.0,
        result=result,
    )
    return stats


def simulate_layer(q_a, q_w, cfg, tiles=1):
    """Map a GEMM's dot streams round-robin over `tiles` tiles; report the
    slowest tile's timing plus aggregate utilization and packed traffic."""
    from .packing import pack, packed_byte_size

    if len(q_a.shape) != 2 or len(q_w.shape) != 2:
        raise EngineError("layer simulation needs 2-D operands")
    m, k = q_a.shape
    k2, nn = q_w.shape
    if k != k2:
        raise EngineError("inner dimensions differ")
    consts = EngineConstants.from_dicts(q_a.dict, q_w.dict)
    out_fmt = consts.output_format(k)
    rows = q_a.codes.reshape(m, k)
    cols = q_w.codes.reshape(k2, nn)
    per_tile = [SimStats() for _ in range(tiles)]
    gauss_total = 0
    for d in range(m * nn):
        i, j = divmod(d, nn)
        s = simulate_dot_stream(rows[i], cols[:, j], cfg,
                                consts=consts, dict_a=q_a.dict, dict_w=q_w.dict,
                                out_fmt=out_fmt)
        t = per_tile[d % tiles]
        t.total_cycles += s.total_cycles
        t.stream_cycles += s.stream_cycles
        t.outlier_stall_cycles += s.outlier_stall_cycles
        t.postproc_cycles += s.postproc_cycles
        t.drain_events += s.drain_events
        gauss_total += int(round(s.gpe_utilization * cfg.gpe_count * s.total_cycles))
    worst = max(per_tile, key=lambda t: t.total_cycles)
    worst.gpe_utilization = (gauss_total / (cfg.gpe_count * tiles * worst.total_cycles)
                             if worst.total_cycles else 0.0)
    worst.bytes_moved = packed_byte_size(pack(q_a)) + packed_byte_size(pack(q_w))
    worst.result = None
    return worst


CSV_COLUMNS = ("total_cycles", "stream_cycles", "outlier_stall_cycles",
               "postproc_cycles", "drain_events", "bytes_moved")


def report(stats):
    """Fixed-column CSV plus a short utilization footer."""
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    buf.write(",".join(str(getattr(stats, c)) for c in CSV_COLUMNS) + "\n")
    buf.write(f"# utilization={stats.gpe_utilization:.4f}\n")
    return buf.getvalue()
