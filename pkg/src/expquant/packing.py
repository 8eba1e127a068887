"""Bit-exact packed container: dense 4-bit codes plus a per-group outlier map.

Every element stores its (sign, index) nibble in a dense value area; which
nibbles belong to the wide table is recorded separately, per group of 64
elements, as a count byte followed by 6-bit relative positions packed
MSB-first and zero-padded to the next byte. The two areas are independently
streamable: the value area alone decodes under the curve-table reading.

File layout (version 1):
    magic "MKYP" | u16 version | u64 element count | u32 group size |
    u64 value-area byte length | value area | outlier-pointer area
"""

import struct
from dataclasses import dataclass

import numpy as np

from .quantize import OUTLIER_BIT, QuantizedTensor

PACK_MAGIC = b"MKYP"
PACK_VERSION = 1
GROUP_SIZE = 64


class PackError(Exception):
    pass


@dataclass
class PackedTensor:
    element_count: int
    group_size: int
    value_area: bytes   # ceil(n/2) bytes, element 2k in the low nibble
    ot_area: bytes      # per group: count byte + packed 6-bit offsets
    dict_id: int = 0

    @property
    def group_count(self):
        return -(-self.element_count // self.group_size)

    def outlier_count(self):
        total = 0
        off = 0
        for _ in range(self.group_count):
            cnt = self.ot_area[off]
            total += cnt
            off += 1 + (cnt * 6 + 7) // 8
        return total


def _pack_nibbles(nibbles):
    n = nibbles.size
    padded = np.zeros(n + (n & 1), dtype=np.uint8)
    padded[:n] = nibbles
    pairs = padded.reshape(-1, 2)
    return (pairs[:, 0] | (pairs[:, 1] << 4)).astype(np.uint8).tobytes()


def _unpack_nibbles(buf, n):
    raw = np.frombuffer(buf, dtype=np.uint8)
    out = np.empty(raw.size * 2, dtype=np.uint8)
    out[0::2] = raw & 0x0F
    out[1::2] = raw >> 4
    return out[:n]


def _pack_offsets(offsets):
    """6-bit values, MSB-first, zero-padded to a whole byte."""
    acc = 0
    nbits = 0
    out = bytearray()
    for v in offsets:
        acc = (acc << 6) | int(v)
        nbits += 6
        while nbits >= 8:
            nbits -= 8
            out.append((acc >> nbits) & 0xFF)
    if nbits:
        out.append((acc << (8 - nbits)) & 0xFF)
    return bytes(out)


def _unpack_offsets(buf, count):
    acc = 0
    nbits = 0
    vals = []
    it = iter(buf)
    while len(vals) < count:
        if nbits < 6:
            acc = (acc << 8) | next(it)
            nbits += 8
        else:
            nbits -= 6
            vals.append((acc >> nbits) & 0x3F)
    return vals


def pack(q):
    """Quantized tensor -> packed container (deterministic byte layout)."""
    codes = q.codes
    nibbles = (codes & 0x0F).astype(np.uint8)
    value_area = _pack_nibbles(nibbles)
    n = codes.size
    ot_positions = np.flatnonzero((codes & OUTLIER_BIT) != 0)
    groups = -(-n // GROUP_SIZE)
    per_group = [[] for _ in range(groups)]
    for p in ot_positions:
        per_group[int(p) // GROUP_SIZE].append(int(p) % GROUP_SIZE)
    ot = bytearray()
    for g, offs in enumerate(per_group):
        assert len(offs) <= GROUP_SIZE, "a group cannot hold more outliers than elements"
        ot.append(len(offs))
        ot += _pack_offsets(offs)
    return PackedTensor(element_count=n, group_size=GROUP_SIZE,
                        value_area=value_area, ot_area=bytes(ot))


def unpack(p, d):
    """Packed container + dictionary -> quantized tensor (exact inverse of pack)."""
    if p.group_size != GROUP_SIZE:
        raise PackError(f"unsupported group size {p.group_size}")
    n = p.element_count
    if len(p.value_area) != (n + 1) // 2:
        raise PackError("value area length does not match element count")
    codes = _unpack_nibbles(p.value_area, n)
    off = 0
    try:
        for g in range(p.group_count):
            cnt = p.ot_area[off]
            off += 1
            glen = min(GROUP_SIZE, n - g * GROUP_SIZE)
            if cnt > glen:
                raise PackError(f"group {g}: count {cnt} exceeds group length {glen}")
            nbytes = (cnt * 6 + 7) // 8
            offs = _unpack_offsets(p.ot_area[off:off + nbytes], cnt)
            off += nbytes
            if any(b <= a for a, b in zip(offs, offs[1:])):
                raise PackError(f"group {g}: offsets not strictly ascending")
            for rel in offs:
                if rel >= glen:
                    raise PackError(f"group {g}: offset {rel} outside group")
                codes[g * GROUP_SIZE + rel] |= OUTLIER_BIT
    except (IndexError, StopIteration):
        raise PackError("outlier-pointer area truncated") from None
    if off != len(p.ot_area):
        raise PackError("trailing bytes after outlier-pointer area")
    return QuantizedTensor(shape=(n,), codes=codes, dict=d)


def measure_bits(p):
    """Logical bit cost: 4 bits per value, one count byte per group, 6 bits
    per outlier (byte-alignment padding not charged)."""
    return 4 * p.element_count + 8 * p.group_count + 6 * p.outlier_count()


def measure(p):
    """Logical bits per value."""
    return measure_bits(p) / p.element_count


def packed_byte_size(p):
    """Actual container bytes including header and alignment padding."""
    return 26 + len(p.value_area) + len(p.ot_area)


def save_packed(p, path):
    header = PACK_MAGIC + struct.pack("<HQIQ", PACK_VERSION, p.element_count,
                                      p.group_size, len(p.value_area))
    with open(path, "wb") as f:
        f.write(header)
        f.write(p.value_area)
        f.write(p.ot_area)


def load_packed(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 26:
        raise PackError(f"{path}: truncated header")
    if raw[:4] != PACK_MAGIC:
        raise PackError(f"{path}: bad magic {raw[:4]!r}")
    version, n, gsize, vlen = struct.unpack("<HQIQ", raw[4:26])
    if version != PACK_VERSION:
        raise PackError(f"{path}: unsupported version {version}")
    value_area = raw[26:26 + vlen]
    if len(value_area) != vlen:
        raise PackError(f"{path}: truncated value area")
    ot_area = raw[26 + vlen:]
    return PackedTensor(element_count=n, group_size=gsize,
                        value_area=value_area, ot_area=ot_area)
