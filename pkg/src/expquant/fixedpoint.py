"""Q-format fixed-point arithmetic with saturating conversion, add and multiply.

A fixed-point value is stored as a plain Python int holding round(x * 2**frac);
QFormat carries the width/frac pair. All rounding is half-away-from-zero and
all conversions saturate symmetrically to +/-(2**(bits-1) - 1).
"""

import math
from dataclasses import dataclass
from fractions import Fraction


class SaturationFlag:
    """Mutable overflow indicator shared across a chain of fixed-point ops."""

    def __init__(self):
        self.tripped = False

    def trip(self):
        self.tripped = True

    def __bool__(self):
        return self.tripped


@dataclass(frozen=True)
class QFormat:
    bits: int = 16
    frac: int = 0

    def __post_init__(self):
        if not (0 <= self.frac < self.bits):
            raise ValueError(f"frac must be in [0, bits): got frac={self.frac} bits={self.bits}")

    @property
    def int_max(self):
        return (1 << (self.bits - 1)) - 1

    @property
    def int_min(self):
        return -self.int_max

    @property
    def step(self):
        return 1.0 / (1 << self.frac)

    @property
    def max_value(self):
        return self.int_max / (1 << self.frac)


def ceil_log2(x):
    """Exact ceil(log2(x)) for positive floats (no log rounding surprises)."""
    if x <= 0.0:
        raise ValueError("ceil_log2 requires x > 0")
    m, e = math.frexp(x)  # x = m * 2**e with m in [0.5, 1)
    if m == 0.5:
        return e - 1
    return e


def compute_frac(bits, max_value, min_value):
    """Fractional bits so the [min, max] span fits in `bits`: bits - ceil(log2(max-min)).

    Clamped into [0, bits-1] so the result is always a legal QFormat frac.
    """
    if max_value <= min_value:
        raise ValueError(f"max must exceed min (got max={max_value}, min={min_value})")
    frac = bits - ceil_log2(max_value - min_value)
    return max(0, min(bits - 1, frac))


def round_half_away(num, den):
    """Nearest integer to num/den (den > 0), halves away from zero. Exact."""
    if num >= 0:
        q, r = divmod(num, den)
        return q + (1 if 2 * r >= den else 0)
    q, r = divmod(-num, den)
    return -(q + (1 if 2 * r >= den else 0))


def round_shift(num, shift):
    """Round num / 2**shift to the nearest integer, half away from zero."""
    if shift <= 0:
        return num << (-shift)
    return round_half_away(num, 1 << shift)


def saturate(n, fmt, flag=None):
    if n > fmt.int_max:
        if flag is not None:
            flag.trip()
        return fmt.int_max
    if n < fmt.int_min:
        if flag is not None:
            flag.trip()
        return fmt.int_min
    return n


def to_fixed(fl, fmt, flag=None):
    """Float -> stored integer: round(fl * 2**frac) half away from zero, saturating.

    Uses exact rational arithmetic so results never depend on platform libm.
    """
    if math.isnan(fl):
        raise ValueError("cannot convert NaN to fixed point")
    if math.isinf(fl):
        if flag is not None:
            flag.trip()
        return fmt.int_max if fl > 0 else fmt.int_min
    num, den = Fraction(fl).as_integer_ratio()
    n = round_half_away(num * (1 << fmt.frac), den)
    return saturate(n, fmt, flag)


def to_float(fx, fmt):
    return fx / (1 << fmt.frac)


def fx_add(x, y, fmt, flag=None):
    """Saturating add of two values in the same format."""
    return saturate(x + y, fmt, flag)


def fx_mul(x, y, fmt_x, fmt_y, fmt_out, flag=None):
    """Multiply with exact wide intermediate, then round/saturate into fmt_out."""
    wide = x * y  # exact: python ints
    n = round_shift(wide, fmt_x.frac + fmt_y.frac - fmt_out.frac)
    return saturate(n, fmt_out, flag)


@dataclass(frozen=True)
class FixedScalar:
    """Exact scaled integer: value = num / 2**shift.

    Products and sums are exact (arbitrary-precision ints); rounding happens
    only in round_into(). This is the substrate the dictionary constants and
    the histogram engine share so their arithmetic agrees bit for bit.
    """

    num: int
    shift: int

    @classmethod
    def from_float(cls, x, shift):
        num, den = Fraction(x).as_integer_ratio()
        return cls(round_half_away(num * (1 << shift), den), shift)

    def __mul__(self, other):
        if isinstance(other, FixedScalar):
            return FixedScalar(self.num * other.num, self.shift + other.shift)
        return FixedScalar(self.num * int(other), self.shift)

    __rmul__ = __mul__

    def __add__(self, other):
        if not isinstance(other, FixedScalar):
            other = FixedScalar(int(other), 0)
        s = max(self.shift, other.shift)
        return FixedScalar(
            (self.num << (s - self.shift)) + (other.num << (s - other.shift)), s
        )

    __radd__ = __add__

    def __neg__(self):
        return FixedScalar(-self.num, self.shift)

    def __sub__(self, other):
        return self + (-other)

    def round_into(self, fmt, flag=None):
        """Single rounding into a QFormat grid; returns the stored int."""
        return saturate(round_shift(self.num, self.shift - fmt.frac), fmt, flag)

    def to_fraction(self):
        return Fraction(self.num, 1 << self.shift) if self.shift >= 0 else Fraction(
            self.num * (1 << -self.shift)
        )

    def to_float(self):
        return float(self.to_fraction())

    def __abs__(self):
        return FixedScalar(abs(self.num), self.shift)

    def is_zero(self):
        return self.num == 0


FX_ZERO = FixedScalar(0, 0)


def significand_shift(x, sig_bits=21):
    """Shift giving ~sig_bits significant bits for |x|; 0 maps to shift 0."""
    if x == 0.0:
        return 0
    return sig_bits - 1 - math.floor(math.log2(abs(x)))


def fraction_ceil_log2(fr):
    """Exact ceil(log2(fr)) for a positive Fraction."""
    if fr <= 0:
        raise ValueError("requires positive value")
    num, den = fr.numerator, fr.denominator
    # smallest e with 2**e >= num/den
    e = num.bit_length() - den.bit_length()
    while (num <= den << e if e >= 0 else num << -e <= den):
        e -= 1
    return e + 1
