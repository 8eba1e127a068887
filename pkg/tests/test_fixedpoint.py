import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expquant.fixedpoint import (FixedScalar, QFormat, SaturationFlag,
                                 ceil_log2, compute_frac, fraction_ceil_log2,
                                 fx_add, fx_mul, round_shift, to_fixed,
                                 to_float)


def test_compute_frac_power_of_two():
    assert compute_frac(16, 4.0, 0.0) == 14


def test_compute_frac_non_power():
    assert compute_frac(16, 5.0, 0.0) == 13


def test_compute_frac_clamps_small_ranges():
    # span 0.5 gives 16 - (-1) = 17, clamped to 15
    assert compute_frac(16, 0.5, 0.0) == 15
    fmt = QFormat(16, 15)
    assert to_float(to_fixed(0.49, fmt), fmt) == pytest.approx(0.49, abs=fmt.step)


def test_compute_frac_rejects_empty_range():
    with pytest.raises(ValueError):
        compute_frac(16, 1.0, 1.0)


@pytest.mark.parametrize("k", range(-20, 21))
def test_compute_frac_exhaustive_power_sweep(k):
    span = 2.0 ** k
    eps = span * 1e-9
    assert compute_frac(16, span, 0.0) == max(0, min(15, 16 - k))
    assert compute_frac(16, span + eps, 0.0) == max(0, min(15, 16 - (k + 1)))


def test_ceil_log2_exact_at_powers():
    for k in range(-30, 31):
        assert ceil_log2(2.0 ** k) == k
        assert ceil_log2(2.0 ** k * 1.0000001) == k + 1


def test_to_fixed_basic():
    fmt = QFormat(16, 2)
    assert to_fixed(0.5, fmt) == 2
    assert to_float(2, fmt) == 0.5


def test_to_fixed_rounds_half_away():
    fmt = QFormat(16, 2)
    assert to_fixed(0.3, fmt) == 1  # round(1.2) = 1 -> 0.25
    assert to_float(to_fixed(0.3, fmt), fmt) == 0.25
    assert to_fixed(0.375, fmt) == 2   # 1.5 rounds away to 2
    assert to_fixed(-0.375, fmt) == -2


def test_to_fixed_saturates():
    fmt = QFormat(16, 8)
    flag = SaturationFlag()
    assert to_fixed(1e9, fmt, flag) == fmt.int_max
    assert flag.tripped
    assert to_float(fmt.int_max, fmt) == (2 ** 15 - 1) / 2 ** 8
    assert to_fixed(-1e9, fmt) == fmt.int_min


def test_fx_add_inverse():
    fmt = QFormat(16, 7)
    x = to_fixed(1.25, fmt)
    assert fx_add(x, -x, fmt) == 0


def test_fx_mul_identity():
    fmt = QFormat(16, 8)
    one = to_fixed(1.0, fmt)
    for v in (0.5, -1.25, 2.0, 0.00390625):
        x = to_fixed(v, fmt)
        assert fx_mul(x, one, fmt, fmt, fmt) == x


def test_fx_add_flag_trips_only_on_saturation():
    fmt = QFormat(8, 0)
    flag = SaturationFlag()
    assert fx_add(100, 40, fmt, flag) == fmt.int_max
    assert flag.tripped
    flag2 = SaturationFlag()
    fx_add(100, 40, QFormat(16, 0), flag2)
    assert not flag2.tripped


def test_conversion_idempotent_exhaustive_8bit():
    fmt = QFormat(8, 3)
    for n in range(fmt.int_min, fmt.int_max + 1):
        assert to_fixed(to_float(n, fmt), fmt) == n


@given(st.integers(-127, 127), st.integers(-127, 127), st.integers(0, 7),
       st.integers(0, 7), st.integers(0, 7))
@settings(max_examples=300, deadline=None)
def test_fx_mul_matches_float64_reference(x, y, fx_frac, fy_frac, fo_frac):
    fmt_x = QFormat(8, fx_frac)
    fmt_y = QFormat(8, fy_frac)
    fmt_o = QFormat(8, fo_frac)
    got = fx_mul(x, y, fmt_x, fmt_y, fmt_o)
    exact = Fraction(x, 2 ** fx_frac) * Fraction(y, 2 ** fy_frac)
    scaled = exact * 2 ** fo_frac
    n = math.floor(abs(scaled) + Fraction(1, 2))
    ref = n if scaled >= 0 else -n
    ref = max(fmt_o.int_min, min(fmt_o.int_max, ref))
    assert got == ref


@given(st.lists(st.integers(-2 ** 20, 2 ** 20), min_size=1, max_size=30))
@settings(max_examples=200, deadline=None)
def test_fx_add_associative_when_unsaturated(vals):
    fmt = QFormat(32, 4)
    flag = SaturationFlag()
    left = 0
    for v in vals:
        left = fx_add(left, v, fmt, flag)
    right = 0
    for v in reversed(vals):
        right = fx_add(right, v, fmt, flag)
    if not flag.tripped:
        assert left == right == sum(vals)


def test_round_shift_half_away():
    assert round_shift(3, 1) == 2       # 1.5 -> 2
    assert round_shift(-3, 1) == -2
    assert round_shift(5, 2) == 1       # 1.25 -> 1
    assert round_shift(6, 2) == 2       # 1.5 -> 2
    assert round_shift(3, -2) == 12


def test_fixed_scalar_exact_products():
    a = FixedScalar.from_float(1.179, 13)
    p3 = FixedScalar(a.num ** 3, 39)
    assert (a * a * a).num == p3.num
    assert (a * a * a).shift == p3.shift


def test_fixed_scalar_round_into_matches_to_fixed():
    fmt = QFormat(16, 9)
    for v in (0.123, -4.75, 31.999, 0.0):
        assert FixedScalar.from_float(v, 40).round_into(fmt) == to_fixed(v, fmt)


def test_fraction_ceil_log2():
    assert fraction_ceil_log2(Fraction(1)) == 0
    assert fraction_ceil_log2(Fraction(3)) == 2
    assert fraction_ceil_log2(Fraction(4)) == 2
    assert fraction_ceil_log2(Fraction(1, 4)) == -2
    assert fraction_ceil_log2(Fraction(5, 4)) == 1
