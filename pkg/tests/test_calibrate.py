import numpy as np
import pytest
from hypothesis import given, strategies as st

from crdonn.calibrate import center_index, phase_from_fringe_shift, phase_scan, square_field
from crdonn.field import GridSpec
from crdonn.slm import DARK_VALUE


@pytest.mark.parametrize("shift, expected", [(0, 0), (0.5, np.pi), (1.0, 0), (0.25, np.pi / 2), (-0.25, 1.5 * np.pi)])
def test_fringe_shift(shift, expected):
    assert phase_from_fringe_shift(shift * 2e-4, 2e-4) == pytest.approx(expected, abs=1e-12)


def test_fringe_shift_bad_period():
    with pytest.raises(ValueError):
        phase_from_fringe_shift(1.0, 0.0)


@given(shift=st.floats(-1e-3, 1e-3), period=st.floats(1e-5, 1e-3))
def test_fringe_shift_periodic(shift, period):
    a = phase_from_fringe_shift(shift, period)
    b = phase_from_fringe_shift(shift + period, period)
    assert 0 <= a < 2 * np.pi
    d = abs(a - b)
    assert min(d, 2 * np.pi - d) < 1e-6


def test_square_field_geometry():
    g = GridSpec(10, 10, 36e-6, 532e-9, pad=2)
    f = square_field(g, 6, np.pi)
    inner = g.crop(f)
    assert np.sum(np.isclose(inner, -1)) == 36
    assert np.sum(inner == DARK_VALUE) == 64
    assert f[0].sum() == 0
    assert center_index(g) == (7, 7)
    with pytest.raises(ValueError):
        square_field(g, 11, 0.0)


@pytest.fixture(scope="module")
def scan():
    return phase_scan(phis=np.arange(21) * 0.05 * np.pi, keep_patterns=True)


def test_scan_curve_shape(scan):
    ci = scan.center_intensities
    assert np.all(ci >= 0)
    assert ci[0] == ci.min()  # phi = 0: dark centre
    assert ci[12] > 2 * ci[0]  # phi = 0.6 pi
    lo, hi = scan.plateau(0.7)
    assert lo <= 0.6 * np.pi + 1e-9 and hi == pytest.approx(np.pi)  # phi = pi within the plateau
    assert np.all(np.abs(np.diff(ci)) < 0.2 * np.maximum(ci[:-1], ci[1:]))


def test_scan_centre_is_local_maximum_at_pi(scan):
    pat = scan.patterns[-1]
    r, c = 50, 50
    # even-sized square: the middle 2x2 block is equal up to rounding
    assert pat[r, c] >= pat[r - 1:r + 2, c - 1:c + 2].max() * (1 - 1e-12)
    assert pat[r, c] > pat[r + 1, c + 1]


def test_scan_geometry_error():
    with pytest.raises(ValueError):
        phase_scan(grid=GridSpec(4, 4, 36e-6, 532e-9), square=6)
