import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from terrainsr import DemGrid, bicubic_resample
from terrainsr.resample import resample_values, scaled_dims


def test_identity_at_scale_one():
    grid = DemGrid(np.arange(64.0).reshape(8, 8), 2.0)
    out = bicubic_resample(grid, 1.0)
    assert np.array_equal(out.heights, grid.heights)
    assert out.cell_size == 2.0


@pytest.mark.parametrize("scale", [0.31, 0.5, 1.7, 2.0])
def test_constant_preserved(scale):
    grid = DemGrid(np.full((12, 12), 5.0), 4.0)
    out = bicubic_resample(grid, scale)
    assert np.abs(out.heights - 5.0).max() < 1e-12
    assert out.cell_size == pytest.approx(4.0 / scale)


def test_linear_ramp_reproduced_at_half_scale():
    n = 40
    ramp = np.tile(np.arange(n, dtype=float), (n, 1))  # h(x, y) = x
    out = resample_values(ramp, n // 2, n // 2)
    # output pixel j samples source coordinate 2j + 0.5
    expected = np.tile(2.0 * np.arange(n // 2) + 0.5, (n // 2, 1))
    interior = np.abs(out[:, 2:-2] - expected[:, 2:-2])
    assert interior.max() < 1e-6


def test_dims_follow_rounding_rule():
    assert scaled_dims(200, 200, 2 / 15) == (27, 27)
    grid = DemGrid(np.zeros((10, 14)), 1.0)
    out = bicubic_resample(grid, 0.37)
    assert out.heights.shape == (4, 5)  # round(3.7), round(5.18)


def test_invalid_scales():
    grid = DemGrid(np.zeros((10, 10)), 1.0)
    with pytest.raises(ValueError):
        bicubic_resample(grid, 0.0)
    with pytest.raises(ValueError):
        bicubic_resample(grid, 0.01)  # rounds to zero output rows


@given(
    a=st.floats(-3, 3),
    b=st.floats(-3, 3),
    scale=st.sampled_from([0.4, 0.75, 1.3]),
)
@settings(max_examples=25, deadline=None)
def test_linearity(a, b, scale):
    rng = np.random.default_rng(9)
    x = rng.normal(size=(11, 13))
    y = rng.normal(size=(11, 13))
    rows, cols = scaled_dims(11, 13, scale)
    combined = resample_values(a * x + b * y, rows, cols)
    separate = a * resample_values(x, rows, cols) + b * resample_values(y, rows, cols)
    assert np.abs(combined - separate).max() < 1e-6


def test_replicated_borders_stay_bounded():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, (9, 9))
    up = resample_values(x, 27, 27)
    # Catmull-Rom can overshoot by at most ~context range; replicate keeps it sane
    assert up.min() > -0.5 and up.max() < 1.5
