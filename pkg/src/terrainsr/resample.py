"""Separable Catmull-Rom bicubic resampling for raster grids.

The kernel is the Keys cubic with a = -0.5. Samples beyond the raster
border are replicated from the nearest edge sample, so a constant grid
resamples to the same constant at any scale and the operation is linear
in the input values (it is a fixed matrix for fixed shapes).
"""

from __future__ import annotations

import numpy as np

_A = -0.5  # Catmull-Rom


def _keys_kernel(t: np.ndarray) -> np.ndarray:
    """Evaluate the Keys cubic kernel at (nonnegative) distances ``t``."""
    t = np.abs(t)
    t2 = t * t
    t3 = t2 * t
    near = (_A + 2.0) * t3 - (_A + 3.0) * t2 + 1.0
    far = _A * t3 - 5.0 * _A * t2 + 8.0 * _A * t - 4.0 * _A
    out = np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))
    return out


def _axis_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out, n_in) interpolation matrix for one axis.

    Output sample centers map to input coordinates with the usual
    center-aligned convention, so n_out == n_in yields the identity.
    """
    dst = np.arange(n_out, dtype=np.float64)
    src = (dst + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(np.int64)
    frac = src - base

    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    for tap in range(-1, 3):
        weights = _keys_kernel(frac - tap)
        cols = np.clip(base + tap, 0, n_in - 1)  # replicate borders
        np.add.at(mat, (rows, cols), weights)
    return mat


def resample_values(values: np.ndarray, out_rows: int, out_cols: int) -> np.ndarray:
    """Resample a 2-D array to (out_rows, out_cols) with Catmull-Rom bicubic."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {values.shape}")
    if out_rows < 1 or out_cols < 1:
        raise ValueError(f"output dimensions must be >= 1, got {out_rows}x{out_cols}")
    row_mat = _axis_matrix(values.shape[0], out_rows)
    col_mat = _axis_matrix(values.shape[1], out_cols)
    return row_mat @ values @ col_mat.T


def scaled_dims(rows: int, cols: int, scale: float) -> tuple[int, int]:
    """Output dimensions for a uniform scale factor: round(dims * scale), half up."""
    return (int(np.floor(rows * scale + 0.5)), int(np.floor(cols * scale + 0.5)))
