import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from terrainsr import DemGrid, MethodSpec, bicubic_method, compare_methods, implied_peak, psnr, rmse
from terrainsr.evaluation import REFERENCE_RESULTS, EvalReport, reference_peak_consistency


def _grid(values, cell=2.0, nodata=None):
    return DemGrid(np.asarray(values, dtype=float), cell, nodata)


def test_rmse_zero_for_identical():
    g = _grid(np.random.default_rng(0).normal(0, 10, (8, 8)))
    assert rmse(g, g) == 0.0


def test_rmse_uniform_offset():
    g = _grid(np.random.default_rng(0).normal(0, 10, (8, 8)))
    shifted = _grid(g.heights + 1.0)
    assert rmse(shifted, g) == pytest.approx(1.0)


def test_rmse_alternating_offsets():
    g = _grid(np.zeros((4, 4)))
    signs = np.indices((4, 4)).sum(axis=0) % 2
    pred = _grid(np.where(signs == 0, 2.0, -2.0))
    assert rmse(pred, g) == pytest.approx(2.0)


def test_rmse_excludes_nodata():
    gt = _grid([[0.0, 0.0], [0.0, -9999.0]], nodata=-9999.0)
    pred = _grid([[1.0, 1.0], [1.0, 123.0]])
    assert rmse(pred, gt) == pytest.approx(1.0)


def test_rmse_shape_mismatch():
    with pytest.raises(ValueError):
        rmse(_grid(np.zeros((2, 2))), _grid(np.zeros((3, 3))))


def test_rmse_all_nodata():
    gt = _grid([[-9999.0]], nodata=-9999.0)
    with pytest.raises(ValueError):
        rmse(_grid([[1.0]]), gt)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_rmse_is_a_metric(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (_grid(rng.normal(0, 5, (6, 6))) for _ in range(3))
    assert rmse(a, b) == pytest.approx(rmse(b, a))
    assert rmse(a, c) <= rmse(a, b) + rmse(b, c) + 1e-12
    assert rmse(a, a) == 0.0


def test_psnr_closed_form():
    g = _grid(np.zeros((4, 4)))
    pred = _grid(np.ones((4, 4)))  # rmse 1.0
    assert psnr(pred, g, peak=1000.0) == pytest.approx(60.0)


def test_psnr_doubling_rmse_drops_six_db():
    g = _grid(np.zeros((4, 4)))
    one = psnr(_grid(np.ones((4, 4))), g, peak=500.0)
    two = psnr(_grid(np.full((4, 4), 2.0)), g, peak=500.0)
    assert one - two == pytest.approx(20 * math.log10(2), abs=1e-12)


def test_psnr_identical_is_infinite():
    g = _grid(np.zeros((4, 4)))
    assert psnr(g, g, peak=100.0) == float("inf")


def test_psnr_invalid_peak():
    g = _grid(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        psnr(g, g, peak=0.0)


def test_reference_rows_imply_consistent_peaks():
    peaks = reference_peak_consistency()
    assert set(peaks) == {"bassiero", "forcanada", "durrenstein", "monte_magro"}
    for region, (peak_a, peak_b, gap) in peaks.items():
        assert gap < 0.01, region
    assert peaks["bassiero"][0] == pytest.approx(1487, rel=0.01)
    assert peaks["forcanada"][0] == pytest.approx(1387, rel=0.01)
    assert peaks["durrenstein"][0] == pytest.approx(1364, rel=0.015)
    assert peaks["monte_magro"][0] == pytest.approx(2107, rel=0.01)


def test_implied_peak_round_trip():
    g = _grid(np.arange(16, dtype=float).reshape(4, 4))
    pred = _grid(g.heights + 0.943)
    for peak in (10.0, 1487.0, 2107.0):
        db = psnr(pred, g, peak)
        assert implied_peak(rmse(pred, g), db) == pytest.approx(peak, rel=1e-9)


def test_reference_bassiero_peak_value():
    r, p = REFERENCE_RESULTS["bassiero"]["afn"]
    assert (r, p) == (0.943, 63.958)
    assert implied_peak(r, p) == pytest.approx(1487, rel=0.005)


# --- compare_methods ----------------------------------------------------------


def test_compare_methods_report(small_dataset):
    offset_method = MethodSpec(
        name="offset",
        predict=lambda triple: DemGrid(triple.hr.heights + 1.0, triple.hr.cell_size),
        params=0,
    )
    report = compare_methods(small_dataset, [bicubic_method(), offset_method])
    regions = {e.patch_id for e in small_dataset.split("test")}
    assert len(report.rows) == 2 * len(regions)
    by_method = {}
    for row in report.rows:
        by_method.setdefault(row.method, []).append(row)
    assert all(r.rmse_m == pytest.approx(1.0) for r in by_method["offset"])
    assert all(r.rmse_m > 0 for r in by_method["bicubic"])
    # internal consistency: psnr = 20 log10(peak / rmse)
    report.validate()


def test_compare_methods_identical_methods_identical_rows(small_dataset):
    report = compare_methods(small_dataset, [bicubic_method(), bicubic_method()])
    half = len(report.rows) // 2
    first = [(r.region, r.rmse_m, r.psnr_db) for r in report.rows if r.method == "bicubic"][:half]
    assert len({tuple(first[i][1:]) for i in range(0, len(first), 2)}) <= half


def test_compare_methods_failure_becomes_absent_row(small_dataset):
    def broken(triple):
        raise RuntimeError("no checkpoint")

    report = compare_methods(small_dataset, [MethodSpec(name="broken", predict=broken)])
    assert all(r.rmse_m is None for r in report.rows)
    assert all("no checkpoint" in r.note for r in report.rows)


def test_compare_methods_requires_test_split(tmp_path, small_dataset):
    from terrainsr.raster_io import DatasetManifest

    empty = DatasetManifest(
        entries=[e for e in small_dataset.entries if e.split != "test"],
        seed=0,
        patch_size=64,
        cell_size=2.0,
        base_dir=small_dataset.base_dir,
    )
    with pytest.raises(ValueError):
        compare_methods(empty, [bicubic_method()])


def test_report_serialization(small_dataset, tmp_path):
    report = compare_methods(small_dataset, [bicubic_method()])
    doc = json.loads(report.to_json())
    assert {row["method"] for row in doc} == {"bicubic"}
    assert all(set(row) >= {"region", "method", "rmse_m", "psnr_db", "peak_m"} for row in doc)
    text = report.to_text()
    assert "bicubic" in text and "rmse_m" in text
