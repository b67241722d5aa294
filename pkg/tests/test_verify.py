import numpy as np
import pytest
import torch

from terrainsr.verify import (
    naive_conv2d,
    naive_maxpool2,
    naive_prelu,
    naive_sigmoid,
    run_all_checks,
)


def test_naive_conv_matches_torch_directly(rng):
    x = rng.normal(size=(3, 6, 6))
    w = rng.normal(size=(5, 3, 3, 3))
    b = rng.normal(size=5)
    ref = naive_conv2d(x, w, b, padding=1)
    fast = torch.nn.functional.conv2d(
        torch.from_numpy(x).unsqueeze(0), torch.from_numpy(w), torch.from_numpy(b), padding=1
    )[0].numpy()
    assert np.abs(ref - fast).max() < 1e-12


def test_naive_pool_and_prelu(rng):
    x = rng.normal(size=(2, 4, 4))
    pooled = naive_maxpool2(x)
    assert pooled.shape == (2, 2, 2)
    assert pooled[0, 0, 0] == x[0, :2, :2].max()
    slopes = np.array([0.25, 0.5])
    act = naive_prelu(x, slopes)
    assert np.all(act[x >= 0] == x[x >= 0])
    neg = x < 0
    assert np.allclose(act[0][neg[0]], 0.25 * x[0][neg[0]])
    assert np.allclose(naive_sigmoid(np.zeros(3)), 0.5)


def test_fast_checks_pass():
    names = ["fusion-oracle", "param-count-band", "reference-peak-consistency"]
    results = run_all_checks(names)
    assert [r.name for r in results] == names
    for r in results:
        assert r.passed, f"{r.name}: {r.detail}"
