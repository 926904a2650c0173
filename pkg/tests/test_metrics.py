import math

import numpy as np
import pytest

from revinr.exceptions import DomainError, UsageError
from revinr.metrics import (
    PSNR_EXACT,
    EvalReport,
    ablation_compare,
    corr_fields,
    evaluate,
    nll_gaussian_field,
    psnr,
)
from revinr.volume import VolumeGrid


def grid(data):
    return VolumeGrid(np.asarray(data, dtype=float))


def unit_range(seed=0, dims=(8, 7, 6)):
    d = np.random.default_rng(seed).uniform(size=dims)
    d = (d - d.min()) / (d.max() - d.min())
    return grid(d)


def test_psnr_examples():
    gt = unit_range()
    assert psnr(gt, gt) == PSNR_EXACT
    assert psnr(gt, grid(gt.data + 0.1)) == pytest.approx(20.0, abs=1e-9)
    assert psnr(gt, grid(gt.data + 0.01)) == pytest.approx(40.0, abs=1e-9)
    with pytest.raises(UsageError):
        psnr(gt, grid(np.zeros((2, 2, 2))))


def test_psnr_affine_invariance():
    gt = unit_range(1)
    pred = grid(gt.data + np.random.default_rng(2).normal(0, 0.01, gt.dims))
    base = psnr(gt, pred)
    # exact binary scales and shifts keep every intermediate exact
    assert psnr(grid(4 * gt.data + 2), grid(4 * pred.data + 2)) == pytest.approx(base, abs=1e-9)
    assert psnr(grid(0.5 * gt.data), grid(0.5 * pred.data)) == base


def test_corr_fields_examples_and_invariances():
    a = unit_range(3)
    b = grid(a.data**2 + np.random.default_rng(4).normal(0, 0.1, a.dims))
    assert corr_fields(a, a) == pytest.approx(1.0, abs=1e-15)
    assert corr_fields(a, grid(-a.data)) == pytest.approx(-1.0, abs=1e-15)
    assert corr_fields(a, b) == pytest.approx(corr_fields(b, a), abs=1e-15)
    assert corr_fields(grid(3 * a.data + 1), grid(0.2 * b.data - 5)) == pytest.approx(corr_fields(a, b), abs=1e-12)
    with pytest.raises(DomainError):
        corr_fields(a, grid(np.ones(a.dims)))


def test_nll_examples():
    gt = unit_range(5)
    nll, clamped = nll_gaussian_field(gt, gt, grid(np.full(gt.dims, 1 / (2 * math.pi))))
    assert nll == pytest.approx(0.0, abs=1e-14) and clamped == 0
    mean = grid(gt.data + 0.1)
    vals = [nll_gaussian_field(gt, mean, grid(np.full(gt.dims, v)))[0] for v in (0.01, 0.1, 1.0)]
    assert vals[0] < vals[1] < vals[2]
    _, clamped = nll_gaussian_field(gt, mean, grid(np.zeros(gt.dims)))
    assert clamped == gt.data.size


def test_nll_pointwise_optimum():
    rng = np.random.default_rng(6)
    gt = unit_range(6)
    mean = grid(gt.data + rng.normal(0, 0.1, gt.dims))
    opt = (gt.data - mean.data) ** 2 + 1e-6
    best = nll_gaussian_field(gt, mean, grid(opt))[0]
    for _ in range(20):
        far = opt * np.exp(rng.normal(0, 1, gt.dims))
        toward = np.sqrt(opt * far)  # geometric midpoint in log-variance
        a = nll_gaussian_field(gt, mean, grid(far))[0]
        b = nll_gaussian_field(gt, mean, grid(toward))[0]
        assert best <= b < a


def test_report_roundtrip_and_csv():
    r = EvalReport(psnr_db=41.5, corr_eu_error=0.3, nll_au=-2.0, config={"a": [1, 2]})
    assert EvalReport.from_json(r.to_json()) == r
    rows = r.csv_row(header=True).splitlines()
    assert rows[0].startswith("psnr_db,") and rows[1].startswith("41.5,")
    assert EvalReport.from_json(EvalReport(psnr_db=PSNR_EXACT).to_json()).psnr_db == PSNR_EXACT


def test_evaluate_full():
    gt = unit_range(7, (12, 12, 12))
    rng = np.random.default_rng(8)
    mean = grid(gt.data + rng.normal(0, 0.02, gt.dims))
    au = grid(rng.uniform(0.001, 0.01, gt.dims))
    eu = grid(np.abs(gt.data - mean.data) + 1e-4)
    rep = evaluate(gt, mean, au, eu, grad_mag=grid(rng.uniform(size=gt.dims)), reconstruction_seconds=1.5)
    assert rep.corr_eu_error > 0.99
    for name in ("corr_au_locvar", "corr_au_interp", "corr_au_gradient"):
        assert -1 <= getattr(rep, name) <= 1
    assert np.isfinite(rep.nll_au) and np.isfinite(rep.nll_eu)
    assert rep.reconstruction_seconds == 1.5
    det = evaluate(gt, mean)
    assert det.corr_eu_error is None and det.nll_au is None


def test_ablation_compare():
    a = EvalReport(psnr_db=40.0, corr_eu_error=0.4, corr_au_locvar=0.8, corr_au_interp=0.7, config={"weights": 1, "x": 2})
    same = ablation_compare(a, a)
    assert all(v in (0.0, None) for v in same["deltas"].values()) and same["regularized_dominates"]
    b = EvalReport(psnr_db=40.5, corr_eu_error=0.3, corr_au_locvar=0.35, corr_au_interp=0.19, config={"weights": 0, "x": 2})
    out = ablation_compare(a, b)
    assert out["deltas"]["corr_au_locvar"] == pytest.approx(0.45)
    assert out["regularized_dominates"]
    assert not ablation_compare(b, a)["regularized_dominates"]
    with pytest.raises(UsageError):
        ablation_compare(a, EvalReport(config={"weights": 0, "x": 3}))
