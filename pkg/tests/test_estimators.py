import numpy as np
import pytest
from sklearn.base import clone

from revinr import DetINR, MCDINR, REVINR, RMDINR, load_model, make_model
from revinr.datasets import gaussian_blobs
from revinr.exceptions import ConfigError, ResourceError
from revinr.training import prepare_volume

SMALL = dict(width=8, blocks=1, epochs=2, batch_size=64)


@pytest.fixture(scope="module")
def vol():
    return gaussian_blobs((8, 8, 8), n_blobs=3, seed=2)


@pytest.mark.parametrize("cls", [DetINR, REVINR, MCDINR, RMDINR])
def test_params_and_clone(cls):
    est = cls(**SMALL)
    params = est.get_params()
    assert params["width"] == 8 and params["epochs"] == 2
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(epochs=5)
    assert est.epochs == 5


def test_make_model():
    assert isinstance(make_model("mcd", dropout_rate=0.2), MCDINR)
    with pytest.raises(ConfigError):
        make_model("ensemble")


@pytest.mark.parametrize("variant", ["det", "rev", "mcd", "rmd"])
def test_fit_volume_predict_transform(vol, variant):
    est = make_model(variant, **SMALL).fit_volume(vol)
    _, _, X, _, _ = prepare_volume(vol)
    pred = est.predict(X[:10])
    assert pred.shape == (10,) and np.all(np.isfinite(pred))
    cols = est.transform(X[:10])
    assert cols.shape == (10, 1 if variant == "det" else 3)
    field = est.reconstruct()
    assert field.mean.dims == vol.dims and field.seconds > 0
    # predictions come back in data units
    assert field.mean.norm is not None
    np.testing.assert_allclose(field.mean.values, est.predict(X), rtol=1e-12)


def test_fit_arrays_api(vol):
    _, _, X, y, g = prepare_volume(vol)
    with pytest.raises(ConfigError):
        REVINR(**SMALL).fit(X, y)
    est = REVINR(**SMALL).fit(X, y, grad_mag=g)
    mean, au, eu = est.predict_uncertainty(X[:5])
    assert np.all(au > 0) and np.all(eu > 0)
    with pytest.raises(ValueError):
        DetINR(**SMALL).fit(X * 3, y)


def test_reconstruct_memory_budget(vol):
    est = DetINR(**SMALL).fit_volume(vol)
    with pytest.raises(ResourceError) as err:
        est.reconstruct((64, 64, 64), memory_budget=1000)
    assert err.value.required_bytes > 1000


def test_reconstruct_super_resolution_and_timing(vol):
    est = REVINR(**SMALL).fit_volume(vol)
    small = min(est.reconstruct((16, 16, 16)).seconds for _ in range(3))
    big = min(est.reconstruct((32, 32, 32)).seconds for _ in range(3))
    field = est.reconstruct((32, 32, 32))
    assert field.au.dims == (32, 32, 32) and np.all(np.isfinite(field.mean.data))
    # 8x the voxels: roughly linear cost, with generous slack for timer noise
    assert 2.0 < big / small < 32.0


def test_save_load_roundtrip(vol, tmp_path):
    est = MCDINR(**SMALL, dropout_rate=0.2, mc_passes=4).fit_volume(vol)
    path = est.save(tmp_path / "m.bin")
    back = load_model(path)
    assert isinstance(back, MCDINR) and back.get_params() == est.get_params()
    _, _, X, _, _ = prepare_volume(vol)
    a = est.predict_uncertainty(X)
    b = back.predict_uncertainty(X)
    assert all(np.array_equal(u, w) for u, w in zip(a, b))
    assert back.dims_ == vol.dims
