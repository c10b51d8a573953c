import json
import math
import os
from pathlib import Path

import numpy as np
import pytest

import swinrdm

DATA = Path(os.environ.get("SWINRDM_TEST_DATA", Path(__file__).resolve().parents[1] / "data"))


def test_lat_weights_mean_one():
    w = swinrdm.lat_weights([0.0, 60.0])
    assert w == pytest.approx([4 / 3, 2 / 3], rel=1e-14)
    with pytest.raises(swinrdm.RangeError):
        swinrdm.lat_weights([95.0])


def test_weighted_rmse_matches_numpy():
    rng = np.random.default_rng(0)
    lats = [60.0, 20.0, -20.0, -60.0]
    a, b = rng.normal(size=(3, 4, 8)), rng.normal(size=(3, 4, 8))
    w = np.cos(np.deg2rad(lats))
    w = w / w.mean()
    expected = np.sqrt((w[None, :, None] * (a - b) ** 2).mean(axis=(1, 2)))
    np.testing.assert_allclose(swinrdm.weighted_rmse(a, b, lats), expected, rtol=0, atol=1e-12)
    with pytest.raises(swinrdm.ShapeError):
        swinrdm.weighted_rmse(a, b[:, :, :7], lats)


def test_csi_and_wind_speed():
    r = swinrdm.csi(np.array([10.0, 11.0, 0.0, 50.0]), np.array([12.0, 30.0, 25.0, 0.0]), 10.0)
    assert (r["hits"], r["misses"], r["false_alarms"]) == (2, 1, 1)
    assert r["csi"] == 0.5
    assert swinrdm.wind_speed(np.array([3.0]), np.array([4.0]))[0] == 5.0


def test_frechet_gaussian_shift():
    rng = np.random.default_rng(1)
    a = rng.normal(0.0, 1.0, size=(100000, 1))
    b = rng.normal(1.0, 1.0, size=(100000, 1))
    assert abs(swinrdm.frechet_distance(a, b) - 1.0) < 0.05
    assert abs(swinrdm.frechet_distance(a, a)) < 1e-6


def test_schedule_and_forward_process():
    ab, steps = swinrdm.alpha_bars(1000, "linear")
    assert len(ab) == 1000 and steps[-1] == 1000
    rab, rsteps = swinrdm.alpha_bars(1000, "linear", respaced=10)
    assert len(rab) == 10
    assert abs(rab[-1] - ab[-1]) <= 1e-10
    y0 = np.ones((2, 3))
    out = swinrdm.q_sample(y0, 37, np.zeros_like(y0), 100)
    ab100, _ = swinrdm.alpha_bars(100)
    np.testing.assert_allclose(out, math.sqrt(ab100[36]) * y0, rtol=0, atol=1e-12)


def test_parameter_count_ordering():
    assert swinrdm.parameter_count("multi", 256) > swinrdm.parameter_count("single", 512)
    assert swinrdm.parameter_count("single", 512) > swinrdm.parameter_count("single", 384)


def test_config_and_synthesis():
    cfg = swinrdm.desk_config()
    assert swinrdm.config_hash(cfg) == swinrdm.config_hash(None)
    cfg["forecaster"]["horizn"] = 3
    with pytest.raises(swinrdm.ConfigError):
        swinrdm.config_hash(cfg)
    values, lats, lons = swinrdm.synthesize({"lat": 16, "lon": 32, "steps": 10, "seed": 1})
    assert values.shape == (10, len(swinrdm.catalog()["entries"]), 16, 32)
    assert len(lats) == 16 and len(lons) == 32
    again, _, _ = swinrdm.synthesize({"lat": 16, "lon": 32, "steps": 10, "seed": 1})
    np.testing.assert_array_equal(values, again)
    assert swinrdm.downsample(values[0], 4).shape == (values.shape[1], 4, 8)


def test_smoke_pipeline(tmp_path):
    cfg = json.loads((DATA / "smoke_config.json").read_text())
    fc = swinrdm.train_forecaster(cfg, tmp_path)
    assert math.isfinite(fc["best_val_loss"])
    sr = swinrdm.train_sr(cfg, fc["checkpoint"], tmp_path)
    lr, hr, meta = swinrdm.rollout(cfg, fc["checkpoint"], sr["denoiser"], steps=5, members=2, leads=[1, 3])
    assert len(lr) == cfg["forecaster"]["horizon"]
    assert len(hr) == 2
    assert hr[0].shape[0] == 2
    assert hr[0].shape[-2:] == (lr[0].shape[-2] * 4, lr[0].shape[-1] * 4)
    report = swinrdm.evaluate(cfg, fc["checkpoint"], sr["denoiser"], sr["regression"])
    assert all(row["config_hash"] == swinrdm.config_hash(cfg) for row in report["rows"])
    methods = {row["method"] for row in report["rows"]}
    assert {"forecaster", "persistence", "climatology", "bilinear", "diffusion_sr"} <= methods
