"""Python bindings for the swinrdm C++ core.

Arrays are numpy float64. Configs are plain dicts in the experiment-config
layout; ``None`` selects the built-in desk config.
"""

import json as _json

import torch as _torch  # noqa: F401  loads the libtorch shared libraries the extension links against

from . import _core
from ._core import ConfigError, DataError, Error, IoError, RangeError, ShapeError, TrainingDiverged

__all__ = [
    "ConfigError", "DataError", "Error", "IoError", "RangeError", "ShapeError", "TrainingDiverged",
    "ablation", "alpha_bars", "catalog", "config_hash", "csi", "desk_config", "downsample", "evaluate",
    "frechet_distance", "lat_weights", "make_latitudes", "parameter_count", "q_sample", "rollout",
    "synthesize", "train_forecaster", "train_sr", "weighted_rmse", "wind_speed",
]

lat_weights = _core.lat_weights
weighted_rmse = _core.weighted_rmse
csi = _core.csi
frechet_distance = _core.frechet_distance
wind_speed = _core.wind_speed
alpha_bars = _core.alpha_bars
q_sample = _core.q_sample
parameter_count = _core.parameter_count
downsample = _core.downsample
make_latitudes = _core.make_latitudes


def _text(config):
    return "" if config is None else _json.dumps(config)


def catalog(profile="desk"):
    return _json.loads(_core.catalog(profile))


def desk_config():
    return _json.loads(_core.desk_config())


def config_hash(config=None):
    return _core.config_hash(_text(config))


def synthesize(synth_config, profile="desk"):
    """Returns (values [t, c, lat, lon], latitudes, longitudes)."""
    return _core.synthesize(_json.dumps(synth_config), profile)


def train_forecaster(config, out):
    ckpt, val, record = _core.train_forecaster(_text(config), str(out))
    return {"checkpoint": ckpt, "best_val_loss": val, "record": _json.loads(record)}


def train_sr(config, forecaster, out):
    denoiser, regression = _core.train_sr(_text(config), str(forecaster), str(out))
    return {"denoiser": denoiser, "regression": regression}


def evaluate(config, forecaster, denoiser, regression=""):
    return _json.loads(_core.evaluate(_text(config), str(forecaster), str(denoiser), str(regression)))


def rollout(config, forecaster, sr, init=0, steps=10, members=1, leads=()):
    """Returns (coarse frames, fine ensembles [members, c, H, W] per lead, provenance)."""
    lr, hr, meta = _core.rollout(_text(config), str(forecaster), str(sr), init, steps, members, list(leads))
    return lr, hr, _json.loads(meta)


def ablation(config, out, run_sr=True):
    return _json.loads(_core.ablation(_text(config), str(out), run_sr))
