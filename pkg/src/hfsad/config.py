"""Text (YAML) configuration with dotted-key overrides.

Every tunable constant of the pipeline has a named key here; ``DEFAULTS``
doubles as the schema.  Unknown keys are rejected so typos do not pass
silently.
"""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from . import CONFIG_SCHEMA_VERSION
from .channel import AgcConfig, FadingConfig, InterfererConfig
from .dsp import StftParams
from .sad import CsbeConfig, WienerConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "schema_version": CONFIG_SCHEMA_VERSION,
    "seed": 7,
    "sample_rate_hz": 8000,
    "corpus": {
        "source_dir": None,  # directory of 16 kHz mono WAVs; None synthesises speech
        "synth_files": 20,
        "synth_duration_s": 20.0,
        "num_transmissions": 6,
        "sequences_per_transmission": 1,
        "dev_fraction": 0.33,
        "lead_in_max_s": 2.0,  # random silence before each received stream
        "tx_level": 0.25,  # transmit scale: unit-peak markers plus 6 dB fading stay below full scale
    },
    "channel": {
        "snr_db_range": [0.0, 10.0],
        "bandlimit": True,
        "band_hz": [150.0, 2850.0],
        "fading": {"enabled": True, "rate_hz": 0.2, "depth_db": 6.0},
        "agc": {
            "enabled": True, "target_rms": 0.02, "attack_s": 0.1, "release_s": 1.0,
            "max_gain_db": 30.0, "detector_s": 0.01, "control_period_s": 0.001,
        },
        "interferer_fraction": 0.1,
        "interferer": {
            "offset_hz": 800.0, "level_db": -6.0, "placement": "anywhere",
            "bursts": 2, "burst_s": [1.0, 8.0],
        },
    },
    "markers": {"quantile": 0.5, "min_score": 0.35, "gold_degree": 5},
    "sad": {
        "stft": {"fft_size": 1024, "window_len_samples": 512, "shift_samples": 256},
        "wiener": {
            "gamma": 24.0, "g_min": 0.1, "num_stages": 3, "min_stat_window_frames": 48,
            "smoothing_alpha": 0.85, "bias_comp": 1.5,
        },
        "csbe": {
            "mel_bands": 40, "subband_width_hz": 1000.0, "alpha_threshold": 2.5,
            "floor_window_frames": 300, "floor_smoothing_alpha": 0.9, "floor_bias_comp": 1.5,
            "median_window_s": 0.25, "median_overlap": 0.5, "highpass_hz": 120.0,
            "highpass_transition_hz": 100.0, "highpass_atten_db": 60.0,
            "lpc_block_s": 0.032, "lpc_rho_floor": 0.1,
        },
    },
    "scoring": {
        "collar_s": 0.5,
        "frame_s": 0.01,
        "thresholds": {"min": 0.3, "max": 100.0, "count": 60},
    },
}

# keys whose value may be None or of a different type than the default
_NULLABLE = {("corpus", "source_dir")}


def _merge(base: dict, update: dict, path=()) -> dict:
    out = copy.deepcopy(base)
    for key, val in update.items():
        where = ".".join(path + (str(key),))
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = _merge(base[key], val, path + (key,))
        else:
            out[key] = _coerce(base[key], val, where, path + (key,))
    return out


def _coerce(default, val, where, path):
    if path in _NULLABLE or default is None:
        return val
    if isinstance(default, bool):
        if not isinstance(val, bool):
            raise ConfigError(f"config key {where!r} must be true/false, got {val!r}")
        return val
    if isinstance(default, int) and not isinstance(val, bool) and isinstance(val, int):
        return val
    if isinstance(default, float) and isinstance(val, (int, float)) and not isinstance(val, bool):
        return float(val)
    if isinstance(default, list) and isinstance(val, list) and len(val) == len(default):
        return [_coerce(d, v, where, ()) for d, v in zip(default, val)]
    if isinstance(default, str) and isinstance(val, str):
        return val
    raise ConfigError(f"config key {where!r}: expected {type(default).__name__}, got {val!r}")


def parse_override(text: str) -> dict:
    """``"sad.wiener.gamma=30"`` -> ``{"sad": {"wiener": {"gamma": 30}}}``."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like key.path=value, got {text!r}")
    val = yaml.safe_load(raw) if raw.strip() else None
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = val
    return out


def load_config(path=None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        data = yaml.safe_load(path.read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        version = data.get("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"{path}: schema_version {version}, expected {CONFIG_SCHEMA_VERSION}")
        cfg = _merge(cfg, data)
    for ov in overrides:
        cfg = _merge(cfg, parse_override(ov))
    return cfg


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=False)


# -- typed views -----------------------------------------------------------------

def stft_params(cfg: dict) -> StftParams:
    return StftParams(**cfg["sad"]["stft"])


def wiener_config(cfg: dict) -> WienerConfig:
    return WienerConfig(**cfg["sad"]["wiener"])


def csbe_config(cfg: dict) -> CsbeConfig:
    return CsbeConfig(**cfg["sad"]["csbe"])


def agc_config(cfg: dict) -> AgcConfig:
    return AgcConfig(**cfg["channel"]["agc"])


def fading_config(cfg: dict) -> FadingConfig:
    return FadingConfig(**cfg["channel"]["fading"])


def interferer_config(cfg: dict) -> InterfererConfig:
    return InterfererConfig(**cfg["channel"]["interferer"])
