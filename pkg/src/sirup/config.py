"""JSON schemas for the command-line configs and exhaustive validation."""

from __future__ import annotations

import json
from pathlib import Path

from jsonschema import Draft202012Validator

_range = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_pos_int = {"type": "integer", "minimum": 1}
_nonneg_int = {"type": "integer", "minimum": 0}
_pos_num = {"type": "number", "exclusiveMinimum": 0}

EXPERIMENT_PROPS = {
    "protocol": {"enum": ["d_snr", "d_rt60", "se_two_source", "toy_manifold"]},
    "num_scenes": _pos_int,
    "seed": _nonneg_int,
    "snr_range_db": _range,
    "rt60_range_s": _range,
    "azimuths_deg": {"type": "array", "items": {"type": "number"}, "minItems": 1},
    "model_bundle": {"type": "string"},
    "grid_elevation_deg": {"type": "number", "minimum": -90, "maximum": 90},
    "grid_step_deg": {"type": "number", "exclusiveMinimum": 0, "maximum": 90},
    "inference_steps": _pos_int,
    "overrides": {
        "type": "object",
        "properties": {
            "room_dimensions": {"type": "array", "items": _pos_num, "minItems": 3, "maxItems": 3},
            "array_height": _pos_num,
            "center_jitter": {"type": "number", "minimum": 0},
            "elevation_deg": {"type": "number", "minimum": -90, "maximum": 90},
            "distance_range": _range,
            "azimuth_range_deg": _range,
            "source_duration": _pos_num,
            "onset_delay": {"type": "number", "minimum": 0},
            "min_separation_deg": {"type": "number", "minimum": 0},
            "max_ism_order": _nonneg_int,
            "ambisonic_order": _pos_int,
            "foa_order": _pos_int,
            "wav_files": {"type": "array", "items": {"type": "string"}},
        },
        "additionalProperties": False,
    },
}

EXPERIMENT_SCHEMA = {
    "type": "object",
    "properties": EXPERIMENT_PROPS,
    "required": ["protocol"],
    "additionalProperties": False,
}

_vae_arch = {
    "type": "object",
    "properties": {
        "num_channels": _pos_int, "num_bins": _pos_int, "width": _pos_int,
        "latent_channels": _pos_int, "num_down": _pos_int,
        "dilations": {"type": "array", "items": _pos_int, "minItems": 1},
        "data_scale": _pos_num,
    },
    "additionalProperties": False,
}

_denoiser_arch = {
    "type": "object",
    "properties": {
        "widths": {"type": "array", "items": _pos_int, "minItems": 1},
        "temb_dim": {"type": "integer", "minimum": 2, "multipleOf": 2},
        "attn_dim": _pos_int,
        "dilations": {"type": "array", "items": _pos_int, "minItems": 1},
    },
    "additionalProperties": False,
}

_train_common = {
    "dataset": {"type": "string"},
    "target": {"enum": ["hoa", "truth"]},
    "epochs": _nonneg_int,
    "lr": _pos_num,
    "weight_decay": {"type": "number", "minimum": 0},
    "batch_size": _pos_int,
    "shards": _pos_int,
    "seed": _nonneg_int,
}

TRAIN_VAE_SCHEMA = {
    "type": "object",
    "properties": {
        **_train_common,
        "validation_dataset": {"type": "string"},
        "vae": _vae_arch,
        "finetune_epochs": _nonneg_int,
        "gamma": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "weights": {
            "type": "object",
            "properties": {k: {"type": "number", "minimum": 0} for k in ("mse", "cos", "feat", "kl")},
            "additionalProperties": False,
        },
    },
    "required": ["dataset"],
    "additionalProperties": False,
}

TRAIN_LDM_SCHEMA = {
    "type": "object",
    "properties": {
        **_train_common,
        "vae_bundle": {"type": "string"},
        "denoiser": _denoiser_arch,
        "ema_decay": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "schedule": {
            "type": "object",
            "properties": {"num_steps": _pos_int, "beta_start": _pos_num, "beta_end": _pos_num,
                           "inference_steps": _pos_int},
            "additionalProperties": False,
        },
    },
    "required": ["dataset", "vae_bundle"],
    "additionalProperties": False,
}

UPMIX_SCHEMA = {
    "type": "object",
    "properties": {
        "dataset": {"type": "string"},
        "model_bundle": {"type": "string"},
        "steps": _pos_int,
        "seed": _nonneg_int,
    },
    "required": ["dataset", "model_bundle"],
    "additionalProperties": False,
}

LOCALIZE_SCHEMA = {
    "type": "object",
    "properties": {
        "steering_vectors": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "grid_elevation_deg": {"type": "number", "minimum": -90, "maximum": 90},
        "grid_step_deg": {"type": "number", "exclusiveMinimum": 0, "maximum": 90},
        "interpolate": {"type": "boolean"},
    },
    "required": ["steering_vectors"],
    "additionalProperties": False,
}

BEAMFORM_SCHEMA = {
    "type": "object",
    "properties": {
        "mixture": {"type": "string"},
        "steering_vectors": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "channels": _pos_int,
        "grid_elevation_deg": {"type": "number", "minimum": -90, "maximum": 90},
        "grid_step_deg": {"type": "number", "exclusiveMinimum": 0, "maximum": 90},
    },
    "required": ["mixture", "steering_vectors"],
    "additionalProperties": False,
}

SCHEMAS = {
    "simulate": EXPERIMENT_SCHEMA,
    "build-dataset": EXPERIMENT_SCHEMA,
    "train-vae": TRAIN_VAE_SCHEMA,
    "train-ldm": TRAIN_LDM_SCHEMA,
    "upmix": UPMIX_SCHEMA,
    "localize": LOCALIZE_SCHEMA,
    "beamform": BEAMFORM_SCHEMA,
    "evaluate": EXPERIMENT_SCHEMA,
    "compare-sv-models": EXPERIMENT_SCHEMA,
}


class ConfigError(ValueError):
    """Config file unreadable or invalid; ``violations`` lists every problem."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid config:\n" + "\n".join(f"  - {v}" for v in self.violations))


def validate(config, command: str) -> list[str]:
    """All schema violations of ``config`` for ``command``, sorted by location."""
    validator = Draft202012Validator(SCHEMAS[command])
    out = []
    for err in sorted(validator.iter_errors(config), key=lambda e: (list(map(str, e.path)), e.message)):
        where = "/".join(str(p) for p in err.path) or "<root>"
        out.append(f"{where}: {err.message}")
    return out


def load_config(path, command: str) -> dict:
    """Read a JSON config and validate it, raising :class:`ConfigError` with every violation."""
    p = Path(path)
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {p}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"malformed JSON in {p}: {exc}"]) from None
    problems = validate(cfg, command)
    if problems:
        raise ConfigError(problems)
    return cfg
