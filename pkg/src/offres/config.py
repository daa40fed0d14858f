"""Pipeline configuration: defaults, JSON schema and loading.

A user config is a JSON object whose sections are deep-merged over
:data:`DEFAULTS` and then validated against :data:`SCHEMA`.
"""
import copy
import json

import jsonschema

from .errors import OffresError

DEFAULTS = {
    "seed": 0,
    "grid_size": 32,
    "trajectory": {
        "n_cones": 32,
        "interleaves_per_cone": 48,
        "samples_per_interleaf": 64,
        "t_read": 1.18e-3,
        "twist": 2.0,
        "fov_cm": 24.0,
        "dcf_iterations": 10,
    },
    "recon": {"oversamp": 2.0, "kernel_width": 4.0},
    "phantom": {"n_vessels": 3},
    "fieldmap": {"f_max": 100.0, "n_blobs": 4, "ramp": False},
    "sim": {"n_bins": 8, "noise_std": 0.0, "max_cost": 2.5e8},
    "corpus": {
        "n_phantoms": 10,
        "scale_factors": [1.5, 2.0, 2.5, 3.0],
        "freqs_hz": [-500.0, -400.0, -300.0, -200.0, -100.0, 0.0,
                     100.0, 200.0, 300.0, 400.0, 500.0],
        "fieldmap_fmax": 0.0,
        "train_fraction": 8.0 / 30.0,
    },
    "autofocus": {
        "f_min": -1000.0,
        "f_max": 1000.0,
        "n_freqs": 41,
        "metric_window": 4,
        "lowpass_sigma": 1.5,
        "fieldmap_smooth_sigma": 2.0,
        "mask_fraction": 0.05,
    },
    "network": {
        "n_res_blocks": 3,
        "channels": 32,
        "kernel": 5,
        "global_skip": True,
        "learning_rate": 1e-4,
        "patch": 32,
        "patch_stride": 16,
        "batch": 1,
        "dtype": "float32",
        "out_init_scale": 0.1,
    },
    "train": {"epochs": 8, "val_fraction": 0.1},
    "eval": {
        "freqs_hz": None,
        "methods": ["none", "autofocus", "net"],
        "iterate_n": 4,
        "tile": 64,
    },
}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_int1 = {"type": "integer", "minimum": 1}
_freqs = {"type": "array", "items": _num, "minItems": 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(required)}


SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "offres pipeline configuration",
    **_obj({
        "seed": {"type": "integer", "minimum": 0},
        "grid_size": {"type": "integer", "minimum": 8, "multipleOf": 2},
        "trajectory": _obj({
            "n_cones": _int1, "interleaves_per_cone": _int1,
            "samples_per_interleaf": {"type": "integer", "minimum": 2},
            "t_read": _pos, "twist": _num, "fov_cm": _pos,
            "dcf_iterations": {"type": "integer", "minimum": 0},
        }),
        "recon": _obj({"oversamp": {"type": "number", "minimum": 1.25},
                       "kernel_width": {"type": "number", "minimum": 2}}),
        "phantom": _obj({"n_vessels": _int1}),
        "fieldmap": _obj({"f_max": _nonneg, "n_blobs": _int1, "ramp": {"type": "boolean"}}),
        "sim": _obj({"n_bins": _int1, "noise_std": _nonneg, "max_cost": _pos}),
        "corpus": _obj({
            "n_phantoms": _int1,
            "scale_factors": {"type": "array", "items": _pos, "minItems": 1},
            "freqs_hz": _freqs,
            "fieldmap_fmax": _nonneg,
            "train_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        }),
        "autofocus": _obj({
            "f_min": _num, "f_max": _num,
            "n_freqs": {"type": "integer", "minimum": 2},
            "metric_window": {"type": "integer", "minimum": 0},
            "lowpass_sigma": _nonneg, "fieldmap_smooth_sigma": _nonneg,
            "mask_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        }),
        "network": _obj({
            "n_res_blocks": {"type": "integer", "minimum": 0},
            "channels": _int1,
            "kernel": {"type": "integer", "minimum": 1, "not": {"multipleOf": 2}},
            "global_skip": {"type": "boolean"},
            "learning_rate": _pos,
            "patch": _int1, "patch_stride": _int1, "batch": _int1,
            "dtype": {"enum": ["float32", "float64"]},
            "out_init_scale": _nonneg,
        }),
        "train": _obj({"epochs": _int1,
                       "val_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}}),
        "eval": _obj({
            "freqs_hz": {"oneOf": [_freqs, {"type": "null"}]},
            "methods": {"type": "array", "minItems": 1,
                        "items": {"enum": ["none", "autofocus", "net"]}},
            "iterate_n": {"type": "integer", "minimum": 2},
            "tile": {"type": "integer", "minimum": 8},
        }),
    }),
}


class ConfigError(OffresError):
    code = "config"

    def __init__(self, message, pointer=""):
        super().__init__(message)
        self.pointer = pointer


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _pointer(path):
    return "/" + "/".join(str(p) for p in path) if path else ""


def validate(cfg):
    """Raise :class:`ConfigError` naming the JSON pointer of the first problem."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        ptr = _pointer(e.absolute_path)
        raise ConfigError(f"{ptr or '/'}: {e.message}", ptr)
    return cfg


def load_config(path=None, overrides=None):
    """Defaults, then the JSON file at ``path``, then ``overrides``; validated."""
    user = {}
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise ConfigError("config root must be an object")
    cfg = _merge(DEFAULTS, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    return validate(cfg)
