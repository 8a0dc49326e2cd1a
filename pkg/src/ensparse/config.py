"""Experiment configuration: file, environment, and flag layering.

Each CLI command owns a typed schema. Values resolve in precedence order
``defaults < config file < ENSPARSE_* environment < command-line flags``,
unknown keys are rejected, and the fully resolved configuration is persisted
next to the results of every run so any output can be reproduced from its
directory alone.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .errors import ConfigError

ENV_PREFIX = "ENSPARSE_"

_MISSING = object()


@dataclass(frozen=True)
class Field:
    """One config entry: type, default, and optional domain constraints."""

    kind: str  # int | float | bool | str | list_int | list_str
    default: object = _MISSING
    choices: tuple = ()
    minimum: float | None = None
    optional: bool = False

    @property
    def required(self) -> bool:
        return self.default is _MISSING and not self.optional


_COMMON = {
    "seed": Field("int", 0, minimum=0),
    "workers": Field("int", 1, minimum=1),
    "out": Field("str", "ensparse-out"),
}

TRAIN_METHODS = ("altopt", "boostex", "boostkm", "randexav", "exmld")
CLUSTER_METHODS = ("l1graph", "altopt", "randexav", "boostex", "boostkm")

SCHEMAS: dict[str, dict[str, Field]] = {
    "train": {
        **_COMMON,
        "method": Field("str", "randexav", choices=TRAIN_METHODS),
        "model": Field("str", optional=True),  # output path override
        "k": Field("int", 64, minimum=1),
        "l": Field("int", 10, minimum=1),
        "lambda_train": Field("float", 0.1, minimum=0.0),
        "alt_iterations": Field("int", 100, minimum=1),
        "levels": Field("int", 8, minimum=1),
        "atoms_per_level": Field("int", 16, minimum=1),
        "q": Field("int", optional=True, minimum=1),
        "s": Field("int", optional=True, minimum=1),
        "operator_n": Field("int", optional=True, minimum=1),
        "operator_seed": Field("int", 0, minimum=0),
        "train_images": Field("list_str", optional=True),
        "train_csv": Field("str", optional=True),
        "patch_size": Field("int", 8, minimum=1),
        "stride": Field("int", 4, minimum=1),
        "variance_floor": Field("float", 0.002, minimum=0.0),
    },
    "recover": {
        **_COMMON,
        "model": Field("str"),
        "images": Field("list_str"),
        "n_list": Field("list_int", (8, 16, 32)),
        "lambda_test": Field("float", 0.1, minimum=0.0),
        "n_seeds": Field("int", 1, minimum=1),
        "operator_seed": Field("int", 1000, minimum=0),
        "patch_size": Field("int", 8, minimum=1),
        "save_images": Field("bool", False),
    },
    "superres": {
        **_COMMON,
        "model": Field("str", optional=True),
        "method": Field("str", "randexav",
                        choices=("randexav", "boostex", "boostkm")),
        "images": Field("list_str"),
        "train_images": Field("list_str", optional=True),
        "k": Field("int", 128, minimum=1),
        "l": Field("int", 5, minimum=1),
        "patch_size": Field("int", 5, minimum=3),
        "stride": Field("int", 2, minimum=1),
        "max_pairs": Field("int", 20000, minimum=1),
        "scale": Field("int", 2, minimum=2),
        "lambda_test": Field("float", 0.2, minimum=0.0),
        "backproject_c": Field("float", 1.0, minimum=0.0),
        "backproject_iterations": Field("int", 20, minimum=0),
        "save_images": Field("bool", False),
    },
    "cluster": {
        **_COMMON,
        "dataset_csv": Field("str"),
        "manifest": Field("str", optional=True),
        "methods": Field("list_str", ("l1graph", "randexav", "boostex", "boostkm")),
        "k_atoms": Field("int", 32, minimum=1),
        "l": Field("int", 10, minimum=1),
        "lambda_test": Field("float", 0.1, minimum=0.0),
        "alt_iterations": Field("int", 30, minimum=1),
        "n_seeds": Field("int", 1, minimum=1),
        "preprocess": Field("bool", True),
    },
    "oracle-demo": {
        **_COMMON,
        "n_patches": Field("int", 1500, minimum=2),
        "n_test": Field("int", 200, minimum=1),
        "patch_size": Field("int", 8, minimum=2),
        "image_kind": Field("str", "texture"),
        "k_list": Field("list_int", (64, 128, 256)),
        "k_trainers": Field("int", 64, minimum=1),
        "l": Field("int", 5, minimum=1),
        "lambda_test": Field("float", 0.2, minimum=0.0),
    },
}


def _convert_scalar(kind: str, value, key: str):
    try:
        if kind == "int":
            if isinstance(value, bool) or (isinstance(value, float)
                                           and value != int(value)):
                raise ValueError(value)
            return int(value)
        if kind == "float":
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if kind == "bool":
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "false"):
                return value.lower() == "true"
            raise ValueError(value)
        if kind == "str":
            if not isinstance(value, str):
                raise ValueError(value)
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {kind}, got {value!r}") from None
    raise ConfigError(f"{key}: unknown field kind {kind!r}")


def _convert(field: Field, value, key: str):
    if value is None and field.optional:
        return None
    if field.kind.startswith("list_"):
        inner = field.kind.split("_", 1)[1]
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return [_convert_scalar(inner, v, f"{key}[{i}]")
                for i, v in enumerate(value)]
    out = _convert_scalar(field.kind, value, key)
    if field.choices and out not in field.choices:
        raise ConfigError(
            f"{key}: {out!r} not one of {', '.join(map(str, field.choices))}"
        )
    if field.minimum is not None and out < field.minimum:
        raise ConfigError(f"{key}: {out} below minimum {field.minimum}")
    return out


def _parse_env_value(raw: str, field: Field):
    """Environment values arrive as strings; lists may be JSON or comma-joined."""
    if field.kind.startswith("list_") and raw.lstrip().startswith("["):
        try:
            return json.loads(raw)
        except json.JSONDecodeError as err:
            raise ConfigError(f"invalid JSON list in environment: {err}") from None
    if field.kind == "bool":
        return raw
    return raw


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return data


def resolve(command: str, file_values: dict | None = None,
            flag_values: dict | None = None, environ=None) -> dict:
    """Merge defaults, file, environment, and flags into a validated config."""
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    schema = SCHEMAS[command]
    environ = os.environ if environ is None else environ

    merged: dict = {}
    for key, field in schema.items():
        if field.default is not _MISSING:
            merged[key] = field.default

    for source_name, values in (("config file", file_values or {}),):
        for key, value in values.items():
            if key not in schema:
                raise ConfigError(f"{source_name}: unknown key {key!r} "
                                  f"for command {command!r}")
            merged[key] = _convert(schema[key], value, key)

    for key, field in schema.items():
        raw = environ.get(ENV_PREFIX + key.upper())
        if raw is not None:
            merged[key] = _convert(field, _parse_env_value(raw, field), key)

    for key, value in (flag_values or {}).items():
        if value is None:
            continue
        if key not in schema:
            raise ConfigError(f"flag --{key} does not apply to command {command!r}")
        merged[key] = _convert(schema[key], value, key)

    for key, field in schema.items():
        if key not in merged:
            if field.required:
                raise ConfigError(f"missing required config key {key!r}")
            merged[key] = None
    return merged


def persist_resolved(config: dict, command: str, path) -> None:
    """Write the fully-resolved config (sorted keys, no volatile fields)."""
    payload = {"command": command, "config": config,
               "schema_version": 1}
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
