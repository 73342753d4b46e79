"""Run configuration: YAML files, flag overrides, deterministic echo.

Per-key precedence is flag > config file > built-in default. The fully
resolved tree is serialized next to every run's outputs; because the
serialization is byte-stable, re-running from the echoed file (with no
extra flags) resolves to the identical configuration.
"""

import os

import yaml


class ConfigError(ValueError):
    """Bad configuration input (missing file, unknown key, bad value)."""


def cache_dir():
    """Cache root, overridable with the UFE_CACHE_DIR variable."""
    return os.environ.get("UFE_CACHE_DIR",
                          os.path.join(os.path.expanduser("~"),
                                       ".cache", "ufe"))


def load_config_file(path):
    """
    Parse a YAML config file into a flat mapping
    Return:
        dict; a missing file raises ConfigError naming the path
    """
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as handle:
        data = yaml.safe_load(handle)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a key-value mapping")
    return data


def resolve(defaults, file_cfg=None, flags=None):
    """
    Merge configuration sources per key, flag > file > default
    Keys absent from the defaults are rejected (typo protection); None
    values mean "not set" and never override.
    Return:
        fully resolved dict
    """
    resolved = dict(defaults)
    for source, label in ((file_cfg, "config file"), (flags, "flag")):
        for key, value in (source or {}).items():
            if key not in resolved:
                raise ConfigError(f"unknown {label} key {key!r} "
                                  f"(known: {sorted(resolved)})")
            if value is not None:
                resolved[key] = value
    return resolved


def serialize(resolved):
    """Byte-stable YAML rendering (sorted keys, block style)."""
    return yaml.safe_dump(resolved, sort_keys=True,
                          default_flow_style=False)


def write_echo(resolved, out_dir, name="resolved.yaml"):
    """Serialize the resolved config alongside the run's outputs."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w") as handle:
        handle.write(serialize(resolved))
    return path
