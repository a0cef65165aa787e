"""Run configuration: JSON config files, command-line overrides and resolved snapshots."""
from __future__ import annotations

import json
import os

SNAPSHOT = "resolved_config.json"


class UsageError(ValueError):
    """Bad arguments or configuration (exit code 1)."""


class DataError(ValueError):
    """Missing or malformed input data (exit code 2)."""


def load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError as err:
        raise UsageError(f"config file not found: {path}") from err
    except json.JSONDecodeError as err:
        raise UsageError(f"config file {path} is not valid JSON: {err}") from err
    if not isinstance(cfg, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return cfg


def merge(base, overrides):
    """Recursive dict merge; ``None`` overrides are ignored."""
    out = dict(base)
    for k, v in overrides.items():
        if v is None:
            continue
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def write_snapshot(out_dir, cfg):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, SNAPSHOT), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def prepare_out(out_dir, force=False):
    """Create ``out_dir``; refuse a non-empty one unless ``force``."""
    if out_dir is None:
        raise UsageError("--out is required")
    if os.path.isdir(out_dir) and os.listdir(out_dir) and not force:
        raise UsageError(f"output directory {out_dir} is not empty (use --force to overwrite)")
    os.makedirs(out_dir, exist_ok=True)
