import hashlib
import json
import logging
import os
import platform
from dataclasses import dataclass, field

from tools.errors import ConfigError

TOOL_VERSION = "0.1.0"
OUT_DIR_ENV = "CFX_OUT_DIR"

REQUIRED = object()

# section -> key -> (kind, default)
CONFIG_SCHEMA = {
    "dataset": {
        "source": ("str", REQUIRED),
        "n_samples": ("int", 2000),
        "seed": ("int", 0),
        "csv_path": ("str?", None),
        "label_column": ("str?", None),
        "positive_label": ("str?", None),
    },
    "cloud": {
        "hidden": ("int_list", REQUIRED),
        "learning_rate": ("float", 0.005),
        "batch_size": ("int", 32),
        "epochs": ("int", 200),
        "seed": ("int", 0),
        "checkpoints": ("int_list", []),
    },
    "cf": {
        "threshold": ("float", 0.6),
        "metric": ("str", "L2"),
        "lr": ("float", 0.01),
        "max_steps": ("int", 1000),
        "lambda_init": ("float", 0.1),
        "lambda_growth": ("float", 10.0),
        "max_escalations": ("int", 5),
        "hinge": ("str", "logit"),
        "margin": ("float", 0.1),
        "refine_steps": ("int", 30),
    },
    "attack": {
        "hidden": ("int_list", REQUIRED),
        "learning_rate": ("float", 0.005),
        "batch_size": ("int", 32),
        "epochs": ("int", 200),
        "paired_batching": ("bool?", None),
        "min_steps": ("int", 2000),
        "imbalance_ratio": ("float", 5.0),
    },
    "sweep": {
        "strategies": ("str_list", ["steal_ml", "steal_ml_coreset", "model_extraction", "dual_cf", "dual_cfx"]),
        "query_sizes": ("int_list", [1, 2, 4, 8, 16, 32, 64, 128]),
        "runs_per_size": ("int", 30),
        "base_seed": ("int", 0),
        "jobs": ("int", 1),
    },
    "output": {
        "experiment": ("str", REQUIRED),
        "dir": ("str", "results"),
    },
}

DATASET_SOURCES = ("synthetic-linear", "synthetic-nonlinear", "csv")


def setup_logging(verbose=False):
    """Configure the root logger once for command-line use."""
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)-7s %(name)s: %(message)s", force=True)


def derive_seed(base_seed, *parts):
    """
    Derive a 64-bit seed from a base seed and any labels.

    SHA-256 over "base|part1|part2|..." keeps every (strategy, size, run)
    stream independent of which other cells exist.

    Returns:
        int: Seed in [0, 2**64).
    """
    key = "|".join(str(p) for p in (base_seed,) + parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _coerce(value, kind, path):
    optional = kind.endswith("?")
    kind = kind.rstrip("?")
    if value is None:
        if optional:
            return None
        raise ConfigError("value may not be null", path)
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", path)
        return value
    if kind in ("int_list", "str_list"):
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", path)
        item_kind = "int" if kind == "int_list" else "str"
        return [_coerce(item, item_kind, f"{path}[{i}]") for i, item in enumerate(value)]
    raise ConfigError(f"unknown schema kind {kind!r}", path)


def validate_config(raw):
    """
    Validate a raw config dict and unwrap its {"value": ..., "unit": ...} leaves.

    Unknown sections or keys, missing required keys and mistyped values raise
    ConfigError naming the dotted field path.

    Returns:
        dict: section -> key -> plain value, with defaults filled in.
    """
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object")
    for section in raw:
        if section not in CONFIG_SCHEMA:
            raise ConfigError("unknown section", section)

    resolved = {}
    for section, keys in CONFIG_SCHEMA.items():
        entries = raw.get(section, {})
        if not isinstance(entries, dict):
            raise ConfigError("section must be a JSON object", section)
        for key in entries:
            if key not in keys:
                raise ConfigError("unknown key", f"{section}.{key}")
        resolved[section] = {}
        for key, (kind, default) in keys.items():
            path = f"{section}.{key}"
            if key not in entries:
                if default is REQUIRED:
                    raise ConfigError("missing required key", path)
                resolved[section][key] = list(default) if isinstance(default, list) else default
                continue
            leaf = entries[key]
            if not isinstance(leaf, dict) or "value" not in leaf:
                raise ConfigError('expected an object {"value": ..., "unit": ...}', path)
            extra = set(leaf) - {"value", "unit"}
            if extra:
                raise ConfigError(f"unknown key {sorted(extra)[0]!r}", path)
            resolved[section][key] = _coerce(leaf["value"], kind, f"{path}.value")

    _check_ranges(resolved)
    return resolved


def _check_ranges(cfg):
    source = cfg["dataset"]["source"]
    if source not in DATASET_SOURCES:
        raise ConfigError(f"expected one of {DATASET_SOURCES}, got {source!r}", "dataset.source.value")
    if source == "csv":
        for key in ("csv_path", "label_column", "positive_label"):
            if cfg["dataset"][key] is None:
                raise ConfigError("required when dataset.source is 'csv'", f"dataset.{key}.value")
    sizes = cfg["sweep"]["query_sizes"]
    if not sizes or any(s < 1 for s in sizes) or sorted(set(sizes)) != sizes:
        raise ConfigError("query sizes must be positive and strictly ascending", "sweep.query_sizes.value")
    if cfg["sweep"]["runs_per_size"] < 1:
        raise ConfigError("at least one run per size is required", "sweep.runs_per_size.value")
    if cfg["sweep"]["jobs"] < 1:
        raise ConfigError("jobs must be at least 1", "sweep.jobs.value")
    if cfg["attack"]["min_steps"] < 0:
        raise ConfigError("min_steps cannot be negative", "attack.min_steps.value")
    if cfg["attack"]["imbalance_ratio"] < 1:
        raise ConfigError("ratio of majority to minority must be >= 1", "attack.imbalance_ratio.value")


def load_config(path):
    """Read and validate a JSON experiment config."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return validate_config(raw)


def resolve_out_dir(cfg, override=None):
    """
    Output directory of an experiment.

    Precedence: --out-dir, then $CFX_OUT_DIR, then output.dir of the config.
    The experiment name is appended.
    """
    root = override or os.environ.get(OUT_DIR_ENV) or cfg["output"]["dir"]
    return os.path.join(root, cfg["output"]["experiment"])


@dataclass
class RunManifest:
    """
    Record of one command invocation: resolved config, artifacts, version, timings
    and run counters (API calls billed, CF/CCF pairs dropped).
    """
    command: str
    config: dict
    artifacts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)
    tool_version: str = TOOL_VERSION

    def add_artifact(self, name, path):
        self.artifacts[name] = os.path.normpath(path)

    def write(self, path):
        missing = [p for p in self.artifacts.values() if not os.path.exists(p)]
        if missing:
            raise FileNotFoundError(f"manifest references missing artifacts: {missing}")
        payload = {
            "command": self.command,
            "tool_version": self.tool_version,
            "python": platform.python_version(),
            "config": self.config,
            "artifacts": dict(sorted(self.artifacts.items())),
            "timings_s": {k: round(v, 3) for k, v in self.timings.items()},
            "counters": {k: int(v) for k, v in sorted(self.counters.items())},
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")
        return path
