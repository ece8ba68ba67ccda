"""TOML run configuration with strict schema validation.

Unknown keys are rejected with their full key path; every default is
resolved at load time and the resolved configuration is echoed into the
run manifest, so a run directory always records the exact settings that
produced it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib


class ConfigError(ValueError):
    pass


_STR = str
_INT = int
_FLOAT = (int, float)
_BOOL = bool
_STR_LIST = "str_list"

# section -> key -> (type, default); None default means optional
_SCHEMA: dict = {
    "corpus": {
        "dataset": (_STR, "normalized"),
        "split": (_STR, "dev"),
        "path": (_STR, None),
        "table_answerable_only": (_BOOL, True),
    },
    "run": {
        "seed": (_INT, 0),
        "sample": (_INT, 0),  # 0 = use every task
        "strategies": (_STR_LIST, ["table-column", "table-value", "question-rephrase"]),
        "workers": (_INT, 1),
        "in_flight": (_INT, 8),
        "failure_threshold": (_FLOAT, 0.05),
        "out_dir": (_STR, "runs/run"),
        "prompt_pack": (_STR, ""),
    },
    "student": {
        "base_url": (_STR, ""),
        "model": (_STR, "student"),
        "temperature": (_FLOAT, 0.0),
        "max_output_tokens": (_INT, 1024),
        "timeout_s": (_FLOAT, 60.0),
        "retry_budget": (_INT, 3),
        "scripted": (_STR, ""),
    },
    "teacher": {
        "base_url": (_STR, ""),
        "model": (_STR, "teacher"),
        "temperature": (_FLOAT, 0.0),
        "max_output_tokens": (_INT, 1024),
        "timeout_s": (_FLOAT, 60.0),
        "retry_budget": (_INT, 3),
        "scripted": (_STR, ""),
    },
    "judge": {
        "mode": (_STR, "lenient"),
    },
    "sandbox": {
        "enabled": (_BOOL, False),
        "command": (_STR_LIST, ["python3", "-m", "table_sandbox"]),
        "timeout_ms": (_INT, 10000),
        "memory_mb": (_INT, 256),
        "max_concurrency": (_INT, 4),
    },
    "bench": {
        "mode": (_STR, "followup"),
        "train_run": (_STR, ""),
        "negatives_limit": (_INT, 0),
    },
}


def _check_type(path: str, value, expected):
    if expected is _STR_LIST:
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError(f"{path}: expected a list of strings, got {value!r}")
        return list(value)
    if expected is _BOOL:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if expected is _INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if expected is _FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string, got {value!r}")
    return value


@dataclass
class RunConfig:
    resolved: dict
    source_path: str

    def __getitem__(self, section: str) -> dict:
        return self.resolved[section]

    @property
    def config_hash(self) -> str:
        payload = json.dumps(self.resolved, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def load_config(path) -> RunConfig:
    """Load and validate a TOML run configuration."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    resolved: dict = {}
    for section, keys in _SCHEMA.items():
        given = raw.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"[{section}]: expected a table")
        out = {}
        for key, (expected, default) in keys.items():
            if key in given:
                out[key] = _check_type(f"[{section}].{key}", given[key], expected)
            else:
                out[key] = default
        for key in given:
            if key not in keys:
                raise ConfigError(
                    f"unknown key [{section}].{key}; known keys: {sorted(keys)}"
                )
        resolved[section] = out
    for section in raw:
        if section not in _SCHEMA:
            raise ConfigError(
                f"unknown section [{section}]; known sections: {sorted(_SCHEMA)}"
            )
    _validate_semantics(resolved)
    return RunConfig(resolved, str(path))


def _validate_semantics(resolved: dict) -> None:
    if resolved["judge"]["mode"] not in ("strict", "lenient"):
        raise ConfigError("[judge].mode must be strict or lenient")
    if resolved["bench"]["mode"] not in ("followup", "zeroshot", "fewshot"):
        raise ConfigError("[bench].mode must be followup, zeroshot or fewshot")
    from .ablation import STRATEGIES

    for strategy in resolved["run"]["strategies"]:
        if strategy not in STRATEGIES:
            raise ConfigError(
                f"[run].strategies: unknown strategy {strategy!r}; known: {list(STRATEGIES)}"
            )
    if resolved["corpus"]["dataset"] not in ("tatqa", "wikitq", "normalized"):
        raise ConfigError("[corpus].dataset must be tatqa, wikitq or normalized")
    if not 0 <= resolved["run"]["failure_threshold"] <= 1:
        raise ConfigError("[run].failure_threshold must be within [0, 1]")
