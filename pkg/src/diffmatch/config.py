"""Run configuration: defaults, config files, and precedence rules.

Every run resolves its settings as flag > config file > built-in default.
The config file is plain text, one ``key = value`` per line, ``#`` comments;
keys mirror the long CLI flag names (hyphens and underscores both accepted).
When no ``--config`` flag is given, the PDM_CONFIG environment variable
names a fallback config file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

CONFIG_ENV_VAR = "PDM_CONFIG"

# CLI spelling -> pipeline mode
MODE_ALIASES = {
    "both": "both",
    "appearance": "appearance_only",
    "appearance_only": "appearance_only",
    "semantic": "semantic_only",
    "semantic_only": "semantic_only",
}


@dataclass
class RunConfig:
    tau: float = 0.7
    mode: str = "both"
    seg_threshold: float = 0.5
    topk: int = 400
    boundary_tol: float = 0.008
    seed: int = 0
    cosine: bool = False
    external_mask: str | None = None
    gallery: str | None = None
    out: str | None = None

    def validate(self) -> None:
        if not (0.0 < self.tau <= 1.0):
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if self.mode not in MODE_ALIASES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not (0.0 <= self.seg_threshold <= 1.0):
            raise ValueError(
                f"seg_threshold must be in [0, 1], got {self.seg_threshold}"
            )
        if self.topk < 0:
            raise ValueError(f"topk must be >= 0, got {self.topk}")
        if self.boundary_tol <= 0:
            raise ValueError(f"boundary_tol must be > 0, got {self.boundary_tol}")

    @property
    def pipeline_mode(self) -> str:
        return MODE_ALIASES[self.mode]

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_BOOL_WORDS = {"true": True, "1": True, "yes": True,
               "false": False, "0": False, "no": False}


def _coerce(name: str, text: str):
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    if kind == "bool":
        word = text.strip().lower()
        if word not in _BOOL_WORDS:
            raise ValueError(f"config key {name}: expected a boolean, got {text!r}")
        return _BOOL_WORDS[word]
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    return text.strip()


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines into a {field: value} dict."""
    known = {f.name for f in fields(RunConfig)}
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, value)
    return values


def resolve_config(cli_values: dict | None = None,
                   config_path: str | None = None,
                   env: dict | None = None) -> RunConfig:
    """Merge defaults, an optional config file, and explicit CLI values.

    ``cli_values`` contains only flags the user actually passed. The config
    file comes from ``config_path`` or, failing that, the PDM_CONFIG
    environment variable.
    """
    env = os.environ if env is None else env
    merged = RunConfig().to_dict()
    path = config_path or env.get(CONFIG_ENV_VAR)
    if path:
        merged.update(parse_config_file(path))
    for key, value in (cli_values or {}).items():
        if value is not None:
            merged[key] = value
    config = RunConfig(**merged)
    config.validate()
    return config
