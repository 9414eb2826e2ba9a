"""Declarative run configuration for the CLI.

Configs are JSON documents; unknown keys are rejected and every validation
failure is reported in one pass. A resolved copy (all defaults materialized)
is echoed into the output directory and loads back to an equal config.
Dataset presets fill (d, h, neg_per_pos) when those keys are absent.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .training import TrainConfig

MODEL_TAGS = ("nas", "nas_star", "bpr_mf")
RELEVANCE_MEAN_SOURCES = ("test", "train", "all")
PRESETS = {
    "epinions": {"d": 50, "h": 3, "neg_per_pos": 9},
    "flixster": {"d": 80, "h": 4, "neg_per_pos": 6},
}
OUTPUT_ROOT_ENV = "NASREC_OUT_ROOT"


@dataclass
class RunConfig:
    """Everything one training/evaluation run needs."""

    model: str = "nas"
    preset: str | None = None
    data_dir: str | None = None       # directory produced by `prepare`
    graph: str | None = None          # raw friendship edge file
    format: str = "tsv"
    out_dir: str = "runs/out"
    train_frac: float | None = None   # metadata echoed into reports
    eval_top_n: int = 10
    eval_runs: int = 5
    relevance_mean: str = "test"
    threads: int = 1
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)

    def resolved_out_dir(self) -> Path:
        """Output directory, rooted under $NASREC_OUT_ROOT when that is set."""
        root = os.environ.get(OUTPUT_ROOT_ENV)
        path = Path(self.out_dir)
        if root and not path.is_absolute():
            return Path(root) / path
        return path

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        train = doc.pop("train")
        doc.update(train)
        return doc

    def problems(self) -> list[str]:
        errs = []
        if self.model not in MODEL_TAGS:
            errs.append(f"model must be one of {MODEL_TAGS}, got {self.model!r}")
        if self.preset is not None and self.preset not in PRESETS:
            errs.append(f"preset must be one of {tuple(PRESETS)}, got {self.preset!r}")
        if self.format not in ("tsv", "csv"):
            errs.append(f"format must be tsv or csv, got {self.format!r}")
        if self.relevance_mean not in RELEVANCE_MEAN_SOURCES:
            errs.append(f"relevance_mean must be one of {RELEVANCE_MEAN_SOURCES}, "
                        f"got {self.relevance_mean!r}")
        if not isinstance(self.eval_top_n, int) or self.eval_top_n < 1:
            errs.append(f"eval_top_n must be a positive integer, got {self.eval_top_n!r}")
        if not isinstance(self.eval_runs, int) or self.eval_runs < 1:
            errs.append(f"eval_runs must be a positive integer, got {self.eval_runs!r}")
        if not isinstance(self.threads, int) or self.threads < 1:
            errs.append(f"threads must be a positive integer, got {self.threads!r}")
        if self.train_frac is not None and not (0.0 < self.train_frac < 1.0):
            errs.append(f"train_frac must be in (0, 1), got {self.train_frac!r}")
        errs.extend(self.train.problems())
        return errs


_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_TOP_KEYS = {f.name for f in dataclasses.fields(RunConfig)} - {"train"}
KNOWN_KEYS = _TOP_KEYS | _TRAIN_KEYS


def config_from_dict(doc: dict, overrides: dict | None = None) -> RunConfig:
    """Build and validate a RunConfig, reporting every problem at once."""
    errs = []
    unknown = sorted(set(doc) - KNOWN_KEYS)
    for key in unknown:
        errs.append(f"unknown config key '{key}'")
    merged = {k: v for k, v in doc.items() if k in KNOWN_KEYS}
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    preset = merged.get("preset")
    if preset in PRESETS:
        for key, value in PRESETS[preset].items():
            merged.setdefault(key, value)
    try:
        train = TrainConfig(**{k: merged[k] for k in _TRAIN_KEYS if k in merged})
        cfg = RunConfig(train=train,
                        **{k: merged[k] for k in _TOP_KEYS if k in merged})
    except TypeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    errs.extend(cfg.problems())
    if errs:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errs))
    return cfg


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return config_from_dict(doc, overrides)


def write_resolved_config(path: str | Path, cfg: RunConfig) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
