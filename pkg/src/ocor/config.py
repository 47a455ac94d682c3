"""Flat ``key = value`` run configuration.

Precedence is command-line flag > config file > built-in default.  Lines
starting with ``#`` and blank lines are ignored.
"""

from __future__ import annotations

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .model import ModelConfig
from .training import TrainConfig

log = logging.getLogger(__name__)

CONFIG_ENV = "OCOR_CONFIG"
DEFAULT_LAMBDA = 0.1

_MODEL_KEYS = {f.name: f for f in dataclasses.fields(ModelConfig)}
_TRAIN_KEYS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_RUN_KEYS = {
    "corpus": str,
    "dev_corpus": str,
    "dev_cases": str,
    "out_dir": str,
    "lambda": float,
    "threads": int,
    "eval_negatives": int,
}
_ALIASES = {"lr": "learning_rate", "dropout": "dropout_rate", "lam": "lambda", "out": "out_dir"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    corpus: str | None = None
    dev_corpus: str | None = None
    dev_cases: str | None = None
    out_dir: str = "ocor_out"
    lam: float = DEFAULT_LAMBDA
    threads: int = 1
    eval_negatives: int = 49

    @property
    def seed(self) -> int:
        return self.train.seed

    def validate(self) -> None:
        for key in ("corpus", "dev_corpus", "dev_cases"):
            value = getattr(self, key)
            if value is not None and not Path(value).exists():
                raise ConfigError(f"{key}: path does not exist: {value}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must be in [0, 1], got {self.lam}")

    def as_flat(self) -> dict[str, Any]:
        flat: dict[str, Any] = {}
        flat.update(dataclasses.asdict(self.model))
        flat.update(dataclasses.asdict(self.train))
        flat.update(
            corpus=self.corpus,
            dev_corpus=self.dev_corpus,
            dev_cases=self.dev_cases,
            out_dir=self.out_dir,
            threads=self.threads,
            eval_negatives=self.eval_negatives,
        )
        flat["lambda"] = self.lam
        return flat

    def render(self) -> str:
        return "".join(f"{k} = {'' if v is None else v}\n" for k, v in self.as_flat().items())


def _coerce(raw: Any, annotation) -> Any:
    """Convert ``raw`` using a dataclass field annotation (a string under postponed evaluation)."""
    name = annotation if isinstance(annotation, str) else getattr(annotation, "__name__", "")
    if name.startswith("int"):
        return int(raw)
    if name.startswith("float"):
        return float(raw)
    return str(raw)


def _canonical(key: str) -> str:
    key = key.strip().replace("-", "_")
    return _ALIASES.get(key, key)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[_canonical(key)] = value.strip()
    return values


def read_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def build_run_config(file_values: Mapping[str, Any] | None = None,
                     flag_values: Mapping[str, Any] | None = None) -> RunConfig:
    """Merge file values and flag overrides onto the defaults."""
    merged: dict[str, Any] = {}
    file_values = {_canonical(k): v for k, v in (file_values or {}).items()}
    flag_values = {_canonical(k): v for k, v in (flag_values or {}).items() if v is not None}
    merged.update(file_values)
    for key, value in flag_values.items():
        if key in file_values and str(file_values[key]) != str(value):
            log.warning("flag overrides config file: %s = %s (file had %s)", key, value, file_values[key])
        merged[key] = value

    model_kw, train_kw, run_kw = {}, {}, {}
    for key, raw in merged.items():
        if raw == "" or raw is None:
            continue
        try:
            if key in _MODEL_KEYS:
                model_kw[key] = _coerce(raw, _MODEL_KEYS[key].type)
            elif key in _TRAIN_KEYS:
                train_kw[key] = _coerce(raw, _TRAIN_KEYS[key].type)
            elif key in _RUN_KEYS:
                run_kw[key] = _RUN_KEYS[key](raw)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from None
    # one dropout setting drives both the model and the trainer
    if "dropout_rate" in model_kw or "dropout_rate" in train_kw:
        rate = train_kw.get("dropout_rate", model_kw.get("dropout_rate"))
        model_kw["dropout_rate"] = train_kw["dropout_rate"] = rate
    try:
        model = ModelConfig(**model_kw)
        train = TrainConfig(**train_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if "lambda" in run_kw:
        run_kw["lam"] = run_kw.pop("lambda")
    return RunConfig(model=model, train=train, **run_kw)


def load_run_config(path: str | Path | None = None, flags: Mapping[str, Any] | None = None) -> RunConfig:
    """Read ``path`` (or ``$OCOR_CONFIG``) and apply ``flags`` on top."""
    path = path or os.environ.get(CONFIG_ENV)
    file_values = read_config_file(path) if path else {}
    return build_run_config(file_values, flags)
