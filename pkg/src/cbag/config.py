"""Experiment configuration and the flat ``key = value`` config-file format."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .gcn import TrainConfig

METHODS = ("cbag", "cbag-r")
DEFAULT_SEEDS = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = ""
    method: str = "cbag"
    target_label: int | None = None
    p: float = 0.05
    lam: float = 0.05
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    epochs: int = 200
    lr: float = 0.01
    hidden: int = 32
    dropout: float = 0.6
    weight_decay: float = 5e-4
    out: str | None = None
    audit: int = 0

    def __post_init__(self):
        method = self.method.lower().replace("_", "-")
        if method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        object.__setattr__(self, "method", method)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not 0 < self.p < 1:
            raise ConfigError(f"poisoning rate p must be in (0, 1), got {self.p}")
        if not 0 < self.lam <= 1:
            raise ConfigError(f"trigger fraction lambda must be in (0, 1], got {self.lam}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.audit < 0:
            raise ConfigError("audit must be >= 0")
        try:
            self.train_config(0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(hidden=self.hidden, learning_rate=self.lr,
                           weight_decay=self.weight_decay, dropout=self.dropout,
                           epochs=self.epochs, seed=seed)

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)

    def echo(self) -> list[tuple[str, str]]:
        """Effective settings as (flag name, value) pairs, in a fixed order."""
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "seeds":
                v = ",".join(str(s) for s in v)
            out.append((FIELD_TO_KEY.get(f.name, f.name), "" if v is None else str(v)))
        return out


# Config-file keys mirror the command-line flag names.
KEY_TO_FIELD = {
    "dataset": "dataset",
    "method": "method",
    "target-label": "target_label",
    "p": "p",
    "lambda": "lam",
    "seeds": "seeds",
    "epochs": "epochs",
    "lr": "lr",
    "hidden": "hidden",
    "dropout": "dropout",
    "weight-decay": "weight_decay",
    "out": "out",
    "audit": "audit",
}
FIELD_TO_KEY = {v: k for k, v in KEY_TO_FIELD.items()}

_CONVERTERS = {
    "target_label": int,
    "p": float,
    "lam": float,
    "epochs": int,
    "lr": float,
    "hidden": int,
    "dropout": float,
    "weight_decay": float,
    "audit": int,
}


def parse_seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"malformed seed list {text!r}") from None


def convert_value(field_name: str, raw: str):
    if field_name == "seeds":
        return parse_seeds(raw)
    conv = _CONVERTERS.get(field_name)
    if conv is None:
        return raw
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {FIELD_TO_KEY[field_name]}") from None


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines into ExperimentConfig field overrides.

    Blank lines and ``#`` comments are ignored. Unknown keys are an error.
    """
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().lstrip("-")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        if key not in KEY_TO_FIELD:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        name = KEY_TO_FIELD[key]
        values[name] = convert_value(name, value.strip())
    return values


def build_config(file_values: dict | None = None, flag_values: dict | None = None) -> ExperimentConfig:
    """Defaults, overridden by config-file values, overridden by flags."""
    merged = {}
    merged.update(file_values or {})
    merged.update({k: v for k, v in (flag_values or {}).items() if v is not None})
    try:
        return ExperimentConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
