"""Experiment configuration (JSON file plus command-line overrides)."""
import dataclasses
import json
from dataclasses import dataclass, field

from .data import DEFAULT_SPLIT, PeriodSplit
from .exceptions import ConfigurationError

MODEL_VARIANTS = ("lstm", "lstm_static", "ealstm")
LOSS_KINDS = ("mse", "basin_nse")


@dataclass
class TrainingConfig:
    # model: "lstm" ignores static attributes, "lstm_static" appends them to
    # every time step, "ealstm" feeds them to the static input gate only
    variant: str = "ealstm"
    loss: str = "basin_nse"
    epsilon: float = 0.1
    hidden_size: int = 256
    dropout: float = 0.4
    sequence_length: int = 270
    epochs: int = 30
    batch_size: int = 256
    learning_rate: float = 1e-3
    lr_halvings: int = 2
    clip_norm: float = 1.0
    seeds: list = field(default_factory=lambda: list(range(1, 9)))
    train_period: list = field(default_factory=lambda: [str(d) for d in DEFAULT_SPLIT.train])
    validation_period: list = field(default_factory=lambda: [str(d) for d in DEFAULT_SPLIT.validation])
    data_root: str = None
    out_dir: str = None
    attributes: str = "auto"
    layout: str = "default"
    save_every: int = 0
    folds: int = 4

    def __post_init__(self):
        self.validate()

    def validate(self):
        def need(cond, name, msg):
            if not cond:
                raise ConfigurationError(f"config field {name!r}: {msg}")

        need(self.variant in MODEL_VARIANTS, "variant", f"must be one of {MODEL_VARIANTS}")
        need(self.loss in LOSS_KINDS, "loss", f"must be one of {LOSS_KINDS}")
        need(self.epsilon > 0, "epsilon", "must be > 0")
        need(isinstance(self.hidden_size, int) and self.hidden_size > 0, "hidden_size", "must be a positive integer")
        need(0.0 <= self.dropout < 1.0, "dropout", "must be in [0, 1)")
        need(isinstance(self.sequence_length, int) and self.sequence_length >= 1, "sequence_length", "must be >= 1")
        need(isinstance(self.epochs, int) and self.epochs >= 0, "epochs", "must be a non-negative integer")
        need(isinstance(self.batch_size, int) and self.batch_size >= 1, "batch_size", "must be >= 1")
        need(self.learning_rate > 0, "learning_rate", "must be > 0")
        need(self.lr_halvings >= 0, "lr_halvings", "must be >= 0")
        need(self.clip_norm is None or self.clip_norm > 0, "clip_norm", "must be > 0 or null")
        need(isinstance(self.seeds, list) and len(self.seeds) > 0 and all(isinstance(s, int) for s in self.seeds),
             "seeds", "must be a non-empty list of integers")
        need(self.layout in ("default", "camels"), "layout", "must be 'default' or 'camels'")
        need(self.save_every >= 0, "save_every", "must be >= 0")
        need(self.folds >= 2, "folds", "must be >= 2")
        try:
            self.split
        except Exception as exc:
            raise ConfigurationError(f"config field 'train_period'/'validation_period': {exc}") from exc

    @property
    def split(self):
        return PeriodSplit(tuple(self.train_period), tuple(self.validation_period))

    @property
    def uses_static(self):
        return self.variant != "lstm"

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigurationError(f"unknown config field {unknown[0]!r}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    def replace(self, **overrides):
        data = self.to_dict()
        data.update(overrides)
        return TrainingConfig.from_dict(data)


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: config must be a JSON object")
    return TrainingConfig.from_dict(data)
