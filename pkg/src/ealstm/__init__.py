"""Entity-aware LSTM for multi-basin rainfall-runoff regression."""
__version__ = "0.1.0"

from .cells import (CellParameters, ealstm_forward, init_parameters, load_checkpoint, lstm_forward,
                    save_checkpoint)
from .config import TrainingConfig
from .data import BasinDataset, PeriodSplit, standardize, synth_basins
from .training import LossSpec, ensemble_predict, loss_value, train

__all__ = [
    "BasinDataset", "CellParameters", "LossSpec", "PeriodSplit", "TrainingConfig",
    "ealstm_forward", "ensemble_predict", "init_parameters", "load_checkpoint", "loss_value",
    "lstm_forward", "save_checkpoint", "standardize", "synth_basins", "train",
]
