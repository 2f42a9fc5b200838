"""Time-domain speech separation with an explicit noise output and a
patch-wise contrastive penalty, built on a small numpy autodiff engine."""

from . import autodiff
from ._kernels import BACKEND
from .contrastive import PCLConfig, pcl_loss, pcl_total
from .errors import ConfigError, ContractError, DegenerateInputError, FormatError, ParameterError
from .evaluation import evaluate, export_spectrogram, sdr, sdri, si_snri
from .objective import si_snr, total_loss, upit_si_snr_loss
from .separator import SeparatorConfig, SeparatorModel, load_checkpoint, separate
from .signals import AudioSignal, DatasetConfig, MixtureItem, make_dataset, mix_at_snr, read_wav, write_wav
from .trainer import TrainConfig, Trainer

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "AudioSignal", "ConfigError", "ContractError", "DatasetConfig", "DegenerateInputError",
    "FormatError", "MixtureItem", "PCLConfig", "ParameterError", "SeparatorConfig", "SeparatorModel",
    "TrainConfig", "Trainer", "autodiff", "evaluate", "export_spectrogram", "load_checkpoint",
    "make_dataset", "mix_at_snr", "pcl_loss", "pcl_total", "read_wav", "sdr", "sdri", "separate",
    "si_snr", "si_snri", "total_loss", "upit_si_snr_loss", "write_wav",
]
