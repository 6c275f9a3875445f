"""Label-guided audio/text emotion classification over precomputed feature sequences."""

from emofuse.autodiff import Parameter, Tape, Tensor, grad_check
from emofuse.data import Dataset, Sample, SynthConfig, load_dataset, synth_generate
from emofuse.model import Model
from emofuse.train import TrainConfig, evaluate, load_checkpoint, save_checkpoint, train

__all__ = [
    "Dataset",
    "Model",
    "Parameter",
    "Sample",
    "SynthConfig",
    "Tape",
    "Tensor",
    "TrainConfig",
    "evaluate",
    "grad_check",
    "load_checkpoint",
    "load_dataset",
    "save_checkpoint",
    "synth_generate",
    "train",
]
__version__ = "0.1.0"
