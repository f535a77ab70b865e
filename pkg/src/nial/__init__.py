"""Hybrid CNN + self-attention heartbeat classifier on a small numpy autodiff core."""

from .data import Batch, Dataset, batches, load_csv, normalize_minmax, standardize, stratified_split, synth_dataset
from .errors import NialError
from .metrics import ConfusionMatrix, accuracy, confusion, f1
from .model import ModelConfig, NialModel, build, load, save
from .optim import Adam, AdaptiveLR, StaticLR
from .runner import EpochRecord, SynthSpec, TrainConfig, benchmark_lr, evaluate, gen_synth, train
from .tensor import Tensor, backward, grad_check, no_grad

__version__ = "0.1.0"
