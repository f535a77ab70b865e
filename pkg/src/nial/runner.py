"""Experiment orchestration: config handling, training loop, evaluation and the LR benchmark."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import data as D
from . import model as M
from . import tensor as T
from .errors import ConfigError, TrainingDivergenceError
from .metrics import ConfusionMatrix, accuracy, confusion, f1
from .optim import Adam, EarlyStopState, early_stop_on_epoch_end, make_scheduler

log = logging.getLogger(__name__)

LOG_HEADER = ("epoch", "train_loss", "val_loss", "val_accuracy", "val_f1", "lr", "elapsed_ms")
EVAL_BATCH = 256


@dataclass(frozen=True)
class SynthSpec:
    classes: int = 4
    per_class: int = 100
    length: int = 64
    noise: float = 0.05
    seed: int = 0


@dataclass
class TrainConfig:
    seed: int
    # input_len / n_classes of 0 are filled in from the training data
    model: M.ModelConfig = field(default_factory=lambda: replace(M.ModelConfig(), input_len=0, n_classes=0))
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    synth: Optional[SynthSpec] = None
    normalize: bool = True
    standardize: bool = False
    val_frac: float = 0.1
    test_frac: float = 0.1
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    scheduler: str = "adaptive"
    sched_factor: float = 0.5
    sched_patience: int = 3
    sched_min_delta: float = 1e-4
    sched_min_lr: float = 1e-6
    early_stop: bool = True
    stop_patience: int = 10
    stop_min_delta: float = 1e-4
    out_dir: Optional[str] = None
    log_wall_time: bool = False


@dataclass(frozen=True)
class EpochRecord:
    """One log row. ``lr`` is the rate used for this epoch's updates."""

    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    val_f1: float
    lr: float
    elapsed_ms: float

    def csv_row(self, wall_time: bool = True) -> list[str]:
        elapsed = repr(self.elapsed_ms) if wall_time else "0"
        return [str(self.epoch), repr(self.train_loss), repr(self.val_loss),
                repr(self.val_accuracy), repr(self.val_f1), repr(self.lr), elapsed]


@dataclass(frozen=True)
class EvalReport:
    loss: float
    accuracy: float
    f1: float
    f1_mode: str
    confusion: ConfusionMatrix

    def to_dict(self) -> dict:
        return {
            "loss": self.loss,
            "accuracy": self.accuracy,
            "f1": self.f1,
            "f1_mode": self.f1_mode,
            "f1_zero_division": 0.0,
            "confusion": self.confusion.to_list(),
        }


@dataclass
class TrainResult:
    model: M.NialModel
    best_state: dict
    best_val_loss: float
    records: list
    initial_digest: str
    train_set: D.Dataset
    val_set: D.Dataset
    test_set: Optional[D.Dataset] = None
    test_report: Optional[EvalReport] = None
    paths: dict = field(default_factory=dict)

    def best_model(self) -> M.NialModel:
        best = M.from_checkpoint_bytes(M.checkpoint_bytes(self.model))
        best.load_state_dict(self.best_state)
        return best


# ---------------------------------------------------------------------------
# config file
# ---------------------------------------------------------------------------

_KEYS = {
    "data.train": ("train_path", str),
    "data.test": ("test_path", str),
    "data.normalize": ("normalize", "bool"),
    "data.standardize": ("standardize", "bool"),
    "data.val_frac": ("val_frac", float),
    "data.test_frac": ("test_frac", float),
    "train.seed": ("seed", int),
    "train.epochs": ("epochs", int),
    "train.batch_size": ("batch_size", int),
    "train.lr": ("lr", float),
    "scheduler.kind": ("scheduler", str),
    "scheduler.factor": ("sched_factor", float),
    "scheduler.patience": ("sched_patience", int),
    "scheduler.min_delta": ("sched_min_delta", float),
    "scheduler.min_lr": ("sched_min_lr", float),
    "early_stop.enabled": ("early_stop", "bool"),
    "early_stop.patience": ("stop_patience", int),
    "early_stop.min_delta": ("stop_min_delta", float),
    "output.dir": ("out_dir", str),
    "output.log_wall_time": ("log_wall_time", "bool"),
}
_SYNTH_KEYS = {f.name: f.type for f in dataclasses.fields(SynthSpec)}


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def parse_kv_lines(lines: Sequence[str], source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        key, sep, value = text.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line.strip()!r}")
        out[key.strip()] = value.strip()
    return out


def config_from_dict(values: dict[str, str]) -> TrainConfig:
    """Build a TrainConfig from flat dotted keys."""
    kwargs: dict = {}
    model_values: dict[str, str] = {}
    synth_values: dict = {}
    for key, raw in values.items():
        try:
            if key in _KEYS:
                attr, kind = _KEYS[key]
                if kind == "bool":
                    kwargs[attr] = _parse_bool(raw)
                elif kind is str:
                    kwargs[attr] = raw or None
                else:
                    kwargs[attr] = kind(raw)
            elif key.startswith("model."):
                name = key[len("model."):]
                model_values[name] = "0" if raw.strip().lower() == "auto" else raw
            elif key.startswith("data.synth."):
                name = key[len("data.synth."):]
                if name not in _SYNTH_KEYS:
                    raise ConfigError(f"unknown config key {key!r}")
                synth_values[name] = float(raw) if name == "noise" else int(raw)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key}: {exc}") from None
    if "seed" not in kwargs:
        raise ConfigError("train.seed is required (no implicit wall-clock seeding)")
    base = TrainConfig(seed=kwargs["seed"]).model
    try:
        kwargs["model"] = _merge_model(base, model_values)
    except ValueError as exc:
        raise ConfigError(f"bad model config: {exc}") from None
    if synth_values:
        kwargs["synth"] = SynthSpec(**synth_values)
    return TrainConfig(**kwargs)


def _merge_model(base: M.ModelConfig, values: dict[str, str]) -> M.ModelConfig:
    merged = base.to_dict()
    merged.update(values)
    return M.ModelConfig.from_dict(merged)


def load_config(path=None, overrides: Sequence[str] = ()) -> TrainConfig:
    """Defaults < config file < ``key=value`` overrides."""
    values: dict[str, str] = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                values.update(parse_kv_lines(fh.read().splitlines(), str(path)))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    values.update(parse_kv_lines(list(overrides), "--set"))
    return config_from_dict(values)


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------


def _load(path: str, expected_len: Optional[int]) -> D.Dataset:
    if not os.path.exists(path):
        raise ConfigError(f"data file not found: {path}")
    return D.load_csv(path, expected_len or None)


def prepare_data(config: TrainConfig) -> tuple[D.Dataset, D.Dataset, Optional[D.Dataset]]:
    """Load or synthesize, scale per beat, and split into (train, val, test)."""
    if config.train_path:
        source = _load(config.train_path, config.model.input_len)
    elif config.synth is not None:
        s = config.synth
        source = D.synth_dataset(s.per_class, s.length, s.classes, s.noise, s.seed)
    else:
        raise ConfigError("no training data: set data.train or data.synth.*")
    prep = dict(normalize=config.normalize, standardize_rows=config.standardize)
    source = D.preprocess(source, **prep)

    test = None
    if config.test_path:
        test = D.preprocess(_load(config.test_path, source.length), **prep)
    elif config.test_frac > 0:
        source, test = D.stratified_split(source, 1.0 - config.test_frac, config.seed)
    val_share = config.val_frac / (1.0 - (0.0 if config.test_path else config.test_frac))
    train, val = D.stratified_split(source, 1.0 - val_share, config.seed + 1)
    return train, val, test


def resolve_model_config(config: TrainConfig, train: D.Dataset) -> M.ModelConfig:
    cfg = config.model
    if cfg.input_len == 0:
        cfg = replace(cfg, input_len=train.length)
    if cfg.n_classes == 0:
        cfg = replace(cfg, n_classes=1 if train.n_classes == 2 else train.n_classes)
    if cfg.input_len != train.length:
        raise ConfigError(f"model.input_len={cfg.input_len} but data rows have {train.length} samples")
    return cfg


def _metric_classes(cfg: M.ModelConfig) -> int:
    return 2 if cfg.is_binary else cfg.n_classes


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def _validate(model: M.NialModel, ds: D.Dataset) -> EvalReport:
    """Eval-mode pass over ``ds`` in fixed order."""
    was_training = model.training
    model.eval()
    total = 0.0
    preds = []
    try:
        with T.no_grad():
            for batch in D.batches(ds, EVAL_BATCH):
                logits = model(batch.signals)
                total += model.loss(logits, batch.labels).item() * len(batch)
                preds.append(M.predictions_from_logits(logits.data))
    finally:
        model.training = was_training
    cm = confusion(np.concatenate(preds), ds.labels, _metric_classes(model.config))
    mode = "binary" if model.config.is_binary else "macro"
    return EvalReport(total / len(ds), accuracy(cm), f1(cm, mode), mode, cm)


def evaluate(checkpoint, dataset: D.Dataset, normalize: bool = True, standardize: bool = False) -> EvalReport:
    """Metrics of a saved (path) or in-memory model on ``dataset``."""
    model = checkpoint if isinstance(checkpoint, M.NialModel) else M.load(checkpoint)
    cfg = model.config
    if dataset.length != cfg.input_len:
        raise ConfigError(f"checkpoint expects input_len={cfg.input_len}, dataset rows have {dataset.length}")
    k = _metric_classes(cfg)
    if int(dataset.labels.max()) >= k:
        raise ConfigError(f"dataset has label {int(dataset.labels.max())} but checkpoint predicts {k} classes")
    dataset = D.preprocess(dataset, normalize=normalize, standardize_rows=standardize)
    return _validate(model, dataset)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def state_digest(model: M.NialModel) -> str:
    return hashlib.sha256(M.checkpoint_bytes(model)).hexdigest()


class EpochLog:
    """CSV log flushed after every row, so an interrupted run keeps its history."""

    def __init__(self, path, wall_time: bool):
        self.path = Path(path)
        self.wall_time = wall_time
        self._fh = open(self.path, "w", encoding="utf-8", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(LOG_HEADER)
        self._fh.flush()

    def write(self, record: EpochRecord) -> None:
        self._writer.writerow(record.csv_row(self.wall_time))
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def train(config: TrainConfig) -> TrainResult:
    train_set, val_set, test_set = prepare_data(config)
    model_cfg = resolve_model_config(config, train_set)
    for name, ds in (("validation", val_set), ("test", test_set)):
        if ds is not None and int(ds.labels.max()) >= _metric_classes(model_cfg):
            raise ConfigError(f"{name} labels exceed the model's {model_cfg.n_classes} classes")
    model = M.build(model_cfg, config.seed)
    return fit(model, train_set, val_set, config, test_set)


def fit(model: M.NialModel, train_set: D.Dataset, val_set: D.Dataset, config: TrainConfig,
        test_set: Optional[D.Dataset] = None) -> TrainResult:
    """The epoch loop. Optimizer steps only ever see ``train_set``."""
    out_dir = Path(config.out_dir) if config.out_dir else None
    paths = {}
    epoch_log = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"log": out_dir / "log.csv", "best": out_dir / "best.ckpt", "final": out_dir / "final.ckpt"}
        epoch_log = EpochLog(paths["log"], config.log_wall_time)

    initial_digest = state_digest(model)
    opt = Adam(model.params, lr=config.lr)
    sched = make_scheduler(config.scheduler, config.lr, factor=config.sched_factor, patience=config.sched_patience,
                           min_lr=config.sched_min_lr, min_delta=config.sched_min_delta)
    opt.lr = sched.lr
    stopper = EarlyStopState(config.stop_patience, config.stop_min_delta) if config.early_stop else None

    records: list[EpochRecord] = []
    best_val = math.inf
    best_state = model.state_dict()
    try:
        for epoch in range(1, config.epochs + 1):
            start = time.perf_counter()
            model.train()
            total = 0.0
            for bi, batch in enumerate(D.batches(train_set, config.batch_size, shuffle_seed=[config.seed, epoch])):
                model.zero_grad()
                loss = model.loss(model(batch.signals), batch.labels)
                if not math.isfinite(loss.item()):
                    raise TrainingDivergenceError(f"loss is {loss.item()} at epoch {epoch}, batch {bi}")
                T.backward(loss)
                opt.step()
                total += loss.item() * len(batch)
            report = _validate(model, val_set)
            used_lr = opt.lr
            try:
                opt.lr = sched.on_epoch_end(report.loss)
            except TrainingDivergenceError as exc:
                raise TrainingDivergenceError(f"epoch {epoch}: {exc}") from None
            record = EpochRecord(epoch, total / len(train_set), report.loss, report.accuracy, report.f1,
                                 used_lr, (time.perf_counter() - start) * 1000.0)
            records.append(record)
            log.debug("epoch %d train %.5f val %.5f acc %.4f lr %.2e", epoch, record.train_loss,
                      record.val_loss, record.val_accuracy, used_lr)
            if epoch_log is not None:
                epoch_log.write(record)
            if report.loss < best_val:
                best_val = report.loss
                best_state = model.state_dict()
                if out_dir is not None:
                    M.save(model, paths["best"])
            if stopper is not None and early_stop_on_epoch_end(stopper, report.loss):
                log.info("early stop after epoch %d", epoch)
                break
    finally:
        if epoch_log is not None:
            epoch_log.close()

    if out_dir is not None:
        M.save(model, paths["final"])
        if not records:
            M.save(model, paths["best"])
    result = TrainResult(model, best_state, best_val, records, initial_digest, train_set, val_set, test_set,
                         paths={k: str(v) for k, v in paths.items()})
    if test_set is not None:
        result.test_report = _validate(result.best_model(), test_set)
    return result


# ---------------------------------------------------------------------------
# LR benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunSummary:
    kind: str
    epochs_to_threshold: Optional[int]  # None: not reached
    epochs_run: int
    wall_time_s: float
    final_val_loss: float
    final_val_accuracy: float
    final_val_f1: float
    lr_trajectory: tuple
    initial_digest: str

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["lr_trajectory"] = list(self.lr_trajectory)
        out["epochs_to_threshold"] = self.epochs_to_threshold if self.epochs_to_threshold is not None else "not reached"
        return out


@dataclass(frozen=True)
class LRBenchmark:
    loss_threshold: float
    adaptive: RunSummary
    static: RunSummary

    @property
    def same_initialization(self) -> bool:
        return self.adaptive.initial_digest == self.static.initial_digest

    @property
    def epoch_ratio(self) -> Optional[float]:
        """Adaptive epochs-to-threshold over static; None unless both reached it."""
        a, s = self.adaptive.epochs_to_threshold, self.static.epochs_to_threshold
        if a is None or s is None:
            return None
        return a / s

    def to_dict(self) -> dict:
        return {
            "loss_threshold": self.loss_threshold,
            "same_initialization": self.same_initialization,
            "epoch_ratio": self.epoch_ratio,
            "adaptive": self.adaptive.to_dict(),
            "static": self.static.to_dict(),
        }


def epochs_to_threshold(records: Sequence[EpochRecord], threshold: float) -> Optional[int]:
    for r in records:
        if r.val_loss <= threshold:
            return r.epoch
    return None


def benchmark_lr(config: TrainConfig, loss_threshold: float) -> LRBenchmark:
    """Train twice from the same seed, adaptive vs static lr, and compare epochs to ``loss_threshold``."""
    if not math.isfinite(loss_threshold) or loss_threshold <= 0:
        raise ConfigError(f"loss threshold must be a positive number, got {loss_threshold}")
    summaries = {}
    for kind in ("adaptive", "static"):
        out_dir = os.path.join(config.out_dir, kind) if config.out_dir else None
        start = time.perf_counter()
        result = train(replace(config, scheduler=kind, out_dir=out_dir))
        wall = time.perf_counter() - start
        last = result.records[-1] if result.records else None
        summaries[kind] = RunSummary(
            kind=kind,
            epochs_to_threshold=epochs_to_threshold(result.records, loss_threshold),
            epochs_run=len(result.records),
            wall_time_s=wall,
            final_val_loss=last.val_loss if last else math.nan,
            final_val_accuracy=last.val_accuracy if last else math.nan,
            final_val_f1=last.val_f1 if last else math.nan,
            lr_trajectory=tuple(r.lr for r in result.records),
            initial_digest=result.initial_digest,
        )
    return LRBenchmark(loss_threshold, summaries["adaptive"], summaries["static"])


def gen_synth(spec: SynthSpec, out_path) -> D.Dataset:
    """Write a synthetic dataset in the ingestion CSV layout."""
    if spec.classes < 2:
        raise ConfigError(f"synthetic generator needs at least 2 classes, got {spec.classes}")
    ds = D.synth_dataset(spec.per_class, spec.length, spec.classes, spec.noise, spec.seed)
    D.write_csv(ds, out_path)
    return ds
