"""Segmented-heartbeat datasets: CSV I/O, per-beat scaling, splitting, batching, synthetic beats."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import EmptyDatasetError, ParseError, SplitError


@dataclass(frozen=True)
class Dataset:
    signals: np.ndarray  # (B, L)
    labels: np.ndarray  # (B,) int64
    n_classes: int
    class_names: Optional[tuple] = None

    def __post_init__(self):
        signals = np.asarray(self.signals, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if signals.ndim != 2 or signals.shape[0] < 1:
            raise ValueError(f"signals must be a non-empty (B, L) matrix, got {signals.shape}")
        if labels.shape != (signals.shape[0],):
            raise ValueError(f"labels shape {labels.shape} does not match {signals.shape[0]} rows")
        if labels.min() < 0 or labels.max() >= self.n_classes:
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        signals.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "signals", signals)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.signals.shape[0]

    @property
    def length(self) -> int:
        return self.signals.shape[1]

    def subset(self, idx) -> "Dataset":
        return replace(self, signals=self.signals[idx], labels=self.labels[idx])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


@dataclass(frozen=True)
class Batch:
    signals: np.ndarray  # (B', 1, L)
    labels: np.ndarray

    def __len__(self) -> int:
        return self.labels.shape[0]


def load_csv(path, expected_len: Optional[int] = None) -> Dataset:
    """Rows of ``L`` signal values followed by an integer-valued label; no header."""
    rows: list[list[float]] = []
    labels: list[int] = []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, fields in enumerate(csv.reader(fh), start=1):
            if not fields or all(not f.strip() for f in fields):
                continue
            if width is None:
                width = len(fields)
                if width < 2:
                    raise ParseError(f"{path}:{lineno}: need at least one signal value and a label")
                if expected_len is not None and width - 1 != expected_len:
                    raise ParseError(f"{path}:{lineno}: row has {width - 1} samples, expected {expected_len}")
            elif len(fields) != width:
                raise ParseError(f"{path}:{lineno}: row has {len(fields)} fields, expected {width}")
            try:
                values = [float(f) for f in fields]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-numeric field ({exc})") from None
            label = values[-1]
            if not math.isfinite(label) or label != int(label) or label < 0:
                raise ParseError(f"{path}:{lineno}: label {fields[-1].strip()!r} is not a non-negative integer")
            rows.append(values[:-1])
            labels.append(int(label))
    if not rows:
        raise EmptyDatasetError(f"{path}: no data rows")
    labels_arr = np.asarray(labels, dtype=np.int64)
    return Dataset(np.asarray(rows), labels_arr, int(labels_arr.max()) + 1)


def write_csv(ds: Dataset, path) -> None:
    """Inverse of :func:`load_csv`; 17 significant digits so values round-trip exactly."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for row, label in zip(ds.signals, ds.labels):
            fh.write(",".join("%.17g" % v for v in row))
            fh.write(f",{int(label)}\n")


def normalize_minmax(ds: Dataset) -> Dataset:
    """Scale each beat to [0, 1]; constant beats become zeros."""
    x = ds.signals
    lo = x.min(axis=1, keepdims=True)
    span = x.max(axis=1, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (x - lo) / safe, 0.0)
    return replace(ds, signals=np.clip(out, 0.0, 1.0))


def standardize(ds: Dataset) -> Dataset:
    """Per-beat z-score with population std; constant beats become zeros."""
    x = ds.signals
    mu = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    safe = np.where(sd > 0, sd, 1.0)
    return replace(ds, signals=np.where(sd > 0, (x - mu) / safe, 0.0))


def preprocess(ds: Dataset, normalize: bool = True, standardize_rows: bool = False) -> Dataset:
    if normalize:
        ds = normalize_minmax(ds)
    if standardize_rows:
        ds = standardize(ds)
    return ds


def stratified_split(ds: Dataset, train_frac: float, seed: int) -> tuple[Dataset, Dataset]:
    """Per-class seeded split; each class contributes round(frac * n) (clamped to [1, n-1]) to train."""
    if not 0.0 < train_frac < 1.0:
        raise SplitError(f"train_frac must be in (0, 1), got {train_frac}")
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for k, count in enumerate(ds.class_counts()):
        if count == 0:
            continue
        if count < 2:
            raise SplitError(f"class {k} has only {count} sample; need at least 2 to split")
        members = rng.permutation(np.flatnonzero(ds.labels == k))
        n_train = min(max(int(math.floor(train_frac * count + 0.5)), 1), count - 1)
        train_idx.append(members[:n_train])
        val_idx.append(members[n_train:])
    train = rng.permutation(np.concatenate(train_idx))
    val = rng.permutation(np.concatenate(val_idx))
    return ds.subset(train), ds.subset(val)


def batches(ds: Dataset, batch_size: int, shuffle_seed: Optional[int] = None) -> list[Batch]:
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(ds))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(order)
    out = []
    for start in range(0, len(ds), batch_size):
        idx = order[start : start + batch_size]
        out.append(Batch(ds.signals[idx][:, None, :], ds.labels[idx]))
    return out


def synth_dataset(n_per_class: int, length: int, n_classes: int, noise_sigma: float, seed: int) -> Dataset:
    """Synthetic beats: class k is a sinusoid with k+1 cycles plus a Gaussian spike
    whose position and height depend on k, plus white noise.
    """
    if n_classes < 2:
        raise ValueError(f"synthetic data needs n_classes >= 2, got {n_classes}")
    if n_per_class < 1 or length < 2:
        raise ValueError("n_per_class must be >= 1 and length >= 2")
    rng = np.random.default_rng(seed)
    t = np.arange(length) / length
    width = max(length / 40.0, 1.0) / length
    templates = []
    for k in range(n_classes):
        center = (k + 1) / (n_classes + 1)
        spike = (1.0 + 0.5 * k / n_classes) * np.exp(-0.5 * ((t - center) / width) ** 2)
        templates.append(0.5 * np.sin(2 * np.pi * (k + 1) * t) + spike)
    labels = np.repeat(np.arange(n_classes), n_per_class)
    signals = np.stack([templates[k] for k in labels])
    if noise_sigma > 0:
        signals = signals + rng.normal(0.0, noise_sigma, size=signals.shape)
    return Dataset(signals, labels, n_classes)
