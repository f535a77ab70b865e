"""Adam, learning-rate schedulers driven by validation loss, and early stopping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .errors import ContractError, TrainingDivergenceError
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, Optional[np.ndarray]], state: AdamState) -> None:
    """One bias-corrected Adam update, in place on the arrays in ``params``."""
    for name in params:
        if grads.get(name) is None:
            raise ContractError(f"no gradient for parameter {name!r}")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, theta in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        theta -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


class Adam:
    """Adam over named parameter tensors, reading their ``.grad`` buffers."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def step(self) -> None:
        adam_step(
            {k: p.data for k, p in self.params.items()},
            {k: p.grad for k, p in self.params.items()},
            self.state,
        )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def _check_loss(val_loss: float) -> float:
    val_loss = float(val_loss)
    if not math.isfinite(val_loss):
        raise TrainingDivergenceError(f"validation loss is {val_loss}")
    return val_loss


@dataclass
class SchedulerState:
    current_lr: float
    patience: int = 3
    factor: float = 0.5
    min_lr: float = 1e-6
    min_delta: float = 1e-4
    best_val_loss: float = math.inf
    epochs_since_improvement: int = 0


def scheduler_on_epoch_end(state: SchedulerState, val_loss: float) -> float:
    """Reduce-on-plateau: cut the lr by ``factor`` once the counter exceeds ``patience``."""
    val_loss = _check_loss(val_loss)
    if val_loss < state.best_val_loss - state.min_delta:
        state.best_val_loss = val_loss
        state.epochs_since_improvement = 0
    else:
        state.epochs_since_improvement += 1
    if state.epochs_since_improvement > state.patience:
        state.current_lr = max(state.current_lr * state.factor, state.min_lr)
        state.epochs_since_improvement = 0
    return state.current_lr


class AdaptiveLR:
    kind = "adaptive"

    def __init__(self, lr: float, patience: int = 3, factor: float = 0.5,
                 min_lr: float = 1e-6, min_delta: float = 1e-4):
        if not 0.0 < factor < 1.0:
            raise ValueError(f"factor must be in (0, 1), got {factor}")
        self.state = SchedulerState(current_lr=max(lr, min_lr), patience=patience, factor=factor,
                                    min_lr=min_lr, min_delta=min_delta)

    @property
    def lr(self) -> float:
        return self.state.current_lr

    def on_epoch_end(self, val_loss: float) -> float:
        return scheduler_on_epoch_end(self.state, val_loss)


class StaticLR:
    """Baseline schedule: the initial lr forever."""

    kind = "static"

    def __init__(self, lr: float, **_ignored):
        self.initial_lr = lr

    @property
    def lr(self) -> float:
        return self.initial_lr

    def on_epoch_end(self, val_loss: float) -> float:
        _check_loss(val_loss)
        return self.initial_lr


def static_lr(state: StaticLR, val_loss: float) -> float:
    return state.on_epoch_end(val_loss)


def make_scheduler(kind: str, lr: float, **params):
    if kind == "adaptive":
        return AdaptiveLR(lr, **params)
    if kind == "static":
        return StaticLR(lr)
    raise ValueError(f"unknown scheduler kind {kind!r} (expected 'adaptive' or 'static')")


@dataclass
class EarlyStopState:
    stop_patience: int = 10
    min_delta: float = 1e-4
    best_val_loss: float = math.inf
    epochs_since_improvement: int = 0


def early_stop_on_epoch_end(state: EarlyStopState, val_loss: float) -> bool:
    val_loss = _check_loss(val_loss)
    if val_loss < state.best_val_loss - state.min_delta:
        state.best_val_loss = val_loss
        state.epochs_since_improvement = 0
    else:
        state.epochs_since_improvement += 1
    return state.epochs_since_improvement > state.stop_patience
