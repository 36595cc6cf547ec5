"""Reduce-on-plateau learning rate and early stopping with best-snapshot restore."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Any, Optional


def _improved(value: float, best: Optional[float], mode: str) -> bool:
    if best is None:
        return True
    return value < best if mode == "min" else value > best


@dataclass
class PlateauState:
    lr: float
    factor: float = 0.5
    patience: int = 3
    min_lr: float = 1e-6
    mode: str = "min"
    best: Optional[float] = None
    counter: int = 0


def lr_plateau_step(state: PlateauState, value: float) -> float:
    """Count non-improving evaluations; after ``patience`` of them scale lr by ``factor``."""
    if state.lr <= 0:
        return state.lr
    if _improved(value, state.best, state.mode):
        state.best = value
        state.counter = 0
        return state.lr
    state.counter += 1
    if state.counter >= state.patience:
        state.lr = max(state.lr * state.factor, state.min_lr)
        state.counter = 0
    return state.lr


@dataclass
class EarlyStopState:
    limit: int
    mode: str = "min"
    best: Optional[float] = None
    best_params: Any = None
    best_step: int = -1
    counter: int = 0


def early_stop_update(state: EarlyStopState, value: float, params, step: int = -1) -> bool:
    """Record ``value``; return True when training should stop.

    ``params`` is snapshotted (deep copy) on improvement, so later updates to
    the live model never leak into the best copy.
    """
    if _improved(value, state.best, state.mode):
        state.best = value
        state.best_params = copy.deepcopy(params)
        state.best_step = step
        state.counter = 0
        return False
    state.counter += 1
    return state.counter >= state.limit
