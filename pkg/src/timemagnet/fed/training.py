"""Local (client) training and the centralized epoch loop."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import ops
from ..autodiff.optim import AdamW, clip_global_norm, weighted_cross_entropy
from ..autodiff.rng import stream
from ..autodiff.tensor import Tape
from ..data.preprocess import augment_batch, class_weights
from .metrics import evaluate
from .schedule import EarlyStopState, PlateauState, early_stop_update, lr_plateau_step


def total_loss(model, batch: dict, weights, lambda_moe: float):
    """Weighted cross-entropy plus ``lambda_moe`` times the load-balance term."""
    logits, moe = model(batch)
    cls = weighted_cross_entropy(logits, batch["label"], weights)
    if lambda_moe:
        return ops.add(cls, ops.mul(moe, lambda_moe)), cls
    return cls, cls


def make_optimizer(model, cfg, lr: float) -> AdamW:
    return AdamW(model.trainable_parameters(), lr=lr, weight_decay=cfg.weight_decay)


def train_epoch(model, ds, opt: AdamW, rng, cfg, weights) -> float:
    """One shuffled pass. Gradients of ``grad_accum`` micro-batches are averaged per step."""
    model.train(rng)
    params = opt.params
    losses = []
    pending = 0

    def flush():
        grads = [(p.grad if p.grad is not None else np.zeros_like(p.data)) / pending for p in params]
        opt.step(clip_global_norm(grads, cfg.clip_norm))
        for p in params:
            p.grad = None

    for p in params:
        p.grad = None
    for batch in ds.batches(cfg.batch_size, rng):
        batch = augment_batch(batch, cfg.aug_sigma, rng, train=True)
        with Tape() as tape:
            loss, _ = total_loss(model, batch, weights, cfg.lambda_moe)
            tape.backward(loss, params)
        losses.append(loss.item())
        pending += 1
        if pending == cfg.grad_accum:
            flush()
            pending = 0
    if pending:
        flush()
    return float(np.mean(losses)) if losses else float("nan")


@dataclass
class TrainStats:
    epoch_losses: list = field(default_factory=list)
    n_windows: int = 0

    @property
    def loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else float("nan")


def local_train(model, ds, cfg, rng, epochs: int, lr: float, weights=None) -> TrainStats:
    """``epochs`` passes over ``ds`` with a freshly initialised optimizer."""
    if len(ds) == 0:
        raise ValueError("local_train: client dataset is empty")
    if weights is None:
        weights = class_weights(ds.labels, cfg.n_classes)
    opt = make_optimizer(model, cfg, lr)
    stats = TrainStats(n_windows=len(ds))
    for _ in range(epochs):
        stats.epoch_losses.append(train_epoch(model, ds, opt, rng, cfg, weights))
    return stats


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    val_f1: float
    lr: float
    patience: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class RunLogger:
    """Deterministic records go to logs.jsonl; wall-clock times go to timing.jsonl."""

    def __init__(self, run_dir=None):
        self.run_dir = None if run_dir is None else Path(run_dir)
        self.records = []
        if self.run_dir is not None:
            run_dir = self.run_dir
            run_dir.mkdir(parents=True, exist_ok=True)
            (run_dir / "logs.jsonl").write_text("")
            (run_dir / "timing.jsonl").write_text("")

    def log(self, rec, wall: float) -> None:
        self.records.append(rec)
        if self.run_dir is None:
            return
        with (self.run_dir / "logs.jsonl").open("a") as fh:
            fh.write(rec.to_json() + "\n")
        with (self.run_dir / "timing.jsonl").open("a") as fh:
            fh.write(json.dumps({"step": len(self.records) - 1, "wall_s": wall}) + "\n")


def _monitor(report, kind: str) -> tuple[float, str]:
    return (report.loss, "min") if kind == "loss" else (report.accuracy, "max")


@dataclass
class RunResult:
    model: object
    logs: list
    best_step: int
    history: list = field(default_factory=list)  # parameter snapshots per segment/round when requested


def run_centralized(cfg, data, model, run_dir=None, snapshot_every_segment: bool = False) -> RunResult:
    """Epoch loop over the pooled training split.

    Training runs in segments of ``reset_optimizer_every`` epochs (the whole
    run when 0). Each segment starts a fresh optimizer and the RNG stream
    ``(seed, segment, 0)``, which is what makes a one-client federated run
    reproduce this loop exactly. Validation after every epoch drives the
    plateau scheduler (on loss) and early stopping (on ``centralized_monitor``).
    """
    train = data.train
    weights = class_weights(train.labels, cfg.n_classes)
    seg_len = cfg.reset_optimizer_every or max(cfg.epochs, 1)
    plateau = PlateauState(cfg.lr, cfg.lr_factor, cfg.lr_patience, cfg.lr_min)
    value_kind = cfg.centralized_monitor
    stopper = EarlyStopState(cfg.early_stop_patience, mode="min" if value_kind == "loss" else "max")
    logger = RunLogger(run_dir)
    history = []
    opt = rng = None
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        if epoch % seg_len == 0:
            seg = epoch // seg_len
            rng = stream(cfg.seed, seg, 0)
            opt = make_optimizer(model, cfg, plateau.lr)
        opt.lr = plateau.lr
        loss = train_epoch(model, train, opt, rng, cfg, weights)
        rep = evaluate(model, data.val, cfg.n_classes, weights)
        if cfg.use_plateau:
            lr_plateau_step(plateau, rep.loss)
        value, _ = _monitor(rep, value_kind)
        stop = early_stop_update(stopper, value, model.state_dict(), epoch)
        if snapshot_every_segment and (epoch + 1) % seg_len == 0:
            history.append(model.state_dict())
        logger.log(EpochLog(epoch, loss, rep.loss, rep.accuracy, rep.macro_f1, opt.lr, stopper.counter),
                   time.perf_counter() - t0)
        if stop:
            break
    if stopper.best_params is not None:
        model.load_state_dict(stopper.best_params)
    return RunResult(model, logger.records, stopper.best_step, history)
