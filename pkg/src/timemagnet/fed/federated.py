"""Single-process federated simulation: sample, broadcast, train locally, average, validate."""

from __future__ import annotations

import copy
import json
import math
import os
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..autodiff.rng import stream
from ..data.preprocess import class_weights
from .metrics import evaluate
from .schedule import EarlyStopState, PlateauState, early_stop_update, lr_plateau_step
from .training import RunLogger, RunResult, _monitor, local_train


class AggregationError(ValueError):
    pass


def n_sampled(k: int, rho: float) -> int:
    if k < 1:
        raise ValueError(f"need at least one client, got K={k}")
    if not 0 < rho <= 1:
        raise ValueError(f"sample ratio must satisfy 0 < rho <= 1, got {rho}")
    # the epsilon keeps e.g. 0.43 * 100 from flooring to 42 through representation error
    return int(math.floor(k * rho + 1e-9))


def sample_clients(k: int, rho: float, rng) -> list:
    """``floor(k * rho)`` distinct client ids drawn uniformly without replacement."""
    n = n_sampled(k, rho)
    if n == 0:
        raise ValueError(f"floor(K*rho) = 0 clients for K={k}, rho={rho}; raise sample_ratio")
    return sorted(int(i) for i in rng.choice(k, size=n, replace=False))


def fedavg_aggregate(states, weights=None) -> OrderedDict:
    """Mean of parameter maps, accumulated in the given order.

    ``weights`` switches to a weighted mean (e.g. client dataset sizes).
    """
    states = list(states)
    if not states:
        raise AggregationError("no client states to aggregate")
    ref = states[0]
    for i, s in enumerate(states[1:], start=1):
        if list(s) != list(ref):
            diff = sorted(set(s) ^ set(ref)) or [n for n, m in zip(s, ref) if n != m]
            raise AggregationError(f"client {i} parameter names differ from client 0 at {diff[0]!r}")
        for name in ref:
            if np.shape(s[name]) != np.shape(ref[name]):
                raise AggregationError(f"client {i} parameter {name!r} has shape {np.shape(s[name])}, "
                                       f"expected {np.shape(ref[name])}")
    out = OrderedDict()
    if weights is None:
        n = len(states)
        for name in ref:
            acc = np.array(states[0][name], dtype=np.float64, copy=True)
            for s in states[1:]:
                acc += s[name]
            out[name] = acc / n
        return out
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(states),) or w.sum() <= 0:
        raise AggregationError("aggregation weights must be one positive number per client")
    for name in ref:
        acc = np.zeros_like(np.asarray(states[0][name], dtype=np.float64))
        for wi, s in zip(w, states):
            acc += wi * s[name]
        out[name] = acc / w.sum()
    return out


@dataclass
class RoundLog:
    round: int
    sampled: list
    client_loss: dict
    val_loss: float
    val_accuracy: float
    val_f1: float
    lr: float
    patience: int
    wall_time: float = field(default=0.0, compare=False)

    def to_json(self) -> str:
        # wall time lives in timing.jsonl so that logs.jsonl is reproducible byte for byte
        d = asdict(self)
        d.pop("wall_time")
        return json.dumps(d, sort_keys=True)


def worker_count(cfg) -> int:
    n = max(int(cfg.threads), 1)
    env = os.environ.get("MAGNET_THREADS")
    if env:
        try:
            n = min(n, max(int(env), 1))
        except ValueError:
            raise ValueError(f"MAGNET_THREADS must be an integer, got {env!r}") from None
    return n


def _client_lr(cfg, cid: int, pid: str) -> float:
    mult = cfg.client_lr_multipliers
    return cfg.lr * float(mult.get(pid, mult.get(str(cid), 1.0)))


def run_federated(cfg, data, model, run_dir=None, snapshot_every_round: bool = False) -> RunResult:
    """Rounds of sample -> broadcast -> local_train -> aggregate -> validate.

    Client ``i`` is the ``i``-th training participant in sorted order. Its
    RNG stream is ``(seed, round, i)``, and aggregation runs in ascending id
    order, so the result does not depend on the thread count.
    """
    clients = data.train.by_participant()
    pids = sorted(clients)
    k = len(pids)
    if k == 0:
        raise ValueError("run_federated: no training clients")
    logger = RunLogger(run_dir)
    plateau = PlateauState(cfg.lr, cfg.lr_factor, cfg.lr_patience, cfg.lr_min)
    stopper = EarlyStopState(cfg.fed_patience, mode="min" if cfg.fed_monitor == "loss" else "max")
    global_weights = class_weights(data.train.labels, cfg.n_classes)
    history = []
    workers = worker_count(cfg)

    def train_client(r, cid, global_state, lr_scale):
        local = copy.deepcopy(model)
        local.load_state_dict(global_state)
        pid = pids[cid]
        ds = clients[pid]
        stats = local_train(local, ds, cfg, stream(cfg.seed, r, cid), cfg.local_epochs,
                            _client_lr(cfg, cid, pid) * lr_scale, class_weights(ds.labels, cfg.n_classes))
        return local.state_dict(), stats, len(ds)

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for r in range(cfg.rounds):
            t0 = time.perf_counter()
            sampled = sample_clients(k, cfg.sample_ratio, stream(cfg.seed, "sample", r))
            global_state = model.state_dict()
            lr_scale = plateau.lr / cfg.lr if cfg.lr > 0 else 0.0
            if pool is None:
                results = [train_client(r, c, global_state, lr_scale) for c in sampled]
            else:
                futures = [pool.submit(train_client, r, c, global_state, lr_scale) for c in sampled]
                results = [f.result() for f in futures]
            weights = [n for _, _, n in results] if cfg.weighted_aggregation else None
            model.load_state_dict(fedavg_aggregate([s for s, _, _ in results], weights))
            rep = evaluate(model, data.val, cfg.n_classes, global_weights)
            if cfg.use_plateau:
                lr_plateau_step(plateau, rep.loss)
            value, _ = _monitor(rep, cfg.fed_monitor)
            stop = early_stop_update(stopper, value, model.state_dict(), r)
            if snapshot_every_round:
                history.append(model.state_dict())
            wall = time.perf_counter() - t0
            rec = RoundLog(r, sampled, {str(c): st.loss for c, (_, st, _) in zip(sampled, results)},
                           rep.loss, rep.accuracy, rep.macro_f1, plateau.lr, stopper.counter, wall)
            logger.log(rec, wall)
            if stop:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    if stopper.best_params is not None:
        model.load_state_dict(stopper.best_params)
    return RunResult(model, logger.records, stopper.best_step, history)
