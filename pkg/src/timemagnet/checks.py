"""Finite-difference gradient suite over every differentiable block."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.gradcheck import grad_check_params
from .autodiff.rng import stream
from .autodiff.tensor import Tensor
from .config import resolve
from .encoders import LoraLinear
from .fusion import Classifier, FusionPool, GraphAttention, MixtureOfExperts, build_model, final_adjacency
from .fusion.magnet import dynamic_adjacency
from .nn import BatchNorm2d, Conv2d, Linear, MultiHeadAttention, RecurrentCell, RMSNorm, SwiGLU


@dataclass
class CheckResult:
    name: str
    error: float
    seconds: float
    passed: bool


def _probe(rng, shape):
    return rng.normal(size=shape)


def _scalar(out: Tensor, probe: np.ndarray) -> Tensor:
    # a random linear functional exercises every output coordinate
    return ops.sum(ops.mul(out, probe))


def _case(rng, module, inputs, call, max_coords=None):
    """(f, params) for a module applied to random inputs."""
    xs = [Tensor(x) for x in inputs]
    out_shape = call(module, *xs).shape
    probe = _probe(rng, out_shape)
    params = list(module.trainable_parameters()) + xs
    return (lambda: _scalar(call(module, *xs), probe)), params, max_coords


def _cases(seed: int) -> dict:
    rng = stream(seed, "gradcheck")
    r = np.random.default_rng(seed)
    cases = {}

    cases["linear"] = lambda: _case(r, Linear(5, 4, rng), [r.normal(size=(3, 5))], lambda m, x: m(x))
    cases["conv2d"] = lambda: _case(r, Conv2d(2, 3, rng), [r.normal(size=(2, 2, 5, 4))], lambda m, x: m(x))

    def bn():
        m = BatchNorm2d(3)
        m.gamma.data[:] = r.uniform(0.5, 1.5, 3)
        m.beta.data[:] = r.normal(size=3)
        m.train()
        return _case(r, m, [r.normal(size=(4, 3, 3, 3))], lambda m, x: m(x))

    cases["batchnorm2d_train"] = bn

    def rms():
        m = RMSNorm(6)
        m.gain.data[:] = r.uniform(0.5, 1.5, 6)
        return _case(r, m, [r.normal(size=(3, 6))], lambda m, x: m(x))

    cases["rmsnorm"] = rms

    def attn():
        m = MultiHeadAttention(8, 2, 4, rng, rel_bias=True)
        m.eval()
        return _case(r, m, [r.normal(size=(2, 5, 8))], lambda m, x: m(x))

    cases["attention_rel_bias"] = attn

    def lora():
        m = LoraLinear(6, 5, 2, 4.0, rng)
        m.b.data[:] = r.normal(size=m.b.shape)  # zero init would leave dA identically zero
        return _case(r, m, [r.normal(size=(3, 6))], lambda m, x: m(x))

    cases["lora_projection"] = lora
    for kind in ("lstm", "rnn", "gru"):
        cases[f"{kind}_cell"] = (lambda k: lambda: _case(r, RecurrentCell(k, 3, 4, rng), [r.normal(size=(2, 5, 3))],
                                                         lambda m, x: m(x)))(kind)
    cases["swiglu"] = lambda: _case(r, SwiGLU(4, 8, rng), [r.normal(size=(3, 4))], lambda m, x: m(x))

    def gat():
        m = GraphAttention(8, 2, rng)
        h = r.normal(size=(2, 4, 8))
        a = final_adjacency(dynamic_adjacency(Tensor(h)), Tensor(r.normal(size=(4, 4)))).final.data
        return _case(r, m, [h, a], lambda m, x, a: m(x, a))

    cases["gat"] = gat
    cases["moe"] = lambda: _case(r, MixtureOfExperts(6, 4, 2, rng), [r.normal(size=(5, 6))], lambda m, x: m(x)[0])
    cases["fusion_pool"] = lambda: _case(r, FusionPool(6, rng), [r.normal(size=(3, 4, 6))], lambda m, x: m(x))

    def clf():
        m = Classifier(8, 7, rng, dropout=0.1)
        m.eval()
        return _case(r, m, [r.normal(size=(3, 8))], lambda m, x: m(x))

    cases["classifier"] = clf

    def full():
        cfg = resolve("desk", dict(ts_dim=8, ts_heads=2, ts_head_dim=4, ts_ff_dim=8, ts_layers=1, lora_rank=2,
                                   dart_channels=[2, 4], dart_reduction=2, dart_emb=4, dart_hidden=2,
                                   fusion_dim=8, fusion_blocks=1, image_rate=8.0, window_s=0.5, stride_s=0.25))
        m = build_model(cfg, seed)
        for _, p in m.named_parameters():
            if p.data.any() or p.frozen:
                continue
            p.data[:] = r.normal(scale=0.1, size=p.shape)  # leave no exact-zero blocks (LoRA B, W_adj)
        m.eval()
        b = 2
        batch = {"act": r.normal(size=(b, cfg.accel_frames, 3)), "acw": r.normal(size=(b, cfg.accel_frames, 3)),
                 "dc": r.normal(size=(b, cfg.image_frames, *cfg.dc_grid)),
                 "pm": r.normal(size=(b, cfg.image_frames, *cfg.pm_grid))}
        probe = _probe(r, (b, cfg.n_classes))

        def f():
            logits, moe = m(batch)
            return ops.add(_scalar(logits, probe), moe)

        return f, m.trainable_parameters(), 3

    cases["full_model"] = full
    return cases


def gradcheck_suite(seed: int = 0, tol: float = 1e-4, h: float = 1e-5, only=None) -> list[CheckResult]:
    results = []
    for name, make in _cases(seed).items():
        if only and name not in only:
            continue
        t0 = time.perf_counter()
        f, params, max_coords = make()
        err = grad_check_params(f, params, h=h, max_coords=max_coords, rng=np.random.default_rng(seed))
        results.append(CheckResult(name, err, time.perf_counter() - t0, err < tol))
    return results
