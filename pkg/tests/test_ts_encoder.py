import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from timemagnet.autodiff import AdamW, ShapeError, Tape, Tensor, grad_check_params, ops, stream
from timemagnet.encoders import (
    EncoderConfig,
    LoraLinear,
    TSEncoder,
    lora_projection_counts,
    patchify,
    pool_head,
    sinusoidal_encoding,
    trainable_param_report,
)
from timemagnet.nn import MultiHeadAttention


@pytest.fixture
def rng():
    return stream(0, "test-ts")


def small_cfg(**kw):
    base = dict(dim=8, layers=1, heads=2, head_dim=4, ff_dim=8, dropout=0.0, max_seq=12, lora_rank=2)
    base.update(kw)
    return EncoderConfig(**base)


class TestPatchify:
    def test_full_length_window(self):
        x = np.zeros((1, 500, 3))
        assert patchify(x, 500).shape == (1, 500, 3)

    def test_single_token_and_roundtrip(self):
        x = np.arange(6.0).reshape(2, 1, 3)
        t = patchify(x, 10)
        assert t.shape == (2, 1, 3)
        np.testing.assert_array_equal(t.data.reshape(-1), x.reshape(-1))

    def test_too_long(self):
        with pytest.raises(ShapeError):
            patchify(np.zeros((1, 11, 3)), 10)


class TestSinusoidal:
    def test_position_zero(self):
        t = sinusoidal_encoding(5, 6)
        np.testing.assert_array_equal(t[0, 0::2], 0.0)
        np.testing.assert_array_equal(t[0, 1::2], 1.0)

    def test_matches_direct_evaluation(self):
        np.testing.assert_allclose(sinusoidal_encoding(7, 4), oracles.sinusoid_table(7, 4), atol=1e-15)
        np.testing.assert_allclose(sinusoidal_encoding(50, 32), oracles.sinusoid_table(50, 32), atol=1e-15)

    def test_range(self):
        t = sinusoidal_encoding(100, 16)
        assert t.min() >= -1.0 and t.max() <= 1.0

    def test_odd_dim_rejected(self):
        with pytest.raises(ShapeError):
            sinusoidal_encoding(4, 5)


class TestLora:
    def test_zero_adapter_is_base(self, rng):
        layer = LoraLinear(6, 5, 2, 4.0, rng)
        x = rng.normal(size=(3, 6))
        np.testing.assert_array_equal(layer(x).data, x @ layer.w0.data)

    def test_scale_at_rank_16(self, rng):
        assert LoraLinear(8, 8, 16, 32.0, rng).scale == 2.0

    def test_dense_oracle(self, rng):
        layer = LoraLinear(6, 5, 3, 6.0, rng)
        layer.b.data[:] = rng.normal(size=layer.b.shape)
        x = rng.normal(size=(4, 2, 6))
        dense = x @ (layer.w0.data + 2.0 * layer.a.data @ layer.b.data)
        np.testing.assert_allclose(layer(x).data, dense, atol=1e-12)

    def test_dim_mismatch(self, rng):
        with pytest.raises(ShapeError):
            LoraLinear(6, 5, 2, 4.0, rng)(np.zeros((2, 4)))

    def test_full_size_projection_counts(self, rng):
        # one 512x512 projection, rank 16: r*(D + out) adapter entries and D*out frozen
        assert lora_projection_counts(512, 512, 16) == {"trainable": 16384, "frozen": 262144}
        rep = trainable_param_report(LoraLinear(512, 512, 16, 32.0, rng))
        assert rep == {"trainable": 16384, "frozen": 262144, "total": 278528}

    def test_base_gets_no_gradient(self, rng):
        layer = LoraLinear(4, 3, 2, 4.0, rng)
        x = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        with Tape() as tape:
            loss = ops.sum(layer(x))
        tape.backward(loss, layer.trainable_parameters())
        assert layer.w0 not in layer.trainable_parameters()
        assert layer.w0.grad is None or not np.any(layer.w0.grad)


class TestParamReport:
    def test_no_lora_means_nothing_frozen(self, rng):
        enc = TSEncoder(small_cfg(use_lora=False), rng)
        assert trainable_param_report(enc)["frozen"] == 0

    def test_encoder_frozen_count(self, rng):
        cfg = small_cfg(layers=2)
        rep = trainable_param_report(TSEncoder(cfg, rng))
        # Q, K, V per layer, each dim x heads*head_dim
        assert rep["frozen"] == 2 * 3 * 8 * 8

    def test_total_is_additive(self, rng):
        enc = TSEncoder(small_cfg(layers=2), rng)
        parts = [trainable_param_report(m)["total"] for m in (enc.embed, *enc.blocks, enc.head)]
        assert trainable_param_report(enc)["total"] == sum(parts) + enc.ln_final.size


class TestEncoder:
    def test_desk_shape(self, rng):
        enc = TSEncoder(EncoderConfig(dropout=0.0), rng)
        x = rng.normal(size=(2, 50, 3))
        assert enc.encode(x).shape == (2, 50, 32)
        assert enc(x).shape == (2, 32)

    def test_zero_ff_output_is_residual(self, rng):
        enc = TSEncoder(small_cfg(), rng)
        block = enc.blocks[0]
        block.ff.wo.weight.data[:] = 0.0
        x = Tensor(rng.normal(size=(2, 5, 8)))
        after_attn = ops.add(x, block.attn(_rms(x, block))).data
        np.testing.assert_allclose(block(x).data, after_attn, atol=1e-12)

    def test_deterministic_without_dropout(self, rng):
        enc = TSEncoder(small_cfg(), rng)
        x = rng.normal(size=(2, 6, 3))
        np.testing.assert_array_equal(enc(x).data, enc(x).data)

    def test_gradcheck_one_layer(self, rng):
        cfg = small_cfg()
        enc = TSEncoder(cfg, rng)
        for blk in enc.blocks:
            for lin in (blk.attn.q, blk.attn.k, blk.attn.v):
                lin.b.data[:] = rng.normal(scale=0.3, size=lin.b.shape)
        enc.eval()
        x = Tensor(rng.normal(size=(2, 5, 3)))
        probe = rng.normal(size=(2, 5, 8))
        err = grad_check_params(lambda: ops.sum(ops.mul(enc.encode(x), probe)),
                                enc.trainable_parameters() + [x], max_coords=6, rng=np.random.default_rng(1))
        assert err < 1e-4

    def test_position_encoding_breaks_permutation_equivariance(self, rng):
        enc = TSEncoder(small_cfg(rel_bias=False), rng)
        x = rng.normal(size=(1, 3, 3))
        perm = [2, 0, 1]
        out = enc.encode(x).data
        out_p = enc.encode(x[:, perm]).data
        assert not np.allclose(out_p, out[:, perm])

    def test_permutation_equivariant_without_positions(self, rng):
        enc = TSEncoder(small_cfg(rel_bias=False, sinusoidal=False), rng)
        x = rng.normal(size=(1, 3, 3))
        perm = [2, 0, 1]
        np.testing.assert_allclose(enc.encode(x[:, perm]).data, enc.encode(x).data[:, perm], atol=1e-12)

    def test_base_weights_bit_identical_after_training(self, rng):
        enc = TSEncoder(small_cfg(layers=2), rng)
        before = {n: p.data.copy() for n, p in enc.named_parameters() if p.frozen}
        assert len(before) == 6
        opt = AdamW(enc.trainable_parameters(), lr=1e-2, weight_decay=0.1)
        x = Tensor(rng.normal(size=(4, 6, 3)))
        for _ in range(5):
            opt.zero_grad()
            with Tape() as tape:
                loss = ops.sum(ops.mul(enc(x), enc(x)))
            tape.backward(loss, enc.trainable_parameters())
            opt.step()
        for n, p in enc.named_parameters():
            if p.frozen:
                assert p.data.tobytes() == before[n].tobytes()
        moved = [blk.attn.q.b.data for blk in enc.blocks]
        assert all(np.any(m) for m in moved)

    def test_lora_projections_installed(self, rng):
        enc = TSEncoder(small_cfg(), rng)
        attn = enc.blocks[0].attn
        assert isinstance(attn, MultiHeadAttention)
        assert all(isinstance(p, LoraLinear) for p in (attn.q, attn.k, attn.v))
        assert not isinstance(attn.o, LoraLinear)

    def test_inconsistent_heads(self):
        with pytest.raises(ShapeError):
            EncoderConfig(dim=30, heads=2, head_dim=16)


def _rms(x, block):
    from timemagnet.nn.layers import layer_norm_rms

    return layer_norm_rms(x, block.ln_attn, block.eps)


class TestPoolHead:
    def test_single_token(self):
        h = np.arange(4.0).reshape(1, 1, 4)
        np.testing.assert_array_equal(pool_head(h).data, np.concatenate([h[0, 0], h[0, 0]])[None])

    def test_constant_sequence(self):
        h = np.full((2, 5, 3), 1.5)
        np.testing.assert_array_equal(pool_head(h).data, 1.5)

    def test_max_gradient_routes_to_argmax(self):
        h = Tensor(np.array([[[0.0], [3.0], [1.0]]]), requires_grad=True)
        with Tape() as tape:
            out = pool_head(h)
            loss = ops.sum(ops.mul(out, np.array([[0.0, 1.0]])))
        tape.backward(loss, [h])
        np.testing.assert_array_equal(h.grad[0, :, 0], [0.0, 1.0, 0.0])
        err = grad_check_params(lambda: ops.sum(ops.mul(pool_head(h), np.array([[0.3, 1.0]]))), [h])
        assert err < 1e-8

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1), st.integers(1, 6))
    def test_order_invariant(self, seed, c):
        r = np.random.default_rng(seed)
        h = r.normal(size=(2, c, 4))
        perm = r.permutation(c)
        np.testing.assert_allclose(pool_head(h[:, perm]).data, pool_head(h).data, atol=1e-15)
