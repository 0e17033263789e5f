import numpy as np
import pytest

from gatefusion import numerics as nx
from gatefusion.encoder import EmbedStem, Encoder, EncoderConfig, TransformerBlock
from gatefusion.errors import ConfigError
from gatefusion.layers import attention, merge_heads, split_heads
from gatefusion.numerics import Tensor


def zero_block(block):
    for p in block.parameters():
        p.data[...] = 0.0


class TestStem:
    def test_zero_weights_zero_output(self, rng):
        stem = EmbedStem(EncoderConfig(d_in=3, d_enc=4, n_heads=2), rng)
        for p in stem.parameters():
            p.data[...] = 0.0
        assert not stem(Tensor(rng.standard_normal((5, 3)))).data.any()

    def test_identity_passthrough(self, rng):
        stem = EmbedStem(EncoderConfig(d_in=4, d_enc=4, n_heads=2), rng)
        stem.proj.weight.data[...] = np.eye(4)
        stem.pos.data[...] = 0.0
        x = rng.standard_normal((6, 4))
        np.testing.assert_array_equal(stem(Tensor(x)).data, x)

    def test_hand_multiplication(self, rng):
        stem = EmbedStem(EncoderConfig(d_in=1, d_enc=2, n_heads=1), rng)
        stem.proj.weight.data[...] = [[1.0, -1.0]]
        stem.pos.data[...] = 0.0
        out = stem(Tensor([[1.0], [2.0], [3.0]])).data
        assert out.tolist() == [[1, -1], [2, -2], [3, -3]]

    def test_too_long_is_config_error(self, rng):
        stem = EmbedStem(EncoderConfig(d_in=2, d_enc=2, n_heads=1, max_positions=4), rng)
        with pytest.raises(ConfigError, match="max_positions=4"):
            stem(Tensor(np.zeros((5, 2))))

    def test_positions_added_per_row(self, rng):
        stem = EmbedStem(EncoderConfig(d_in=2, d_enc=2, n_heads=1), rng)
        stem.proj.weight.data[...] = 0.0
        np.testing.assert_array_equal(stem(Tensor(np.zeros((3, 2)))).data, stem.pos.data[:3])


class TestBlock:
    def test_zero_weights_passthrough(self, rng):
        blk = TransformerBlock(4, 2, 2, rng)
        zero_block(blk)
        x = rng.standard_normal((5, 4))
        np.testing.assert_array_equal(blk(Tensor(x)).data, x)

    @pytest.mark.parametrize("t,d", [(1, 4), (3, 8), (7, 4)])
    def test_shape_preserved(self, rng, t, d):
        blk = TransformerBlock(d, 2, 2, rng)
        assert blk(Tensor(rng.standard_normal((2, t, d)))).shape == (2, t, d)

    def test_single_head_hand_attention(self, rng):
        blk = TransformerBlock(2, 1, 2, rng)
        for lin in (blk.attn.q, blk.attn.k, blk.attn.v):
            lin.weight.data[...] = np.eye(2)
        h = np.array([[1.0, 3.0], [2.0, -1.0]])
        blk(Tensor(h))
        ln = (h - h.mean(1, keepdims=True)) / np.sqrt(h.var(1, keepdims=True) + 1e-5)
        s = ln @ ln.T / np.sqrt(2)
        expect = np.exp(s) / np.exp(s).sum(1, keepdims=True)
        np.testing.assert_allclose(blk.attn.last_weights.data[0], expect, atol=1e-12)

    def test_attention_rows_sum_to_one(self, rng):
        blk = TransformerBlock(8, 4, 2, rng)
        for p in blk.parameters():
            p.data += rng.standard_normal(p.shape)
        blk(Tensor(rng.standard_normal((9, 8))))
        np.testing.assert_allclose(blk.attn.last_weights.data.sum(-1), 1.0, atol=1e-12)

    def test_fused_attention_matches_composed(self, rng):
        q, k, v = (Tensor(rng.standard_normal((2, t, 3))) for t in (4, 5, 5))
        a, wa = attention(q, k, v, fused=True)
        b, wb = attention(q, k, v, fused=False)
        np.testing.assert_allclose(a.data, b.data, atol=1e-13)
        np.testing.assert_allclose(wa.data, wb.data, atol=1e-14)

    def test_split_merge_roundtrip(self, rng):
        x = Tensor(rng.standard_normal((3, 5, 8)))
        assert split_heads(x, 4).shape == (3, 4, 5, 2)
        np.testing.assert_array_equal(merge_heads(split_heads(x, 4)).data, x.data)


class TestEncoder:
    def test_zero_layers_is_stem(self, rng):
        enc = Encoder(EncoderConfig(d_in=3, n_layers=0, d_enc=4, n_heads=2), rng)
        x = Tensor(rng.standard_normal((5, 3)))
        stack = enc.encode(x)
        assert len(stack) == 1
        np.testing.assert_array_equal(stack[0].data, enc.stem(x).data)

    def test_stack_structure(self, rng):
        enc = Encoder(EncoderConfig(d_in=3, n_layers=3, d_enc=8, n_heads=2), rng)
        stack = enc.encode(Tensor(rng.standard_normal((7, 3))))
        assert len(stack) == 4
        assert all(h.shape == (7, 8) for h in stack)

    def test_zero_blocks_repeat_stem(self, rng):
        enc = Encoder(EncoderConfig(d_in=3, n_layers=2, d_enc=4, n_heads=2), rng)
        for blk in enc.blocks:
            zero_block(blk)
        stack = enc.encode(Tensor(rng.standard_normal((5, 3))))
        for h in stack[1:]:
            np.testing.assert_array_equal(h.data, stack[0].data)

    def test_deterministic(self, rng):
        enc = Encoder(EncoderConfig(d_in=3, n_layers=2, d_enc=4, n_heads=2), rng)
        x = Tensor(rng.standard_normal((5, 3)))
        np.testing.assert_array_equal(enc.encode(x)[-1].data, enc.encode(x)[-1].data)

    def test_heads_must_divide_width(self, rng):
        with pytest.raises(ConfigError, match="divisible"):
            Encoder(EncoderConfig(d_in=3, d_enc=6, n_heads=4), rng)

    def test_negative_depth_rejected(self):
        with pytest.raises(ConfigError):
            EncoderConfig(d_in=3, n_layers=-1).validate()

    def test_wrong_input_width(self, rng):
        enc = Encoder(EncoderConfig(d_in=3, n_layers=1, d_enc=4, n_heads=2), rng)
        with pytest.raises(ConfigError, match="d_in=3"):
            enc.encode(Tensor(np.zeros((2, 5))))

    def test_init_statistics(self):
        enc = Encoder(EncoderConfig(d_in=8, n_layers=2, d_enc=32, n_heads=4), np.random.default_rng(0))
        w = np.concatenate([p.data.ravel() for n, p in enc.named_parameters() if n.endswith("weight")])
        assert abs(w.std() - 0.02) < 0.001
        for n, p in enc.named_parameters():
            if n.endswith("bias") or n.endswith("beta"):
                assert not p.data.any()
            if n.endswith("gamma"):
                assert (p.data == 1.0).all()

    def test_readout_grad_check(self):
        from gatefusion.gradcheck_suite import run_suite

        for res in run_suite(instances=4, only={"encoder", "transformer_block"}):
            assert res.passed, res.failures
