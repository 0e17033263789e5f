import numpy as np
import pytest

from gatefusion import baselines, higate
from gatefusion import numerics as nx
from gatefusion.encoder import EncoderConfig
from gatefusion.errors import ConfigError
from gatefusion.layers import Linear
from gatefusion.model import GateFusionModel, build_decoder
from gatefusion.numerics import Tensor


def identity_linear(rng, d_in, d_out):
    lin = Linear(d_in, d_out, rng)
    lin.weight.data[...] = np.eye(d_in, d_out)
    return lin


class TestSum:
    def test_identity_projection(self, rng):
        fa, fv = rng.standard_normal((8, 3)), rng.standard_normal((4, 3))
        out = baselines.sum_fuse(Tensor(fa), Tensor(fv), identity_linear(rng, 3, 3)).data
        np.testing.assert_array_equal(out, fa.reshape(4, 2, 3).mean(1) + fv)

    def test_combine_hand_example(self):
        out = higate.combine(Tensor([[1.0], [2.0], [3.0], [4.0]]), Tensor([[10.0], [20.0]])).data
        assert out.ravel().tolist() == [11.5, 23.5]


class TestConcat:
    def test_shape_and_identity(self, rng):
        fa, fv = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
        lin = Linear(6, 3, rng)
        lin.weight.data[...] = np.vstack([np.eye(3), np.eye(3)])
        out = baselines.concat_fuse(Tensor(fa), Tensor(fv), lin).data
        np.testing.assert_allclose(out, fa + fv, atol=1e-15)

    def test_zero_audio_block_ignores_audio(self, rng):
        lin = Linear(6, 3, rng)
        lin.weight.data[:3] = 0.0
        fv = Tensor(rng.standard_normal((4, 3)))
        a = baselines.concat_fuse(Tensor(rng.standard_normal((4, 3))), fv, lin).data
        b = baselines.concat_fuse(Tensor(rng.standard_normal((4, 3))), fv, lin).data
        np.testing.assert_array_equal(a, b)


class TestCrossAtten:
    def test_output_shape(self, rng):
        dec = baselines.CrossAttenDecoder(8, rng)
        out = dec(Tensor(rng.standard_normal((2, 16, 8))), Tensor(rng.standard_normal((2, 4, 8))))
        assert out.shape == (2, 4, 8)

    def test_attention_rows_sum_to_one(self, rng):
        dec = baselines.CrossAttenDecoder(8, rng)
        for p in dec.parameters():
            p.data += rng.standard_normal(p.shape)
        dec(Tensor(rng.standard_normal((12, 8))), Tensor(rng.standard_normal((3, 8))))
        for m in (dec.v_from_a, dec.a_from_v, dec.self_attn):
            np.testing.assert_allclose(m.last_weights.data.sum(-1), 1.0, atol=1e-12)

    def test_video_queries_attend_over_audio(self, rng):
        dec = baselines.CrossAttenDecoder(8, rng)
        dec(Tensor(rng.standard_normal((12, 8))), Tensor(rng.standard_normal((3, 8))))
        assert dec.v_from_a.last_weights.shape[-2:] == (3, 12)
        assert dec.a_from_v.last_weights.shape[-2:] == (12, 3)


@pytest.mark.parametrize("kind", baselines.DECODER_KINDS)
def test_all_decoders_preserve_video_rate(rng, kind):
    spec = higate.FusionSpec([1, 2], 8)
    dec = build_decoder(kind, spec, 8, rng)
    stack_a = [Tensor(rng.standard_normal((16, 8))) for _ in range(3)]
    stack_v = [Tensor(rng.standard_normal((4, 8))) for _ in range(3)]
    out = dec(Tensor(rng.standard_normal((16, 8))), Tensor(rng.standard_normal((4, 8))), stack_a, stack_v)
    assert out.shape == (4, 8)


def test_unknown_decoder(rng):
    with pytest.raises(ConfigError, match="unknown decoder"):
        build_decoder("fancy", higate.FusionSpec([1], 4), 4, rng)


@pytest.mark.parametrize("kind", ["sum", "concat", "crossatten"])
def test_decoder_grad_check(kind):
    from gatefusion.gradcheck_suite import run_suite

    res = run_suite(instances=5, only={f"{kind}_decoder", f"end_to_end_{kind}"})
    assert all(r.passed for r in res), [r.failures for r in res]


class TestModel:
    def make(self, rng, decoder="higate"):
        enc = dict(n_layers=2, d_enc=8, n_heads=2)
        return GateFusionModel(EncoderConfig(d_in=3, **enc), EncoderConfig(d_in=2, **enc),
                               higate.FusionSpec([1, 2], 4), decoder, rng)

    def test_bundle_shapes(self, rng):
        b = self.make(rng)(rng.standard_normal((2, 16, 3)), rng.standard_normal((2, 4, 2)))
        for p in (b.p_av_live, b.p_av_detached, b.p_a, b.p_v):
            assert p.shape == (2, 4, 2)
            np.testing.assert_allclose(p.data.sum(-1), 1.0, atol=1e-12)

    def test_param_groups_partition(self, rng):
        m = self.make(rng)
        groups = m.param_groups()
        names = [n for g in groups.values() for n, _ in g]
        assert sorted(names) == sorted(n for n, _ in m.named_parameters())
        assert all(n.startswith("encoder_") for n, _ in groups["encoder"])
        assert any(n.startswith("proj_") for n, _ in groups["decoder"])

    def test_unimodal_heads_use_pre_fusion_features(self, rng):
        m = self.make(rng)
        audio, video = rng.standard_normal((1, 16, 3)), rng.standard_normal((1, 4, 2))
        before = m(audio, video)
        for p in m.decoder.parameters():
            p.data += 1.0
        after = m(audio, video)
        np.testing.assert_array_equal(before.p_a.data, after.p_a.data)
        np.testing.assert_array_equal(before.p_v.data, after.p_v.data)
        assert not np.array_equal(before.p_av_live.data, after.p_av_live.data)

    def test_fusion_index_beyond_encoder(self, rng):
        enc = dict(n_layers=2, d_enc=8, n_heads=2)
        with pytest.raises(ConfigError):
            GateFusionModel(EncoderConfig(d_in=3, **enc), EncoderConfig(d_in=2, **enc),
                            higate.FusionSpec([1, 3], 4), "higate", rng)

    def test_state_roundtrip(self, rng):
        a, b = self.make(np.random.default_rng(1)), self.make(np.random.default_rng(2))
        b.load_state_dict(a.state_dict())
        x, y = rng.standard_normal((1, 8, 3)), rng.standard_normal((1, 2, 2))
        np.testing.assert_array_equal(a(x, y).p_av_live.data, b(x, y).p_av_live.data)
