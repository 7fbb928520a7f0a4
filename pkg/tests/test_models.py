import numpy as np
import pytest

from wormbody.autodiff import Tensor, backward, tsum
from wormbody.errors import CheckpointFormatError
from wormbody.models import (
    NetConfig,
    build_age_net,
    build_coarse_net,
    build_denoise_net,
    build_fine_net,
    build_model,
    count_parameters,
    load_model,
    save_model,
    transfer_encoder,
)

SMALL = NetConfig(num_scales=4, base_channels=8, blocks_per_stage=1, input_size=64)


def batch(rng, n=2, size=64):
    return Tensor(rng.normal(size=(n, 1, size, size)).astype(np.float32))


class TestNetConfig:
    def test_input_size_must_match_scales(self):
        with pytest.raises(ValueError):
            NetConfig(num_scales=5, input_size=100)

    def test_kv_round_trip(self):
        cfg = NetConfig(num_scales=3, base_channels=4, input_size=32, u_scale=13.0)
        back = NetConfig.from_kv(cfg.to_kv())
        assert back == cfg

    def test_stage_channels_capped(self):
        cfg = NetConfig(num_scales=5, base_channels=16, channel_cap=4, input_size=128)
        assert cfg.stage_channels() == [16, 32, 64, 64, 64]


class TestCoarseNet:
    def test_per_scale_output_shapes(self, rng):
        cfg = NetConfig(num_scales=5, base_channels=8, blocks_per_stage=1, input_size=128)
        net = build_coarse_net(cfg)
        outs = net(batch(rng, n=2, size=128))
        assert [o.shape for o in outs] == [
            (2, 1, 128, 128),
            (2, 1, 64, 64),
            (2, 1, 32, 32),
            (2, 1, 16, 16),
            (2, 1, 8, 8),
        ]

    def test_zero_weights_give_half_probability(self, rng):
        net = build_coarse_net(SMALL)
        for _, p in net.named_parameters():
            p.data[...] = 0.0
        outs = net(batch(rng))
        from wormbody.autodiff import sigmoid

        for o in outs:
            np.testing.assert_allclose(sigmoid(o).data, 0.5, atol=1e-7)

    def test_parameter_count_golden(self):
        # frozen at first build of each configuration
        cfg = NetConfig(num_scales=5, base_channels=16, blocks_per_stage=2, input_size=128)
        assert count_parameters(build_coarse_net(cfg)) == 651973
        assert count_parameters(build_coarse_net(SMALL)) == 65220

    def test_deepest_scale_matches_downsampling_ladder(self, rng):
        for s in (3, 4):
            cfg = NetConfig(num_scales=s, base_channels=4, blocks_per_stage=1, input_size=64)
            net = build_coarse_net(cfg)
            outs = net(batch(rng))
            assert outs[-1].shape[-1] == 64 // 2 ** (s - 1)


class TestFineNet:
    def test_three_channel_heads_at_all_scales(self, rng):
        net = build_fine_net(SMALL)
        outs = net(batch(rng))
        assert len(outs) == 4
        assert all(o.shape[1] == 3 for o in outs)

    def test_uv_heads_linear_mask_head_logit(self, rng):
        # a linear head is unbounded and goes through scaling; check that
        # doubling the last-layer weights doubles U/V outputs exactly
        net = build_fine_net(SMALL)
        x = batch(rng)
        base = net(x)[0].data.copy()
        for name, p in net.named_parameters():
            if name.startswith("heads."):
                p.data *= 2.0
        doubled = net(x)[0].data
        np.testing.assert_allclose(doubled[:, 1:], 2.0 * base[:, 1:], rtol=1e-5)

    def test_forward_determinism(self, rng):
        net = build_fine_net(SMALL)
        x = batch(rng)
        a = [o.data.copy() for o in net(x)]
        b = [o.data.copy() for o in net(x)]
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u, v)

    def test_parameter_count_golden(self):
        assert count_parameters(build_fine_net(SMALL)) == 65404


class TestAgeNet:
    def test_scalar_output_per_batch_item(self, rng):
        net = build_age_net(SMALL)
        out = net(batch(rng, n=3))
        assert out.shape == (3,)

    def test_zero_weights_give_zero_hours(self, rng):
        net = build_age_net(SMALL)
        for _, p in net.named_parameters():
            p.data[...] = 0.0
        np.testing.assert_allclose(net(batch(rng)).data, 0.0, atol=1e-7)

    def test_gradient_reaches_first_conv(self, rng):
        net = build_age_net(SMALL)
        out = net(batch(rng))
        target = Tensor(np.array([100.0, 200.0], dtype=np.float32))
        from wormbody.autodiff import absolute, sub, tmean

        backward(tmean(absolute(sub(out, target))))
        stem = dict(net.named_parameters())["encoder.stem.conv.weight"]
        assert stem.grad is not None and np.abs(stem.grad).max() > 0.0


class TestTrainEvalMode:
    def test_batchnorm_running_stats_are_buffers(self):
        net = build_coarse_net(SMALL)
        buffers = dict(net.named_buffers())
        assert "encoder.stem.bn.running_mean" in buffers
        state = net.state_dict()
        assert "encoder.stem.bn.running_var" in state

    def test_eval_mode_uses_running_stats(self, rng):
        net = build_coarse_net(SMALL)
        x = batch(rng)
        net(x)  # training mode: updates running stats
        net.eval()
        a = net(x)[0].data
        b = net(x)[0].data  # eval forwards are pure
        np.testing.assert_array_equal(a, b)


class TestCheckpoint:
    def test_save_load_forward_bit_identical(self, tmp_path, rng):
        net = build_fine_net(SMALL)
        x = batch(rng)
        net(x)  # move running stats off their init values
        net.eval()
        before = [o.data.copy() for o in net(x)]
        path = tmp_path / "fine.cgsr"
        save_model(path, net, "fine", SMALL, extra_echo={"note": "test"})
        loaded, kind, cfg, echo = load_model(path)
        assert kind == "fine" and cfg == SMALL and echo["note"] == "test"
        loaded.eval()
        after = [o.data.copy() for o in loaded(x)]
        for u, v in zip(before, after):
            np.testing.assert_array_equal(u, v)

    def test_corrupted_magic_distinct_error(self, tmp_path):
        net = build_age_net(SMALL)
        path = tmp_path / "age.cgsr"
        save_model(path, net, "age", SMALL)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"JUNK"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointFormatError):
            load_model(path)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            build_model("gigantic", SMALL)


class TestTransferEncoder:
    def test_identical_architecture_full_match(self):
        src = build_fine_net(SMALL)
        dst = build_age_net(SMALL)
        n_encoder = sum(
            1 for name, _ in dst.named_parameters() if name.startswith("encoder.")
        ) + sum(1 for name, _ in dst.named_buffers() if name.startswith("encoder."))
        copied, skipped = transfer_encoder(src.state_dict(), dst, "uvreg")
        assert copied == n_encoder
        assert skipped == []
        src_state = src.state_dict()
        for name, p in dst.named_parameters():
            if name.startswith("encoder."):
                np.testing.assert_array_equal(p.data, src_state[name])

    def test_scratch_ignores_source(self):
        src = build_fine_net(SMALL)
        dst = build_age_net(NetConfig(num_scales=4, base_channels=8, blocks_per_stage=1, input_size=64, init_seed=9))
        before = {n: p.data.copy() for n, p in dst.named_parameters()}
        copied, _ = transfer_encoder(src.state_dict(), dst, "scratch")
        assert copied == 0
        for n, p in dst.named_parameters():
            np.testing.assert_array_equal(p.data, before[n])

    def test_shape_mismatch_skipped_and_reported(self):
        src = build_fine_net(SMALL)
        wider = NetConfig(num_scales=4, base_channels=16, blocks_per_stage=1, input_size=64)
        dst = build_age_net(wider)
        with pytest.raises(ValueError):
            # every encoder tensor differs in shape: zero copied
            transfer_encoder(src.state_dict(), dst, "generic")

    def test_partial_shape_mismatch_reported(self):
        src = build_fine_net(SMALL).state_dict()
        dst = build_age_net(SMALL)
        # corrupt one source tensor's shape
        src["encoder.stem.conv.weight"] = np.zeros((2, 1, 3, 3), dtype=np.float32)
        copied, skipped = transfer_encoder(src, dst, "uvreg")
        assert "encoder.stem.conv.weight" in skipped
        assert copied > 0

    def test_unknown_mode_rejected(self):
        src = build_fine_net(SMALL)
        with pytest.raises(ValueError):
            transfer_encoder(src.state_dict(), build_age_net(SMALL), "imagenet")
