"""Network assembly, parameter accounting, and checkpoint round-trip tests."""

import numpy as np
import pytest

from resnesat import checkpoint as ckpt
from resnesat.errors import CheckpointError, ShapeError
from resnesat.gradcheck import gradient_check
from resnesat.network import (NetworkConfig, build_network, describe,
                              parameter_count, sa_parameter_overhead)
from resnesat.tensor import precision_mode

TINY_TRACE = [
    ("input", (1, 1, 64, 64)),
    ("stem_conv1", (1, 8, 32, 32)),
    ("stem_conv2", (1, 8, 32, 32)),
    ("stem_conv3", (1, 16, 32, 32)),
    ("stem_pool", (1, 16, 16, 16)),
    ("stage1", (1, 16, 16, 16)),
    ("stage2", (1, 32, 8, 8)),
    ("stage3", (1, 64, 4, 4)),
    ("stage4", (1, 128, 2, 2)),
    ("gap", (1, 128, 1, 1)),
    ("fc", (1, 2)),
]

PAPER_TRACE = [
    ("input", (1, 3, 256, 256)),
    ("stem_conv1", (1, 32, 128, 128)),
    ("stem_conv2", (1, 32, 128, 128)),
    ("stem_conv3", (1, 64, 128, 128)),
    ("stem_pool", (1, 64, 64, 64)),
    ("stage1", (1, 256, 64, 64)),
    ("stage2", (1, 512, 32, 32)),
    ("stage3", (1, 1024, 16, 16)),
    ("stage4", (1, 2048, 8, 8)),
    ("gap", (1, 2048, 1, 1)),
    ("fc", (1, 2)),
]


class TestBuild:
    def test_tiny_shape_trace(self):
        net = build_network(NetworkConfig.tiny(), seed=0)
        assert net.shape_trace() == TINY_TRACE

    def test_paper_shape_trace(self):
        net = build_network(NetworkConfig.paper(), seed=0)
        assert net.shape_trace() == PAPER_TRACE

    def test_logits_shape(self):
        net = build_network(NetworkConfig.tiny(num_classes=2), seed=1)
        x = np.random.default_rng(0).standard_normal((3, 1, 64, 64)).astype(np.float32)
        assert net.forward(x).shape == (3, 2)

    def test_fc_dims_follow_num_classes(self):
        net = build_network(NetworkConfig.tiny(num_classes=2))
        assert dict(net.named_parameters())["fc.weight"].value.shape == (2, 128)

    def test_invalid_preset(self):
        with pytest.raises(ShapeError, match="preset"):
            NetworkConfig.from_preset("huge")

    def test_same_seed_same_weights(self):
        a = build_network(NetworkConfig.tiny(), seed=7)
        b = build_network(NetworkConfig.tiny(), seed=7)
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            np.testing.assert_array_equal(pa.value, pb.value)


class TestParameterCount:
    def test_tiny_sa_overhead(self):
        assert sa_parameter_overhead(NetworkConfig.tiny()) == 4 * 99 == 396

    def test_paper_sa_overhead_and_size_bracket(self):
        assert sa_parameter_overhead(NetworkConfig.paper()) == 16 * 99 == 1584
        count, nbytes = parameter_count(build_network(NetworkConfig.paper()))
        assert 88e6 <= nbytes <= 107e6
        assert nbytes == 4 * count

    def test_fc_head_count(self):
        params = dict(build_network(NetworkConfig.paper()).named_parameters())
        assert params["fc.weight"].size + params["fc.bias"].size == 2048 * 2 + 2 == 4098

    def test_sa_params_strictly_additive(self):
        with_sa = set(n for n, _ in build_network(NetworkConfig.tiny()).named_parameters())
        without = set(n for n, _ in build_network(
            NetworkConfig.tiny(sa_enabled=False)).named_parameters())
        assert without < with_sa
        assert all(".sa." in n for n in with_sa - without)

    def test_describe_rows_cover_every_parameter(self):
        net = build_network(NetworkConfig.tiny())
        rows = describe(net)
        assert [r["name"] for r in rows] == [name for name, _ in TINY_TRACE]
        assert sum(r["params"] for r in rows) == parameter_count(net)[0]


class TestEndToEndGradient:
    def test_tiny_network_sampled_gradient_check(self):
        with precision_mode("float64"):
            net = build_network(NetworkConfig.tiny(), seed=3)
            x = np.random.default_rng(4).standard_normal((2, 1, 64, 64))
        report = gradient_check(net, x, train=True, param_fraction=0.01, check_input=False)
        assert report.passed(1e-3), report.summary()


class TestCheckpoint:
    def make_net(self, **kw):
        return build_network(NetworkConfig.tiny(**kw), seed=2)

    def test_round_trip_byte_exact(self, tmp_path):
        net = self.make_net()
        first = tmp_path / "a.ckpt"
        second = tmp_path / "b.ckpt"
        ckpt.save_checkpoint(net, first, epoch=5,
                             optimizer_state={"fc.weight": np.ones((2, 128))},
                             preproc={"norm_mean": np.array([0.4]), "norm_std": np.array([0.2])})
        loaded, epoch, opt, pre = ckpt.load_checkpoint(first)
        assert epoch == 5
        np.testing.assert_array_equal(opt["fc.weight"], np.ones((2, 128)))
        np.testing.assert_allclose(pre["norm_mean"], [0.4], rtol=1e-7)
        ckpt.save_checkpoint(loaded, second, epoch=epoch, optimizer_state=opt, preproc=pre)
        assert first.read_bytes() == second.read_bytes()

    def test_loaded_network_reproduces_outputs(self, tmp_path):
        net = self.make_net()
        x = np.random.default_rng(5).standard_normal((2, 1, 64, 64)).astype(np.float32)
        expected = net.forward(x)
        path = tmp_path / "n.ckpt"
        ckpt.save_checkpoint(net, path)
        loaded, _, _, _ = ckpt.load_checkpoint(path)
        np.testing.assert_array_equal(loaded.forward(x), expected)

    def test_corrupt_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        net = self.make_net()
        ckpt.save_checkpoint(net, path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="magic"):
            ckpt.load_checkpoint(path)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "t.ckpt"
        ckpt.save_checkpoint(self.make_net(), path)
        path.write_bytes(path.read_bytes()[:100])
        with pytest.raises(CheckpointError, match="truncated"):
            ckpt.load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "v.ckpt"
        ckpt.save_checkpoint(self.make_net(), path)
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            ckpt.load_checkpoint(path)

    def test_mismatched_num_classes_names_fc_tensor(self, tmp_path):
        path = tmp_path / "m.ckpt"
        ckpt.save_checkpoint(self.make_net(num_classes=2), path)
        with pytest.raises(CheckpointError, match="fc.weight"):
            ckpt.load_checkpoint(path, config=NetworkConfig.tiny(num_classes=3))

    def test_sa_free_checkpoint_loads_into_sa_network(self, tmp_path):
        path = tmp_path / "nosa.ckpt"
        plain = self.make_net(sa_enabled=False)
        ckpt.save_checkpoint(plain, path)
        loaded, _, _, _ = ckpt.load_checkpoint(path, config=NetworkConfig.tiny(sa_enabled=True))
        plain_params = dict(plain.named_parameters())
        for name, p in loaded.named_parameters():
            if ".sa." in name:
                continue
            np.testing.assert_array_equal(p.value, plain_params[name].value.astype(np.float32))

    def test_missing_non_sa_tensor_rejected(self, tmp_path):
        # a checkpoint from a different repeat plan misses whole blocks
        path = tmp_path / "short.ckpt"
        small = build_network(NetworkConfig.tiny(), seed=0)
        ckpt.save_checkpoint(small, path)
        bigger = NetworkConfig.tiny()
        bigger.repeats = (2, 1, 1, 1)
        with pytest.raises(CheckpointError):
            ckpt.load_checkpoint(path, config=bigger)
