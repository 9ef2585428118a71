"""Parameter initialization, checkpoint IO, and forward-path consistency."""

import numpy as np
import pytest

from citeqa import encoder as enc
from citeqa.encoder import EncoderParams, init_params, load_checkpoint, save_checkpoint
from citeqa.errors import CheckpointError

from helpers import randomize_params, synthetic_graph


class TestInit:
    def test_mean_linear_shapes(self):
        params = init_params(variant="mean-linear", embed_dim=6, hidden_dim=10, n_layers=3, seed=0)
        assert params.arrays["layer0.W"].shape == (10, 6)
        assert params.arrays["layer1.W"].shape == (10, 10)
        assert params.arrays["layer2.W"].shape == (6, 10)
        assert params.arrays["mlp.W1"].shape == (6, 6)

    def test_single_layer_round_trip_dimension(self):
        params = init_params(embed_dim=6, hidden_dim=10, n_layers=1)
        assert params.arrays["layer0.W"].shape == (6, 6)

    def test_attention_head_divisibility_enforced(self):
        with pytest.raises(ValueError, match="heads"):
            init_params(variant="attention", embed_dim=6, hidden_dim=10, n_layers=2, heads=4)

    def test_all_finite(self):
        params = init_params(variant="attention", embed_dim=8, hidden_dim=8, n_layers=2, heads=2)
        for name, arr in params.arrays.items():
            assert np.all(np.isfinite(arr)), name

    def test_deterministic_under_seed(self):
        a = init_params(embed_dim=8, hidden_dim=8, n_layers=2, seed=13)
        b = init_params(embed_dim=8, hidden_dim=8, n_layers=2, seed=13)
        for name in a.arrays:
            assert np.array_equal(a.arrays[name], b.arrays[name])


class TestCheckpoint:
    def roundtrip(self, params, tmp_path):
        one = tmp_path / "one.ckpt"
        two = tmp_path / "two.ckpt"
        save_checkpoint(params, one)
        loaded = load_checkpoint(one)
        save_checkpoint(loaded, two)
        return one, two, loaded

    @pytest.mark.parametrize("variant", ["mean-linear", "attention"])
    def test_round_trip_byte_identical(self, variant, tmp_path):
        params = init_params(variant=variant, embed_dim=8, hidden_dim=8, n_layers=2, heads=2, seed=4)
        one, two, loaded = self.roundtrip(params, tmp_path)
        assert one.read_bytes() == two.read_bytes()
        assert loaded.variant == params.variant
        assert loaded.pos_map == params.pos_map
        for name in params.arrays:
            assert np.array_equal(loaded.arrays[name], params.arrays[name])

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "bogus.ckpt"
        path.write_bytes(b"hello world")
        with pytest.raises(CheckpointError, match="not a parameter checkpoint"):
            load_checkpoint(path)

    def test_truncated_file(self, tmp_path):
        params = init_params(embed_dim=4, hidden_dim=4, n_layers=1)
        path = tmp_path / "ok.ckpt"
        save_checkpoint(params, path)
        path.write_bytes(path.read_bytes() + b"\x00" * 8)
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)


class TestForwardConsistency:
    def test_cached_forward_equals_kernel_forward(self):
        rng = np.random.default_rng(21)
        graph = synthetic_graph(rng, 9, edge_prob=0.3)
        n, m = graph.n_nodes, len(graph.edges)
        params = randomize_params(
            init_params(embed_dim=5, hidden_dim=7, n_layers=2, activation="tanh", seed=0), rng
        )
        qgate = rng.random(n) * 2
        egate = rng.random(m)
        h0 = rng.standard_normal((n, 5))
        fast, _ = enc.forward_layers(params, graph.in_indptr, graph.in_src, qgate, egate, h0)
        cached, caches = enc.forward_layers(
            params, graph.in_indptr, graph.in_src, qgate, egate, h0, want_cache=True
        )
        assert len(caches) == 2
        assert np.allclose(fast, cached, atol=1e-12)

    def test_non_finite_state_reported_with_layer_and_node(self):
        graph = synthetic_graph(np.random.default_rng(0), 3, edge_prob=0.5)
        params = init_params(embed_dim=2, hidden_dim=2, n_layers=1, activation="none")
        params.arrays["layer0.W"][:] = 1e308
        h0 = np.full((3, 2), 1e308)
        with np.errstate(over="ignore"), pytest.raises(FloatingPointError, match="layer 0"):
            enc.forward_layers(params, graph.in_indptr, graph.in_src, np.ones(3), np.ones(len(graph.edges)), h0)
