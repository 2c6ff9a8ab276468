import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphkd import tensor as T
from graphkd.generator import (
    GeneratorConfig,
    adjacency_flops,
    generate,
    generator_grad_check,
    init_generator,
    load_generator,
    sample_latent,
    save_generator,
    threshold,
)
from graphkd.models import ConfigError, GnnConfig, init_params
from graphkd.tensor import Tensor


def small_config(**kw):
    base = dict(node_count=5, feature_dim=3, latent_dim=4, hidden=(6, 8))
    base.update(kw)
    return GeneratorConfig(**base)


def zero_params(cfg):
    params = init_generator(cfg, 0)
    for t in params.tensors.values():
        t.data[...] = 0.0
    return params


class TestShapes:
    def test_output_contract(self):
        cfg = GeneratorConfig(node_count=7, feature_dim=7)
        g = generate(cfg, init_generator(cfg, 0), sample_latent(3, 32, np.random.default_rng(0)))
        assert g.features.shape == (3, 7, 7)
        assert g.adj_soft.shape == g.adj_hard.shape == (3, 7, 7)
        assert g.node_mask.shape == (3, 7) and g.node_mask.all()
        assert set(np.unique(g.adj_hard)) <= {0.0, 1.0}
        assert cfg.layer_dims() == [32, 64, 128, 256, 49]

    def test_latent_dim_checked(self):
        cfg = small_config()
        with pytest.raises(ConfigError, match="latent"):
            generate(cfg, init_generator(cfg), Tensor(np.zeros((2, 5))))

    @pytest.mark.parametrize(
        "kw", [dict(node_count=1), dict(tau=0.0), dict(tau=1.0), dict(edge_mode="gumbel"), dict(feature_dim=0)]
    )
    def test_invalid_config(self, kw):
        with pytest.raises(ConfigError):
            small_config(**kw)

    def test_flops(self):
        assert adjacency_flops(GeneratorConfig(node_count=18, feature_dim=7), 32) == 32 * 18 * 18 * 7


class TestAdjacency:
    def test_zero_weights_give_half_and_empty_graph(self):
        cfg = small_config()
        g = generate(cfg, zero_params(cfg), sample_latent(2, 4, np.random.default_rng(1)))
        np.testing.assert_array_equal(g.adj_soft.data, 0.5)
        # strict threshold: 0.5 is not above 0.5
        assert not g.adj_hard.any()

    def test_equal_rows(self):
        cfg = small_config(feature_dim=2)
        params = zero_params(cfg)
        params["fc2.b"].data[:] = 1.0  # every node gets f = (1, 1)
        g = generate(cfg, params, sample_latent(1, 4, np.random.default_rng(0)))
        np.testing.assert_allclose(g.adj_soft.data, 1 / (1 + np.exp(-2.0)), atol=1e-12)
        np.testing.assert_allclose(g.adj_soft.data[0, 0, 1], 0.8808, atol=1e-4)
        np.testing.assert_array_equal(g.adj_hard[0], 1 - np.eye(5))

    def test_exact_symmetry(self):
        cfg = small_config()
        g = generate(cfg, init_generator(cfg, 3), sample_latent(8, 4, np.random.default_rng(2)))
        np.testing.assert_array_equal(g.adj_soft.data, np.swapaxes(g.adj_soft.data, 1, 2))
        np.testing.assert_array_equal(g.adj_hard, np.swapaxes(g.adj_hard, 1, 2))
        assert not np.diagonal(g.adj_hard, axis1=1, axis2=2).any()

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.01, 0.98), st.floats(0.001, 0.01), st.integers(0, 1000))
    def test_tau_monotone(self, tau, delta, seed):
        soft = np.random.default_rng(seed).random((2, 6, 6))
        low, high = threshold(soft, tau), threshold(soft, tau + delta)
        assert np.all(high <= low)

    def test_consumer_adjacency_modes(self):
        cfg = small_config(edge_mode="soft")
        g = generate(cfg, init_generator(cfg, 0), sample_latent(2, 4, np.random.default_rng(0)))
        consumer = g.adjacency().data
        assert np.all(np.diagonal(consumer, axis1=1, axis2=2) == 0)
        np.testing.assert_allclose(consumer, g.adj_soft.data * (1 - np.eye(5)))
        hard = generate(small_config(), init_generator(cfg, 0), sample_latent(2, 4, np.random.default_rng(0)))
        np.testing.assert_array_equal(hard.adjacency().data, hard.adj_hard)

    def test_straight_through_reaches_generator(self):
        cfg = small_config()
        params = init_generator(cfg, 0)
        T.reset_tape()
        g = generate(cfg, params, sample_latent(2, 4, np.random.default_rng(0)))
        T.backward(T.sum(g.adjacency()))
        assert np.abs(params["fc0.w"].grad).sum() > 0


class TestLatent:
    def test_moments(self):
        z = sample_latent(10_000, 32, np.random.default_rng(0)).data
        assert abs(z.mean()) < 0.05
        assert np.all(np.abs(z.mean(axis=0)) < 0.05)
        assert np.all(np.abs(z.var(axis=0) - 1) < 0.1)

    def test_determinism(self):
        cfg = small_config()
        a = generate(cfg, init_generator(cfg, 5), sample_latent(4, 4, np.random.default_rng(9)))
        b = generate(cfg, init_generator(cfg, 5), sample_latent(4, 4, np.random.default_rng(9)))
        np.testing.assert_array_equal(a.features.data, b.features.data)
        np.testing.assert_array_equal(a.adj_hard, b.adj_hard)

    def test_bad_batch(self):
        with pytest.raises(ValueError):
            sample_latent(0, 4, np.random.default_rng(0))


def discriminators(dim, seed=0):
    t_cfg = GnnConfig("GIN", 2, 6, dim, 2)
    s_cfg = GnnConfig("GCN", 2, 4, dim, 2)
    return (t_cfg, init_params(t_cfg, seed)), (s_cfg, init_params(s_cfg, seed + 1))


class TestGradient:
    @pytest.mark.parametrize("loss", ["L-MAE", "MSE", "KLD"])
    def test_soft_mode_matches_finite_differences(self, loss):
        cfg = small_config(edge_mode="soft", node_count=4)
        teacher, student = discriminators(3)
        report = generator_grad_check(cfg, init_generator(cfg, 1), teacher, student, loss_kind=loss)
        assert report.ok, str(report)

    def test_discriminators_untouched(self):
        cfg = small_config(edge_mode="soft", node_count=4)
        teacher, student = discriminators(3)
        before = teacher[1].digest(), student[1].digest()
        generator_grad_check(cfg, init_generator(cfg, 1), teacher, student)
        assert (teacher[1].digest(), student[1].digest()) == before
        assert all(t.grad is None for t in teacher[1].tensors.values())

    def test_identical_discriminators_give_zero_gradient(self):
        cfg = small_config(edge_mode="soft", node_count=4)
        teacher, _ = discriminators(3)
        twin = (teacher[0], teacher[1].copy())
        params = init_generator(cfg, 2)
        report = generator_grad_check(cfg, params, teacher, twin, loss_kind="MSE")
        assert report.ok
        T.reset_tape()
        from graphkd.distill import adversarial_losses

        l_dis, l_gen = adversarial_losses(teacher, twin, cfg, params, sample_latent(2, 4, np.random.default_rng(0)), "MSE")
        T.backward(l_gen)
        assert l_dis.item() == 0.0
        for t in params.tensors.values():
            np.testing.assert_array_equal(t.grad, 0.0)

    def test_hard_mode_rejected(self):
        cfg = small_config()
        teacher, student = discriminators(3)
        with pytest.raises(ConfigError, match="soft"):
            generator_grad_check(cfg, init_generator(cfg), teacher, student)


def test_checkpoint_round_trip(tmp_path):
    cfg = small_config(tau=0.7, edge_mode="soft")
    params = init_generator(cfg, 4)
    path = save_generator(tmp_path / "g.npz", cfg, params, {"fold": 1})
    cfg2, params2, meta = load_generator(path)
    assert cfg2 == cfg and meta == {"fold": 1} and params2.digest() == params.digest()
    z = sample_latent(2, 4, np.random.default_rng(0))
    np.testing.assert_array_equal(generate(cfg, params, z).adj_hard, generate(cfg2, params2, z).adj_hard)
