import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prism_ood.data import gen_fixture, random_simplex
from prism_ood.errors import DimensionError
from prism_ood.model import (
    INIT_VARIANTS,
    PrismModel,
    encode,
    forward,
    forward_batch,
    init_model,
    predict,
    project,
    pseudo_label_probs,
    recombine,
)
from prism_ood.numerics import exact_inverse
from prism_ood.rng import Rng


def zero_model(D=3, L=4, M=2, K=2, hidden=(5,)):
    m = init_model(D, K, M, L=L, hidden=hidden, seed=0)
    for k in m.params:
        if k.startswith(("encoder", "head")):
            m.params[k] = np.zeros_like(m.params[k])
    return m


class TestEncodeProject:
    def test_zero_weights(self):
        m = zero_model()
        np.testing.assert_array_equal(encode(m, [1.0, -2.0, 3.0]), np.zeros(4))
        np.testing.assert_array_equal(project(m, np.ones(4)), np.zeros(4))

    def test_identity_layer(self):
        m = init_model(3, 2, 2, L=3, hidden=(), seed=0)
        m.params["encoder.0.weight"] = np.eye(3)
        m.params["encoder.0.bias"] = np.zeros(3)
        x = np.array([0.5, -1.0, 2.0])
        np.testing.assert_array_equal(encode(m, x), x)

    def test_identity_head(self):
        m = init_model(3, 2, 2, L=4, hidden=(), seed=0)
        m.params["head.weight"] = np.eye(4)
        m.params["head.bias"] = np.zeros(4)
        h = np.array([0.1, 0.2, 0.3, 0.4])
        np.testing.assert_array_equal(project(m, h), h)

    def test_output_shapes_and_determinism(self):
        m = init_model(5, 3, 4, L=6, seed=3)
        x = Rng(0).normal(5)
        assert project(m, encode(m, x)).shape == (12,)
        np.testing.assert_array_equal(encode(m, x), encode(m, x))
        np.testing.assert_array_equal(encode(init_model(5, 3, 4, L=6, seed=3), x), encode(m, x))

    def test_dimension_mismatch(self):
        m = init_model(3, 2, 2, L=4)
        with pytest.raises(DimensionError):
            encode(m, np.zeros(4))
        with pytest.raises(DimensionError):
            project(m, np.zeros(3))


class TestRecombine:
    def test_blockwise_mean(self):
        np.testing.assert_allclose(recombine([np.eye(2)] * 2, [0.5, 0.5], [0.6, 0.4, 0.2, 0.8]), [0.4, 0.6],
                                   atol=1e-15)

    def test_one_hot_mixture(self, rng):
        B = random_simplex(Rng(1), (2, 3, 3)).transpose(0, 2, 1)
        p = np.concatenate(random_simplex(Rng(2), (2, 3)))
        np.testing.assert_allclose(recombine(B, [1.0, 0.0], p), B[0] @ p[:3], atol=1e-15)

    def test_inverse_recovers_posterior(self):
        A = np.array([[0.8, 0.4], [0.2, 0.6]])
        p = A @ [0.7, 0.3]
        np.testing.assert_allclose(p, [0.68, 0.32], atol=1e-15)
        np.testing.assert_allclose(recombine([exact_inverse(A)], [1.0], p), [0.7, 0.3], atol=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            recombine([np.eye(2)], [0.5, 0.5], [0.5, 0.5])
        with pytest.raises(DimensionError):
            recombine([np.eye(2)], [1.0], [0.5, 0.5, 0.0])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 3), st.integers(2, 6), st.integers(0, 10**6))
    def test_fixture_inverse_property(self, M, K, seed):
        fx = gen_fixture(M, K, seed)
        f = random_simplex(Rng(seed), K)
        d = random_simplex(Rng(seed + 1), M)
        np.testing.assert_allclose(recombine(fx.inverses(), d, fx.stacked(f)), f, atol=1e-10)


class TestForward:
    def test_zero_head_gives_uniform_blocks(self):
        m = zero_model(M=3, K=4, L=4)
        out = forward(m, np.ones(3))
        np.testing.assert_allclose(out.p, np.full(12, 0.25), atol=1e-15)

    def test_identity_B_uniform_p(self):
        m = zero_model()
        m.params["confusion_logits"] = np.tile(50.0 * np.eye(2), (2, 1, 1))
        np.testing.assert_allclose(forward(m, np.ones(3)).f_hat, [0.5, 0.5], atol=1e-15)

    def test_pseudo_label_probs_delegates(self):
        v = np.array([1.0, 2.0, 0.0, 0.0])
        np.testing.assert_allclose(pseudo_label_probs(v, 2, 2).reshape(2, 2).sum(1), 1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.sampled_from(INIT_VARIANTS), st.integers(1, 4), st.integers(2, 5), st.integers(0, 10**6))
    def test_simplex_closure(self, variant, M, K, seed):
        m = init_model(4, K, M, L=5, hidden=(6,), seed=seed, init_variant=variant)
        X = Rng(seed).normal((7, 4)) * 10
        c = forward_batch(m, X)
        np.testing.assert_allclose(c.p.reshape(7, M, K).sum(-1), 1.0, atol=1e-9)
        np.testing.assert_allclose(c.f_hat.sum(-1), 1.0, atol=1e-9)
        assert np.all(c.f_hat >= -1e-15)
        B = m.confusion_matrices()
        np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)

    def test_single_and_batch_agree(self):
        m = init_model(4, 3, 2, L=5, seed=1)
        X = Rng(9).normal((3, 4))
        np.testing.assert_allclose(forward(m, X[1]).f_hat, forward(m, X).f_hat[1], rtol=0, atol=1e-15)

    def test_predict_ties_to_lowest(self):
        m = zero_model()
        m.params["confusion_logits"] = np.zeros((2, 2, 2))
        np.testing.assert_array_equal(predict(m, np.ones((2, 3))), [0, 0])


class TestInit:
    def test_identity_logits_and_uniform_mixture(self):
        m = init_model(3, 4, 3)
        B = m.confusion_matrices()
        assert np.all(np.diagonal(B, axis1=1, axis2=2) > 0.9)
        np.testing.assert_array_equal(m.mixture_weights(), np.full(3, 1 / 3))

    def test_uniform_bounds(self):
        m = init_model(9, 2, 2, L=4, hidden=(16,))
        assert np.abs(m.params["encoder.0.weight"]).max() <= 1 / 3
        assert np.abs(m.params["encoder.1.weight"]).max() <= 1 / 4

    def test_variants(self):
        assert "mixture_head.weight" in init_model(3, 2, 2, init_variant="linear_d").params
        r = init_model(3, 2, 2, init_variant="random_B_learnable_d")
        assert not np.allclose(np.diagonal(r.params["confusion_logits"], axis1=1, axis2=2), 4.0)
        with pytest.raises(ValueError):
            init_model(3, 2, 2, init_variant="nope")
        with pytest.raises(ValueError):
            init_model(3, 1, 2)

    def test_copy_is_deep(self):
        m = init_model(3, 2, 2)
        c = m.copy()
        c.params["head.bias"][0] += 1
        assert m.params["head.bias"][0] != c.params["head.bias"][0]
        assert isinstance(c, PrismModel)
