"""Encoder forward/backward correctness and checkpoint format."""

import numpy as np
import pytest

from epcontrast import (
    LossConfig,
    MlpParams,
    PointCloud,
    encoder_backward,
    encoder_forward,
    encoder_init,
    load_checkpoint,
    point_infonce,
    save_checkpoint,
)
from epcontrast.encoder import encoder_features
from epcontrast.errors import CacheError, FormatError
from helpers import rel_err


def random_cloud(rng, n=8):
    return PointCloud(rng.normal(size=(n, 3)), rng.uniform(0, 1, (n, 3)))


def flatten(params):
    return np.concatenate([a.ravel() for a in params.weights + params.biases])


def unflatten(vec, like):
    arrays, offset = [], 0
    for a in like.weights + like.biases:
        arrays.append(vec[offset : offset + a.size].reshape(a.shape))
        offset += a.size
    n = len(like.weights)
    return MlpParams(tuple(arrays[:n]), tuple(arrays[n:]))


class TestInit:
    def test_biases_zero_and_weights_bounded(self):
        params = encoder_init(9, 16, 8, seed=0)
        for b in params.biases:
            np.testing.assert_array_equal(b, 0.0)
        for w in params.weights:
            bound = np.sqrt(6.0 / w.shape[1])
            assert np.all(np.abs(w) <= bound)

    def test_deterministic(self):
        a = encoder_init(9, 16, 8, seed=5)
        b = encoder_init(9, 16, 8, seed=5)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_layer_sizes(self):
        params = encoder_init(9, 32, 12, seed=1)
        assert params.layer_sizes == (9, 32, 32, 12)


class TestForward:
    def test_zero_weights_zero_embedding(self):
        rng = np.random.default_rng(0)
        params = encoder_init(9, 8, 4, seed=0).map(np.zeros_like)
        emb, _ = encoder_forward(params, random_cloud(rng))
        np.testing.assert_array_equal(emb, 0.0)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(1)
        cloud = random_cloud(rng, n=12)
        params = encoder_init(9, 8, 4, seed=2)
        emb, _ = encoder_forward(params, cloud)
        perm = rng.permutation(12)
        permuted = PointCloud(cloud.positions[perm], cloud.colors[perm])
        emb_p, _ = encoder_forward(params, permuted)
        np.testing.assert_allclose(emb_p, emb[perm], rtol=0, atol=1e-12)

    def test_matches_per_point_loop_oracle(self):
        rng = np.random.default_rng(2)
        cloud = random_cloud(rng, n=6)
        params = encoder_init(9, 5, 3, seed=3)
        emb, _ = encoder_forward(params, cloud)
        feats = encoder_features(cloud)
        for i in range(cloud.n):
            h = feats[i]
            for w, b in zip(params.weights[:-1], params.biases[:-1]):
                h = np.maximum(w @ h + b, 0.0)
            h = params.weights[-1] @ h + params.biases[-1]
            np.testing.assert_allclose(emb[i], h, rtol=0, atol=1e-12)

    def test_feature_layout(self):
        rng = np.random.default_rng(3)
        cloud = random_cloud(rng, n=5)
        feats = encoder_features(cloud)
        assert feats.shape == (5, 9)
        np.testing.assert_allclose(feats[:, :3].mean(axis=0), 0.0, atol=1e-12)
        assert np.max(feats[:, :3].max(0) - feats[:, :3].min(0)) <= 1.0 + 1e-12
        np.testing.assert_array_equal(feats[:, 3:6], cloud.colors)
        np.testing.assert_array_equal(
            feats[:, 6:], np.tile(cloud.colors.mean(axis=0), (5, 1))
        )


class TestBackward:
    def test_zero_upstream_gradient(self):
        rng = np.random.default_rng(4)
        cloud = random_cloud(rng)
        params = encoder_init(9, 6, 4, seed=4)
        emb, cache = encoder_forward(params, cloud)
        grads = encoder_backward(params, cache, np.zeros_like(emb))
        for a in grads.weights + grads.biases:
            np.testing.assert_array_equal(a, 0.0)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        cloud = random_cloud(rng, n=8)
        # generic point in parameter space: fresh-init biases are exactly 0,
        # which parks dead-row pre-activations on the ReLU kink
        params = encoder_init(9, 6, 4, seed=5).map(
            lambda a: a + rng.normal(scale=0.05, size=a.shape)
        )
        upstream = rng.normal(size=(8, 4))

        def scalar(vec):
            p = unflatten(vec, params)
            emb, _ = encoder_forward(p, cloud)
            return float(np.sum(emb * upstream))

        emb, cache = encoder_forward(params, cloud)
        grads = flatten(encoder_backward(params, cache, upstream))
        vec = flatten(params)
        num = np.zeros_like(vec)
        h = 1e-5
        for i in range(vec.size):
            up, dn = vec.copy(), vec.copy()
            up[i] += h
            dn[i] -= h
            num[i] = (scalar(up) - scalar(dn)) / (2 * h)
        assert rel_err(grads, num) <= 1e-5

    def test_end_to_end_composition_with_loss(self):
        rng = np.random.default_rng(6)
        cloud1, cloud2 = random_cloud(rng, 7), random_cloud(rng, 7)
        params = encoder_init(9, 5, 4, seed=6).map(
            lambda a: a + rng.normal(scale=0.05, size=a.shape)
        )
        cfg = LossConfig(reduction="mean")

        def total(vec):
            p = unflatten(vec, params)
            e1, _ = encoder_forward(p, cloud1)
            e2, _ = encoder_forward(p, cloud2)
            return point_infonce(e1, e2, cfg).value

        e1, c1 = encoder_forward(params, cloud1)
        e2, c2 = encoder_forward(params, cloud2)
        out = point_infonce(e1, e2, cfg)
        grads = flatten(
            encoder_backward(params, c1, out.grad_f1).zip_map(
                encoder_backward(params, c2, out.grad_f2), np.add
            )
        )
        vec = flatten(params)
        num = np.zeros_like(vec)
        h = 1e-5
        for i in range(vec.size):
            up, dn = vec.copy(), vec.copy()
            up[i] += h
            dn[i] -= h
            num[i] = (total(up) - total(dn)) / (2 * h)
        assert rel_err(grads, num) <= 1e-5

    def test_stale_cache_rejected(self):
        rng = np.random.default_rng(7)
        cloud = random_cloud(rng)
        small = encoder_init(9, 6, 4, seed=7)
        big = encoder_init(9, 12, 4, seed=7)
        _, cache = encoder_forward(small, cloud)
        with pytest.raises(CacheError):
            encoder_backward(big, cache, np.zeros((cloud.n, 4)))


class TestCheckpoint:
    def test_roundtrip_bit_identical(self, tmp_path):
        params = encoder_init(9, 16, 8, seed=8)
        path = tmp_path / "enc.epck"
        save_checkpoint(params, path)
        back = load_checkpoint(path)
        for a, b in zip(params.weights + params.biases, back.weights + back.biases):
            np.testing.assert_array_equal(a, b)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.epck"
        path.write_bytes(b"XXXX" + bytes(16))
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(path)
