"""Loss values against brute-force oracles, gradients against differences."""

import numpy as np
import pytest

from epcontrast import (
    EvalCounter,
    LossConfig,
    SegmentAssignment,
    ag_contrast,
    brute_force_loss,
    channel_contrast,
    count_pairs,
    ep_contrast,
    point_infonce,
    segment_pool,
    segment_pool_backward,
)
from epcontrast.errors import EmptyNegativeSetError, ShapeError
from epcontrast.rng import substream
from helpers import central_diff, eval_loss, random_instance, rel_err

EYE2 = np.eye(2)
SEG2 = SegmentAssignment(np.array([0, 1]), 2)
SUM_CFG = LossConfig(reduction="sum")


class TestSegmentPool:
    def test_average_of_two_rows(self):
        f = np.array([[1.0, 3.0], [3.0, 5.0]])
        seg = SegmentAssignment(np.array([0, 0]), 1)
        np.testing.assert_array_equal(segment_pool(f, seg), [[2.0, 4.0]])

    def test_singleton_segments_identity(self):
        rng = np.random.default_rng(0)
        f = rng.normal(size=(6, 4))
        seg = SegmentAssignment(np.arange(6), 6)
        np.testing.assert_array_equal(segment_pool(f, seg), f)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        f = rng.normal(size=(20, 5))
        ids = np.sort(np.concatenate([np.arange(4), rng.integers(0, 4, 16)]))
        seg = SegmentAssignment(ids, 4)
        want = np.zeros((4, 5))
        for alpha in range(4):
            members = np.flatnonzero(ids == alpha)
            for k in range(5):
                want[alpha, k] = sum(f[i, k] for i in members) / len(members)
        np.testing.assert_allclose(segment_pool(f, seg), want, rtol=0, atol=1e-12)

    def test_backward_distributes_by_size(self):
        rng = np.random.default_rng(2)
        seg = SegmentAssignment(np.array([0, 0, 1]), 2)
        g = rng.normal(size=(2, 3))
        back = segment_pool_backward(g, seg)
        np.testing.assert_allclose(back[0], g[0] / 2)
        np.testing.assert_allclose(back[2], g[1])

    def test_row_count_mismatch(self):
        with pytest.raises(ShapeError):
            segment_pool(np.zeros((3, 2)), SEG2)


class TestWorkedExamples:
    """Frozen values, each verified by the brute-force oracle."""

    def test_point_loss_orthonormal(self):
        out = point_infonce(EYE2, EYE2, SUM_CFG)
        assert out.value == pytest.approx(-2.0, abs=1e-12)
        assert out.value == pytest.approx(brute_force_loss("pc", EYE2, EYE2, cfg=SUM_CFG))

    def test_point_loss_conventional_denominator(self):
        cfg = LossConfig(reduction="sum", include_positive_in_denominator=True)
        out = point_infonce(EYE2, EYE2, cfg)
        want = 2.0 * np.log(1.0 + np.exp(-1.0))  # 0.62652...
        assert out.value == pytest.approx(want, rel=1e-12)
        assert out.value == pytest.approx(brute_force_loss("pc", EYE2, EYE2, cfg=cfg))

    def test_segment_loss_singleton_segments(self):
        out = ag_contrast(EYE2, EYE2, SEG2, SUM_CFG)
        assert out.value == pytest.approx(-2.0, abs=1e-12)
        assert out.value == pytest.approx(brute_force_loss("ag", EYE2, EYE2, SEG2, SUM_CFG))

    def test_channel_loss_orthonormal(self):
        out = channel_contrast(EYE2, EYE2, SUM_CFG)
        assert out.value == pytest.approx(-2.0, abs=1e-12)

    def test_channel_loss_swapped_columns(self):
        swapped = EYE2[:, ::-1].copy()
        out = channel_contrast(EYE2, swapped, SUM_CFG)
        assert out.value == pytest.approx(2.0, abs=1e-12)
        assert out.value == pytest.approx(brute_force_loss("cc", EYE2, swapped, cfg=SUM_CFG))

    def test_combined_loss(self):
        out = ep_contrast(EYE2, EYE2, SEG2, SUM_CFG)
        assert out.value == pytest.approx(-2.2, abs=1e-12)


class TestOracleEquivalence:
    @pytest.mark.parametrize("kind", ["pc", "ag", "cc", "ep"])
    def test_hundred_instances_all_modes(self, kind):
        rng = substream(800, 0)
        for i in range(100):
            n = int(rng.integers(2, 65))
            c = int(rng.integers(2, 9))
            m = int(rng.integers(2, min(9, n + 1)))
            f1, f2, seg = random_instance(rng, n, c, m)
            for include_pos in (False, True):
                for normalize in (False, True):
                    cfg = LossConfig(
                        reduction="sum",
                        include_positive_in_denominator=include_pos,
                        normalize_rows=normalize,
                        normalize_channels=normalize,
                    )
                    got = eval_loss(kind, f1, f2, seg, cfg).value
                    want = brute_force_loss(kind, f1, f2, seg, cfg)
                    assert rel_err(got, want) <= 1e-10, (
                        f"{kind} instance {i} include_pos={include_pos} "
                        f"normalize={normalize}: {got} vs {want}"
                    )

    def test_mean_reduction_agrees_too(self):
        rng = substream(801, 0)
        f1, f2, seg = random_instance(rng, 12, 4, 3)
        cfg = LossConfig(reduction="mean")
        for kind in ("pc", "ag", "cc", "ep"):
            got = eval_loss(kind, f1, f2, seg, cfg).value
            want = brute_force_loss(kind, f1, f2, seg, cfg)
            assert rel_err(got, want) <= 1e-10


class TestGradients:
    @pytest.mark.parametrize("kind", ["pc", "ag", "cc", "ep"])
    @pytest.mark.parametrize("normalize", [False, True])
    def test_against_central_differences(self, kind, normalize):
        rng = substream(802, 0)
        for _ in range(5):
            n = int(rng.integers(4, 9))
            c = int(rng.integers(3, 6))
            m = int(rng.integers(2, 4))
            f1, f2, seg = random_instance(rng, n, c, m)
            cfg = LossConfig(
                reduction="mean", normalize_rows=normalize, normalize_channels=normalize
            )
            out = eval_loss(kind, f1, f2, seg, cfg)
            num1 = central_diff(lambda x: eval_loss(kind, x, f2, seg, cfg).value, f1)
            num2 = central_diff(lambda x: eval_loss(kind, f1, x, seg, cfg).value, f2)
            assert rel_err(out.grad_f1, num1) <= 1e-5
            assert rel_err(out.grad_f2, num2) <= 1e-5

    def test_sampled_denominator_gradients_are_exact(self):
        rng = substream(803, 0)
        f1, f2, _ = random_instance(rng, 10, 4, 2)
        cfg = LossConfig(reduction="mean", neg_sample_count=3)
        # freeze one sampled denominator by replaying the same stream
        out = point_infonce(f1, f2, cfg, substream(55, 0))

        def value(a, b):
            return point_infonce(a, b, cfg, substream(55, 0)).value

        num1 = central_diff(lambda x: value(x, f2), f1)
        num2 = central_diff(lambda x: value(f1, x), f2)
        assert rel_err(out.grad_f1, num1) <= 1e-5
        assert rel_err(out.grad_f2, num2) <= 1e-5


class TestStructuralProperties:
    def test_singleton_segments_reduce_to_point_loss_bitwise(self):
        rng = substream(804, 0)
        f1 = rng.normal(size=(9, 5))
        f2 = rng.normal(size=(9, 5))
        seg = SegmentAssignment(np.arange(9), 9)
        for cfg in (LossConfig(reduction="mean"), LossConfig(reduction="sum"),
                    LossConfig(reduction="sum", normalize_rows=False)):
            a = ag_contrast(f1, f2, seg, cfg)
            p = point_infonce(f1, f2, cfg)
            assert a.value == p.value
            np.testing.assert_array_equal(a.grad_f1, p.grad_f1)
            np.testing.assert_array_equal(a.grad_f2, p.grad_f2)

    def test_lambda_zero_equals_segment_loss_exactly(self):
        rng = substream(805, 0)
        f1, f2, seg = random_instance(rng, 8, 4, 3)
        cfg = LossConfig(lam=0.0, reduction="mean")
        ep = ep_contrast(f1, f2, seg, cfg)
        ag = ag_contrast(f1, f2, seg, cfg)
        assert ep.value == ag.value
        np.testing.assert_array_equal(ep.grad_f1, ag.grad_f1)

    def test_lambda_linearity(self):
        rng = substream(806, 0)
        f1, f2, seg = random_instance(rng, 8, 4, 3)
        parts = {}
        for lam in (0.0, 1.0):
            cfg = LossConfig(lam=lam, reduction="mean")
            parts[lam] = ep_contrast(f1, f2, seg, cfg)
        cc = channel_contrast(f1, f2, LossConfig(reduction="mean"))
        for lam in (0.1, 0.5, 2.0):
            out = ep_contrast(f1, f2, seg, LossConfig(lam=lam, reduction="mean"))
            assert out.value == pytest.approx(parts[0.0].value + lam * cc.value, rel=1e-12)
            np.testing.assert_allclose(
                out.grad_f1, parts[0.0].grad_f1 + lam * cc.grad_f1, rtol=0, atol=1e-12
            )
            np.testing.assert_allclose(
                out.grad_f2, parts[0.0].grad_f2 + lam * cc.grad_f2, rtol=0, atol=1e-12
            )

    def test_symmetric_segment_loss_averages_directions(self):
        rng = substream(807, 0)
        f1, f2, seg = random_instance(rng, 10, 4, 3)
        cfg = LossConfig(reduction="mean", symmetric_ag=True)
        base = LossConfig(reduction="mean")
        sym = ag_contrast(f1, f2, seg, cfg)
        fwd = ag_contrast(f1, f2, seg, base)
        rev = ag_contrast(f2, f1, seg, base)
        assert sym.value == pytest.approx(0.5 * (fwd.value + rev.value), rel=1e-12)

    def test_orthogonality_shrinks_negative_contribution(self):
        """Scaling a negative channel similarity toward 0 never raises the
        logsumexp of the negative terms."""
        rng = substream(808, 0)
        f1 = rng.normal(size=(20, 4))
        f2 = rng.normal(size=(20, 4))
        cfg = LossConfig(reduction="sum")
        h1 = f1 / np.linalg.norm(f1, axis=0)
        h2 = f2 / np.linalg.norm(f2, axis=0)
        gram = h1.T @ h2
        for shrink in (1.0, 0.7, 0.3, 0.0):
            g = gram.copy()
            g[0, 1] *= shrink
            off = np.abs(g[0][np.arange(4) != 0])
            lse = np.log(np.sum(np.exp(off / cfg.tau)))
            if shrink == 1.0:
                base = lse
            else:
                assert lse <= base + 1e-12
                base = lse

    def test_empty_negative_sets_raise(self):
        one = np.ones((1, 3))
        with pytest.raises(EmptyNegativeSetError):
            point_infonce(one, one, SUM_CFG)
        col = np.ones((4, 1))
        with pytest.raises(EmptyNegativeSetError):
            channel_contrast(col, col, SUM_CFG)
        seg_one = SegmentAssignment(np.zeros(4, dtype=int), 1)
        f = np.ones((4, 3))
        with pytest.raises(EmptyNegativeSetError):
            ag_contrast(f, f, seg_one, SUM_CFG)


class TestSampling:
    def test_oversampling_uses_all_negatives_bitwise(self):
        rng = substream(809, 0)
        f1, f2, _ = random_instance(rng, 7, 3, 2)
        full = point_infonce(f1, f2, LossConfig(reduction="mean"))
        for k in (6, 7, 100):
            sampled = point_infonce(
                f1, f2, LossConfig(reduction="mean", neg_sample_count=k), substream(1, 1)
            )
            assert sampled.value == full.value
            np.testing.assert_array_equal(sampled.grad_f1, full.grad_f1)

    def test_sampling_requires_stream(self):
        rng = substream(810, 0)
        f1, f2, _ = random_instance(rng, 10, 3, 2)
        with pytest.raises(ValueError, match="stream"):
            point_infonce(f1, f2, LossConfig(neg_sample_count=2))

    def test_sampling_deterministic_per_stream(self):
        rng = substream(811, 0)
        f1, f2, _ = random_instance(rng, 12, 3, 2)
        cfg = LossConfig(reduction="mean", neg_sample_count=4)
        a = point_infonce(f1, f2, cfg, substream(3, 0))
        b = point_infonce(f1, f2, cfg, substream(3, 0))
        assert a.value == b.value


class TestPairCounting:
    def test_formulas(self):
        assert count_pairs("pc", 100, 1, 1) == (100, 9900)
        assert count_pairs("ag", 100, 10, 1) == (100, 900)
        assert count_pairs("cc", 1, 1, 32) == (32, 992)

    @pytest.mark.parametrize("kind", ["pc", "ag", "cc"])
    def test_oracle_counter_matches_count_pairs(self, kind):
        rng = substream(812, 0)
        for include_pos in (False, True):
            n, c, m = 11, 5, 4
            f1, f2, seg = random_instance(rng, n, c, m)
            counter = EvalCounter()
            cfg = LossConfig(reduction="sum", include_positive_in_denominator=include_pos)
            brute_force_loss(kind, f1, f2, seg, cfg, counter)
            pos, neg = count_pairs(kind, n, m, c)
            assert counter.count == pos + neg
