import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ltretrain.classifier import (
    COSINE,
    LINEAR,
    LWS,
    ClassifierParams,
    PosthocSpec,
    apply_balanced_softmax_offset,
    apply_ldam_margin,
    forward_logits,
    load_checkpoint,
    maxnorm_project,
    posthoc_adjust,
    predict,
    save_checkpoint,
)
from ltretrain.data import stats_from_counts
from ltretrain.errors import IngestionError, InvalidArgument, NumericalDomainError
from ltretrain.losses import softmax

finite = st.floats(-50, 50, allow_nan=False)


def random_params(rng, K=4, D=3, head=LINEAR):
    return ClassifierParams(
        rng.standard_normal((K, D)), rng.standard_normal(K), rng.uniform(0.5, 2, K), head
    )


class TestForward:
    def test_linear_identity(self):
        p = ClassifierParams(np.eye(2), np.zeros(2), np.ones(2))
        np.testing.assert_array_equal(forward_logits(p, [3.0, -1.0]), [3.0, -1.0])

    def test_cosine_self_similarity(self, rng):
        x = rng.standard_normal(5)
        W = rng.standard_normal((3, 5))
        W[1] = x
        p = ClassifierParams(W, np.zeros(3), np.ones(3), COSINE)
        assert forward_logits(p, x, cosine_scale=7.0)[1] == pytest.approx(7.0, abs=1e-12)

    def test_lws_uniform_scale_keeps_argmax(self, rng):
        W = rng.standard_normal((2, 4))
        lin = ClassifierParams(W, np.zeros(2), np.ones(2))
        lws = ClassifierParams(W, np.zeros(2), np.array([2.0, 2.0]), LWS)
        X = rng.standard_normal((200, 4))
        np.testing.assert_array_equal(predict(forward_logits(lin, X)), predict(forward_logits(lws, X)))

    def test_batch_matches_rows(self, rng):
        for head in (LINEAR, COSINE, LWS):
            p = random_params(rng, head=head)
            X = rng.standard_normal((6, 3))
            batch = forward_logits(p, X)
            for i in range(6):
                np.testing.assert_allclose(batch[i], forward_logits(p, X[i]), rtol=1e-12, atol=1e-14)

    def test_cosine_zero_norm(self, rng):
        p = random_params(rng, head=COSINE)
        with pytest.raises(NumericalDomainError):
            forward_logits(p, np.zeros(3))
        p.W[2] = 0
        with pytest.raises(NumericalDomainError):
            forward_logits(p, np.ones(3))

    @given(st.floats(0.01, 100), st.floats(0.01, 100), st.integers(0, 3))
    def test_cosine_scale_invariance(self, a, s, row):
        rng = np.random.default_rng(0)
        p = random_params(rng, head=COSINE)
        x = rng.standard_normal(3)
        z = forward_logits(p, x)
        p2 = p.copy()
        p2.W[row] *= s
        np.testing.assert_allclose(forward_logits(p2, a * x), z, atol=1e-12)

    def test_lws_requires_positive_scales(self):
        with pytest.raises(InvalidArgument):
            ClassifierParams(np.ones((2, 2)), np.zeros(2), np.array([1.0, 0.0]), LWS)

    def test_rejects_non_finite(self):
        with pytest.raises(NumericalDomainError):
            ClassifierParams(np.array([[np.inf]]).repeat(2, 0), np.zeros(2), np.ones(2))


class TestTrainingTransforms:
    def test_ldam_unit_count(self):
        z = np.array([0.3, 1.0, -2.0])
        out = apply_ldam_margin(z, 1, [5, 1, 9], C=0.5, gamma=0.25)
        np.testing.assert_array_equal(out, [0.3, 0.5, -2.0])

    def test_ldam_zero_c(self):
        z = np.array([0.3, 1.0])
        np.testing.assert_array_equal(apply_ldam_margin(z, 0, [4, 9], 0.0, 0.25), z)

    def test_ldam_margin_ratio(self):
        # mpmath at 40 digits: 100**0.25
        z = np.zeros(2)
        m0 = -apply_ldam_margin(z, 0, [100, 1], 0.5, 0.25)[0]
        m1 = -apply_ldam_margin(z, 1, [100, 1], 0.5, 0.25)[1]
        assert m1 / m0 == pytest.approx(3.16227766016837933, rel=1e-14)
        assert m0 == pytest.approx(0.158113883008418967, rel=1e-14)

    def test_ldam_batch(self):
        z = np.zeros((2, 2))
        out = apply_ldam_margin(z, np.array([0, 1]), [1, 16], 1.0, 0.5)
        np.testing.assert_allclose(out, [[-1.0, 0.0], [0.0, -0.25]])

    def test_ldam_accepts_stats(self):
        out = apply_ldam_margin(np.zeros(2), 1, stats_from_counts([100, 1]), 0.5, 0.25)
        assert out[1] == -0.5

    def test_bs_equal_counts_same_softmax(self, rng):
        z = rng.standard_normal(5)
        np.testing.assert_allclose(softmax(apply_balanced_softmax_offset(z, [7] * 5)), softmax(z), atol=1e-15)

    def test_bs_unit_counts(self):
        z = np.array([0.1, -3.0])
        np.testing.assert_array_equal(apply_balanced_softmax_offset(z, [1, 1]), z)

    def test_bs_log_ratio(self):
        z = np.array([0.4, 0.9])
        out = apply_balanced_softmax_offset(z, [100, 10])
        assert (out[0] - out[1]) - (z[0] - z[1]) == pytest.approx(2.302585092994045684, rel=1e-14)


class TestPosthoc:
    def test_taunorm_zero(self, rng):
        p = random_params(rng)
        x = rng.standard_normal(3)
        h = posthoc_adjust(p, forward_logits(p, x), PosthocSpec("TauNorm", 0.0), None, x)
        np.testing.assert_array_equal(h, p.W @ x)

    def test_taunorm_one_unit_rows(self, rng):
        p = random_params(rng)
        X = np.eye(3)
        h = posthoc_adjust(p, None, PosthocSpec("TauNorm", 1.0), None, X)
        # column i of h is W_eff applied to e_i, so rows of W_eff are h.T
        np.testing.assert_allclose(np.linalg.norm(h.T, axis=1), 1.0, rtol=1e-14)

    def test_taunorm_zero_row(self, rng):
        p = random_params(rng)
        p.W[0] = 0
        with pytest.raises(NumericalDomainError):
            posthoc_adjust(p, None, PosthocSpec("TauNorm", 1.0), None, np.ones(3))

    def test_logit_adjust_zero(self, rng):
        z = rng.standard_normal(4)
        h = posthoc_adjust(None, z, PosthocSpec("LogitAdjust", 0.0), [5, 1, 2, 3], None)
        np.testing.assert_array_equal(h, z)

    def test_logit_adjust_values(self):
        h = posthoc_adjust(None, np.zeros(2), PosthocSpec("LogitAdjust", 2.0), [math.e, 1.0], None)
        np.testing.assert_allclose(h, [-2.0, 0.0], atol=1e-15)

    @given(arrays(np.float64, 6, elements=st.integers(-50, 50).map(float)), st.integers(-100, 100).map(float))
    def test_logit_adjust_equal_counts_keeps_argmax(self, z, shift):
        # integer logits keep ties exact under the ln(9) shift's rounding
        h = posthoc_adjust(None, z, PosthocSpec("LogitAdjust", 1.0), [9] * 6, None)
        assert predict(h) == predict(z)
        # commutes with uniform shifts
        np.testing.assert_allclose(
            posthoc_adjust(None, z + shift, PosthocSpec("LogitAdjust", 1.0), [9] * 6, None), h + shift, atol=1e-12
        )

    def test_none(self, rng):
        z = rng.standard_normal(3)
        np.testing.assert_array_equal(posthoc_adjust(None, z, PosthocSpec(), None, None), z)

    def test_spec_validation(self):
        with pytest.raises(InvalidArgument):
            PosthocSpec("Bogus")
        with pytest.raises(InvalidArgument):
            PosthocSpec("TauNorm", float("inf"))


class TestMaxNorm:
    def test_shrinks_long_row(self):
        p = ClassifierParams(np.array([[2.0, 0.0], [0.3, 0.4]]), np.ones(2), np.ones(2))
        q = maxnorm_project(p, 1.0)
        np.testing.assert_allclose(q.W[0], [1.0, 0.0])
        np.testing.assert_array_equal(q.W[1], p.W[1])
        np.testing.assert_array_equal(q.b, p.b)

    def test_inside_ball_untouched(self, rng):
        p = random_params(rng)
        q = maxnorm_project(p, 100.0)
        assert q == p

    @given(arrays(np.float64, (5, 4), elements=finite), st.floats(0.01, 10))
    def test_idempotent_and_non_expanding(self, W, radius):
        p = ClassifierParams(W, np.zeros(5), np.ones(5))
        once = maxnorm_project(p, radius)
        twice = maxnorm_project(once, radius)
        np.testing.assert_allclose(twice.W, once.W, rtol=1e-15, atol=0)
        n0, n1 = np.linalg.norm(W, axis=1), np.linalg.norm(once.W, axis=1)
        assert np.all(n1 <= n0 + 1e-15)
        assert np.all(n1 <= radius * (1 + 1e-15))


class TestPredict:
    def test_simple(self):
        assert predict([0.1, 0.9]) == 1

    def test_tie_lowest_index(self):
        assert predict([0.5, 0.5]) == 0
        assert predict([[1.0, 3.0, 3.0]]).tolist() == [1]

    def test_nan(self):
        with pytest.raises(NumericalDomainError):
            predict([0.1, np.nan])

    @given(arrays(np.float64, 5, elements=st.integers(-5, 5).map(float)), st.integers(-100, 100).map(float))
    def test_shift_invariant(self, z, c):
        # integer-valued logits keep z + c exact, so ties survive the shift
        assert predict(z + c) == predict(z)


class TestRowShift:
    @settings(max_examples=30)
    @given(st.integers(0, 10_000))
    def test_common_shift_keeps_probabilities(self, seed):
        rng = np.random.default_rng(seed)
        p = random_params(rng, K=6, D=5)
        X = rng.standard_normal((20, 5))
        eps = rng.standard_normal(5)
        eps *= rng.uniform(0, 10) / np.linalg.norm(eps)
        q = ClassifierParams(p.W + eps, p.b, p.c)
        assert np.max(np.abs(softmax(forward_logits(q, X)) - softmax(forward_logits(p, X)))) <= 1e-12


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        for head in (LINEAR, COSINE, LWS):
            p = random_params(rng, K=3, D=2, head=head)
            save_checkpoint(p, tmp_path / "c")
            assert load_checkpoint(tmp_path / "c") == p

    def test_layout(self, tmp_path):
        p = ClassifierParams(np.array([[1.0, 2.0]]).repeat(2, 0), np.array([0.5, -0.5]), np.ones(2))
        save_checkpoint(p, tmp_path / "c")
        lines = (tmp_path / "c").read_text().splitlines()
        assert lines[0] == "LTCLS v1 K=2 D=2 HEAD=Linear"
        assert len(lines) == 2 + 3
        assert lines[3] == "0.5 -0.5"

    def test_bad_file(self, tmp_path):
        (tmp_path / "c").write_text("LTCLS v1 K=2 D=2 HEAD=Linear\n1 2\n")
        with pytest.raises(IngestionError):
            load_checkpoint(tmp_path / "c")
