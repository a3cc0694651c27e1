"""Baseline coders: table fits, clamping, codebooks, context models."""

import numpy as np
import pytest

from seqpix.baselines import (
    CONTEXT_TEMPLATE,
    ConstantProbability,
    ContextModel,
    NearestCenterCoder,
    PixelwiseProbability,
    cross_validate_centers,
)
from seqpix.exceptions import TooManyCenters


def flat_images(rows, width=None):
    arr = np.asarray(rows, dtype=np.uint8)
    w = width or arr.shape[1]
    return arr.reshape(len(arr), 1, w) if arr.ndim == 2 else arr


class TestConstantProbability:
    def test_all_zero_train_clamps_to_epsilon(self):
        m = ConstantProbability(epsilon=0.01).fit(np.zeros((5, 2, 3), dtype=np.uint8))
        assert m.p_ == 0.01

    def test_mean_fit(self):
        X = np.array([[0, 1], [1, 1]], dtype=np.uint8).reshape(2, 1, 2)
        assert ConstantProbability().fit(X).p_ == pytest.approx(0.75)

    def test_pinned_half_costs_raw_size(self):
        rng = np.random.default_rng(0)
        X = rng.integers(0, 2, (10, 4, 4)).astype(np.uint8)
        m = ConstantProbability(p=0.5).fit(X)
        np.testing.assert_allclose(m.bits_per_image(X), 16.0, atol=1e-12)

    def test_training_mean_is_optimal_on_train(self):
        # no value on a fine grid beats the fitted mean for training bits
        rng = np.random.default_rng(3)
        X = (rng.random((40, 6, 6)) < 0.23).astype(np.uint8)
        fitted = ConstantProbability().fit(X)
        best = fitted.mean_bits(X)
        for p in np.linspace(0.001, 0.999, 999):
            probe = ConstantProbability(p=p).fit(X)
            assert probe.mean_bits(X) >= best - 1e-9


class TestPixelwiseProbability:
    def test_constant_pixel_clamped(self):
        X = np.ones((7, 1, 3), dtype=np.uint8)
        X[:, 0, 0] = 0
        m = PixelwiseProbability(epsilon=0.05).fit(X)
        assert m.p_.tolist() == [0.05, 0.95, 0.95]

    def test_bits_match_closed_form(self):
        X = np.array([[0, 1, 1], [1, 1, 0]], dtype=np.uint8).reshape(2, 1, 3)
        m = PixelwiseProbability(epsilon=1e-3).fit(X)
        image = np.array([1, 1, 0], dtype=np.uint8).reshape(1, 1, 3)
        expected = -(np.log2(0.5) + np.log2(1 - 1e-3) + np.log2(0.5))
        assert m.bits_per_image(image)[0] == pytest.approx(expected, abs=1e-9)


class TestNearestCenters:
    def test_every_image_its_own_center(self):
        rng = np.random.default_rng(1)
        X = np.unique(rng.integers(0, 2, (40, 8)), axis=0).astype(np.uint8)
        m = NearestCenterCoder(n_centers=len(X), epsilon=0.01, random_state=0).fit(
            X.reshape(-1, 1, 8)
        )
        assert np.all(m.mismatch_ == 0.01)
        # and every image sits at distance zero from its chosen center
        sides = [m.encode_side(row) for row in X]
        assert all(np.array_equal(m.centers_[s], row) for s, row in zip(sides, X))

    def test_empty_center_gets_epsilon_table(self):
        # duplicate population: one center attracts everything, the other
        # (identical) center is shadowed by the tie rule and stays empty
        X = np.zeros((6, 4), dtype=np.uint8)
        m = NearestCenterCoder(n_centers=2, epsilon=0.02, random_state=0).fit(
            X.reshape(-1, 1, 4)
        )
        counts = m.assigned_counts_
        assert counts.tolist() == [6, 0]
        assert np.all(m.mismatch_[1] == 0.02)

    def test_hand_counted_mismatch(self):
        # three 4-pixel images, one center: the center is one of them and
        # the mismatch table is the mean per-pixel disagreement
        X = np.array([[0, 0, 1, 1], [0, 1, 1, 1], [1, 0, 1, 0]], dtype=np.uint8)
        m = NearestCenterCoder(n_centers=1, epsilon=0.01, random_state=0).fit(
            X.reshape(-1, 1, 4)
        )
        center = m.centers_[0]
        diffs = (X != center).mean(axis=0)
        np.testing.assert_allclose(m.mismatch_[0], np.clip(diffs, 0.01, 0.99))

    def test_tie_breaks_to_lowest_index(self):
        centers_pool = np.array([[0, 0, 0, 0], [1, 1, 1, 1]], dtype=np.uint8)
        m = NearestCenterCoder(n_centers=2, epsilon=0.1, random_state=0).fit(
            np.repeat(centers_pool, 3, axis=0).reshape(-1, 1, 4)
        )
        probe = np.array([0, 0, 1, 1], dtype=np.uint8)  # distance 2 from both
        assert m.encode_side(probe) == 0

    def test_closed_form_cost_at_center(self):
        # image equal to its center: n_x * -log2(1-eps) plus fractional
        # index bits; with 256 pixels, eps=0.01 and 1024 centers that is
        # 10 + 256*0.0145 = 13.71 bits
        index_bits = np.log2(1024)
        diff_bits = 256 * -np.log2(0.99)
        assert index_bits + diff_bits == pytest.approx(13.711889841949, abs=1e-9)

    def test_single_center_index_is_free(self):
        X = (np.arange(48).reshape(12, 4) % 2).astype(np.uint8)
        m = NearestCenterCoder(n_centers=1, epsilon=0.25, random_state=0).fit(
            X.reshape(-1, 1, 4)
        )
        assert m.index_bits_ == 0.0
        assert m.index_bits_raw_ == 0

    def test_too_many_centers(self):
        with pytest.raises(TooManyCenters):
            NearestCenterCoder(n_centers=5).fit(np.zeros((4, 1, 4), dtype=np.uint8))

    def test_bits_match_stream_costs(self, synth_train):
        X = synth_train.as_images()[:50]
        m = NearestCenterCoder(n_centers=8, epsilon=0.05, random_state=1).fit(X)
        analytic = m.bits_per_image(X[:5])
        for i in range(5):
            flat = X[i].ravel()
            side = m.encode_side(flat)
            bits = m.stream_bits(flat, side)
            cursor = m.begin_stream(side)
            total = m.index_bits_
            for b in bits:
                p = cursor.next_p()
                total += -np.log2(p if b else 1.0 - p)
                cursor.push(int(b))
            assert total == pytest.approx(analytic[i], abs=1e-9)
            assert np.array_equal(cursor.image(), flat)


class TestCenterCrossValidation:
    def test_single_grid_point_returned(self, synth_train):
        X = synth_train.as_images()[:60]
        n, eps, table = cross_validate_centers(X, [4], [0.05], random_state=0)
        assert (n, eps) == (4, 0.05)
        assert set(table) == {(4, 0.05)}

    def test_half_epsilon_costs_one_bit_per_pixel(self, synth_train):
        # eps=0.5 clamps every table entry to 0.5: each difference bit
        # costs exactly 1, so held-out bits are log2(n) + n_pixels
        X = synth_train.as_images()[:60]
        n, eps, table = cross_validate_centers(X, [4], [0.5], random_state=0)
        expected = np.log2(4) + synth_train.n_pixels
        assert table[(4, 0.5)] == pytest.approx(expected, abs=1e-9)

    def test_deterministic(self, synth_train):
        X = synth_train.as_images()[:80]
        a = cross_validate_centers(X, [2, 4], [0.1, 0.05], random_state=5)
        b = cross_validate_centers(X, [2, 4], [0.1, 0.05], random_state=5)
        assert a[:2] == b[:2] and a[2] == b[2]

    def test_empty_grid_rejected(self, synth_train):
        with pytest.raises(ValueError):
            cross_validate_centers(synth_train.as_images(), [], [0.1])


class TestContextModel:
    def test_template_is_strictly_causal(self):
        for dy, dx in CONTEXT_TEMPLATE:
            assert dy < 0 or (dy == 0 and dx < 0)
        assert len(CONTEXT_TEMPLATE) == 10

    def test_all_zero_training(self):
        X = np.zeros((4, 5, 5), dtype=np.uint8)
        m = ContextModel(epsilon=0.01).fit(X)
        # the observed context (all zeros) predicts the clamp floor,
        # unseen contexts stay at one half
        assert m.table_[0] == 0.01
        assert m.table_[1023] == 0.5

    def test_uniform_table_costs_one_bit_per_pixel(self, synth_train):
        X = synth_train.as_images()[:10]
        m = ContextModel().fit(X)
        m.table_[:] = 0.5
        np.testing.assert_allclose(m.bits_per_image(X), synth_train.n_pixels, atol=1e-12)

    def test_two_by_two_hand_enumeration(self):
        # image [[1,0],[0,1]]: contexts are formed from left/above pixels,
        # out-of-image reads as zero
        img = np.array([[1, 0], [0, 1]], dtype=np.uint8)
        m = ContextModel(epsilon=0.01).fit(img.reshape(1, 2, 2))
        # pixel (0,0): empty context -> outcome 1
        # pixel (0,1): left=1 -> context bit0 = 1 -> index 1, outcome 0
        # pixel (1,0): above=1 (bit4), up-right=0 (bit5) -> index 16, outcome 0
        # pixel (1,1): left=0, above-left(bit3)=1, above(bit4)=0 -> index 8, outcome 1
        counts = m.context_counts_
        assert counts[0] == 1 and counts[1] == 1 and counts[16] == 1 and counts[8] == 1
        assert counts.sum() == 4
        assert m.table_[0] == 0.99  # one observation, outcome one, clamped
        assert m.table_[1] == 0.01
        assert m.table_[16] == 0.01
        assert m.table_[8] == 0.99

    def test_hand_computed_bits(self):
        img = np.array([[1, 0], [0, 1]], dtype=np.uint8)
        m = ContextModel(epsilon=0.01).fit(img.reshape(1, 2, 2))
        bits = m.bits_per_image(img.reshape(1, 2, 2))[0]
        assert bits == pytest.approx(4 * -np.log2(0.99), abs=1e-9)

    def test_cursor_matches_vectorized(self, synth_train):
        X = synth_train.as_images()[:8]
        m = ContextModel().fit(X)
        analytic = m.bits_per_image(X)
        for i in range(len(X)):
            flat = X[i].ravel()
            cursor = m.begin_stream(None)
            total = 0.0
            for b in m.stream_bits(flat, None):
                p = cursor.next_p()
                total += -np.log2(p if b else 1.0 - p)
                cursor.push(int(b))
            assert total == pytest.approx(analytic[i], abs=1e-8)
            assert np.array_equal(cursor.image(), flat)

    def test_unseen_context_is_half(self, synth_train):
        m = ContextModel().fit(synth_train.as_images()[:20])
        unseen = m.context_counts_ == 0
        assert unseen.any()
        assert np.all(m.table_[unseen] == 0.5)
