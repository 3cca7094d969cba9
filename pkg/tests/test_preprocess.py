"""Motion/appearance stream construction."""

import numpy as np
import pytest

from tyrppg.preprocess import (
    VideoClip,
    frame_stem,
    normalized_frame_diff,
    standardize_appearance,
    standardize_frames,
)


def _clip(frames, fs=30.0):
    return VideoClip(frames=frames, fs=fs)


@pytest.fixture
def rng():
    return np.random.default_rng(11)


class TestVideoClip:
    def test_validation(self, rng):
        with pytest.raises(ValueError, match="2 frames"):
            VideoClip(frames=np.ones((1, 3, 2, 2)), fs=30.0)
        with pytest.raises(ValueError, match="sampling"):
            VideoClip(frames=np.ones((3, 3, 2, 2)), fs=0.0)
        with pytest.raises(ValueError, match="gt_bvp"):
            VideoClip(frames=np.ones((3, 3, 2, 2)), fs=30.0, gt_bvp=np.ones(2))


class TestNormalizedFrameDiff:
    def test_direct_value(self):
        frames = np.stack([np.full((1, 2, 2), 1.0), np.full((1, 2, 2), 3.0)])
        out = normalized_frame_diff(_clip(frames), eps=0.0)
        np.testing.assert_array_equal(out, np.full((1, 1, 2, 2), 0.5))

    def test_static_frames_give_zero(self, rng):
        f = rng.uniform(0.1, 1.0, (1, 3, 4, 4))
        frames = np.repeat(f, 4, axis=0)
        out = normalized_frame_diff(_clip(frames), eps=1e-8)
        np.testing.assert_array_equal(out, np.zeros_like(out))

    def test_dark_pixels_stay_finite(self):
        frames = np.zeros((2, 1, 2, 2))
        out = normalized_frame_diff(_clip(frames), eps=1e-8)
        np.testing.assert_array_equal(out, np.zeros_like(out))
        # even without the eps guard the convention is 0, not NaN
        out0 = normalized_frame_diff(_clip(frames), eps=0.0)
        assert np.all(np.isfinite(out0))

    def test_bounded(self, rng):
        for seed in range(30):
            frames = np.random.default_rng(seed).uniform(0, 1, (5, 3, 3, 3))
            out = normalized_frame_diff(_clip(frames), eps=1e-8)
            assert np.all(out >= -1.0) and np.all(out <= 1.0)

    def test_swap_negates_exactly(self, rng):
        frames = rng.uniform(0, 1, (4, 3, 3, 3))
        fwd = normalized_frame_diff(_clip(frames), eps=1e-8)
        rev = normalized_frame_diff(_clip(frames[::-1].copy()), eps=1e-8)
        np.testing.assert_array_equal(fwd, -rev[::-1])

    def test_negative_eps_rejected(self, rng):
        with pytest.raises(ValueError, match="eps"):
            normalized_frame_diff(_clip(rng.uniform(0, 1, (3, 1, 2, 2))), eps=-1.0)


class TestStandardize:
    def test_constant_clip_is_zero(self):
        out = standardize_appearance(_clip(np.full((4, 3, 2, 2), 0.7)))
        np.testing.assert_array_equal(out, np.zeros_like(out))

    def test_two_level_channel(self):
        frames = np.zeros((2, 1, 2, 2))
        frames[1] = 1.0
        out = standardize_frames(frames)
        np.testing.assert_allclose(np.unique(out), [-1.0, 1.0], atol=1e-12)

    def test_zero_mean(self, rng):
        out = standardize_appearance(_clip(rng.uniform(0, 1, (6, 3, 5, 5))))
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)

    def test_idempotent(self, rng):
        x = standardize_frames(rng.uniform(0, 1, (6, 3, 5, 5)))
        np.testing.assert_allclose(standardize_frames(x), x, atol=1e-9)


class TestFrameStem:
    def test_identity(self, rng):
        x = rng.standard_normal((3, 2, 5, 5))
        np.testing.assert_array_equal(frame_stem(x, (5, 5), pool=1), x)

    def test_all_ones_invariant(self, rng):
        x = np.ones((3, 2, 8, 8))
        out = frame_stem(x, (3, 3), pool=2)
        np.testing.assert_array_equal(out, np.ones((3, 2, 3, 3)))

    def test_pooling_averages(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        out = frame_stem(x, (2, 2), pool=2)
        np.testing.assert_array_equal(out[0, 0], [[2.5, 4.5], [10.5, 12.5]])

    def test_seeded_determinism(self, rng):
        x = rng.standard_normal((4, 3, 10, 10))
        a = frame_stem(x, (3, 3), pool=2, rng=np.random.default_rng(5))
        b = frame_stem(x, (3, 3), pool=2, rng=np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_target_too_large(self, rng):
        with pytest.raises(ValueError, match="exceeds"):
            frame_stem(rng.standard_normal((2, 1, 4, 4)), (3, 3), pool=2)
