"""Loss stack: Pearson, cross-entropy, MMD, video-MMD, KL, CSL/WSL."""

import math

import numpy as np
import pytest

from tyrppg import autodiff as ad
from tyrppg.autodiff import Tensor, grad_check
from tyrppg.losses import (
    KernelConfig,
    LossWeights,
    cross_entropy_loss,
    csl,
    kl_divergence,
    kl_divergence_smoothed,
    mmd2,
    mmd2_pmf,
    pearson_loss,
    soft_hr_distribution,
    video_mmd_loss,
    wsl,
)
from tyrppg.signal import DEFAULT_GRID, HrBinGrid, HrDistribution, max_gaussian

from reference_impl import mmd2_double_sum_reference


@pytest.fixture
def rng():
    return np.random.default_rng(17)


def tone(hr_bpm, n=120, fs=30.0, phase=0.0):
    return np.sin(2 * np.pi * (hr_bpm / 60.0) * np.arange(n) / fs + phase)


def onehot_dist(i, grid=DEFAULT_GRID):
    pmf = np.zeros(grid.n_bins)
    pmf[i] = 1.0
    return HrDistribution(grid=grid, pmf=pmf)


class TestPearson:
    def test_identical(self, rng):
        x = rng.standard_normal(50)
        assert pearson_loss(Tensor(x), Tensor(x.copy())).item() < 1e-9

    def test_negated(self, rng):
        x = rng.standard_normal(50)
        assert pearson_loss(Tensor(-x), Tensor(x)).item() == pytest.approx(2.0, abs=1e-9)

    def test_affine_invariance(self, rng):
        x = rng.standard_normal(80)
        assert pearson_loss(Tensor(2.5 * x + 7.0), Tensor(x)).item() < 1e-9

    def test_range(self, rng):
        for _ in range(40):
            v = pearson_loss(Tensor(rng.standard_normal(20)), Tensor(rng.standard_normal(20)))
            assert -1e-12 <= v.item() <= 2.0 + 1e-12

    def test_zero_variance_guarded(self, rng):
        v = pearson_loss(Tensor(np.zeros(20)), Tensor(rng.standard_normal(20)))
        assert np.isfinite(v.item()) and v.item() == pytest.approx(1.0)

    def test_too_short(self):
        with pytest.raises(ValueError, match="at least 2"):
            pearson_loss(Tensor([1.0]), Tensor([1.0]))


class TestCrossEntropy:
    def test_uniform_logits(self):
        v = cross_entropy_loss(Tensor(np.zeros(140)), 17)
        assert v.item() == pytest.approx(math.log(140), abs=1e-12)  # ~4.9416

    def test_margin_saturation(self):
        # at K=3 a +20 margin saturates below 1e-8
        logits = np.zeros(3)
        logits[1] = 20.0
        assert cross_entropy_loss(Tensor(logits), 1).item() < 1e-8
        # at K=140 the same margin leaves ln(1 + 139 e^-20)
        logits = np.zeros(140)
        logits[7] = 20.0
        expected = math.log(1.0 + 139.0 * math.exp(-20.0))
        assert cross_entropy_loss(Tensor(logits), 7).item() == pytest.approx(expected, rel=1e-9)

    def test_gradient_is_softmax_minus_onehot(self, rng):
        logits = Tensor(rng.standard_normal(12), requires_grad=True)
        loss = cross_entropy_loss(logits, 4)
        ad.backward(loss)
        p = np.exp(logits.data - logits.data.max())
        p /= p.sum()
        p[4] -= 1.0
        np.testing.assert_allclose(logits.grad, p, atol=1e-12)
        err = grad_check(lambda t: cross_entropy_loss(t, 4), Tensor(logits.data))
        assert err < 1e-6

    def test_bad_index(self):
        with pytest.raises(ValueError, match="gt_bin"):
            cross_entropy_loss(Tensor(np.zeros(5)), 5)


class TestMmd2:
    def test_identical_distributions(self):
        d = max_gaussian(90.0, DEFAULT_GRID, 2.0)
        assert mmd2(d, HrDistribution(DEFAULT_GRID, d.pmf.copy())) <= 1e-12

    def test_two_point_closed_form(self):
        kernel = KernelConfig(bandwidth_bpm=3.0)
        centers = DEFAULT_GRID.centers_bpm
        for i, j in [(10, 11), (20, 50), (0, 139)]:
            got = mmd2(onehot_dist(i), onehot_dist(j), kernel)
            gap = centers[i] - centers[j]
            closed = 2.0 - 2.0 * math.exp(-(gap**2) / (2.0 * 3.0**2))
            assert got == pytest.approx(closed, abs=1e-12)
            small = HrBinGrid(40.0, 80.0, 2.0)  # 20 bins keeps the loop oracle fast
            p = np.zeros(small.n_bins); p[3] = 1.0
            q = np.zeros(small.n_bins); q[11] = 1.0
            ref = mmd2_double_sum_reference(p, q, small.centers_bpm, 3.0)
            got_small = mmd2(HrDistribution(small, p), HrDistribution(small, q), kernel)
            assert got_small == pytest.approx(ref, abs=1e-12)

    def test_double_sum_oracle_random(self, rng):
        small = HrBinGrid(40.0, 80.0, 2.0)
        for _ in range(5):
            p = rng.uniform(0.01, 1.0, small.n_bins); p /= p.sum()
            q = rng.uniform(0.01, 1.0, small.n_bins); q /= q.sum()
            ref = mmd2_double_sum_reference(p, q, small.centers_bpm, 3.0)
            got = mmd2(HrDistribution(small, p), HrDistribution(small, q))
            assert got == pytest.approx(ref, abs=1e-12)

    def test_symmetry_bit_exact(self, rng):
        p = rng.uniform(0.01, 1.0, 140); p /= p.sum()
        q = rng.uniform(0.01, 1.0, 140); q /= q.sum()
        dp, dq = HrDistribution(DEFAULT_GRID, p), HrDistribution(DEFAULT_GRID, q)
        assert mmd2(dp, dq) == mmd2(dq, dp)

    def test_nonnegative(self, rng):
        for _ in range(40):
            p = rng.uniform(0, 1, 140); p /= p.sum()
            q = rng.uniform(0, 1, 140); q /= q.sum()
            assert mmd2(HrDistribution(DEFAULT_GRID, p), HrDistribution(DEFAULT_GRID, q)) >= 0.0

    def test_grid_mismatch(self):
        other = HrBinGrid(40.0, 180.0, 2.0)
        with pytest.raises(ValueError, match="grids"):
            mmd2(onehot_dist(3), HrDistribution(other, np.full(other.n_bins, 1.0 / other.n_bins)))


class TestKl:
    def test_identity(self):
        d = max_gaussian(80.0, DEFAULT_GRID, 3.0)
        assert kl_divergence(d, HrDistribution(DEFAULT_GRID, d.pmf.copy())) == 0.0

    def test_disjoint_support_is_infinite(self):
        assert kl_divergence(onehot_dist(5), onehot_dist(9)) == math.inf

    def test_two_bin_value(self):
        grid = HrBinGrid(40.0, 42.0, 1.0)
        p = HrDistribution(grid, np.array([0.5, 0.5]))
        q = HrDistribution(grid, np.array([0.75, 0.25]))
        expected = 0.5 * math.log(0.5 / 0.75) + 0.5 * math.log(0.5 / 0.25)  # ~0.1438
        assert kl_divergence(p, q) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.1438, abs=1e-4)

    def test_finite_iff_support_contained(self, rng):
        p = rng.uniform(0.01, 1, 140); p /= p.sum()
        q = p.copy()
        q[77] = 0.0
        q /= q.sum()
        dp = HrDistribution(DEFAULT_GRID, p)
        dq = HrDistribution(DEFAULT_GRID, q)
        assert kl_divergence(dp, dq) == math.inf     # support(p) not within support(q)
        assert math.isfinite(kl_divergence(dq, dp))  # the other way is fine
        assert math.isfinite(kl_divergence_smoothed(dp, dq))


class TestVideoMmd:
    def test_identical_signals(self):
        x = tone(90.0)
        v = video_mmd_loss(Tensor(x.copy()), Tensor(x.copy()), fs=30.0)
        assert v.item() <= 1e-9

    def test_noise_robust(self, rng):
        gt = tone(90.0) + 0.1 * rng.standard_normal(120)  # -20 dB white noise
        v = video_mmd_loss(Tensor(tone(90.0)), Tensor(gt), fs=30.0)
        assert v.item() < 1e-3

    def test_monotone_in_gap(self):
        near = video_mmd_loss(Tensor(tone(90.0)), Tensor(tone(60.0)), fs=30.0).item()
        far = video_mmd_loss(Tensor(tone(120.0)), Tensor(tone(60.0)), fs=30.0).item()
        assert far > near

    def test_soft_distribution_converges_to_hard_label(self):
        # 90.5 bpm sits on a bin center, so the band-power argmax is isolated
        # and the zero-temperature limit is the hard Gaussian label
        x = tone(90.5, n=300)
        soft = soft_hr_distribution(Tensor(x), 30.0, DEFAULT_GRID, sigma_bpm=2.0, tau_rel=1e-3)
        hard = max_gaussian(
            DEFAULT_GRID.centers_bpm[int(np.argmax(soft.data))], DEFAULT_GRID, 2.0
        )
        np.testing.assert_allclose(soft.data, hard.pmf, atol=1e-6)
        assert soft.data.sum() == pytest.approx(1.0, abs=1e-12)

    def test_hard_target_option(self):
        # against the hard label, the finite-temperature prediction side
        # leaves a small but nonzero residue even for identical signals —
        # which is why the soft target is the default
        x = tone(90.0, n=300)
        v = video_mmd_loss(Tensor(x), Tensor(x.copy()), fs=30.0, hard_target=True)
        assert 0.0 < v.item() < 0.05

    def test_root_variant(self):
        a = video_mmd_loss(Tensor(tone(90.0)), Tensor(tone(70.0)), fs=30.0, squared=True).item()
        b = video_mmd_loss(Tensor(tone(90.0)), Tensor(tone(70.0)), fs=30.0, squared=False).item()
        assert b == pytest.approx(math.sqrt(a), rel=1e-9)

    def test_zero_signal_is_finite_everywhere(self):
        pred = Tensor(np.zeros(119), requires_grad=True)
        v = video_mmd_loss(pred, Tensor(tone(80.0, n=119)), fs=30.0)
        assert np.isfinite(v.item())
        ad.backward(v)
        assert np.all(np.isfinite(pred.grad))


class TestCslWsl:
    kwargs = dict(fs=30.0, grid=DEFAULT_GRID, sigma_bpm=2.0)

    def test_identical_signals_make_wsl_zero(self):
        x = tone(75.0)
        # the video-MMD term is exactly 0; Pearson leaves variance-guard dust
        assert wsl(Tensor(x.copy()), Tensor(x.copy()), **self.kwargs).item() <= 1e-11

    def test_composition_matches_manual_sum(self, rng):
        pred = Tensor(tone(88.0) + 0.05 * rng.standard_normal(120))
        gt = Tensor(tone(92.0))
        logits = Tensor(rng.standard_normal(140))
        w = LossWeights(alpha=1.0, beta=1.0, gamma=2.0)
        total = csl(pred, gt, logits, 52, w, **self.kwargs).item()
        lc = cross_entropy_loss(logits, 52).item()
        lp = pearson_loss(pred, gt).item()
        lw = video_mmd_loss(pred, gt, **self.kwargs).item()
        assert total == pytest.approx(1.0 * lc + 1.0 * lp + 2.0 * lw, rel=1e-12)

    def test_paper_weight_arithmetic(self):
        # alpha=1, beta=1, gamma=2 on components (ln 140, 2, 0.25)
        assert 1.0 * math.log(140) + 1.0 * 2.0 + 2.0 * 0.25 == pytest.approx(7.4416, abs=1e-4)

    def test_gamma_zero_two_term(self, rng):
        pred = Tensor(rng.standard_normal(120))
        gt = Tensor(tone(92.0))
        logits = Tensor(rng.standard_normal(140))
        w = LossWeights(alpha=1.0, beta=1.0, gamma=0.0)
        got = csl(pred, gt, logits, 9, w, **self.kwargs).item()
        expected = cross_entropy_loss(logits, 9).item() + pearson_loss(pred, gt).item()
        assert got == pytest.approx(expected, rel=1e-12)

    def test_wsl_equals_csl_alpha_zero_bitexact(self, rng):
        pred = Tensor(tone(88.0) + 0.05 * rng.standard_normal(120))
        gt = Tensor(tone(92.0))
        a = wsl(pred, gt, LossWeights(), **self.kwargs).item()
        b = csl(pred, gt, None, None, LossWeights(alpha=0.0), **self.kwargs).item()
        assert a == b

    def test_linear_in_weights(self, rng):
        pred = Tensor(tone(88.0) + 0.05 * rng.standard_normal(120))
        gt = Tensor(tone(92.0))
        logits = Tensor(rng.standard_normal(140))
        parts = {}
        for name, w in [("a", LossWeights(1, 0, 0)), ("b", LossWeights(0, 1, 0)),
                        ("c", LossWeights(0, 0, 2))]:
            parts[name] = csl(pred, gt, logits, 30, w, **self.kwargs).item()
        combined = csl(pred, gt, logits, 30, LossWeights(1, 1, 2), **self.kwargs).item()
        assert combined == pytest.approx(sum(parts.values()), rel=1e-12)

    def test_missing_logits_rejected(self):
        x = tone(75.0)
        with pytest.raises(ValueError, match="cross-entropy"):
            csl(Tensor(x), Tensor(x.copy()), None, None, LossWeights(), **self.kwargs)

    def test_weights_validation(self):
        with pytest.raises(ValueError):
            LossWeights(alpha=-1.0)
        with pytest.raises(ValueError):
            KernelConfig(bandwidth_bpm=0.0)
