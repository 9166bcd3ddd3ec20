import itertools
import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from adadiff import ContractError, EvaluationError
from adadiff.metrics import (
    MetricReport,
    _gaussian_window,
    psnr,
    signed_rank_test,
    ssim,
)


class TestPSNR:
    def test_scaled_copy_is_infinite(self):
        rng = np.random.default_rng(0)
        ref = rng.uniform(0.1, 1.0, (32, 32))
        for c in (0.5, 1.0, 7.3):
            assert psnr(ref, c * ref) == math.inf

    def test_identical_is_infinite(self):
        ref = np.ones((8, 8))
        assert psnr(ref, ref) == math.inf

    def test_single_flipped_pixel_matches_formula(self):
        ref = np.ones((64, 64))
        rec = ref.copy()
        rec[10, 20] = 0.0
        # direct evaluation: both normalized to unit mean, then
        # 10 log10(peak^2 / mse)
        ref_n = ref / ref.mean()
        rec_n = rec / rec.mean()
        mse = np.mean((ref_n - rec_n) ** 2)
        expected = 10 * math.log10(ref_n.max() ** 2 / mse)
        assert psnr(ref, rec) == pytest.approx(expected, abs=1e-10)

    def test_zero_mean_reference_raises(self):
        with pytest.raises(EvaluationError):
            psnr(np.zeros((8, 8)), np.ones((8, 8)))

    def test_scale_invariance_both_sides(self):
        rng = np.random.default_rng(1)
        ref = rng.uniform(0.1, 1.0, (32, 32))
        rec = rng.uniform(0.1, 1.0, (32, 32))
        base = psnr(ref, rec)
        assert psnr(3.7 * ref, rec) == pytest.approx(base, abs=1e-10)
        assert psnr(ref, 0.02 * rec) == pytest.approx(base, abs=1e-10)

    def test_complex_inputs_use_magnitude(self):
        rng = np.random.default_rng(2)
        mag = rng.uniform(0.1, 1.0, (16, 16))
        phase = np.exp(1j * rng.uniform(0, 2 * np.pi, (16, 16)))
        rec = rng.uniform(0.1, 1.0, (16, 16))
        assert psnr(mag * phase, rec) == pytest.approx(psnr(mag, rec), abs=1e-12)


def ssim_windowed_reference(ref, rec, window=7, sigma=1.5):
    """Independent brute-force SSIM: explicit loop over window centers."""
    ref = ref / ref.mean()
    rec = rec / rec.mean()
    kernel = _gaussian_window(window, sigma)
    drange = ref.max()
    c1 = (0.01 * drange) ** 2
    c2 = (0.03 * drange) ** 2
    pad = window // 2
    h, w = ref.shape
    vals = []
    for i in range(pad, h - pad):
        for j in range(pad, w - pad):
            wx = ref[i - pad:i + pad + 1, j - pad:j + pad + 1]
            wy = rec[i - pad:i + pad + 1, j - pad:j + pad + 1]
            mx = (kernel * wx).sum()
            my = (kernel * wy).sum()
            vx = (kernel * wx * wx).sum() - mx * mx
            vy = (kernel * wy * wy).sum() - my * my
            cxy = (kernel * wx * wy).sum() - mx * my
            vals.append(
                ((2 * mx * my + c1) * (2 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2))
            )
    return float(np.mean(vals))


class TestSSIM:
    def test_identical_images_give_one(self):
        rng = np.random.default_rng(3)
        ref = rng.uniform(0.1, 1.0, (24, 24))
        assert ssim(ref, ref) == 1.0

    def test_constant_images_give_one(self):
        assert ssim(np.full((16, 16), 0.4), np.full((16, 16), 0.4)) == 1.0

    def test_matches_independent_reference(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            ref = rng.uniform(0.05, 1.0, (20, 20))
            rec = np.clip(ref + rng.normal(0, 0.1, (20, 20)), 0.01, None)
            assert ssim(ref, rec) == pytest.approx(
                ssim_windowed_reference(ref, rec), abs=1e-6
            )

    def test_scale_invariance(self):
        rng = np.random.default_rng(5)
        ref = rng.uniform(0.1, 1.0, (20, 20))
        rec = rng.uniform(0.1, 1.0, (20, 20))
        assert ssim(5 * ref, rec) == pytest.approx(ssim(ref, rec), abs=1e-12)

    def test_range(self):
        rng = np.random.default_rng(6)
        ref = rng.uniform(0.1, 1.0, (20, 20))
        rec = rng.uniform(0.1, 1.0, (20, 20))
        assert -1.0 <= ssim(ref, rec) <= 1.0

    def test_too_small_image_raises(self):
        with pytest.raises(ContractError):
            ssim(np.ones((4, 4)), np.ones((4, 4)))


def enumeration_oracle(a, b):
    """Independent exact two-sided signed-rank p via itertools + scipy ranks."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d = d[d != 0]
    ranks = scipy.stats.rankdata(np.abs(d))
    w_obs = ranks[d > 0].sum()
    le = ge = 0
    total = 0
    for signs in itertools.product((0, 1), repeat=len(d)):
        w = sum(r for s, r in zip(signs, ranks) if s)
        le += w <= w_obs + 1e-12
        ge += w >= w_obs - 1e-12
        total += 1
    return min(1.0, 2.0 * min(le, ge) / total)


class TestSignedRank:
    def test_identical_samples_degenerate(self):
        a = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        assert signed_rank_test(a, a) == 1.0

    def test_hand_case_n6_matches_enumeration(self):
        a = np.array([12.1, 11.3, 9.8, 10.4, 13.0, 9.1])
        b = np.array([10.2, 10.9, 10.1, 9.5, 11.8, 9.0])
        assert signed_rank_test(a, b) == pytest.approx(
            enumeration_oracle(a, b), abs=1e-12
        )

    def test_matches_scipy_exact_no_ties(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            a = rng.normal(size=10)
            b = a + rng.normal(0.3, 1.0, size=10)
            if np.any(a == b):
                continue
            expected = scipy.stats.wilcoxon(a, b, mode="exact").pvalue
            assert signed_rank_test(a, b) == pytest.approx(expected, abs=1e-10)

    def test_symmetry_under_swap(self):
        rng = np.random.default_rng(8)
        a = rng.normal(size=9)
        b = rng.normal(size=9)
        assert signed_rank_test(a, b) == pytest.approx(
            signed_rank_test(b, a), abs=1e-12
        )

    def test_large_n_uses_normal_approximation(self):
        rng = np.random.default_rng(9)
        a = rng.normal(size=40)
        b = a + 0.8 + rng.normal(0, 0.2, size=40)
        p = signed_rank_test(a, b)
        assert 0 < p < 0.01

    def test_too_few_nonzero_raises(self):
        a = np.array([1.0, 2.0, 3.0, 4.0])
        b = np.array([1.0, 2.0, 3.0, 5.0])
        with pytest.raises(EvaluationError):
            signed_rank_test(a, b)

    @given(
        data=st.lists(
            st.tuples(
                st.floats(min_value=-5, max_value=5),
                st.floats(min_value=-5, max_value=5),
            ),
            min_size=5,
            max_size=12,
        )
    )
    @settings(max_examples=40, deadline=None)
    def test_exact_mode_matches_enumeration_property(self, data):
        a = np.array([p[0] for p in data])
        b = np.array([p[1] for p in data])
        d = a - b
        if (d != 0).sum() < 5:
            return
        p = signed_rank_test(a, b)
        assert 0 < p <= 1
        assert p == pytest.approx(enumeration_oracle(a, b), abs=1e-12)


class TestMetricReport:
    def _toy_report(self):
        rng = np.random.default_rng(10)
        report = MetricReport()
        for method, bias in (("full", 2.0), ("zero_filled", 0.0)):
            for subject in ("sub000", "sub001", "sub002"):
                for k in range(3):
                    report.add(
                        method, "T1", subject, k,
                        30 + bias + rng.normal(0, 0.5),
                        0.9 + 0.02 * bias + rng.normal(0, 0.005),
                    )
        return report

    def test_summary_recomputable(self):
        report = self._toy_report()
        vals, recs = report.values("full", "psnr")
        subjects = sorted({r.subject for r in recs})
        sub_means = np.array([
            np.mean([r.psnr for r in recs if r.subject == s]) for s in subjects
        ])
        mean, std = report.summary("full", "psnr")
        assert mean == pytest.approx(sub_means.mean(), abs=1e-12)
        assert std == pytest.approx(sub_means.std(), abs=1e-12)

    def test_slice_pooled_flag(self):
        report = self._toy_report()
        report.subject_mean_first = False
        vals, _ = report.values("full", "psnr")
        mean, std = report.summary("full", "psnr")
        assert mean == pytest.approx(vals.mean(), abs=1e-12)
        assert std == pytest.approx(vals.std(), abs=1e-12)

    def test_pairwise_p_values(self):
        report = self._toy_report()
        p = report.pairwise_p("psnr")
        assert ("full", "zero_filled") in p
        assert 0 < p[("full", "zero_filled")] <= 1

    def test_json_round_trip(self):
        report = self._toy_report()
        text = report.to_json()
        back = MetricReport.from_json(text)
        assert back.to_json() == text

    def test_table_has_expected_rows(self):
        table = self._toy_report().to_table()
        lines = [ln for ln in table.strip().splitlines()]
        assert len(lines) == 1 + 2  # header + 2 methods x 1 contrast
