"""Image quality metrics with unity-mean normalization and paired testing.

PSNR and SSIM consume magnitude images. Both inputs are divided by their
own means before measurement, which makes the metrics invariant to
positive global scaling of either image. The PSNR peak and the SSIM
dynamic range are taken as the maximum of the normalized reference.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.ndimage import convolve

from .errors import ContractError, EvaluationError

SSIM_WINDOW = 7
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_magnitude(img):
    arr = np.asarray(img)
    if np.iscomplexobj(arr):
        arr = np.abs(arr)
    return arr.astype(np.float64)


def _normalize_pair(ref, rec):
    ref = _as_magnitude(ref)
    rec = _as_magnitude(rec)
    if ref.shape != rec.shape:
        raise ContractError(f"shape mismatch {ref.shape} vs {rec.shape}")
    ref_mean = ref.mean()
    if ref_mean == 0:
        raise EvaluationError("reference image has zero mean")
    rec_mean = rec.mean()
    if rec_mean == 0:
        raise EvaluationError("reconstruction has zero mean")
    return ref / ref_mean, rec / rec_mean


def psnr(ref, rec):
    """Peak signal-to-noise ratio in dB after unity-mean normalization.

    Returns +inf when the normalized images coincide; differences at the
    level of float64 rounding (which arise when one input is a scaled
    copy of the other) count as coincident.
    """
    ref_n, rec_n = _normalize_pair(ref, rec)
    mse = np.mean((ref_n - rec_n) ** 2)
    peak = ref_n.max()
    rounding_floor = (64 * np.finfo(np.float64).eps * peak) ** 2
    if mse <= rounding_floor:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size, sigma):
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(ref, rec, window_size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Mean structural similarity over Gaussian-weighted sliding windows.

    Local weighted moments are computed with a window_size x window_size
    Gaussian kernel; the map is averaged over the valid interior ignoring
    the border where the window would leave the image.
    """
    ref_n, rec_n = _normalize_pair(ref, rec)
    if min(ref_n.shape) < window_size:
        raise ContractError(
            f"image {ref_n.shape} smaller than SSIM window {window_size}"
        )
    kernel = _gaussian_window(window_size, sigma)
    drange = ref_n.max()
    c1 = (SSIM_K1 * drange) ** 2
    c2 = (SSIM_K2 * drange) ** 2

    def wmean(a):
        return convolve(a, kernel, mode="constant")

    mu_x = wmean(ref_n)
    mu_y = wmean(rec_n)
    var_x = wmean(ref_n * ref_n) - mu_x * mu_x
    var_y = wmean(rec_n * rec_n) - mu_y * mu_y
    cov = wmean(ref_n * rec_n) - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    pad = window_size // 2
    interior = ssim_map[pad:-pad, pad:-pad]
    return float(interior.mean())


def _rank_abs(diffs):
    """Average ranks of |d|, matching standard tie handling."""
    order = np.argsort(np.abs(diffs), kind="stable")
    ranks = np.empty(len(diffs))
    sorted_abs = np.abs(diffs)[order]
    i = 0
    while i < len(diffs):
        j = i
        while j + 1 < len(diffs) and sorted_abs[j + 1] == sorted_abs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def signed_rank_test(a, b):
    """Two-sided Wilcoxon signed-rank p-value for paired samples.

    Zero differences are dropped. Uses exhaustive enumeration of the
    2^n sign assignments for n <= 12 and a tie-corrected normal
    approximation beyond; identical samples return the degenerate p = 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError("paired samples must be 1D arrays of equal length")
    diffs = a - b
    diffs = diffs[diffs != 0]
    n = len(diffs)
    if n == 0:
        return 1.0
    if n < 5:
        raise EvaluationError(
            f"only {n} nonzero differences; need at least 5 for the test"
        )
    ranks = _rank_abs(diffs)
    w_plus = ranks[diffs > 0].sum()

    if n <= 12:
        count_le = 0
        count_ge = 0
        total = 1 << n
        for signs in range(total):
            w = 0.0
            for i in range(n):
                if signs >> i & 1:
                    w += ranks[i]
            if w <= w_plus + 1e-12:
                count_le += 1
            if w >= w_plus - 1e-12:
                count_ge += 1
        p = 2.0 * min(count_le, count_ge) / total
        return min(1.0, p)

    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(np.abs(diffs), return_counts=True)
    var -= (tie_counts**3 - tie_counts).sum() / 48.0
    if var <= 0:
        return 1.0
    z = (w_plus - mean) / math.sqrt(var)
    return min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))


# ---------------------------------------------------------------------------
# report assembly


@dataclass(frozen=True)
class SliceMetrics:
    method: str
    contrast: str
    subject: str
    slice_index: int
    psnr: float
    ssim: float


@dataclass
class MetricReport:
    """Per-slice metric records plus derived summaries and p-values.

    Summaries are mean +/- std over subject means by default; set
    subject_mean_first=False to pool slices directly.
    """

    records: list = field(default_factory=list)
    subject_mean_first: bool = True

    def add(self, method, contrast, subject, slice_index, psnr_val, ssim_val):
        self.records.append(
            SliceMetrics(method, contrast, subject, slice_index,
                         float(psnr_val), float(ssim_val))
        )

    def methods(self):
        return sorted({r.method for r in self.records})

    def contrasts(self):
        return sorted({r.contrast for r in self.records})

    def values(self, method, metric, contrast=None):
        recs = [
            r for r in self.records
            if r.method == method and (contrast is None or r.contrast == contrast)
        ]
        recs.sort(key=lambda r: (r.contrast, r.subject, r.slice_index))
        return np.array([getattr(r, metric) for r in recs]), recs

    def summary(self, method, metric, contrast=None):
        vals, recs = self.values(method, metric, contrast)
        if len(vals) == 0:
            raise EvaluationError(f"no records for method {method!r}")
        if self.subject_mean_first:
            subjects = sorted({r.subject for r in recs})
            vals = np.array([
                np.mean([getattr(r, metric) for r in recs if r.subject == s])
                for s in subjects
            ])
        return float(vals.mean()), float(vals.std())

    def pairwise_p(self, metric, contrast=None):
        """Signed-rank p per method pair; None when the sample is too small."""
        out = {}
        for m1, m2 in combinations(self.methods(), 2):
            v1, r1 = self.values(m1, metric, contrast)
            v2, r2 = self.values(m2, metric, contrast)
            keys1 = [(r.contrast, r.subject, r.slice_index) for r in r1]
            keys2 = [(r.contrast, r.subject, r.slice_index) for r in r2]
            if keys1 != keys2:
                raise EvaluationError(
                    f"methods {m1!r} and {m2!r} cover different slices"
                )
            try:
                out[(m1, m2)] = signed_rank_test(v1, v2)
            except EvaluationError:
                out[(m1, m2)] = None
        return out

    def to_table(self):
        """Delimited text summary, one row per method x contrast."""
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(
            ["method", "contrast", "psnr_mean", "psnr_std", "ssim_mean",
             "ssim_std", "n_slices"]
        )
        for method in self.methods():
            for contrast in self.contrasts():
                vals, recs = self.values(method, "psnr", contrast)
                if len(vals) == 0:
                    continue
                pm, ps = self.summary(method, "psnr", contrast)
                sm, ss = self.summary(method, "ssim", contrast)
                writer.writerow(
                    [method, contrast, f"{pm:.4f}", f"{ps:.4f}",
                     f"{sm:.6f}", f"{ss:.6f}", len(recs)]
                )
        return buf.getvalue()

    def to_json(self):
        doc = {
            "subject_mean_first": self.subject_mean_first,
            "records": [
                {
                    "method": r.method,
                    "contrast": r.contrast,
                    "subject": r.subject,
                    "slice_index": r.slice_index,
                    "psnr": r.psnr,
                    "ssim": r.ssim,
                }
                for r in sorted(
                    self.records,
                    key=lambda r: (r.method, r.contrast, r.subject, r.slice_index),
                )
            ],
            "summaries": {
                method: {
                    metric: dict(zip(("mean", "std"), self.summary(method, metric)))
                    for metric in ("psnr", "ssim")
                }
                for method in self.methods()
            },
            "p_values": {
                f"{m1}|{m2}|{metric}": p
                for metric in ("psnr", "ssim")
                for (m1, m2), p in self.pairwise_p(metric).items()
            },
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        report = cls(subject_mean_first=doc["subject_mean_first"])
        for r in doc["records"]:
            report.add(r["method"], r["contrast"], r["subject"],
                       r["slice_index"], r["psnr"], r["ssim"])
        return report
