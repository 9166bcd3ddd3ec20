"""Simulated MRI imaging operator A = (mask) . FFT . (coil maps) and helpers.

The Fourier convention is fixed to centered orthonormal 2D transforms so
that the adjoint really is the conjugate transpose. Coil maps are
normalized so the squared magnitudes sum to one at every pixel, which
makes the data-consistency projection non-expansive.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError

KIND_2D = "2d-variable-density"
KIND_1D = "1d-variable-density"
_KIND_ALIASES = {
    "2d": KIND_2D,
    "1d": KIND_1D,
    KIND_2D: KIND_2D,
    KIND_1D: KIND_1D,
}

DEFAULT_CALIB_FRACTION = 1.0 / 64.0


def fft2c(x):
    """Centered orthonormal 2D FFT over the trailing two axes."""
    return np.fft.fftshift(
        np.fft.fft2(np.fft.ifftshift(x, axes=(-2, -1)), norm="ortho"),
        axes=(-2, -1),
    )


def ifft2c(k):
    """Centered orthonormal 2D inverse FFT over the trailing two axes."""
    return np.fft.fftshift(
        np.fft.ifft2(np.fft.ifftshift(k, axes=(-2, -1)), norm="ortho"),
        axes=(-2, -1),
    )


@dataclass(frozen=True)
class Mask:
    """Boolean k-space sampling pattern with a fully-sampled center block."""

    pattern: np.ndarray
    accel: float
    calib_region: tuple
    kind: str
    seed: int

    @property
    def shape(self):
        return self.pattern.shape

    @property
    def n_sampled(self):
        return int(self.pattern.sum())


@dataclass(frozen=True)
class CoilMaps:
    """Complex sensitivity profiles, one (H, W) map per coil."""

    maps: np.ndarray  # (C, H, W) complex

    @property
    def n_coils(self):
        return self.maps.shape[0]

    @property
    def shape(self):
        return self.maps.shape[1:]


@dataclass(frozen=True)
class ImagingOperator:
    """Undersampled multi-coil acquisition model and its exact adjoint."""

    mask: Mask
    coils: CoilMaps
    fft: str = "centered-orthonormal"

    def __post_init__(self):
        if self.mask.shape != self.coils.shape:
            raise ContractError(
                f"mask shape {self.mask.shape} != coil shape {self.coils.shape}"
            )

    @property
    def shape(self):
        return self.mask.shape

    @property
    def n_coils(self):
        return self.coils.n_coils


def _center_block_slices(shape, block):
    h, w = shape
    bh, bw = block
    r0 = h // 2 - bh // 2
    c0 = w // 2 - bw // 2
    return slice(r0, r0 + bh), slice(c0, c0 + bw)


# sigma depends only on the geometry and budget, not the seed; cache it so
# per-slice mask regeneration stays cheap
_SIGMA_CACHE = {}


def _bisect_sigma(dist_sq, budget, cache_key=None):
    """Find sigma so that sum(min(1, exp(-d^2 / 2 sigma^2))) == budget."""
    if cache_key is not None and cache_key in _SIGMA_CACHE:
        return _SIGMA_CACHE[cache_key]

    def expected(sig):
        return np.minimum(1.0, np.exp(-dist_sq / (2.0 * sig * sig))).sum()

    lo, hi = 1e-3, 1.0
    while expected(hi) < budget:
        hi *= 2.0
        if hi > 1e9:
            break
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if expected(mid) < budget:
            lo = mid
        else:
            hi = mid
    sigma = 0.5 * (lo + hi)
    if cache_key is not None:
        _SIGMA_CACHE[cache_key] = sigma
    return sigma


def _weighted_choice_without_replacement(weights, count, rng):
    """Gumbel top-k draw of `count` indices with probability ~ weights."""
    if count == 0:
        return np.empty(0, dtype=np.int64)
    g = rng.gumbel(size=weights.shape)
    keys = np.log(weights) + g
    return np.argpartition(-keys, count - 1)[:count]


def make_mask(shape, accel, kind=KIND_2D, calib_fraction=DEFAULT_CALIB_FRACTION, seed=0):
    """Variable-density random undersampling mask at nominal acceleration R.

    Samples exactly floor(H*W/R) distinct points (2D kind) or floor(W/R)
    full columns (1D kind), drawn without replacement with probability
    proportional to a centered Gaussian density. The Gaussian width is
    bisected so the expected budget matches the target, hence higher R
    concentrates samples near the k-space center. A fully-sampled
    calibration block is always included and counted against the budget.
    """
    h, w = int(shape[0]), int(shape[1])
    if accel < 1:
        raise ConfigurationError(f"acceleration must be >= 1, got {accel}")
    try:
        kind = _KIND_ALIASES[str(kind).lower()]
    except KeyError:
        raise ConfigurationError(f"unknown mask kind {kind!r}") from None

    rng = np.random.default_rng(seed)
    pattern = np.zeros((h, w), dtype=bool)

    if kind == KIND_2D:
        budget = int(h * w / accel)
        side_h = max(1, round(h * math.sqrt(calib_fraction)))
        side_w = max(1, round(w * math.sqrt(calib_fraction)))
        calib = (side_h, side_w)
        if side_h * side_w > budget:
            raise ConfigurationError(
                f"calibration block {calib} exceeds sampling budget {budget}"
            )
        if accel == 1:
            pattern[:] = True
            return Mask(pattern, float(accel), calib, kind, seed)
        rs, cs = _center_block_slices((h, w), calib)
        pattern[rs, cs] = True
        rows = np.arange(h) - h // 2
        cols = np.arange(w) - w // 2
        dist_sq = (rows[:, None] ** 2 + cols[None, :] ** 2).astype(np.float64)
        sigma = _bisect_sigma(dist_sq.ravel(), budget, (h, w, budget, "2d"))
        weights = np.minimum(1.0, np.exp(-dist_sq / (2.0 * sigma * sigma)))
        free = ~pattern
        remaining = budget - int(pattern.sum())
        idx_free = np.flatnonzero(free.ravel())
        take = _weighted_choice_without_replacement(
            weights.ravel()[idx_free], remaining, rng
        )
        flat = pattern.ravel()
        flat[idx_free[take]] = True
        pattern = flat.reshape(h, w)
    else:
        n_lines = int(w / accel)
        n_calib = max(1, round(w * calib_fraction))
        calib = (h, n_calib)
        if n_calib > n_lines:
            raise ConfigurationError(
                f"{n_calib} calibration lines exceed line budget {n_lines}"
            )
        if accel == 1:
            pattern[:] = True
            return Mask(pattern, float(accel), calib, kind, seed)
        line_sel = np.zeros(w, dtype=bool)
        c0 = w // 2 - n_calib // 2
        line_sel[c0:c0 + n_calib] = True
        cols = (np.arange(w) - w // 2).astype(np.float64)
        dist_sq = cols**2
        sigma = _bisect_sigma(dist_sq, n_lines, (h, w, n_lines, "1d"))
        weights = np.minimum(1.0, np.exp(-dist_sq / (2.0 * sigma * sigma)))
        idx_free = np.flatnonzero(~line_sel)
        take = _weighted_choice_without_replacement(
            weights[idx_free], n_lines - n_calib, rng
        )
        line_sel[idx_free[take]] = True
        pattern[:, line_sel] = True

    return Mask(pattern, float(accel), calib, kind, seed)


def make_coil_maps(shape, n_coils, seed=0):
    """Smooth synthetic sensitivity maps normalized to sum |B|^2 = 1.

    Each coil is a broad Gaussian lobe centered on an evenly spaced border
    position with a gentle linear phase ramp; a small magnitude floor keeps
    the pixel-wise normalization well conditioned everywhere.
    """
    h, w = int(shape[0]), int(shape[1])
    if n_coils < 1:
        raise ConfigurationError(f"coil count must be >= 1, got {n_coils}")
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    radius = 0.5 * min(h, w)
    lobe_sigma = 0.6 * min(h, w)
    theta0 = rng.uniform(0, 2 * math.pi)
    maps = np.empty((n_coils, h, w), dtype=np.complex128)
    for c in range(n_coils):
        theta = theta0 + 2 * math.pi * c / n_coils
        py = cy + radius * math.sin(theta)
        px = cx + radius * math.cos(theta)
        d2 = (yy - py) ** 2 + (xx - px) ** 2
        mag = np.exp(-d2 / (2 * lobe_sigma**2)) + 0.05
        ramp = rng.uniform(-0.5, 0.5, size=2)
        phase = (
            2 * math.pi * (ramp[0] * (yy - cy) + ramp[1] * (xx - cx)) / max(h, w)
            + rng.uniform(0, 2 * math.pi)
        )
        maps[c] = mag * np.exp(1j * phase)
    norm = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    maps /= norm
    maps.setflags(write=False)
    return CoilMaps(maps)


def apply_A(x, op):
    """Forward acquisition: per coil, mask the centered FFT of B_c * x."""
    if x.shape != op.shape:
        raise ContractError(f"image shape {x.shape} != operator shape {op.shape}")
    return op.mask.pattern * fft2c(op.coils.maps * x)


def apply_AH(y, op):
    """Adjoint: coil-combine the inverse FFT of the masked k-space."""
    expected = (op.n_coils,) + op.shape
    if y.shape != expected:
        raise ContractError(f"k-space shape {y.shape} != expected {expected}")
    return np.sum(np.conj(op.coils.maps) * ifft2c(op.mask.pattern * y), axis=0)


def dc_projection(x_cur, y, op):
    """One data-consistency step: x + A^H (y - A x)."""
    return x_cur + apply_AH(y - apply_A(x_cur, op), op)


def zero_filled(y, op):
    """Adjoint reconstruction A^H y, the no-prior baseline."""
    return apply_AH(y, op)


def dc_loss(x, y, op):
    """Mean absolute k-space residual over sampled entries.

    Real and imaginary parts are summed and the total divided by the
    number of sampled multi-coil entries.
    """
    resid = apply_A(x, op) - y
    n = op.n_coils * op.mask.n_sampled
    if n == 0:
        return 0.0
    total = np.abs(resid.real).sum() + np.abs(resid.imag).sum()
    return float(total / n)
