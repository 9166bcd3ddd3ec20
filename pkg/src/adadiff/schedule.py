"""Strided variance-preserving noise schedule and its closed-form posterior.

The forward process corrupts a clean image x_0 over a coarse grid of
T/k strided steps. Per-step coefficients follow the variance-preserving
construction

    alpha_bar(tau) = exp(-beta_min * tau - 0.5 * (beta_max - beta_min) * tau^2)

evaluated at tau = r*k/T, with gamma[r] = 1 - alpha_bar[r]/alpha_bar[r-1]
the variance of the single strided transition r-1 -> r.

Complex images are handled as two real channels; the "noise" argument is
always a standard-normal draw per channel supplied by the caller, so every
operation here is a pure function. Coefficients are Python floats, which
makes the methods work unchanged on numpy arrays, torch tensors, and
scalars.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError

DEFAULT_BETA_MIN = 0.1
DEFAULT_BETA_MAX = 20.0


def _shape_of(x):
    return getattr(x, "shape", ())


@dataclass(frozen=True)
class DiffusionSchedule:
    """Noise coefficients over T total steps traversed with stride k.

    Arrays are indexed by the strided step index r in {0, .., T/k}.
    ``alpha_bar[0]`` is exactly 1 (step 0 is noise-free); ``gamma[0]``
    and ``alpha[0]`` are the trivial zero-step transition (0 and 1) and
    exist only so that all arrays share the same indexing.
    """

    t_total: int
    stride: int
    beta_min: float
    beta_max: float
    alpha_bar: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    gamma: np.ndarray = field(repr=False)

    @property
    def steps(self):
        """Number of strided steps T/k."""
        return self.t_total // self.stride

    def time_value(self, r):
        """Raw diffusion time t = r*k for the strided index r."""
        return r * self.stride

    def _check_index(self, r, low, high):
        if not (low <= r <= high):
            raise ContractError(
                f"step index {r} outside [{low}, {high}] for a "
                f"{self.steps}-step schedule"
            )

    def forward_diffuse(self, x0, r, noise):
        """Jump from the clean image directly to strided step r.

        x_r = sqrt(alpha_bar[r]) * x0 + sqrt(1 - alpha_bar[r]) * noise
        """
        self._check_index(r, 0, self.steps)
        if _shape_of(x0) != _shape_of(noise):
            raise ContractError(
                f"x0 shape {_shape_of(x0)} != noise shape {_shape_of(noise)}"
            )
        ab = float(self.alpha_bar[r])
        return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * noise

    def forward_step(self, x_prev, r, noise):
        """Single strided transition from step r-1 to step r.

        x_r = sqrt(alpha[r]) * x_{r-1} + sqrt(gamma[r]) * noise
        """
        self._check_index(r, 1, self.steps)
        if _shape_of(x_prev) != _shape_of(noise):
            raise ContractError(
                f"x shape {_shape_of(x_prev)} != noise shape {_shape_of(noise)}"
            )
        return (
            math.sqrt(float(self.alpha[r])) * x_prev
            + math.sqrt(float(self.gamma[r])) * noise
        )

    def posterior_params(self, x0_tilde, x_next, r):
        """Gaussian posterior over step r given the clean estimate and step r+1.

        Conditioning q(x_r | x0) with the transition q(x_{r+1} | x_r) gives

            mean = c0 * x0_tilde + c1 * x_next
            c0   = sqrt(alpha_bar[r]) * gamma[r+1] / (1 - alpha_bar[r+1])
            c1   = sqrt(alpha[r+1]) * (1 - alpha_bar[r]) / (1 - alpha_bar[r+1])
            var  = (1 - alpha_bar[r]) / (1 - alpha_bar[r+1]) * gamma[r+1]

        Both coefficients use the variance of the r -> r+1 transition. At
        r = 0 the posterior degenerates to (x0_tilde, 0) exactly because
        alpha_bar[0] = 1.
        """
        self._check_index(r, 0, self.steps - 1)
        if _shape_of(x0_tilde) != _shape_of(x_next):
            raise ContractError(
                f"x0_tilde shape {_shape_of(x0_tilde)} != x_next shape "
                f"{_shape_of(x_next)}"
            )
        ab_r = float(self.alpha_bar[r])
        ab_n = float(self.alpha_bar[r + 1])
        g = float(self.gamma[r + 1])
        a = float(self.alpha[r + 1])
        c0 = math.sqrt(ab_r) * g / (1.0 - ab_n)
        c1 = math.sqrt(a) * (1.0 - ab_r) / (1.0 - ab_n)
        var = (1.0 - ab_r) / (1.0 - ab_n) * g
        return c0 * x0_tilde + c1 * x_next, var


def make_schedule(t_total, stride, beta_min=DEFAULT_BETA_MIN, beta_max=DEFAULT_BETA_MAX):
    """Build the strided schedule for T total steps with stride k.

    Raises ConfigurationError when k does not divide T or the rate
    endpoints are not ordered 0 < beta_min < beta_max.
    """
    t_total = int(t_total)
    stride = int(stride)
    if t_total <= 0 or stride <= 0 or t_total % stride != 0:
        raise ConfigurationError(
            f"total steps {t_total} must be a positive multiple of stride {stride}"
        )
    if not (0.0 < beta_min < beta_max):
        raise ConfigurationError(
            f"noise-rate endpoints must satisfy 0 < beta_min < beta_max, "
            f"got ({beta_min}, {beta_max})"
        )
    n = t_total // stride
    tau = np.arange(n + 1, dtype=np.float64) * (stride / t_total)
    alpha_bar = np.exp(-beta_min * tau - 0.5 * (beta_max - beta_min) * tau**2)
    alpha = np.ones(n + 1, dtype=np.float64)
    alpha[1:] = alpha_bar[1:] / alpha_bar[:-1]
    gamma = 1.0 - alpha
    sched = DiffusionSchedule(
        t_total=t_total,
        stride=stride,
        beta_min=float(beta_min),
        beta_max=float(beta_max),
        alpha_bar=alpha_bar,
        alpha=alpha,
        gamma=gamma,
    )
    for arr in (sched.alpha_bar, sched.alpha, sched.gamma):
        arr.setflags(write=False)
    return sched


def sample_posterior(mean, var, noise):
    """Draw x = mean + sqrt(var) * noise; var must be non-negative."""
    if var < 0:
        raise ContractError(f"posterior variance must be >= 0, got {var}")
    if _shape_of(mean) != _shape_of(noise):
        raise ContractError(
            f"mean shape {_shape_of(mean)} != noise shape {_shape_of(noise)}"
        )
    return mean + math.sqrt(var) * noise
