"""Training losses for the adversarial reverse-step mapper.

Real pairs are simulated through the known forward process (a direct
jump to the lower step followed by one strided transition), which is the
resampling form of the unknown reverse conditional. Fake lower-step
samples are drawn through the closed-form posterior around the
generator's clean-image estimate. The discriminator objective is the
non-saturating cross-entropy plus a gradient penalty of 0.5 * the squared
input-gradient norm of the logit on real pairs.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F


@dataclass
class TrainBatch:
    """One seeded training batch; all randomness is drawn by the caller.

    ``r`` holds the lower strided step index in {0, .., T/k - 1};
    ``noise_a`` drives the jump x0 -> x_r, ``noise_b`` the transition
    x_r -> x_{r+1}, and ``noise_fake`` the posterior draw of the
    synthetic lower-step sample.
    """

    x0: torch.Tensor        # (B, 2, H, W)
    r: torch.Tensor         # (B,) long
    noise_a: torch.Tensor   # (B, 2, H, W)
    noise_b: torch.Tensor   # (B, 2, H, W)
    noise_fake: torch.Tensor
    z: torch.Tensor         # (B, z_dim)

    def __len__(self):
        return self.x0.shape[0]


def make_batch(images, indices, schedule, z_dim, rng, dtype=torch.float32):
    """Assemble a TrainBatch from complex images at the given indices."""
    sel = np.asarray(images)[indices]
    x0 = np.stack([sel.real, sel.imag], axis=1)
    b = x0.shape[0]
    shape = x0.shape
    np_dtype = np.float32 if dtype == torch.float32 else np.float64

    def draw(s):
        return torch.from_numpy(rng.standard_normal(s).astype(np_dtype))

    return TrainBatch(
        x0=torch.from_numpy(x0.astype(np_dtype)),
        r=torch.from_numpy(rng.integers(0, schedule.steps, size=b)),
        noise_a=draw(shape),
        noise_b=draw(shape),
        noise_fake=draw(shape),
        z=draw((b, z_dim)),
    )


def _coef(values, r, like):
    """Per-element schedule coefficient shaped for broadcasting."""
    t = torch.tensor(np.asarray(values), dtype=like.dtype, device=like.device)
    return t[r].view(-1, *([1] * (like.ndim - 1)))


def simulate_pair(schedule, batch):
    """Draw (x_r, x_{r+1}) from the forward process for each batch element."""
    ab = _coef(schedule.alpha_bar, batch.r, batch.x0)
    x_t = torch.sqrt(ab) * batch.x0 + torch.sqrt(1.0 - ab) * batch.noise_a
    a_next = _coef(schedule.alpha, batch.r + 1, batch.x0)
    g_next = _coef(schedule.gamma, batch.r + 1, batch.x0)
    x_next = torch.sqrt(a_next) * x_t + torch.sqrt(g_next) * batch.noise_b
    return x_t, x_next


def posterior_sample_batch(schedule, x0_tilde, x_next, r, noise):
    """Batched closed-form posterior draw of the lower-step sample."""
    ab_r = _coef(schedule.alpha_bar, r, x_next)
    ab_n = _coef(schedule.alpha_bar, r + 1, x_next)
    g_n = _coef(schedule.gamma, r + 1, x_next)
    a_n = _coef(schedule.alpha, r + 1, x_next)
    c0 = torch.sqrt(ab_r) * g_n / (1.0 - ab_n)
    c1 = torch.sqrt(a_n) * (1.0 - ab_r) / (1.0 - ab_n)
    var = (1.0 - ab_r) / (1.0 - ab_n) * g_n
    return c0 * x0_tilde + c1 * x_next + torch.sqrt(var) * noise


def _time_values(schedule, r, like):
    return (r + 1).to(like.dtype) * schedule.stride


def generate_fake(prior, batch, x_next):
    """Posterior sample around the generator's clean estimate."""
    schedule = prior.schedule
    t_next = _time_values(schedule, batch.r, batch.x0)
    x0_tilde = prior.generator(x_next, t_next, batch.z)
    return posterior_sample_batch(schedule, x0_tilde, x_next, batch.r,
                                  batch.noise_fake)


def loss_discriminator(prior, batch):
    """Adversarial discriminator loss with R1-style gradient penalty.

    Returns the scalar loss and a diagnostics dict exposing the real,
    fake, and penalty terms separately.
    """
    schedule = prior.schedule
    x_t, x_next = simulate_pair(schedule, batch)
    t_next = _time_values(schedule, batch.r, batch.x0)

    x_t_req = x_t.detach().requires_grad_(True)
    logit_real = prior.discriminator(x_t_req, x_next, t_next)
    real_term = F.softplus(-logit_real).mean()
    if logit_real.requires_grad:
        (grad,) = torch.autograd.grad(
            logit_real.sum(), x_t_req, create_graph=True, allow_unused=True
        )
    else:  # discriminator output does not depend on any input
        grad = None
    if grad is None:
        penalty = torch.zeros((), dtype=x_t.dtype)
    else:
        penalty = 0.5 * grad.flatten(1).pow(2).sum(dim=1).mean()

    with torch.no_grad():
        x_hat = generate_fake(prior, batch, x_next)
    logit_fake = prior.discriminator(x_hat, x_next, t_next)
    fake_term = F.softplus(logit_fake).mean()

    loss = real_term + fake_term + penalty
    diag = {
        "real": float(real_term.detach()),
        "fake": float(fake_term.detach()),
        "penalty": float(penalty.detach()),
    }
    return loss, diag


def loss_generator(prior, batch):
    """Non-saturating generator loss through the posterior sampling path."""
    schedule = prior.schedule
    with torch.no_grad():
        _, x_next = simulate_pair(schedule, batch)
    t_next = _time_values(schedule, batch.r, batch.x0)
    x_hat = generate_fake(prior, batch, x_next)
    logit = prior.discriminator(x_hat, x_next, t_next)
    return F.softplus(-logit).mean()


def loss_l1(prior, batch):
    """Pixel-wise substitute for the adversarial objective.

    The generator's clean estimate regresses onto the true clean image;
    this is the non-adversarial ablation of the mapper.
    """
    schedule = prior.schedule
    with torch.no_grad():
        _, x_next = simulate_pair(schedule, batch)
    t_next = _time_values(schedule, batch.r, batch.x0)
    x0_tilde = prior.generator(x_next, t_next, batch.z)
    return (x0_tilde - batch.x0).abs().mean()
