"""Training loop for the reverse-step mapper.

Adversarial mode alternates one discriminator update and one generator
update per batch with Adam at the configured decay rates. The l1 mode
(the non-adversarial ablation) trains only the generator on the
pixel-wise loss. Everything is driven by one seeded numpy stream plus a
seeded torch initialization, so identical seeds reproduce identical
parameters in single-threaded mode.
"""

import copy
import math

import numpy as np
import torch

from ..errors import ConfigurationError, DivergenceError
from .losses import loss_discriminator, loss_generator, loss_l1, make_batch
from .prior import initialize_prior

TRAIN_MODES = ("adversarial", "l1")


def _validation_l1(prior, val_pack):
    """Mean absolute clean-image error at the final reverse step (r=1)."""
    x1, x0, t, z = val_pack
    prior.generator.eval()
    with torch.no_grad():
        x0_tilde = prior.generator(x1, t, z)
    prior.generator.train()
    return float((x0_tilde - x0).abs().mean())


def _make_val_pack(images, schedule, z_dim, seed):
    rng = np.random.default_rng(seed)
    arr = np.asarray(images)
    x0 = torch.from_numpy(
        np.stack([arr.real, arr.imag], axis=1).astype(np.float32)
    )
    noise = torch.from_numpy(rng.standard_normal(x0.shape).astype(np.float32))
    ab = float(schedule.alpha_bar[1])
    x1 = math.sqrt(ab) * x0 + math.sqrt(1 - ab) * noise
    t = torch.full((x0.shape[0],), float(schedule.time_value(1)))
    z = torch.from_numpy(
        rng.standard_normal((x0.shape[0], z_dim)).astype(np.float32)
    )
    return x1, x0, t, z


def train(images, config, mode="adversarial", seed=0, val_images=None,
          resume_from=None):
    """Train a prior on a stack of complex images; returns the Prior.

    ``mode`` selects the adversarial objective or its pixel-wise l1
    ablation; the latent-free ablation is config.z_ablation. With
    ``val_images`` given, a held-out clean-image l1 error at the final
    reverse step is recorded per epoch alongside the loss traces.
    ``resume_from`` continues from an existing prior's parameters and
    extends its loss traces (optimizer moments restart).
    """
    if mode not in TRAIN_MODES:
        raise ConfigurationError(f"mode {mode!r} not in {TRAIN_MODES}")
    images = np.asarray(images)
    if images.ndim != 3 or images.shape[0] == 0:
        raise ConfigurationError("training set must be a non-empty (N, H, W) stack")
    size = config.image_size
    if images.shape[1:] != (size, size):
        raise ConfigurationError(
            f"images {images.shape[1:]} do not match configured size {size}"
        )

    adversarial = mode == "adversarial"
    if resume_from is not None:
        if (resume_from.discriminator is None) == adversarial:
            raise ConfigurationError(
                f"cannot resume a {resume_from.training_meta.get('mode')!r} "
                f"checkpoint in {mode!r} mode"
            )
        prior = copy.deepcopy(resume_from)
        torch.manual_seed(seed)  # keeps batched noise independent of history
    else:
        prior = initialize_prior(config, seed, with_discriminator=adversarial)
    prior.generator.train()
    if prior.discriminator is not None:
        prior.discriminator.train()

    meta = prior.training_meta
    meta["mode"] = mode
    default_traces = (
        {"generator": [], "discriminator": []} if adversarial else {"l1": []}
    )
    traces = meta.setdefault("loss_traces", default_traces)
    if val_images is not None:
        val_pack = _make_val_pack(val_images, config.schedule, config.z_dim,
                                  seed=seed + 1)
        meta.setdefault("val_l1_trace", [])

    rng = np.random.default_rng(seed)
    betas = (config.adam_beta1, config.adam_beta2)
    opt_g = torch.optim.Adam(prior.generator.parameters(),
                             lr=config.learning_rate, betas=betas)
    opt_d = None
    if adversarial:
        opt_d = torch.optim.Adam(prior.discriminator.parameters(),
                                 lr=config.learning_rate, betas=betas)

    n = images.shape[0]
    bs = config.batch_size
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        sums = {k: 0.0 for k in traces}
        n_batches = 0
        for start in range(0, n, bs):
            batch = make_batch(images, perm[start:start + bs],
                               config.schedule, config.z_dim, rng)
            if adversarial:
                d_loss, _ = loss_discriminator(prior, batch)
                if not torch.isfinite(d_loss):
                    raise DivergenceError(
                        f"discriminator loss diverged at epoch {epoch}",
                        step=epoch,
                    )
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()

                g_loss = loss_generator(prior, batch)
                if not torch.isfinite(g_loss):
                    raise DivergenceError(
                        f"generator loss diverged at epoch {epoch}", step=epoch
                    )
                opt_g.zero_grad()
                g_loss.backward()
                opt_g.step()
                sums["generator"] += float(g_loss.detach())
                sums["discriminator"] += float(d_loss.detach())
            else:
                loss = loss_l1(prior, batch)
                if not torch.isfinite(loss):
                    raise DivergenceError(
                        f"l1 loss diverged at epoch {epoch}", step=epoch
                    )
                opt_g.zero_grad()
                loss.backward()
                opt_g.step()
                sums["l1"] += float(loss.detach())
            n_batches += 1
        for k in traces:
            traces[k].append(sums[k] / n_batches)
        if val_images is not None:
            meta["val_l1_trace"].append(_validation_l1(prior, val_pack))

    meta["epochs_completed"] = meta.get("epochs_completed", 0) + config.epochs
    meta.setdefault("seeds", []).append(int(seed))
    prior.generator.eval()
    if prior.discriminator is not None:
        prior.discriminator.eval()
    return prior
