"""Adversarial reverse-diffusion mapper: networks, losses, training."""

from .config import MapperConfig
from .losses import (
    TrainBatch,
    loss_discriminator,
    loss_generator,
    loss_l1,
    make_batch,
    posterior_sample_batch,
    simulate_pair,
)
from .networks import Discriminator, Generator
from .prior import (
    PRIOR_FORMAT,
    Prior,
    discriminate,
    generate_x0,
    initialize_prior,
    load_prior,
    save_prior,
)
from .training import TRAIN_MODES, train

__all__ = [
    "MapperConfig",
    "TrainBatch",
    "loss_discriminator",
    "loss_generator",
    "loss_l1",
    "make_batch",
    "posterior_sample_batch",
    "simulate_pair",
    "Discriminator",
    "Generator",
    "PRIOR_FORMAT",
    "Prior",
    "discriminate",
    "generate_x0",
    "initialize_prior",
    "load_prior",
    "save_prior",
    "TRAIN_MODES",
    "train",
]
