"""Two-phase reconstruction: rapid diffusion, then per-subject adaptation.

The rapid phase starts from pure noise at the terminal step and runs
exactly T/k iterations, each one data-consistency projection followed by
one reverse posterior step around the generator's clean estimate; the
step-0 sample is the initial reconstruction. The adaptation phase clones
the generator and runs first-order updates on the l1 k-space discrepancy
of its output at time 0, holding the initial reconstruction and a single
latent draw fixed; the cloned generator's final output is the result.

Gradients through the imaging operator use a torch mirror of the numpy
operator (same centered orthonormal FFT and masking); the rapid phase
uses the numpy operator directly since it needs no gradients.
"""

import copy
import io
import json
import time
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigurationError, ContractError, DataError, DivergenceError
from .mapper.prior import generate_x0, initialize_prior
from .operator import dc_projection, zero_filled
from .schedule import sample_posterior

RECON_FORMAT = "adadiff-recon-v1"
VARIANTS = ("full", "no_adapt", "no_train")
Z_POLICY_RAPID = "fresh-per-step"
Z_POLICY_ADAPT = "fixed"
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


@dataclass
class ReconConfig:
    iterations: int = 1000          # adaptation steps J
    adapt_lr: float = 1e-3
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    variant: str = "full"
    seed: int = 0
    retain_adapted_params: bool = False

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigurationError("adaptation iterations must be >= 0")
        if self.variant not in VARIANTS:
            raise ConfigurationError(
                f"variant {self.variant!r} not in {VARIANTS}"
            )


@dataclass
class ReconResult:
    x_init: np.ndarray
    x_fin: np.ndarray
    dc_loss_trace: list
    wall_time_seconds: float
    meta: dict = field(default_factory=dict)
    adapted_state: dict | None = None


class TorchOperator:
    """Torch complex64 mirror of an ImagingOperator, for gradient paths."""

    def __init__(self, op):
        self.mask = torch.from_numpy(op.mask.pattern.copy())
        self.coils = torch.from_numpy(op.coils.maps.astype(np.complex64))
        self.n_entries = op.n_coils * op.mask.n_sampled

    def apply_A(self, x):
        coil_images = self.coils * x
        shifted = torch.fft.ifftshift(coil_images, dim=(-2, -1))
        k = torch.fft.fft2(shifted, norm="ortho")
        return torch.fft.fftshift(k, dim=(-2, -1)) * self.mask

    def dc_loss(self, x, y):
        resid = self.apply_A(x) - y
        if self.n_entries == 0:
            return resid.real.abs().sum() * 0.0
        total = resid.real.abs().sum() + resid.imag.abs().sum()
        return total / self.n_entries


def _check_inputs(prior, y, op):
    size = prior.config.image_size
    if op.shape != (size, size):
        raise ConfigurationError(
            f"operator shape {op.shape} != prior image size {size}"
        )
    expected = (op.n_coils,) + op.shape
    if y.shape != expected:
        raise ContractError(f"k-space shape {y.shape} != expected {expected}")


def rapid_diffusion(prior, y, op, seed, stats=None):
    """Initial reconstruction by interleaved DC and reverse-step sampling.

    Runs exactly T/k combined iterations with a fresh seeded latent per
    reverse step and no trailing DC projection; the r=0 posterior is
    degenerate, so the last step returns the generator estimate pulled
    toward the measurements.
    """
    _check_inputs(prior, y, op)
    sched = prior.schedule
    rng = np.random.default_rng(seed)
    shape = op.shape
    x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    n_dc = n_rev = 0
    for r in range(sched.steps, 0, -1):
        x = dc_projection(x, y, op)
        n_dc += 1
        z = rng.standard_normal(prior.config.z_dim).astype(np.float32)
        x0_tilde = generate_x0(prior, x, r, z)
        mean, var = sched.posterior_params(x0_tilde, x, r - 1)
        noise = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        x = sample_posterior(mean, var, noise)
        n_rev += 1
    if stats is not None:
        stats["dc_projections"] = n_dc
        stats["reverse_steps"] = n_rev
    return x


def _image_to_tensor(x):
    return torch.from_numpy(
        np.stack([x.real, x.imag], axis=0).astype(np.float32)
    )[None]


def adapt_prior(prior, x_init, y, op, config):
    """Per-subject fine-tuning of a cloned generator on the DC loss.

    The source prior is never mutated. The latent and x_init stay fixed
    across iterations; the trace records the loss at each iteration
    before its update, so it has exactly ``config.iterations`` entries.
    """
    _check_inputs(prior, y, op)
    start = time.perf_counter()
    generator = copy.deepcopy(prior.generator)
    generator.train(False)
    rng = np.random.default_rng(config.seed)
    z = torch.from_numpy(
        rng.standard_normal((1, prior.config.z_dim)).astype(np.float32)
    )
    x_init_t = _image_to_tensor(x_init)
    t0 = torch.zeros(1)
    top = TorchOperator(op)
    y_t = torch.from_numpy(y.astype(np.complex64))
    opt = torch.optim.Adam(
        generator.parameters(), lr=config.adapt_lr,
        betas=(config.adam_beta1, config.adam_beta2),
    )
    trace = []
    for j in range(config.iterations):
        out = generator(x_init_t, t0, z)
        x_c = torch.complex(out[0, 0], out[0, 1])
        loss = top.dc_loss(x_c, y_t)
        if not torch.isfinite(loss):
            raise DivergenceError(
                f"adaptation loss diverged at iteration {j}", step=j
            )
        trace.append(float(loss.detach()))
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        out = generator(x_init_t, t0, z)
    x_fin = (out[0, 0].numpy().astype(np.float64)
             + 1j * out[0, 1].numpy().astype(np.float64))
    result = ReconResult(
        x_init=np.asarray(x_init),
        x_fin=x_fin,
        dc_loss_trace=trace,
        wall_time_seconds=time.perf_counter() - start,
        meta={
            "iterations": config.iterations,
            "adapt_lr": config.adapt_lr,
            "seed": config.seed,
            "z_policy_adapt": Z_POLICY_ADAPT,
        },
    )
    if config.retain_adapted_params:
        result.adapted_state = {
            k: v.clone() for k, v in generator.state_dict().items()
        }
    return result


def reconstruct(prior, y, op, config):
    """Run the configured variant of the two-phase reconstruction.

    full: rapid diffusion then adaptation; no_adapt: rapid diffusion
    only; no_train: zero-filled start and adaptation of a freshly
    initialized generator (the trained prior contributes only its
    architecture).
    """
    start = time.perf_counter()
    stats = {}
    if config.variant == "no_train":
        x_init = zero_filled(y, op)
        source = initialize_prior(prior.config, seed=config.seed,
                                  with_discriminator=False)
        result = adapt_prior(source, x_init, y, op, config)
    elif config.variant == "no_adapt":
        _check_inputs(prior, y, op)
        x_init = rapid_diffusion(prior, y, op, config.seed, stats=stats)
        result = ReconResult(
            x_init=x_init,
            x_fin=x_init,
            dc_loss_trace=[],
            wall_time_seconds=0.0,
            meta={"seed": config.seed},
        )
    else:
        x_init = rapid_diffusion(prior, y, op, config.seed, stats=stats)
        result = adapt_prior(prior, x_init, y, op, config)
    result.wall_time_seconds = time.perf_counter() - start
    result.meta.update(stats)
    result.meta.update(
        variant=config.variant,
        seed=config.seed,
        z_policy_rapid=Z_POLICY_RAPID,
    )
    return result


# ---------------------------------------------------------------------------
# result archive


def _complex_to_bytes(x):
    return np.stack([x.real, x.imag], axis=-1).astype("<f4").tobytes(order="C")


def _bytes_to_complex(raw, shape):
    arr = np.frombuffer(raw, dtype="<f4").reshape(shape[0], shape[1], 2)
    return (arr[..., 0] + 1j * arr[..., 1]).astype(np.complex128)


def save_recon_result(result, path):
    """Serialize to a deterministic archive: images, trace, seeds, meta.

    Wall time is deliberately excluded so byte-identical reruns stay
    byte-identical.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "format": RECON_FORMAT,
        "shape": list(result.x_init.shape),
        "dc_loss_trace": result.dc_loss_trace,
        "meta": result.meta,
    }
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, payload in (
            ("result.json", json.dumps(doc, indent=1, sort_keys=True).encode()),
            ("x_init.cfl", _complex_to_bytes(result.x_init)),
            ("x_fin.cfl", _complex_to_bytes(result.x_fin)),
        ):
            zf.writestr(zipfile.ZipInfo(name, date_time=_ZIP_DATE), payload)
    return path


def load_recon_result(path):
    path = Path(path)
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, FileNotFoundError) as exc:
        raise DataError(f"cannot read reconstruction archive {path}") from exc
    with zf:
        try:
            doc = json.loads(zf.read("result.json"))
        except KeyError as exc:
            raise DataError(f"{path} has no result.json") from exc
        if doc.get("format") != RECON_FORMAT:
            raise DataError(
                f"{path} format {doc.get('format')!r} != {RECON_FORMAT!r}"
            )
        shape = tuple(doc["shape"])
        x_init = _bytes_to_complex(zf.read("x_init.cfl"), shape)
        x_fin = _bytes_to_complex(zf.read("x_fin.cfl"), shape)
    return ReconResult(
        x_init=x_init,
        x_fin=x_fin,
        dc_loss_trace=list(doc["dc_loss_trace"]),
        wall_time_seconds=0.0,
        meta=doc["meta"],
    )
