"""Trained prior container, inference wrappers, and checkpoint archive.

A checkpoint is a single deterministic zip tagged "adadiff-prior-v1"
holding the config as JSON, the schedule arrays, every named parameter
tensor as an .npy member, and the training metadata. Entries carry a
fixed timestamp so identical priors serialize byte-identically.
"""

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import ContractError, DataError
from .config import MapperConfig
from .networks import Discriminator, Generator

PRIOR_FORMAT = "adadiff-prior-v1"
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


@dataclass
class Prior:
    """Generator/discriminator pair with the schedule they were trained on."""

    generator: Generator
    discriminator: Discriminator | None
    config: MapperConfig
    training_meta: dict = field(default_factory=dict)

    @property
    def schedule(self):
        return self.config.schedule


def initialize_prior(config, seed, with_discriminator=True):
    """Seeded network initialization; the zero-epoch training result."""
    torch.manual_seed(seed)
    generator = Generator(config)
    discriminator = Discriminator(config) if with_discriminator else None
    return Prior(
        generator=generator,
        discriminator=discriminator,
        config=config,
        training_meta={"seed": int(seed), "epochs_completed": 0},
    )


def _to_batched_channels(x):
    """Complex (H, W) or (B, H, W) -> float32 (B, 2, H, W) plus a flag."""
    arr = np.asarray(x)
    batched = arr.ndim == 3
    if not batched:
        arr = arr[None]
    stacked = np.stack([arr.real, arr.imag], axis=1).astype(np.float32)
    return torch.from_numpy(stacked), batched


def _to_complex(t, batched):
    arr = t.numpy().astype(np.float64)
    out = arr[:, 0] + 1j * arr[:, 1]
    return out if batched else out[0]


def generate_x0(prior, x_next, r, z):
    """Denoised clean-image estimate for a noisy sample at strided step r.

    Accepts complex numpy images, single (H, W) or batched (B, H, W), and
    returns the same layout. Deterministic given (parameters, inputs, z).
    """
    n = prior.schedule.steps
    if not 0 <= r <= n:
        raise ContractError(f"step index {r} outside [0, {n}]")
    x_t, batched = _to_batched_channels(x_next)
    size = prior.config.image_size
    if x_t.shape[-2:] != (size, size):
        raise ContractError(
            f"image shape {tuple(x_t.shape[-2:])} != configured ({size}, {size})"
        )
    b = x_t.shape[0]
    z_arr = np.asarray(z, dtype=np.float32).reshape(-1)
    if batched and z_arr.size == b * prior.config.z_dim:
        z_t = torch.from_numpy(z_arr.reshape(b, prior.config.z_dim))
    elif z_arr.size == prior.config.z_dim:
        z_t = torch.from_numpy(z_arr).expand(b, -1)
    else:
        raise ContractError(
            f"latent size {z_arr.size} incompatible with z_dim "
            f"{prior.config.z_dim}"
        )
    t = torch.full((b,), float(prior.schedule.time_value(r)))
    prior.generator.eval()
    with torch.no_grad():
        out = prior.generator(x_t, t, z_t)
    return _to_complex(out, batched)


def discriminate(prior, x_t, x_next, r):
    """Logit that (x_t, x_next) is a real forward-process pair at step r."""
    if prior.discriminator is None:
        raise ContractError("prior has no discriminator (trained in l1 mode)")
    n = prior.schedule.steps
    if not 1 <= r <= n:
        raise ContractError(f"pair step index {r} outside [1, {n}]")
    a, batched_a = _to_batched_channels(x_t)
    b_, batched_b = _to_batched_channels(x_next)
    if a.shape != b_.shape:
        raise ContractError(f"pair shapes differ: {a.shape} vs {b_.shape}")
    t = torch.full((a.shape[0],), float(prior.schedule.time_value(r)))
    prior.discriminator.eval()
    with torch.no_grad():
        logit = prior.discriminator(a, b_, t)
    out = logit.numpy().astype(np.float64)
    return out if (batched_a or batched_b) else float(out[0])


# ---------------------------------------------------------------------------
# checkpoint archive


def _npy_bytes(arr):
    buf = io.BytesIO()
    np.save(buf, arr)
    return buf.getvalue()


def _write_entry(zf, name, payload):
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    zf.writestr(info, payload)


def save_prior(prior, path):
    """Write the prior as a deterministic versioned archive."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        _write_entry(zf, "format", PRIOR_FORMAT.encode())
        _write_entry(
            zf, "config.json",
            json.dumps(prior.config.to_dict(), indent=1, sort_keys=True).encode(),
        )
        sched = prior.schedule
        for name, arr in (
            ("alpha_bar", sched.alpha_bar),
            ("alpha", sched.alpha),
            ("gamma", sched.gamma),
        ):
            _write_entry(zf, f"schedule/{name}.npy", _npy_bytes(arr))
        for group, module in (
            ("generator", prior.generator),
            ("discriminator", prior.discriminator),
        ):
            if module is None:
                continue
            for pname, tensor in sorted(module.state_dict().items()):
                _write_entry(
                    zf, f"params/{group}/{pname}.npy",
                    _npy_bytes(tensor.numpy()),
                )
        _write_entry(
            zf, "meta.json",
            json.dumps(prior.training_meta, indent=1, sort_keys=True).encode(),
        )
    return path


def _load_group(zf, names, group, module):
    prefix = f"params/{group}/"
    state = {}
    for name in names:
        if name.startswith(prefix) and name.endswith(".npy"):
            pname = name[len(prefix):-4]
            arr = np.load(io.BytesIO(zf.read(name)))
            state[pname] = torch.from_numpy(arr.copy())
    if set(state) != set(module.state_dict()):
        missing = set(module.state_dict()) - set(state)
        extra = set(state) - set(module.state_dict())
        raise DataError(
            f"{group} parameters mismatch archive: missing {sorted(missing)}, "
            f"unexpected {sorted(extra)}"
        )
    module.load_state_dict(state)


def load_prior(path):
    """Read a checkpoint archive back into a Prior; validates the format."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint {path} does not exist")
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise DataError(f"checkpoint {path} is not a valid archive") from exc
    with zf:
        names = set(zf.namelist())
        if "format" not in names or zf.read("format").decode() != PRIOR_FORMAT:
            raise DataError(f"checkpoint {path} is not a {PRIOR_FORMAT} archive")
        config = MapperConfig.from_dict(json.loads(zf.read("config.json")))
        stored = np.load(io.BytesIO(zf.read("schedule/alpha_bar.npy")))
        if not np.allclose(stored, config.schedule.alpha_bar, rtol=1e-12, atol=0):
            raise DataError(
                "stored schedule arrays disagree with the schedule parameters"
            )
        meta = json.loads(zf.read("meta.json"))
        generator = Generator(config)
        _load_group(zf, names, "generator", generator)
        discriminator = None
        if any(n.startswith("params/discriminator/") for n in names):
            discriminator = Discriminator(config)
            _load_group(zf, names, "discriminator", discriminator)
    return Prior(
        generator=generator,
        discriminator=discriminator,
        config=config,
        training_meta=meta,
    )
