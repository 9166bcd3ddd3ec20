"""Synthetic multi-contrast complex phantoms and the on-disk dataset format.

Phantoms are randomized ellipse scenes on a head-shaped outline. The
ellipse geometry and tissue assignment depend only on the seed, while the
painted intensity is looked up per (tissue, contrast) from disjoint
ranges, so the contrasts of one seed share geometry exactly but differ in
brightness, mimicking a multi-contrast exam.

Slice files are raw little-endian float32 with interleaved (real, imag)
pairs in row-major order; the manifest JSON declares shapes and file
names. Consumers must read names from the manifest rather than inferring
them.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigurationError, ContractError, DataError
from .operator import apply_A

DATASET_FORMAT = "adadiff-data-v1"
CONTRASTS = ("T1", "T2", "PD")

# Disjoint per-tissue intensity ranges for each contrast. Tissue classes
# loosely follow brain compartments; the separation between contrast
# columns is what the multi-contrast tests rely on.
_TISSUE_TABLE = {
    #            T1            T2            PD
    "background": ((0.00, 0.00), (0.00, 0.00), (0.00, 0.00)),
    "rim":        ((0.90, 0.98), (0.12, 0.20), (0.55, 0.63)),
    "bulk":       ((0.60, 0.68), (0.30, 0.38), (0.80, 0.88)),
    "fluid":      ((0.10, 0.18), (0.86, 0.94), (0.42, 0.50)),
    "lesion":     ((0.40, 0.48), (0.66, 0.74), (0.16, 0.24)),
}
_INNER_TISSUES = ("bulk", "fluid", "lesion")


@dataclass(frozen=True)
class Ellipse:
    center: tuple
    axes: tuple
    angle: float
    tissue: str
    intensity_u: float  # position inside the tissue's intensity range

    def intensity(self, contrast):
        lo, hi = _TISSUE_TABLE[self.tissue][CONTRASTS.index(contrast)]
        return lo + self.intensity_u * (hi - lo)


@dataclass(frozen=True)
class Phantom:
    image: np.ndarray  # complex (H, W)
    contrast: str
    seed: int
    ellipses: tuple

    @property
    def shape(self):
        return self.image.shape


def _ellipse_mask(shape, center, axes, angle):
    h, w = shape
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dy = (yy - center[0]) / axes[0]
    dx = (xx - center[1]) / axes[1]
    ca, sa = math.cos(angle), math.sin(angle)
    u = ca * dy + sa * dx
    v = -sa * dy + ca * dx
    return u * u + v * v <= 1.0


def _draw_geometry(shape, rng):
    """Seeded ellipse scene: head outline, rim, and 8-15 inner structures."""
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    head_ax = (
        rng.uniform(0.38, 0.44) * h,
        rng.uniform(0.32, 0.38) * w,
    )
    head = Ellipse((cy, cx), head_ax, rng.uniform(-0.2, 0.2), "rim",
                   rng.uniform(0, 1))
    interior = Ellipse(
        (cy, cx), (head_ax[0] * 0.88, head_ax[1] * 0.88), head.angle,
        "bulk", rng.uniform(0, 1),
    )
    ellipses = [head, interior]
    for _ in range(int(rng.integers(8, 16))):
        tissue = _INNER_TISSUES[int(rng.integers(0, len(_INNER_TISSUES)))]
        # keep structures inside the interior ellipse
        rho = rng.uniform(0, 0.68)
        phi = rng.uniform(0, 2 * math.pi)
        center = (
            cy + rho * interior.axes[0] * math.sin(phi),
            cx + rho * interior.axes[1] * math.cos(phi),
        )
        axes = (
            rng.uniform(0.04, 0.22) * h,
            rng.uniform(0.04, 0.22) * w,
        )
        ellipses.append(
            Ellipse(center, axes, rng.uniform(0, math.pi), tissue,
                    rng.uniform(0, 1))
        )
    phase_coeffs = rng.uniform(-1.0, 1.0, size=6)
    return tuple(ellipses), phase_coeffs


def make_phantom(contrast, shape, seed):
    """Render one contrast of the seeded ellipse scene as a complex image.

    Magnitude lies in [0, 1]; the phase is a low-order polynomial with a
    bounded gradient. Geometry is a function of the seed only.
    """
    if contrast not in CONTRASTS:
        raise ConfigurationError(f"unknown contrast {contrast!r}; use {CONTRASTS}")
    h, w = int(shape[0]), int(shape[1])
    if h < 32 or w < 32:
        raise ConfigurationError(f"phantom shape {shape} below the 32x32 minimum")
    rng = np.random.default_rng(seed)
    ellipses, phase_coeffs = _draw_geometry((h, w), rng)

    mag = np.zeros((h, w))
    head_support = _ellipse_mask((h, w), ellipses[0].center,
                                 ellipses[0].axes, ellipses[0].angle)
    for e in ellipses:
        region = _ellipse_mask((h, w), e.center, e.axes, e.angle) & head_support
        mag[region] = e.intensity(contrast)
    # soften edges; a normalized blur keeps values inside [0, 1]
    mag = gaussian_filter(mag, sigma=0.7, mode="constant")
    mag = np.clip(mag, 0.0, 1.0)

    ny = (np.arange(h) - (h - 1) / 2) / (h / 2)
    nx = (np.arange(w) - (w - 1) / 2) / (w / 2)
    yy, xx = np.meshgrid(ny, nx, indexing="ij")
    c = phase_coeffs
    # |d(phase)/d(pixel)| stays below ~(|c0|+2|c2|+|c4|)*2/H < 0.25 rad
    phase = 0.8 * (
        c[0] * yy + c[1] * xx + 0.5 * (c[2] * yy * yy + c[3] * xx * xx)
        + 0.5 * c[4] * yy * xx + 0.2 * c[5]
    )
    image = mag * np.exp(1j * phase)
    image.setflags(write=False)
    return Phantom(image=image, contrast=contrast, seed=int(seed), ellipses=ellipses)


def simulate_acquisition(x, op, noise_sigma=0.0, seed=0):
    """Acquire k-space y = A x plus optional complex Gaussian noise.

    Noise is added on sampled entries only, scaled so that E|n|^2 equals
    noise_sigma^2 per entry. The retrospective experiments are noise-free
    by default.
    """
    y = apply_A(x, op)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        shape = y.shape
        noise = (
            rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        ) / math.sqrt(2.0)
        y = y + noise_sigma * noise * op.mask.pattern
    return y


# ---------------------------------------------------------------------------
# dataset on disk


def write_slice(path, image):
    """Write a complex image as interleaved little-endian float32 pairs."""
    arr = np.stack([image.real, image.imag], axis=-1).astype("<f4")
    Path(path).write_bytes(arr.tobytes(order="C"))


def read_slice(path, shape):
    raw = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    h, w = shape
    if raw.size != h * w * 2:
        raise DataError(
            f"slice file {path} holds {raw.size} floats, expected {h * w * 2}"
        )
    arr = raw.reshape(h, w, 2)
    return (arr[..., 0] + 1j * arr[..., 1]).astype(np.complex128)


@dataclass(frozen=True)
class SliceRecord:
    file: str
    contrast: str
    slice_index: int
    seed: int


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    split: str
    slices: tuple


@dataclass(frozen=True)
class DatasetManifest:
    version: str
    shape: tuple
    seed: int
    root: Path
    subjects: tuple

    def slices(self, split=None, contrast=None):
        out = []
        for sub in self.subjects:
            if split is not None and sub.split != split:
                continue
            for rec in sub.slices:
                if contrast is not None and rec.contrast != contrast:
                    continue
                out.append((sub, rec))
        return out

    def load(self, record):
        return read_slice(self.root / record.file, self.shape)


def _split_counts(n_subjects):
    n_train = max(1, round(0.7 * n_subjects))
    n_val = max(1, round(0.1 * n_subjects))
    while n_train + n_val >= n_subjects:
        n_train -= 1
    return n_train, n_val, n_subjects - n_train - n_val


def make_dataset(n_subjects, contrasts, shape, slices_per_subject, seed, out_path):
    """Generate and write a seeded phantom dataset; returns its manifest.

    Subjects are split 70/10/20 into train/val/test after a seeded
    permutation. Slice geometry is seeded per (subject, slice) so the
    contrasts of one slice share geometry.
    """
    if n_subjects < 3:
        raise ConfigurationError("need at least 3 subjects to split train/val/test")
    for contrast in contrasts:
        if contrast not in CONTRASTS:
            raise ConfigurationError(f"unknown contrast {contrast!r}")
    root = Path(out_path)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_subjects)
    n_train, n_val, _ = _split_counts(n_subjects)
    splits = {}
    for pos, idx in enumerate(order):
        splits[int(idx)] = (
            "train" if pos < n_train else "val" if pos < n_train + n_val else "test"
        )

    subjects = []
    for s in range(n_subjects):
        sub_id = f"sub{s:03d}"
        sub_dir = root / sub_id
        sub_dir.mkdir(exist_ok=True)
        records = []
        for sl in range(slices_per_subject):
            slice_seed = int(
                np.random.SeedSequence([seed, s, sl]).generate_state(1)[0]
            )
            for contrast in contrasts:
                ph = make_phantom(contrast, shape, slice_seed)
                fname = f"{sub_id}/{contrast}_{sl:03d}.cfl"
                write_slice(root / fname, ph.image)
                records.append(
                    SliceRecord(fname, contrast, sl, slice_seed)
                )
        subjects.append(SubjectRecord(sub_id, splits[s], tuple(records)))

    manifest = DatasetManifest(
        version=DATASET_FORMAT,
        shape=(int(shape[0]), int(shape[1])),
        seed=int(seed),
        root=root,
        subjects=tuple(subjects),
    )
    _write_manifest(manifest)
    return manifest


def _write_manifest(manifest):
    doc = {
        "version": manifest.version,
        "shape": list(manifest.shape),
        "seed": manifest.seed,
        "subjects": [
            {
                "id": sub.subject_id,
                "split": sub.split,
                "slices": [
                    {
                        "file": rec.file,
                        "contrast": rec.contrast,
                        "slice_index": rec.slice_index,
                        "seed": rec.seed,
                    }
                    for rec in sub.slices
                ],
            }
            for sub in manifest.subjects
        ],
    }
    text = json.dumps(doc, indent=1, sort_keys=True)
    (manifest.root / "manifest.json").write_text(text + "\n")


def load_manifest(path):
    """Read and validate a dataset directory; raises DataError on problems."""
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise DataError(f"no manifest.json under {root}")
    try:
        doc = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {mpath} is not valid JSON: {exc}") from exc
    if doc.get("version") != DATASET_FORMAT:
        raise DataError(
            f"manifest version {doc.get('version')!r} != {DATASET_FORMAT!r}"
        )
    try:
        shape = tuple(int(v) for v in doc["shape"])
        subjects = []
        seen_splits = {}
        for sub in doc["subjects"]:
            records = tuple(
                SliceRecord(r["file"], r["contrast"], int(r["slice_index"]),
                            int(r["seed"]))
                for r in sub["slices"]
            )
            subjects.append(SubjectRecord(sub["id"], sub["split"], records))
            seen_splits.setdefault(sub["id"], sub["split"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"manifest {mpath} is malformed: {exc!r}") from exc
    expected_bytes = shape[0] * shape[1] * 2 * 4
    for sub in subjects:
        for rec in sub.slices:
            f = root / rec.file
            if not f.is_file():
                raise DataError(f"slice file {f} referenced by manifest is missing")
            if f.stat().st_size != expected_bytes:
                raise DataError(
                    f"slice file {f} has {f.stat().st_size} bytes, "
                    f"expected {expected_bytes} for shape {shape}"
                )
    return DatasetManifest(
        version=doc["version"],
        shape=shape,
        seed=int(doc["seed"]),
        root=root,
        subjects=tuple(subjects),
    )


def load_split_images(manifest, split, contrasts=None, limit=None):
    """Stack a split's slices into one (N, H, W) complex array."""
    pairs = manifest.slices(split=split)
    if contrasts is not None:
        pairs = [(s, r) for s, r in pairs if r.contrast in contrasts]
    if limit is not None:
        pairs = pairs[:limit]
    if not pairs:
        raise DataError(f"split {split!r} holds no slices")
    return np.stack([manifest.load(rec) for _, rec in pairs])
