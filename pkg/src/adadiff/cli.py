"""Command-line entry points wiring the modules into experiments.

Verbs: gen-data, train, reconstruct, ablate, eval, mask. Every command
takes a config file, optional dotted-path overrides (--set), and an
output directory; the config text is echoed into the output directory
with the overrides, and all seeds come from the config, so reruns in
single-worker mode are byte-identical.

Exit codes: 0 success, 2 configuration/contract error, 3 data error,
4 numerical divergence.
"""

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import (
    ConfigurationError,
    ContractError,
    DataError,
    DivergenceError,
)
from .expconfig import ExperimentConfig
from .mapper import load_prior, save_prior, train
from .metrics import MetricReport, psnr, ssim
from .operator import zero_filled
from .phantom import load_manifest, load_split_images, make_dataset, simulate_acquisition
from .recon import load_recon_result, reconstruct, save_recon_result

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def _export_png(image, path, window_percentile=99.0):
    """Magnitude preview windowed to [0, 99th percentile]; display only."""
    mag = np.abs(image)
    lim = np.percentile(mag, window_percentile)
    if lim <= 0:
        lim = 1.0
    scaled = np.clip(mag / lim, 0.0, 1.0)
    Image.fromarray((scaled * 255).round().astype(np.uint8)).save(path)


def _slice_seed(base, subject_index, ordinal):
    return int(np.random.SeedSequence([base, subject_index, ordinal])
               .generate_state(1)[0])


def cmd_gen_data(args):
    cfg = ExperimentConfig.load(args.config, args.set or [])
    out = cfg.resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    d = cfg["data"]
    manifest = make_dataset(
        d["n_subjects"], tuple(d["contrasts"]), tuple(d["shape"]),
        d["slices_per_subject"], d["seed"], out,
    )
    load_manifest(out)  # verify what was written
    cfg.echo_into(out)
    print(f"wrote {len(manifest.slices())} slices under {out}")
    return 0


def cmd_train(args):
    cfg = ExperimentConfig.load(args.config, args.set or [])
    out = cfg.resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(cfg.dataset_path(args.dataset))
    m = cfg["mapper"]
    mode = "l1" if args.variant == "l1" else "adversarial"
    mapper_config = cfg.build_mapper_config(z_ablation=args.variant == "no-z")
    if manifest.shape != (mapper_config.image_size, mapper_config.image_size):
        raise ConfigurationError(
            f"dataset shape {manifest.shape} != mapper image size "
            f"{mapper_config.image_size}"
        )
    images = load_split_images(manifest, "train", limit=m["train_limit"])
    val_images = None
    if m["val_limit"]:
        val_images = load_split_images(manifest, "val", limit=m["val_limit"])
    resume_from = load_prior(args.resume) if args.resume else None
    prior = train(
        images, mapper_config, mode=mode, seed=m["seed"],
        val_images=val_images, resume_from=resume_from,
    )
    prior.training_meta["variant"] = args.variant
    path = save_prior(prior, out / "prior.zip")
    cfg.echo_into(out)
    print(f"trained {args.variant} prior on {len(images)} slices -> {path}")
    return 0


def _recon_slices(cfg, manifest, split, limit):
    pairs = manifest.slices(split=split)
    if limit is not None:
        pairs = pairs[:limit]
    if not pairs:
        raise DataError(f"split {split!r} holds no slices")
    return pairs


def _reconstruct_one(prior, truth, op, cfg, variant, seed):
    o = cfg["operator"]
    y = simulate_acquisition(truth, op, o["noise_sigma"],
                             seed=_slice_seed(o["noise_seed"], seed, 0))
    recon_config = cfg.build_recon_config(variant=variant, seed=seed)
    return y, reconstruct(prior, y, op, recon_config)


def cmd_reconstruct(args):
    cfg = ExperimentConfig.load(args.config, args.set or [])
    out = cfg.resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.workers == 1:
        torch.set_num_threads(1)
    prior = load_prior(args.checkpoint)
    manifest = load_manifest(cfg.dataset_path(args.dataset))
    op = cfg.build_operator(manifest.shape)
    pairs = _recon_slices(cfg, manifest, args.split, cfg["recon"]["limit"])
    sub_index = {s.subject_id: i for i, s in enumerate(manifest.subjects)}

    def run(item):
        ordinal, (sub, rec) = item
        truth = manifest.load(rec)
        seed = _slice_seed(cfg["recon"]["seed"], sub_index[sub.subject_id],
                           ordinal)
        y, result = _reconstruct_one(prior, truth, op, cfg, None, seed)
        stem = f"{sub.subject_id}_{rec.contrast}_{rec.slice_index:03d}"
        save_recon_result(result, out / f"{stem}.zip")
        _export_png(result.x_init, out / f"{stem}_init.png")
        _export_png(result.x_fin, out / f"{stem}_fin.png")
        _export_png(truth, out / f"{stem}_ref.png")
        return {
            "archive": f"{stem}.zip",
            "subject": sub.subject_id,
            "contrast": rec.contrast,
            "slice_index": rec.slice_index,
        }

    items = list(enumerate(pairs))
    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            index = list(pool.map(run, items))
    else:
        index = [run(item) for item in items]
    (out / "index.json").write_text(
        json.dumps({"dataset": str(cfg.dataset_path(args.dataset)),
                    "split": args.split, "slices": index},
                   indent=1, sort_keys=True) + "\n"
    )
    cfg.echo_into(out)
    print(f"reconstructed {len(index)} slices -> {out}")
    return 0


def _evaluate_records(report, method, entries, manifest, load_result):
    for entry in entries:
        sub_id = entry["subject"]
        truth = None
        for sub, rec in manifest.slices():
            if (sub.subject_id == sub_id and rec.contrast == entry["contrast"]
                    and rec.slice_index == entry["slice_index"]):
                truth = manifest.load(rec)
                break
        if truth is None:
            raise DataError(
                f"dataset has no slice for {sub_id} {entry['contrast']} "
                f"{entry['slice_index']}"
            )
        result = load_result(entry)
        report.add(
            method, entry["contrast"], sub_id, entry["slice_index"],
            psnr(truth, result.x_fin), ssim(truth, result.x_fin),
        )


def cmd_eval(args):
    cfg = ExperimentConfig.load(args.config, args.set or [])
    out = cfg.resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    recon_dir = Path(args.recon_dir)
    index_path = recon_dir / "index.json"
    if not index_path.is_file():
        raise DataError(f"{recon_dir} has no index.json")
    index = json.loads(index_path.read_text())
    manifest = load_manifest(cfg.dataset_path(args.dataset))
    report = MetricReport(
        subject_mean_first=cfg["metrics"]["subject_mean_first"]
    )
    first = load_recon_result(recon_dir / index["slices"][0]["archive"])
    method = first.meta.get("variant", "full")
    _evaluate_records(
        report, method, index["slices"], manifest,
        lambda entry: load_recon_result(recon_dir / entry["archive"]),
    )
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.csv").write_text(report.to_table())
    cfg.echo_into(out)
    print(report.to_table())
    return 0


ABLATION_VARIANTS = ("full", "no_adapt", "no_train", "l1_trained", "noz_trained")


def cmd_ablate(args):
    cfg = ExperimentConfig.load(args.config, args.set or [])
    out = cfg.resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    torch.set_num_threads(1)
    priors = {
        "full": load_prior(args.checkpoint),
        "l1_trained": load_prior(args.checkpoint_l1),
        "noz_trained": load_prior(args.checkpoint_noz),
    }
    manifest = load_manifest(cfg.dataset_path(args.dataset))
    op = cfg.build_operator(manifest.shape)
    pairs = _recon_slices(cfg, manifest, args.split, cfg["recon"]["limit"])
    sub_index = {s.subject_id: i for i, s in enumerate(manifest.subjects)}
    report = MetricReport(
        subject_mean_first=cfg["metrics"]["subject_mean_first"]
    )
    plans = (
        ("full", "full", "full"),
        ("no_adapt", "full", "no_adapt"),
        ("no_train", "full", "no_train"),
        ("l1_trained", "l1_trained", "full"),
        ("noz_trained", "noz_trained", "full"),
    )
    for ordinal, (sub, rec) in enumerate(pairs):
        truth = manifest.load(rec)
        seed = _slice_seed(cfg["recon"]["seed"], sub_index[sub.subject_id],
                           ordinal)
        for method, prior_key, variant in plans:
            _, result = _reconstruct_one(
                priors[prior_key], truth, op, cfg, variant, seed
            )
            report.add(
                method, rec.contrast, sub.subject_id, rec.slice_index,
                psnr(truth, result.x_fin), ssim(truth, result.x_fin),
            )
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.csv").write_text(report.to_table())
    cfg.echo_into(out)
    print(report.to_table())
    return 0


def cmd_mask(args):
    cfg = ExperimentConfig.load(args.config, args.set or [])
    out = cfg.resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    shape = tuple(cfg["data"]["shape"])
    op = cfg.build_operator(shape)
    pattern = op.mask.pattern
    Image.fromarray((pattern * 255).astype(np.uint8)).save(out / "mask.png")
    (out / "mask.json").write_text(json.dumps({
        "shape": list(shape),
        "kind": op.mask.kind,
        "accel": op.mask.accel,
        "sampled": op.mask.n_sampled,
        "fraction": op.mask.n_sampled / pattern.size,
        "calib_region": list(op.mask.calib_region),
    }, indent=1, sort_keys=True) + "\n")
    cfg.echo_into(out)
    print(f"mask {shape} R={op.mask.accel} -> {out / 'mask.png'}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="adadiff",
        description="Adaptive diffusion-prior MRI reconstruction experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=False):
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted-path config override")
        if dataset:
            p.add_argument("--dataset", default=None,
                           help="dataset dir (default: config data.out)")

    p = sub.add_parser("gen-data", help="generate a phantom dataset")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a diffusion prior")
    common(p, dataset=True)
    p.add_argument("--variant", choices=("adversarial", "l1", "no-z"),
                   default="adversarial")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="reconstruct a dataset split")
    common(p, dataset=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("ablate", help="compare reconstruction variants")
    common(p, dataset=True)
    p.add_argument("--checkpoint", required=True, help="adversarial prior")
    p.add_argument("--checkpoint-l1", required=True, help="l1-trained prior")
    p.add_argument("--checkpoint-noz", required=True, help="no-z prior")
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("eval", help="score a reconstruction directory")
    common(p, dataset=True)
    p.add_argument("--recon-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mask", help="export a mask preview")
    common(p)
    p.set_defaults(func=cmd_mask)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ContractError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"divergence error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
