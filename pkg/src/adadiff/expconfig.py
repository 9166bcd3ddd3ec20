"""Experiment configuration: strict YAML schema, overrides, and builders.

A config document has sections data/schedule/mapper/operator/recon/metrics
plus an optional output_root. Unknown keys anywhere are rejected with
their dotted path. Dotted-path overrides (``section.key=value``) are
applied before validation, and every command echoes the original config
text plus the applied overrides into its output directory.
"""

import json
import os
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .mapper import MapperConfig
from .operator import ImagingOperator, make_coil_maps, make_mask
from .recon import ReconConfig
from .schedule import make_schedule

OUTPUT_ROOT_ENV = "ADADIFF_OUTPUT_ROOT"

DEFAULTS = {
    "output_root": None,
    "data": {
        "n_subjects": 10,
        "contrasts": ["T1", "T2", "PD"],
        "shape": [64, 64],
        "slices_per_subject": 4,
        "seed": 0,
        "out": "dataset",
    },
    "schedule": {
        "t_total": 1000,
        "stride": 125,
        "beta_min": 0.1,
        "beta_max": 20.0,
    },
    "mapper": {
        "image_size": 64,
        "base_channels": 32,
        "encoder_stages": 4,
        "channel_mult": [1, 2, 2, 4],
        "enc_blocks": 1,
        "dec_blocks": 1,
        "attention_stages": None,
        "decoder_attention_stages": [2],
        "z_dim": 32,
        "z_mlp_layers": 4,
        "time_embed_dim": 64,
        "learning_rate": 6e-3,
        "adam_beta1": 0.5,
        "adam_beta2": 0.9,
        "epochs": 500,
        "batch_size": 4,
        "z_ablation": False,
        "fir_resampling": False,
        "seed": 0,
        "train_limit": None,
        "val_limit": 16,
    },
    "operator": {
        "mask_kind": "2d",
        "accel": 4,
        "calib_fraction": 1.0 / 64.0,
        "coils": 1,
        "mask_seed": 0,
        "coil_seed": 0,
        "noise_sigma": 0.0,
        "noise_seed": 0,
    },
    "recon": {
        "iterations": 1000,
        "adapt_lr": 1e-3,
        "adam_beta1": 0.5,
        "adam_beta2": 0.9,
        "variant": "full",
        "seed": 0,
        "limit": None,
    },
    "metrics": {
        "subject_mean_first": True,
    },
}


def _check_unknown(doc, schema, path=""):
    for key, value in doc.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigurationError(f"unknown config key {where!r}")
        if isinstance(schema[key], dict) and schema[key]:
            if value is None:
                continue
            if not isinstance(value, dict):
                raise ConfigurationError(f"config key {where!r} must be a mapping")
            _check_unknown(value, schema[key], where)


def _merge(defaults, doc):
    out = {}
    for key, dval in defaults.items():
        if key in doc and isinstance(dval, dict) and isinstance(doc[key], dict):
            out[key] = _merge(dval, doc[key])
        elif key in doc:
            out[key] = doc[key]
        else:
            out[key] = json.loads(json.dumps(dval))  # deep copy
    return out


def apply_override(doc, dotted, raw_value):
    """Set a dotted-path key to a YAML-parsed value, in place."""
    keys = dotted.split(".")
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"cannot override through scalar at {k!r}")
    node[keys[-1]] = yaml.safe_load(raw_value)


class ExperimentConfig:
    def __init__(self, doc, raw_text="", overrides=()):
        _check_unknown(doc, DEFAULTS)
        self.doc = _merge(DEFAULTS, doc)
        self.raw_text = raw_text
        self.overrides = list(overrides)

    @classmethod
    def load(cls, path, overrides=()):
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file {path} does not exist")
        raw_text = path.read_text()
        try:
            doc = yaml.safe_load(raw_text) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"config {path} is not valid YAML: {exc}")
        if not isinstance(doc, dict):
            raise ConfigurationError(f"config {path} must be a mapping")
        for item in overrides:
            if "=" not in item:
                raise ConfigurationError(
                    f"override {item!r} must look like section.key=value"
                )
            dotted, value = item.split("=", 1)
            apply_override(doc, dotted, value)
        return cls(doc, raw_text=raw_text, overrides=overrides)

    def __getitem__(self, section):
        return self.doc[section]

    @property
    def output_root(self):
        configured = self.doc.get("output_root")
        if configured:
            return Path(configured)
        env = os.environ.get(OUTPUT_ROOT_ENV)
        if env:
            return Path(env)
        return Path.cwd()

    def resolve_out(self, out):
        out = Path(out)
        return out if out.is_absolute() else self.output_root / out

    def dataset_path(self, explicit=None):
        if explicit is not None:
            return Path(explicit)
        return self.resolve_out(self.doc["data"]["out"])

    def echo_into(self, out_dir):
        """Write the verbatim config text and applied overrides."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.yaml").write_text(self.raw_text)
        (out_dir / "resolved.json").write_text(
            json.dumps(
                {"config": self.doc, "overrides": self.overrides},
                indent=1, sort_keys=True,
            ) + "\n"
        )

    # section builders -----------------------------------------------------

    def build_schedule(self):
        s = self.doc["schedule"]
        return make_schedule(s["t_total"], s["stride"],
                             s["beta_min"], s["beta_max"])

    def build_mapper_config(self, z_ablation=None):
        m = dict(self.doc["mapper"])
        m.pop("seed")
        m.pop("train_limit")
        m.pop("val_limit")
        if m.get("attention_stages") is not None:
            m["attention_stages"] = tuple(m["attention_stages"])
        m["decoder_attention_stages"] = tuple(m["decoder_attention_stages"])
        m["channel_mult"] = tuple(m["channel_mult"])
        if z_ablation is not None:
            m["z_ablation"] = z_ablation
        return MapperConfig(schedule=self.build_schedule(), **m)

    def build_operator(self, shape):
        o = self.doc["operator"]
        mask = make_mask(shape, o["accel"], kind=o["mask_kind"],
                         calib_fraction=o["calib_fraction"], seed=o["mask_seed"])
        coils = make_coil_maps(shape, o["coils"], seed=o["coil_seed"])
        return ImagingOperator(mask, coils)

    def build_recon_config(self, variant=None, seed=None):
        r = self.doc["recon"]
        return ReconConfig(
            iterations=r["iterations"],
            adapt_lr=r["adapt_lr"],
            adam_beta1=r["adam_beta1"],
            adam_beta2=r["adam_beta2"],
            variant=variant if variant is not None else r["variant"],
            seed=seed if seed is not None else r["seed"],
        )
