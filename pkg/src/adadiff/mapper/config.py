"""Configuration of the adversarial reverse-diffusion mapper."""

from dataclasses import dataclass, field

from ..errors import ConfigurationError
from ..schedule import DiffusionSchedule, make_schedule


def _default_schedule():
    return make_schedule(1000, 125)


@dataclass
class MapperConfig:
    """Architecture and optimizer settings for the generator/discriminator.

    Defaults are the desk scale (64x64 images, 4 encoder stages, 4 latent
    MLP layers, one flat block per stage). The full-scale reference uses
    256x256 images, 6 stages, an 8-layer latent MLP, 2 flat encoder and
    3 flat decoder blocks per stage; the stage layout is the same either
    way: residual encoder-decoder with long skips, attention at the two
    lowest-resolution encoder stages and one decoder stage, adaptive group
    normalization driven by the latent MLP, and additive channel-bias time
    embeddings.
    """

    image_size: int = 64
    base_channels: int = 32
    encoder_stages: int = 4
    channel_mult: tuple = (1, 2, 2, 4)
    enc_blocks: int = 1
    dec_blocks: int = 1
    attention_stages: tuple = None  # encoder stages, 1-based; default last two
    decoder_attention_stages: tuple = (2,)
    z_dim: int = 32
    z_mlp_layers: int = 4
    time_embed_dim: int = 64
    learning_rate: float = 6e-3
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    epochs: int = 500
    batch_size: int = 4
    z_ablation: bool = False
    fir_resampling: bool = False
    schedule: DiffusionSchedule = field(default_factory=_default_schedule)

    def __post_init__(self):
        if self.encoder_stages < 2:
            raise ConfigurationError("need at least 2 encoder stages")
        div = 2 ** (self.encoder_stages - 1)
        if self.image_size % div != 0:
            raise ConfigurationError(
                f"image size {self.image_size} not divisible by {div} "
                f"for {self.encoder_stages} stages"
            )
        if self.z_dim <= 0:
            raise ConfigurationError("latent dimension must be positive")
        if self.attention_stages is None:
            self.attention_stages = (self.encoder_stages - 1, self.encoder_stages)
        self.attention_stages = tuple(self.attention_stages)
        self.decoder_attention_stages = tuple(self.decoder_attention_stages)
        self.channel_mult = tuple(self.channel_mult)
        if len(self.channel_mult) != self.encoder_stages:
            raise ConfigurationError(
                f"channel_mult {self.channel_mult} must list one factor per "
                f"stage ({self.encoder_stages})"
            )
        for s in self.attention_stages + self.decoder_attention_stages:
            if not 1 <= s <= self.encoder_stages:
                raise ConfigurationError(f"attention stage {s} out of range")

    @property
    def stage_channels(self):
        return tuple(self.base_channels * m for m in self.channel_mult)

    def to_dict(self):
        return {
            "image_size": self.image_size,
            "base_channels": self.base_channels,
            "encoder_stages": self.encoder_stages,
            "channel_mult": list(self.channel_mult),
            "enc_blocks": self.enc_blocks,
            "dec_blocks": self.dec_blocks,
            "attention_stages": list(self.attention_stages),
            "decoder_attention_stages": list(self.decoder_attention_stages),
            "z_dim": self.z_dim,
            "z_mlp_layers": self.z_mlp_layers,
            "time_embed_dim": self.time_embed_dim,
            "learning_rate": self.learning_rate,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "z_ablation": self.z_ablation,
            "fir_resampling": self.fir_resampling,
            "schedule": {
                "t_total": self.schedule.t_total,
                "stride": self.schedule.stride,
                "beta_min": self.schedule.beta_min,
                "beta_max": self.schedule.beta_max,
            },
        }

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        sched = doc.pop("schedule")
        return cls(
            schedule=make_schedule(
                sched["t_total"], sched["stride"],
                sched["beta_min"], sched["beta_max"],
            ),
            **doc,
        )
