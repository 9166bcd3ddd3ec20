"""Generator and discriminator networks.

The generator is a residual encoder-decoder over 2-channel (real, imag)
images conditioned on the diffusion time index and a random latent
vector: sinusoidal time encodings pass through a 2-layer MLP and enter
every block as a channel bias, the latent passes through an MLP stack and
drives adaptive group normalization, self-attention sits at the lowest
resolutions, and long skip connections bridge encoder and decoder stages.
The discriminator scores a pair of images (the candidate lower-step
sample stacked on its higher-step conditioning sample) with a residual
downsampling encoder and a final linear head.

Resampling defaults to nearest-neighbor/average pooling; learnable
separable 3-tap filters are available behind ``fir_resampling``.
"""

import math

import torch
import torch.nn.functional as F
from torch import nn


def _num_groups(channels):
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


class SinusoidalTimeEmbedding(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.dim = dim
        half = dim // 2
        exponents = torch.arange(half, dtype=torch.float32) / max(half - 1, 1)
        self.register_buffer("freqs", torch.exp(-math.log(10000.0) * exponents))

    def forward(self, t):
        args = t.float()[:, None] * self.freqs[None, :]
        emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
        if emb.shape[1] < self.dim:  # odd dim
            emb = F.pad(emb, (0, self.dim - emb.shape[1]))
        return emb


class TimeEmbedMLP(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.encode = SinusoidalTimeEmbedding(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t):
        return self.mlp(self.encode(t))


class LatentMLP(nn.Module):
    def __init__(self, z_dim, layers):
        super().__init__()
        mods = []
        for _ in range(layers):
            mods += [nn.Linear(z_dim, z_dim), nn.SiLU()]
        self.mlp = nn.Sequential(*mods)

    def forward(self, z):
        return self.mlp(z)


class AdaGroupNorm(nn.Module):
    """Group normalization, optionally modulated by a latent embedding."""

    def __init__(self, channels, z_embed_dim=None):
        super().__init__()
        self.norm = nn.GroupNorm(
            _num_groups(channels), channels, affine=z_embed_dim is None
        )
        self.film = (
            nn.Linear(z_embed_dim, 2 * channels) if z_embed_dim is not None else None
        )

    def forward(self, h, zemb=None):
        h = self.norm(h)
        if self.film is not None and zemb is not None:
            scale, shift = self.film(zemb).chunk(2, dim=1)
            h = h * (1 + scale[:, :, None, None]) + shift[:, :, None, None]
        return h


class SeparableFilter(nn.Module):
    """Learnable separable 3-tap filter used for FIR resampling."""

    def __init__(self, channels, direction):
        super().__init__()
        self.channels = channels
        self.direction = direction
        kernel = torch.tensor([1.0, 2.0, 1.0]) / 4.0
        self.taps = nn.Parameter(kernel)

    def _filter(self, x, stride):
        c = x.shape[1]
        ky = self.taps.view(1, 1, 3, 1).expand(c, 1, 3, 1)
        kx = self.taps.view(1, 1, 1, 3).expand(c, 1, 1, 3)
        x = F.conv2d(x, ky, stride=(stride, 1), padding=(1, 0), groups=c)
        x = F.conv2d(x, kx, stride=(1, stride), padding=(0, 1), groups=c)
        return x

    def forward(self, x):
        if self.direction == "down":
            return self._filter(x, 2)
        b, c, h, w = x.shape
        up = x.new_zeros(b, c, 2 * h, 2 * w)
        up[:, :, ::2, ::2] = x
        return self._filter(up, 1) * 4.0


def _make_resampler(direction, channels, fir):
    if fir:
        return SeparableFilter(channels, direction)
    if direction == "down":
        return lambda x: F.avg_pool2d(x, 2)
    return lambda x: F.interpolate(x, scale_factor=2, mode="nearest")


class ResidualBlock(nn.Module):
    """Generator block: adaGN -> act -> conv, twice, with a time bias."""

    def __init__(self, c_in, c_out, t_dim, z_embed_dim, resample="none", fir=False):
        super().__init__()
        self.norm1 = AdaGroupNorm(c_in, z_embed_dim)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.t_proj = nn.Linear(t_dim, c_out)
        self.norm2 = AdaGroupNorm(c_out, z_embed_dim)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()
        self.resample = (
            _make_resampler(resample, c_in, fir) if resample != "none" else None
        )
        self.act = nn.SiLU()

    def forward(self, x, temb, zemb=None):
        h = self.act(self.norm1(x, zemb))
        if self.resample is not None:
            h = self.resample(h)
            x = self.resample(x)
        h = self.conv1(h)
        h = h + self.t_proj(self.act(temb))[:, :, None, None]
        h = self.act(self.norm2(h, zemb))
        h = self.conv2(h)
        return h + self.skip(x)


class AttentionBlock(nn.Module):
    """Single-head self-attention over spatial positions."""

    def __init__(self, channels):
        super().__init__()
        self.norm = nn.GroupNorm(_num_groups(channels), channels)
        self.qkv = nn.Conv2d(channels, 3 * channels, 1)
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        b, c, h, w = x.shape
        q, k, v = self.qkv(self.norm(x)).reshape(b, 3, c, h * w).unbind(1)
        attn = torch.softmax(q.transpose(1, 2) @ k / math.sqrt(c), dim=-1)
        out = (v @ attn.transpose(1, 2)).reshape(b, c, h, w)
        return x + self.proj(out)


class _EncoderStage(nn.Module):
    def __init__(self, c_in, c_out, n_blocks, t_dim, z_dim, attn, down, fir):
        super().__init__()
        blocks = [ResidualBlock(c_in, c_out, t_dim, z_dim, fir=fir)]
        for _ in range(n_blocks - 1):
            blocks.append(ResidualBlock(c_out, c_out, t_dim, z_dim, fir=fir))
        self.blocks = nn.ModuleList(blocks)
        self.attn = AttentionBlock(c_out) if attn else None
        self.down = (
            ResidualBlock(c_out, c_out, t_dim, z_dim, resample="down", fir=fir)
            if down else None
        )

    def forward(self, h, temb, zemb):
        for blk in self.blocks:
            h = blk(h, temb, zemb)
        if self.attn is not None:
            h = self.attn(h)
        skip = h
        if self.down is not None:
            h = self.down(h, temb, zemb)
        return h, skip


class _DecoderStage(nn.Module):
    def __init__(self, c_in, c_out, c_next, n_blocks, t_dim, z_dim, attn, up, fir):
        super().__init__()
        blocks = [ResidualBlock(c_in, c_out, t_dim, z_dim, fir=fir)]
        for _ in range(n_blocks - 1):
            blocks.append(ResidualBlock(c_out, c_out, t_dim, z_dim, fir=fir))
        self.blocks = nn.ModuleList(blocks)
        self.attn = AttentionBlock(c_out) if attn else None
        self.up = (
            ResidualBlock(c_out, c_next, t_dim, z_dim, resample="up", fir=fir)
            if up else None
        )

    def forward(self, h, temb, zemb):
        for blk in self.blocks:
            h = blk(h, temb, zemb)
        if self.attn is not None:
            h = self.attn(h)
        if self.up is not None:
            h = self.up(h, temb, zemb)
        return h


class Generator(nn.Module):
    """Predicts the clean image from a noisy sample, a time index, and z."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        chans = config.stage_channels
        s = config.encoder_stages
        zdim = None if config.z_ablation else config.z_dim
        self.time_mlp = TimeEmbedMLP(config.time_embed_dim)
        self.z_mlp = (
            None if config.z_ablation
            else LatentMLP(config.z_dim, config.z_mlp_layers)
        )
        self.stem = nn.Conv2d(2, chans[0], 3, padding=1)
        self.encoder = nn.ModuleList()
        for i in range(s):
            self.encoder.append(
                _EncoderStage(
                    chans[i - 1] if i > 0 else chans[0],
                    chans[i],
                    config.enc_blocks,
                    config.time_embed_dim,
                    zdim,
                    attn=(i + 1) in config.attention_stages,
                    down=i < s - 1,
                    fir=config.fir_resampling,
                )
            )
        self.decoder = nn.ModuleList()
        for j in range(s):
            e = s - 1 - j  # mirrored encoder stage
            # the previous stage's upsampling block already mapped onto
            # chans[e], so the skip concat doubles that width
            c_in = chans[e] if j == 0 else 2 * chans[e]
            self.decoder.append(
                _DecoderStage(
                    c_in,
                    chans[e],
                    chans[max(e - 1, 0)],
                    config.dec_blocks,
                    config.time_embed_dim,
                    zdim,
                    attn=(j + 1) in config.decoder_attention_stages,
                    up=j < s - 1,
                    fir=config.fir_resampling,
                )
            )
        self.out_norm = AdaGroupNorm(chans[0], zdim)
        self.out_conv = nn.Conv2d(chans[0], 2, 3, padding=1)
        self.act = nn.SiLU()

    def forward(self, x, t, z=None):
        temb = self.time_mlp(t)
        zemb = None
        if self.z_mlp is not None:
            if z is None:
                raise ValueError("generator requires a latent vector z")
            zemb = self.z_mlp(z)
        h = self.stem(x)
        skips = []
        for stage in self.encoder:
            h, skip = stage(h, temb, zemb)
            skips.append(skip)
        for j, stage in enumerate(self.decoder):
            if j > 0:
                h = torch.cat([h, skips[len(self.decoder) - 1 - j]], dim=1)
            h = stage(h, temb, zemb)
        return self.out_conv(self.act(self.out_norm(h, zemb)))


class DiscBlock(nn.Module):
    """Discriminator block: two convs with a time bias, then downsampling."""

    def __init__(self, c_in, c_out, t_dim, fir=False):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.t_proj = nn.Linear(t_dim, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1)
        self.down = _make_resampler("down", c_out, fir)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x, temb):
        h = self.conv1(self.act(x))
        h = h + self.t_proj(self.act(temb))[:, :, None, None]
        h = self.conv2(self.act(h))
        return self.down(h) + self.down(self.skip(x))


class Discriminator(nn.Module):
    """Scores (lower-step, higher-step) image pairs at a given time index."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        chans = config.stage_channels
        self.time_mlp = TimeEmbedMLP(config.time_embed_dim)
        self.stem = nn.Conv2d(4, chans[0], 3, padding=1)
        self.stages = nn.ModuleList(
            DiscBlock(
                chans[i - 1] if i > 0 else chans[0],
                chans[i],
                config.time_embed_dim,
                fir=config.fir_resampling,
            )
            for i in range(config.encoder_stages)
        )
        self.head = nn.Linear(chans[-1], 1)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x_low, x_high, t):
        temb = self.time_mlp(t)
        h = self.stem(torch.cat([x_low, x_high], dim=1))
        for stage in self.stages:
            h = stage(h, temb)
        h = self.act(h).mean(dim=(2, 3))
        return self.head(h).squeeze(1)
