"""Contrastive ConvLSTM variational autoencoder.

Tensor layout at the module boundary is ``(N, T, p, p, 3)`` (time, rows,
cols, channels), the same layout :mod:`clvae.patching` produces. Internally
the 3D convolutions run on ``(N, C, T, p, p)``.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from torch import nn
import torch.nn.functional as F

CHECKPOINT_FORMAT = 1


@dataclass
class ModelConfig:
    latent_dim: int = 128
    bottleneck_units: int = 8
    convlstm_filters: int = 16
    residual_channels: list[int] = field(default_factory=lambda: [32, 64])
    extra_residual_blocks: int = 1
    patch_size: int = 16
    timesteps: int = 4
    in_channels: int = 3

    def __post_init__(self):
        self.residual_channels = [int(c) for c in self.residual_channels]
        if self.latent_dim < 1:
            raise ValueError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.bottleneck_units < 1:
            raise ValueError(f"bottleneck_units must be >= 1, got {self.bottleneck_units}")
        if self.extra_residual_blocks not in (0, 1, 2):
            raise ValueError(
                f"extra_residual_blocks must be 0, 1 or 2, got {self.extra_residual_blocks}")
        if self.patch_size < 4 or self.patch_size % 4:
            raise ValueError(f"patch_size must be a positive multiple of 4, got {self.patch_size}")
        if self.timesteps < 1:
            raise ValueError(f"timesteps must be >= 1, got {self.timesteps}")
        if len(self.residual_channels) != 2:
            raise ValueError("residual_channels must list exactly two widths")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class LatentDistribution:
    """Batch of diagonal Gaussians, ``mean`` and ``log_variance`` of shape (N, D)."""

    mean: torch.Tensor
    log_variance: torch.Tensor

    @property
    def variance(self) -> torch.Tensor:
        return torch.exp(self.log_variance)

    @property
    def std(self) -> torch.Tensor:
        return torch.exp(0.5 * self.log_variance)

    def __len__(self):
        return self.mean.shape[0]


def _down(n: int) -> int:
    # kernel 3, stride 2, padding 1
    return (n + 1) // 2


class ConvLSTM(nn.Module):
    """ConvLSTM over a sequence, returning every hidden state.

    Gates are computed by one convolution over ``concat(x_t, h_{t-1})``,
    which is parameter-equivalent to separate input and recurrent kernels
    with a single bias.
    """

    def __init__(self, in_channels: int, filters: int, kernel_size: int = 3):
        super().__init__()
        self.filters = filters
        self.gates = nn.Conv2d(in_channels + filters, 4 * filters, kernel_size,
                               padding=kernel_size // 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (N, T, C, H, W)
        n, t, _, h, w = x.shape
        hidden = x.new_zeros(n, self.filters, h, w)
        cell = x.new_zeros(n, self.filters, h, w)
        outputs = []
        for step in range(t):
            g = self.gates(torch.cat([x[:, step], hidden], dim=1))
            i, f, o, c = torch.chunk(g, 4, dim=1)
            cell = torch.sigmoid(f) * cell + torch.sigmoid(i) * torch.tanh(c)
            hidden = torch.sigmoid(o) * torch.tanh(cell)
            outputs.append(hidden)
        return torch.stack(outputs, dim=2)  # (N, F, T, H, W)


def _conv_bn(cin: int, cout: int, stride: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv3d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm3d(cout),
    )


class ResidualBlock3d(nn.Module):
    """Two conv+BN sets on the main path plus a shortcut.

    A downsampling block (or one that changes width) carries a third conv+BN
    set on the shortcut; otherwise the shortcut is the identity.
    """

    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = _conv_bn(cin, cout, stride)
        self.conv2 = _conv_bn(cout, cout, 1)
        self.shortcut = _conv_bn(cin, cout, stride) if stride != 1 or cin != cout else None

    def forward(self, x):
        y = F.relu(self.conv1(x))
        y = self.conv2(y)
        skip = x if self.shortcut is None else self.shortcut(x)
        return F.relu(y + skip)


class _UpStage(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.deconv = nn.ConvTranspose3d(cin, cout, 3, stride=2, padding=1, bias=False)
        self.bn = nn.BatchNorm3d(cout)

    def forward(self, x, size):
        return F.relu(self.bn(self.deconv(x, output_size=size)))


class CLVAE(nn.Module):
    """Encoder, reparameterised sampler and skip-connected decoder."""

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = cfg = config or ModelConfig()
        c1, c2 = cfg.residual_channels
        f = cfg.convlstm_filters

        self.convlstm = ConvLSTM(cfg.in_channels, f)
        self.down1 = ResidualBlock3d(f, c1, stride=2)
        self.down2 = ResidualBlock3d(c1, c2, stride=2)
        self.extra = nn.ModuleList(
            ResidualBlock3d(c2, c2, stride=1) for _ in range(cfg.extra_residual_blocks))
        self.bottleneck = nn.Linear(c2, cfg.bottleneck_units)
        self.fc_mean = nn.Linear(cfg.bottleneck_units, cfg.latent_dim)
        self.fc_logvar = nn.Linear(cfg.bottleneck_units, cfg.latent_dim)

        t0, t1, t2 = cfg.timesteps, _down(cfg.timesteps), _down(_down(cfg.timesteps))
        p0, p1, p2 = cfg.patch_size, cfg.patch_size // 2, cfg.patch_size // 4
        self._shapes = [(t0, p0, p0), (t1, p1, p1), (t2, p2, p2)]
        self._seed_shape = (_down(t2), _down(p2), _down(p2))
        self._seed_channels = c2
        self.expand = nn.Linear(cfg.latent_dim, c2 * math.prod(self._seed_shape))
        self.up1 = _UpStage(c2, c1)
        self.up2 = _UpStage(c1, c1)
        self.up3 = _UpStage(2 * c1, f)
        self.out = nn.Conv3d(2 * f, cfg.in_channels, (1, 3, 3), padding=(0, 1, 1))

    # -- encoder -----------------------------------------------------------
    def _check_input(self, x: torch.Tensor):
        cfg = self.config
        expected = (cfg.timesteps, cfg.patch_size, cfg.patch_size, cfg.in_channels)
        if x.dim() != 5 or tuple(x.shape[1:]) != expected:
            raise ValueError(
                f"expected patches of shape (N, {', '.join(map(str, expected))}), "
                f"got {tuple(x.shape)}")

    def encode(self, x: torch.Tensor) -> tuple[LatentDistribution, list[torch.Tensor]]:
        """Return the latent distribution and the skip feature maps."""
        self._check_input(x)
        seq = self.convlstm(x.permute(0, 1, 4, 2, 3))
        h1 = self.down1(seq)
        h = self.down2(h1)
        for block in self.extra:
            h = block(h)
        pooled = h.mean(dim=(2, 3, 4))
        b = self.bottleneck(pooled)  # linear, as a plain dense layer
        dist = LatentDistribution(self.fc_mean(b), self.fc_logvar(b))
        return dist, [seq, h1]

    # -- sampler -----------------------------------------------------------
    @staticmethod
    def sample(dist: LatentDistribution, noise: torch.Tensor) -> torch.Tensor:
        return dist.mean + torch.exp(0.5 * dist.log_variance) * noise

    # -- decoder -----------------------------------------------------------
    def decode(self, z: torch.Tensor, skips: list[torch.Tensor]) -> torch.Tensor:
        cfg = self.config
        if z.dim() != 2 or z.shape[1] != cfg.latent_dim:
            raise ValueError(f"z must have shape (N, {cfg.latent_dim}), got {tuple(z.shape)}")
        seq, h1 = skips
        n = z.shape[0]
        if seq.shape[0] != n or h1.shape[0] != n:
            raise ValueError("skip features and z disagree on batch size")
        if tuple(seq.shape[2:]) != self._shapes[0] or tuple(h1.shape[2:]) != self._shapes[1]:
            raise ValueError("skip feature maps do not match the decoder stages")
        g = F.relu(self.expand(z)).view(n, self._seed_channels, *self._seed_shape)
        g = self.up1(g, self._shapes[2])
        g = self.up2(g, self._shapes[1])
        g = self.up3(torch.cat([g, h1], dim=1), self._shapes[0])
        g = torch.cat([g, seq], dim=1)
        g = torch.sigmoid(self.out(g))
        return g.permute(0, 2, 3, 4, 1)  # back to (N, T, p, p, C)

    def forward(self, x: torch.Tensor, noise: torch.Tensor | None = None):
        """Full pass; returns ``(x_hat, dist)``. ``noise`` defaults to N(0, I) draws."""
        dist, skips = self.encode(x)
        if noise is None:
            noise = torch.randn_like(dist.mean)
        z = self.sample(dist, noise)
        return self.decode(z, skips), dist


def parameter_count(config: ModelConfig | None = None, trainable_only: bool = True) -> int:
    model = CLVAE(config)
    return sum(p.numel() for p in model.parameters() if p.requires_grad or not trainable_only)


def save_checkpoint(model: CLVAE, path, extra: dict | None = None) -> None:
    header = {"format": CHECKPOINT_FORMAT, "config": asdict(model.config), **(extra or {})}
    buf = io.BytesIO()
    torch.save(model.state_dict(), buf)
    blob = json.dumps(header).encode()
    Path(path).write_bytes(len(blob).to_bytes(4, "little") + blob + buf.getvalue())


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> tuple[CLVAE, dict]:
    """Load a model saved by :func:`save_checkpoint`; the model is in eval mode."""
    raw = Path(path).read_bytes()
    n = int.from_bytes(raw[:4], "little")
    header = json.loads(raw[4:4 + n])
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
    config = ModelConfig.from_dict(header["config"])
    if expected_config is not None and config != expected_config:
        raise ValueError(f"{path}: checkpoint config {config} does not match {expected_config}")
    model = CLVAE(config)
    state = torch.load(io.BytesIO(raw[4 + n:]), map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    model.eval()
    return model, header
