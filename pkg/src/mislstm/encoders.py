"""Block encoders: residual SE CNN for block images, multi-kernel 1D CNN for
discrete windows."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .types import N_DISCRETE, ConfigError, ShapeError


@dataclass(frozen=True)
class ContinuousEncoderConfig:
    input_channels: int = 7
    stages: tuple[tuple[int, int], ...] = ((32, 1), (64, 2), (128, 2), (256, 2))
    use_squeeze_excitation: bool = True
    embed_dim: int = 256
    stem_kernel: tuple[int, int] = (3, 3)
    stem_stride: tuple[int, int] = (2, 2)
    se_reduction: int = 4

    def __post_init__(self):
        if self.input_channels < 1:
            raise ConfigError("input_channels must be positive")
        if not self.stages:
            raise ConfigError("at least one stage is required")
        if self.embed_dim < 8:
            raise ConfigError("embed_dim must be >= 8")
        object.__setattr__(self, "stages", tuple((int(w), int(s)) for w, s in self.stages))
        object.__setattr__(self, "stem_kernel", tuple(self.stem_kernel))
        object.__setattr__(self, "stem_stride", tuple(self.stem_stride))


@dataclass(frozen=True)
class DiscreteEncoderConfig:
    kernel_sizes: tuple[int, ...] = (3, 4, 5, 6)
    filters_per_size: int = 16
    input_channels: int = N_DISCRETE

    def __post_init__(self):
        if not self.kernel_sizes or min(self.kernel_sizes) < 1:
            raise ConfigError("kernel sizes must be positive")
        object.__setattr__(self, "kernel_sizes", tuple(sorted(set(int(k) for k in self.kernel_sizes))))

    @property
    def out_dim(self) -> int:
        return len(self.kernel_sizes) * self.filters_per_size


class SqueezeExcitation(nn.Module):
    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(channels // reduction, 4)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, x):
        s = x.mean(dim=(2, 3))
        s = torch.sigmoid(self.fc2(F.relu(self.fc1(s))))
        return x * s[:, :, None, None]


class ResidualBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int, se: bool, se_reduction: int = 4):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.se = SqueezeExcitation(cout, se_reduction) if se else nn.Identity()
        if cin == cout and stride == 1:
            self.shortcut = nn.Identity()
        else:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        y = F.relu(self.bn1(self.conv1(x)))
        y = self.se(self.bn2(self.conv2(y)))
        return F.relu(y + self.shortcut(x))


class ContinuousEncoder(nn.Module):
    """Residual (SE) CNN over one block image.

    Returns the pooled, projected embedding and the pre-pool feature map. An
    optional ``attention`` module refines the feature map before pooling.
    """

    def __init__(self, config: ContinuousEncoderConfig = ContinuousEncoderConfig(), attention: nn.Module | None = None):
        super().__init__()
        self.config = config
        first = config.stages[0][0]
        pad = tuple((k - s + 1) // 2 for k, s in zip(config.stem_kernel, config.stem_stride))
        self.stem = nn.Sequential(
            nn.Conv2d(config.input_channels, first, config.stem_kernel, config.stem_stride, pad, bias=False),
            nn.BatchNorm2d(first),
            nn.ReLU(),
        )
        blocks = []
        cin = first
        for width, stride in config.stages:
            blocks.append(ResidualBlock(cin, width, stride, config.use_squeeze_excitation, config.se_reduction))
            cin = width
        self.stages = nn.Sequential(*blocks)
        self.attention = attention
        self.proj = nn.Linear(cin, config.embed_dim)
        self.feature_channels = cin

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if x.ndim != 4 or x.shape[1] != self.config.input_channels:
            raise ShapeError(
                f"expected (batch, {self.config.input_channels}, H, W) images, got {tuple(x.shape)}"
            )
        fmap = self.stages(self.stem(x))
        if self.attention is not None:
            fmap = self.attention(fmap)
        return self.proj(fmap.mean(dim=(2, 3))), fmap


class DiscreteEncoder(nn.Module):
    """Parallel 1D convolutions along time, ReLU, max over time, concatenated."""

    def __init__(self, config: DiscreteEncoderConfig = DiscreteEncoderConfig()):
        super().__init__()
        self.config = config
        self.convs = nn.ModuleList(
            nn.Conv1d(config.input_channels, config.filters_per_size, k) for k in config.kernel_sizes
        )

    @property
    def out_dim(self) -> int:
        return self.config.out_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 3 or x.shape[1] != self.config.input_channels:
            raise ShapeError(f"expected (batch, {self.config.input_channels}, T), got {tuple(x.shape)}")
        if x.shape[-1] < max(self.config.kernel_sizes):
            raise ConfigError(
                f"block length {x.shape[-1]} shorter than kernel {max(self.config.kernel_sizes)}"
            )
        return torch.cat([F.relu(conv(x)).amax(dim=-1) for conv in self.convs], dim=-1)


def encode_continuous(image, encoder: ContinuousEncoder):
    """Embed one C x H x W image; returns (embedding, feature map) as tensors."""
    x = torch.as_tensor(image, dtype=next(encoder.parameters()).dtype)
    with torch.no_grad():
        emb, fmap = encoder(x.unsqueeze(0))
    return emb[0], fmap[0]


def encode_discrete(block, encoder: DiscreteEncoder):
    x = torch.as_tensor(block, dtype=next(encoder.parameters()).dtype)
    with torch.no_grad():
        return encoder(x.unsqueeze(0))[0]


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
