"""N-hour block segmentation and binary line rasters of continuous channels."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .types import (
    MINUTES_PER_DAY,
    N_CONTINUOUS,
    WINDOWS_PER_DAY,
    BlockConfig,
    ConfigError,
    DayFeatureGrid,
    ShapeError,
)


@dataclass(frozen=True, eq=False)
class BlockImage:
    pixels: np.ndarray  # C x H x W, values in {0, 1}
    encoding: str

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape


@dataclass(frozen=True, eq=False)
class BlockSequence:
    """One day cut into ``24 / N`` blocks.

    ``continuous`` holds the raw 7 x 60N slices; ``images`` is filled once the
    slices are rasterized.
    """

    continuous: list[np.ndarray]
    discrete_blocks: list[np.ndarray]
    images: list[BlockImage] | None = None

    def __len__(self) -> int:
        return len(self.discrete_blocks)


def segment_blocks(grid: DayFeatureGrid, config: BlockConfig) -> BlockSequence:
    if 24 % config.n_hours:
        raise ConfigError(f"n_hours must divide 24, got {config.n_hours}")
    wc, wd = config.block_minutes, config.block_windows
    cont = [grid.continuous[:, b * wc:(b + 1) * wc] for b in range(config.n_blocks)]
    disc = [grid.discrete[:, b * wd:(b + 1) * wd] for b in range(config.n_blocks)]
    return BlockSequence(cont, disc)


def value_to_row(values: np.ndarray, value_range: tuple[float, float], height: int) -> np.ndarray:
    """Row index ``floor((v - lo) / (hi - lo) * H)`` clamped to ``[0, H - 1]``."""
    lo, hi = value_range
    v = np.clip(np.asarray(values, dtype=np.float64), lo, hi)
    rows = np.floor((v - lo) / (hi - lo) * height).astype(np.int64)
    return np.clip(rows, 0, height - 1)


def row_spans(rows: np.ndarray, block_width: int, line_fill: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Lowest and highest lit row of every column.

    With ``line_fill`` a column also covers the rows between its own value and
    the previous column's, except at block starts so blocks stay independent.
    """
    lo = rows.copy()
    hi = rows.copy()
    if line_fill:
        prev = np.concatenate([rows[..., :1], rows[..., :-1]], axis=-1)
        starts = (np.arange(rows.shape[-1]) % block_width) == 0
        prev = np.where(starts, rows, prev)
        lo = np.minimum(rows, prev)
        hi = np.maximum(rows, prev)
    return lo, hi


def spans_to_pixels(lo: np.ndarray, hi: np.ndarray, height: int) -> np.ndarray:
    """(..., T) spans to (..., H, T) binary rasters."""
    r = np.arange(height)[:, None]
    return ((r >= lo[..., None, :]) & (r <= hi[..., None, :])).astype(np.float32)


def stack_encoding(planes: np.ndarray, encoding: str) -> np.ndarray:
    """(K, H, W) channel planes to the image layout of ``encoding``."""
    if encoding == "multi_channel":
        return planes
    k, h, w = planes.shape
    return planes.reshape(1, k * h, w)


def rasterize(block: np.ndarray, config: BlockConfig) -> BlockImage:
    """Render a K x W slice as a binary line plot per channel.

    Reference implementation, one column at a time.
    """
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 2:
        raise ShapeError("rasterize expects a channels x minutes matrix")
    k, w = block.shape
    h = config.raster_height
    lo, hi = config.value_range
    planes = np.zeros((k, h, w), dtype=np.float32)
    for c in range(k):
        prev = None
        for t in range(w):
            v = min(max(block[c, t], lo), hi)
            r = min(max(int(np.floor((v - lo) / (hi - lo) * h)), 0), h - 1)
            if config.line_fill and prev is not None:
                a, b = min(prev, r), max(prev, r)
                planes[c, a:b + 1, t] = 1.0
            else:
                planes[c, r, t] = 1.0
            prev = r
    return BlockImage(stack_encoding(planes, config.encoding), config.encoding)


def rasterize_day(continuous: np.ndarray, config: BlockConfig, channel_ranges=None) -> np.ndarray:
    """Vectorized rasterization of a whole day into B block images.

    ``continuous`` is K x 1440; ``channel_ranges`` optionally overrides the
    value range per channel (list of (lo, hi)). Returns B x C x H' x W.
    """
    rows = day_rows(continuous, config, channel_ranges)
    lo, hi = row_spans(rows, config.block_minutes, config.line_fill)
    pix = spans_to_pixels(lo, hi, config.raster_height)  # K x H x 1440
    k, h, _ = pix.shape
    blocks = pix.reshape(k, h, config.n_blocks, config.block_minutes).transpose(2, 0, 1, 3)
    if config.encoding == "stacked_vertical":
        blocks = blocks.reshape(config.n_blocks, 1, k * h, config.block_minutes)
    return np.ascontiguousarray(blocks)


def day_rows(continuous: np.ndarray, config: BlockConfig, channel_ranges=None) -> np.ndarray:
    continuous = np.asarray(continuous, dtype=np.float64)
    if channel_ranges is None:
        return value_to_row(continuous, config.value_range, config.raster_height)
    return np.stack(
        [value_to_row(continuous[k], channel_ranges[k], config.raster_height) for k in range(continuous.shape[0])]
    )


def rasterize_sequence(seq: BlockSequence, config: BlockConfig) -> BlockSequence:
    images = [rasterize(c, config) for c in seq.continuous]
    return BlockSequence(seq.continuous, seq.discrete_blocks, images)


def expand_discrete(discrete: np.ndarray) -> np.ndarray:
    """Repeat ten-minute windows onto the minute grid (9 x 144 -> 9 x 1440)."""
    if discrete.shape[-1] != WINDOWS_PER_DAY:
        raise ShapeError("discrete grid must have 144 windows")
    return np.repeat(discrete, MINUTES_PER_DAY // WINDOWS_PER_DAY, axis=-1)


def image_shape(config: BlockConfig, n_channels: int = N_CONTINUOUS) -> tuple[int, int, int]:
    h, w = config.raster_height, config.block_minutes
    if config.encoding == "multi_channel":
        return (n_channels, h, w)
    return (1, n_channels * h, w)


def decode_rows(planes: np.ndarray, config: BlockConfig) -> np.ndarray:
    """Bin-centre value of the first lit row in each column (K x H x W -> K x W)."""
    lo, hi = config.value_range
    rows = planes.argmax(axis=-2)
    return lo + (rows + 0.5) * (hi - lo) / config.raster_height


def save_png(image: BlockImage, path: str | Path) -> None:
    """Grayscale dump: channel rasters side by side, high values at the top."""
    from PIL import Image

    planes = image.pixels
    strips = [np.flipud(p) for p in planes]
    sep = np.full((planes.shape[1], 2), 0.5, dtype=np.float32)
    tiled = strips[0]
    for s in strips[1:]:
        tiled = np.concatenate([tiled, sep, s], axis=1)
    Image.fromarray((tiled * 255).astype(np.uint8)).save(path)
