"""Dataset -> split, standardized arrays -> per-model input batches."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from . import preprocess
from .encoders import ContinuousEncoderConfig
from .evaluation import stratified_subject_split
from .imaging import expand_discrete, row_spans, spans_to_pixels, value_to_row
from .ingest import Dataset
from .model import ModelConfig
from .types import (
    N_CONTINUOUS,
    N_DISCRETE,
    WINDOW_MINUTES,
    WINDOWS_PER_DAY,
    BlockConfig,
    ChannelStats,
    ConfigError,
    DayFeatureGrid,
)


@dataclass
class PreparedData:
    """Standardized grids of every day plus the split they were fitted on."""

    day_ids: list[str]
    subjects: np.ndarray          # (n,) subject index
    labels: np.ndarray            # (n, 6)
    continuous: np.ndarray        # (n, 7, 1440) float32
    discrete: np.ndarray          # (n, 9, 144) float32
    train_idx: np.ndarray
    val_idx: np.ndarray
    stats: ChannelStats
    subject_index: dict[str, int]
    observed: np.ndarray          # (n, 7, 1440) bool

    def __len__(self) -> int:
        return len(self.day_ids)

    @property
    def n_subjects(self) -> int:
        return len(self.subject_index)

    def grid(self, i: int) -> DayFeatureGrid:
        return DayFeatureGrid(self.continuous[i], self.discrete[i], self.observed[i])


def day_id(subject: str, date) -> str:
    return f"{subject}_{date.isoformat()}"


def prepare(
    dataset: Dataset,
    split_seed: int = 0,
    ratio: float = 0.8,
    config: preprocess.PreprocessConfig | None = None,
) -> PreparedData:
    """Split by subject, fit statistics on training days, standardize all days."""
    subjects = dataset.subject_ids()
    train_idx, val_idx = stratified_subject_split(subjects, ratio, split_seed)
    mask = np.zeros(len(dataset), dtype=bool)
    mask[train_idx] = True
    grids, stats = preprocess.preprocess_days(dataset.days, mask, config)
    return PreparedData(
        day_ids=[day_id(*d.key) for d in dataset.days],
        subjects=subjects,
        labels=dataset.label_matrix(),
        continuous=np.stack([g.continuous for g in grids]).astype(np.float32),
        discrete=np.stack([g.discrete for g in grids]).astype(np.float32),
        train_idx=train_idx,
        val_idx=val_idx,
        stats=stats,
        subject_index=dict(dataset.subject_index),
        observed=np.stack([g.observed_mask for g in grids]),
    )


def save_prepared(data: PreparedData, out_dir: str | Path) -> None:
    """Grid cache: one binary grid per day, stats sidecar, and an index."""
    out = Path(out_dir)
    (out / "grids").mkdir(parents=True, exist_ok=True)
    for i, did in enumerate(data.day_ids):
        preprocess.write_grid(out / "grids" / f"{did}.grid", data.grid(i))
    (out / "stats.json").write_text(data.stats.to_json())
    index = {
        "day_ids": data.day_ids,
        "subjects": data.subjects.tolist(),
        "labels": data.labels.tolist(),
        "train_idx": data.train_idx.tolist(),
        "val_idx": data.val_idx.tolist(),
        "subject_index": data.subject_index,
    }
    (out / "index.json").write_text(json.dumps(index))


def load_prepared(cache_dir: str | Path) -> PreparedData:
    root = Path(cache_dir)
    index = json.loads((root / "index.json").read_text())
    grids = [preprocess.read_grid(root / "grids" / f"{d}.grid") for d in index["day_ids"]]
    return PreparedData(
        day_ids=list(index["day_ids"]),
        subjects=np.asarray(index["subjects"], dtype=np.int64),
        labels=np.asarray(index["labels"], dtype=np.int64).reshape(-1, 6),
        continuous=np.stack([g.continuous for g in grids]).astype(np.float32),
        discrete=np.stack([g.discrete for g in grids]).astype(np.float32),
        train_idx=np.asarray(index["train_idx"], dtype=np.int64),
        val_idx=np.asarray(index["val_idx"], dtype=np.int64),
        stats=ChannelStats.from_json((root / "stats.json").read_text()),
        subject_index=dict(index["subject_index"]),
        observed=np.stack([g.observed_mask for g in grids]),
    )


def ten_minute_sequence(continuous: np.ndarray, discrete: np.ndarray) -> np.ndarray:
    """(n, 7, 1440) + (n, 9, 144) -> (n, 144, 16), continuous averaged per window."""
    n = continuous.shape[0]
    cont = continuous.reshape(n, N_CONTINUOUS, WINDOWS_PER_DAY, WINDOW_MINUTES).mean(axis=-1)
    return np.concatenate([cont, discrete], axis=1).transpose(0, 2, 1).astype(np.float32)


def image_channels(block: BlockConfig, discrete_branch: bool) -> int:
    k = N_CONTINUOUS if discrete_branch else N_CONTINUOUS + N_DISCRETE
    return k if block.encoding == "multi_channel" else 1


def model_config_for(
    base: ModelConfig, kind: str, block: BlockConfig, n_subjects: int, discrete_branch: bool = True
) -> ModelConfig:
    """Adjust encoder input channels and subject count to the data layout."""
    if kind == "cnn2d_baseline":
        channels = N_CONTINUOUS
    else:
        channels = image_channels(block, discrete_branch)
    cont = replace(base.continuous, input_channels=channels)
    return replace(base, continuous=cont, n_subjects=n_subjects, discrete_branch=discrete_branch)


class InputBuilder:
    """Turns day indices into model input tensors for one model kind.

    Image rasters are built per batch from precomputed row spans, so memory
    stays proportional to the grid size rather than the image size.
    """

    def __init__(
        self,
        data: PreparedData,
        kind: str,
        block: BlockConfig,
        discrete_branch: bool = True,
        dtype: torch.dtype = torch.float32,
    ):
        self.data = data
        self.kind = kind
        self.dtype = dtype
        self.discrete_branch = discrete_branch
        if kind == "cnn2d_baseline":
            block = replace(block, n_hours=24, encoding="multi_channel")
        self.block = block
        if kind in ("lstm_baseline", "cnn1d_baseline"):
            self.sequence = ten_minute_sequence(data.continuous, data.discrete)
        elif kind in ("mis_lstm", "cnn2d_baseline"):
            rows = value_to_row(data.continuous, block.value_range, block.raster_height)
            if kind == "mis_lstm" and not discrete_branch:
                drange = (0.0, 1.0) if data.stats.discrete_scaling == "max" else block.value_range
                drows = value_to_row(expand_discrete(data.discrete), drange, block.raster_height)
                rows = np.concatenate([rows, drows], axis=1)
            lo, hi = row_spans(rows, block.block_minutes, block.line_fill)
            self.lo = lo.astype(np.int16)
            self.hi = hi.astype(np.int16)
        else:
            raise ConfigError(f"unknown model kind {kind!r}")

    def images(self, idx: np.ndarray) -> np.ndarray:
        b = self.block
        pix = spans_to_pixels(self.lo[idx], self.hi[idx], b.raster_height)  # n,K,H,1440
        n, k, h, _ = pix.shape
        blocks = pix.reshape(n, k, h, b.n_blocks, b.block_minutes).transpose(0, 3, 1, 2, 4)
        if b.encoding == "stacked_vertical":
            blocks = blocks.reshape(n, b.n_blocks, 1, k * h, b.block_minutes)
        return np.ascontiguousarray(blocks)

    def discrete_blocks(self, idx: np.ndarray) -> np.ndarray:
        b = self.block
        d = self.data.discrete[idx]
        n = d.shape[0]
        return np.ascontiguousarray(
            d.reshape(n, N_DISCRETE, b.n_blocks, b.block_windows).transpose(0, 2, 1, 3)
        )

    def batch(self, idx) -> dict[str, torch.Tensor]:
        idx = np.asarray(idx, dtype=np.int64)
        out = {"subject": torch.as_tensor(self.data.subjects[idx], dtype=torch.long)}
        if self.kind in ("lstm_baseline", "cnn1d_baseline"):
            out["sequence"] = torch.as_tensor(self.sequence[idx], dtype=self.dtype)
            return out
        out["images"] = torch.as_tensor(self.images(idx), dtype=self.dtype)
        if self.kind == "mis_lstm" and self.discrete_branch:
            out["discrete"] = torch.as_tensor(self.discrete_blocks(idx), dtype=self.dtype)
        return out


def desk_configs(n_subjects: int = 10) -> tuple[BlockConfig, ModelConfig]:
    """Small settings that train in about a minute per run on one CPU core."""
    block = BlockConfig(n_hours=4, raster_height=32, value_range=(-3.0, 3.0), encoding="multi_channel")
    cont = ContinuousEncoderConfig(
        stages=((16, 1), (32, 2), (64, 2)),
        embed_dim=64,
        stem_kernel=(4, 8),
        stem_stride=(4, 8),
    )
    model = ModelConfig(n_subjects=n_subjects, lstm_hidden=128, continuous=cont)
    return block, model
