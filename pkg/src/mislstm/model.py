"""MIS-LSTM: block encoders, CBAM fusion, LSTM over blocks, six heads.

All models share one calling convention: ``model(batch)`` where ``batch`` is a
dict of tensors, returning a ``(days, 13)`` tensor of concatenated head
logits in the order Q1, Q2, Q3, S1, S2, S3.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .encoders import (
    ContinuousEncoder,
    ContinuousEncoderConfig,
    DiscreteEncoder,
    DiscreteEncoderConfig,
)
from .types import (
    HEAD_OFFSETS,
    HEAD_SIZES,
    HEADS,
    N_CONTINUOUS,
    N_DISCRETE,
    UNKNOWN_SUBJECT,
    ConfigError,
    HeadLogits,
    LabelVector,
)

MODEL_KINDS = ("mis_lstm", "lstm_baseline", "cnn1d_baseline", "cnn2d_baseline")


@dataclass(frozen=True)
class ModelConfig:
    n_subjects: int = 10
    lstm_hidden: int = 256
    lstm_layers: int = 2
    subject_embed_dim: int = 16
    cbam_reduction: int = 8
    cbam_kernel: int = 3
    cbam_placement: str = "sequence"  # or "feature_map"
    dropout: float = 0.3
    discrete_branch: bool = True
    continuous: ContinuousEncoderConfig = field(default_factory=ContinuousEncoderConfig)
    discrete: DiscreteEncoderConfig = field(default_factory=DiscreteEncoderConfig)

    def __post_init__(self):
        if self.lstm_layers < 1:
            raise ConfigError("lstm_layers must be >= 1")
        if self.subject_embed_dim < 0:
            raise ConfigError("subject_embed_dim must be >= 0 (0 disables)")
        if self.n_subjects < 1:
            raise ConfigError("n_subjects must be >= 1")
        if self.cbam_placement not in ("sequence", "feature_map"):
            raise ConfigError("cbam_placement must be 'sequence' or 'feature_map'")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")


class ChannelGate(nn.Module):
    def __init__(self, channels: int, reduction: int):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.mlp = nn.Sequential(nn.Linear(channels, hidden), nn.ReLU(), nn.Linear(hidden, channels))

    def forward(self, x):
        avg = self.mlp(x.mean(dim=(2, 3)))
        mx = self.mlp(x.amax(dim=(2, 3)))
        return torch.sigmoid(avg + mx)[:, :, None, None]


class SpatialGate(nn.Module):
    def __init__(self, kernel: tuple[int, int]):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel, padding=(kernel[0] // 2, kernel[1] // 2))

    def forward(self, x):
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(pooled))


class CBAM(nn.Module):
    """Channel gate then spatial gate, both multiplicative on a C x H x W map."""

    def __init__(self, channels: int, reduction: int = 8, kernel: tuple[int, int] = (7, 7)):
        super().__init__()
        self.channel = ChannelGate(channels, reduction)
        self.spatial = SpatialGate(kernel)

    def gates(self, x):
        cg = self.channel(x)
        y = x * cg
        return cg, self.spatial(y)

    def forward(self, x):
        cg, sg = self.gates(x)
        return x * cg * sg


def cbam_refine(seq: torch.Tensor, cbam: CBAM) -> torch.Tensor:
    """Refine a (days, B, D) embedding sequence as a D x 1 x B map."""
    fmap = seq.transpose(1, 2).unsqueeze(2)
    return cbam(fmap).squeeze(2).transpose(1, 2)


class SubjectEmbedding(nn.Module):
    """Per-subject vectors; ``UNKNOWN_SUBJECT`` maps to zeros."""

    def __init__(self, n_subjects: int, dim: int):
        super().__init__()
        self.n_subjects = n_subjects
        self.dim = dim
        self.table = nn.Embedding(n_subjects, dim) if dim > 0 else None

    def forward(self, subject: torch.Tensor) -> torch.Tensor:
        if ((subject < UNKNOWN_SUBJECT) | (subject >= self.n_subjects)).any():
            raise ValueError(f"subject ids must be in [0, {self.n_subjects}) or UNKNOWN ({UNKNOWN_SUBJECT})")
        if self.table is None:
            return subject.new_zeros((subject.shape[0], 0), dtype=torch.get_default_dtype())
        known = (subject >= 0).unsqueeze(-1)
        return self.table(subject.clamp(min=0)) * known


class Heads(nn.Module):
    def __init__(self, in_dim: int):
        super().__init__()
        self.heads = nn.ModuleList(nn.Linear(in_dim, n) for n in HEAD_SIZES)

    def forward(self, x):
        return torch.cat([h(x) for h in self.heads], dim=-1)


class MISLSTM(nn.Module):
    """Per-block image + discrete encoders, CBAM over blocks, LSTM, heads.

    Expects ``batch["images"]`` of shape (days, B, C, H, W), ``batch["discrete"]``
    of shape (days, B, 9, 6N) and ``batch["subject"]`` of shape (days,).
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config.continuous
        feature_cbam = None
        if config.cbam_placement == "feature_map":
            feature_cbam = CBAM(c.stages[-1][0], config.cbam_reduction, (3, 3))
        self.continuous = ContinuousEncoder(c, attention=feature_cbam)
        dim = c.embed_dim
        if config.discrete_branch:
            self.discrete = DiscreteEncoder(config.discrete)
            dim += self.discrete.out_dim
        else:
            self.discrete = None
        self.embed_dim = dim
        self.cbam = CBAM(dim, config.cbam_reduction, (1, config.cbam_kernel)) if config.cbam_placement == "sequence" else None
        self.lstm = nn.LSTM(
            dim,
            config.lstm_hidden,
            num_layers=config.lstm_layers,
            batch_first=True,
            dropout=config.dropout if config.lstm_layers > 1 else 0.0,
        )
        init_forget_bias(self.lstm)
        self.subject = SubjectEmbedding(config.n_subjects, config.subject_embed_dim)
        self.drop = nn.Dropout(config.dropout)
        self.heads = Heads(config.lstm_hidden + config.subject_embed_dim)

    def block_embeddings(self, batch) -> torch.Tensor:
        images = batch["images"]
        n, b = images.shape[:2]
        emb, _ = self.continuous(images.flatten(0, 1))
        parts = [emb]
        if self.discrete is not None:
            parts.append(self.discrete(batch["discrete"].flatten(0, 1)))
        return torch.cat(parts, dim=-1).view(n, b, -1)

    def forward(self, batch) -> torch.Tensor:
        seq = self.block_embeddings(batch)
        if self.cbam is not None:
            seq = cbam_refine(seq, self.cbam)
        _, (h, _) = self.lstm(seq)
        z = torch.cat([h[-1], self.subject(batch["subject"])], dim=-1)
        return self.heads(self.drop(z))


class LSTMBaseline(nn.Module):
    """Whole day at ten-minute resolution (144 x 16) through a stacked LSTM."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.lstm = nn.LSTM(
            N_CONTINUOUS + N_DISCRETE,
            config.lstm_hidden,
            num_layers=config.lstm_layers,
            batch_first=True,
            dropout=config.dropout if config.lstm_layers > 1 else 0.0,
        )
        self.subject = SubjectEmbedding(config.n_subjects, config.subject_embed_dim)
        self.drop = nn.Dropout(config.dropout)
        self.heads = Heads(config.lstm_hidden + config.subject_embed_dim)

    def forward(self, batch):
        _, (h, _) = self.lstm(batch["sequence"])
        z = torch.cat([h[-1], self.subject(batch["subject"])], dim=-1)
        return self.heads(self.drop(z))


class CNN1DBaseline(nn.Module):
    """The multi-kernel 1D CNN applied once over the whole 144-step day."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.discrete
        self.encoder = DiscreteEncoder(
            DiscreteEncoderConfig(d.kernel_sizes, d.filters_per_size, N_CONTINUOUS + N_DISCRETE)
        )
        self.subject = SubjectEmbedding(config.n_subjects, config.subject_embed_dim)
        self.drop = nn.Dropout(config.dropout)
        self.heads = Heads(self.encoder.out_dim + config.subject_embed_dim)

    def forward(self, batch):
        z = self.encoder(batch["sequence"].transpose(1, 2))
        z = torch.cat([z, self.subject(batch["subject"])], dim=-1)
        return self.heads(self.drop(z))


class CNN2DBaseline(nn.Module):
    """One full-day multi-channel image through the continuous encoder."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = ContinuousEncoder(config.continuous)
        self.subject = SubjectEmbedding(config.n_subjects, config.subject_embed_dim)
        self.drop = nn.Dropout(config.dropout)
        self.heads = Heads(config.continuous.embed_dim + config.subject_embed_dim)

    def forward(self, batch):
        z, _ = self.encoder(batch["images"][:, 0])
        z = torch.cat([z, self.subject(batch["subject"])], dim=-1)
        return self.heads(self.drop(z))


def build_model(kind: str, config: ModelConfig) -> nn.Module:
    if kind == "mis_lstm":
        return MISLSTM(config)
    if kind == "lstm_baseline":
        return LSTMBaseline(config)
    if kind == "cnn1d_baseline":
        return CNN1DBaseline(config)
    if kind == "cnn2d_baseline":
        return CNN2DBaseline(config)
    raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def init_forget_bias(lstm: nn.LSTM, value: float = 1.0) -> None:
    """Open the forget gate at init so early blocks survive to the last step."""
    for name, p in lstm.named_parameters():
        if name.startswith("bias_ih"):
            h = p.shape[0] // 4
            with torch.no_grad():
                p[h:2 * h].fill_(value)


def split_heads(logits: torch.Tensor | np.ndarray) -> list:
    """Column slices of a (days, 13) logit array, one per head."""
    return [logits[..., o:o + n] for o, n in zip(HEAD_OFFSETS, HEAD_SIZES)]


def forward_day(model: MISLSTM, images, discrete_blocks, subject: int) -> HeadLogits:
    """Logits of one day given its B block images and B discrete blocks."""
    dtype = next(model.parameters()).dtype
    batch = {
        "images": torch.as_tensor(np.stack([np.asarray(getattr(i, "pixels", i)) for i in images]), dtype=dtype)[None],
        "discrete": torch.as_tensor(np.stack(discrete_blocks), dtype=dtype)[None],
        "subject": torch.tensor([subject], dtype=torch.long),
    }
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(batch)[0].double().numpy()
    finally:
        model.train(was_training)
    return HeadLogits.from_flat(out)


def predict(logits: HeadLogits) -> LabelVector:
    """Per-head argmax; ties go to the lower class index."""
    return LabelVector(*(int(np.argmax(logits[h])) for h in HEADS))


def predict_array(logits: np.ndarray) -> np.ndarray:
    """(days, 13) logits to (days, 6) class indices."""
    return np.stack([np.argmax(p, axis=-1) for p in split_heads(np.asarray(logits))], axis=-1)
