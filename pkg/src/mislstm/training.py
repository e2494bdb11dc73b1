"""Focal-loss training with best-validation-macro-F1 checkpointing."""

from __future__ import annotations

import copy
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import torch

from .encoders import ContinuousEncoderConfig, DiscreteEncoderConfig
from .evaluation import macro_f1
from .model import ModelConfig, build_model, predict_array, split_heads
from .pipeline import InputBuilder, PreparedData, model_config_for
from .types import HEAD_SIZES, HEADS, BlockConfig, ConfigError, LabelVector

log = logging.getLogger(__name__)

FULL_EPOCHS = 200  # full-length schedule, opt in via --epochs


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-5
    batch_size: int = 16
    epochs: int = 30
    focal_gamma: float = 2.0
    focal_alpha: Any = "balanced"  # "balanced", None (all ones) or per-head lists
    weight_decay: float = 1e-2
    seed: int = 0
    eval_batch_size: int = 64

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.focal_gamma < 0:
            raise ConfigError("focal_gamma must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")


def desk_train_config(seed: int = 0, epochs: int = 30) -> TrainConfig:
    """Settings used with :func:`pipeline.desk_configs` for single-core runs."""
    return TrainConfig(learning_rate=1e-3, batch_size=8, epochs=epochs, seed=seed)


def focal_loss(logits, target: int, gamma: float = 2.0, alpha: float = 1.0) -> float:
    """``-alpha * (1 - p_t)**gamma * log(p_t)`` for one score vector."""
    x = torch.as_tensor(np.asarray(logits, dtype=np.float64))
    logp = torch.log_softmax(x, dim=-1)[int(target)]
    return float(-alpha * (1.0 - logp.exp()) ** gamma * logp)


def focal_loss_batch(logits: torch.Tensor, targets: torch.Tensor, gamma: float, alpha: torch.Tensor | None) -> torch.Tensor:
    """Per-sample focal loss for (n, k) logits and (n,) targets."""
    logp = torch.log_softmax(logits, dim=-1).gather(1, targets[:, None])[:, 0]
    loss = -((1.0 - logp.exp()) ** gamma) * logp
    if alpha is not None:
        loss = loss * alpha[targets]
    return loss


def balanced_alpha(labels: np.ndarray) -> list[np.ndarray]:
    """Per head: weights proportional to 1 / class frequency, mean 1."""
    out = []
    for j, n in enumerate(HEAD_SIZES):
        counts = np.bincount(labels[:, j], minlength=n).astype(np.float64)
        w = 1.0 / np.maximum(counts, 1.0)
        out.append(w * n / w.sum())
    return out


def resolve_alpha(alpha, train_labels: np.ndarray) -> list[np.ndarray] | None:
    if alpha is None:
        return None
    if isinstance(alpha, str):
        if alpha != "balanced":
            raise ConfigError(f"unknown focal_alpha {alpha!r}")
        return balanced_alpha(train_labels)
    alphas = [np.asarray(a, dtype=np.float64) for a in alpha]
    if [a.shape for a in alphas] != [(n,) for n in HEAD_SIZES]:
        raise ConfigError("per-head focal_alpha must have lengths (2, 2, 2, 3, 2, 2)")
    return alphas


def head_loss_terms(
    logits: torch.Tensor, labels: torch.Tensor, gamma: float, alphas: Sequence[torch.Tensor] | None
) -> list[torch.Tensor]:
    """Per-head focal losses, each of shape (n,)."""
    return [
        focal_loss_batch(part, labels[:, j], gamma, None if alphas is None else alphas[j])
        for j, part in enumerate(split_heads(logits))
    ]


def total_loss(logits, label: LabelVector, gamma: float = 2.0, alpha=None) -> float:
    """Unweighted sum over the six heads for one day."""
    x = torch.as_tensor(np.asarray(logits, dtype=np.float64)).reshape(1, -1)
    y = torch.tensor([label.as_tuple()])
    alphas = None if alpha is None else [torch.as_tensor(np.asarray(a, dtype=np.float64)) for a in alpha]
    return float(sum(t.sum() for t in head_loss_terms(x, y, gamma, alphas)))


@dataclass
class CheckpointBundle:
    state_dict: dict[str, torch.Tensor]
    epoch: int
    val_f1: dict[str, float]
    val_average: float
    history: list[dict]
    kind: str = "mis_lstm"
    model_config: ModelConfig | None = None
    block_config: BlockConfig | None = None
    train_config: TrainConfig | None = None

    def build(self) -> torch.nn.Module:
        model = build_model(self.kind, self.model_config)
        model.load_state_dict(self.state_dict)
        model.eval()
        return model


def best_epoch(averages: Sequence[float]) -> int:
    """1-based epoch of the highest value, earliest on ties."""
    best, best_val = 0, -math.inf
    for i, v in enumerate(averages, start=1):
        if v > best_val:
            best, best_val = i, v
    return best


def predict_logits(model: torch.nn.Module, builder: InputBuilder, idx: np.ndarray, batch_size: int = 64) -> np.ndarray:
    model.eval()
    out = []
    with torch.no_grad():
        for s in range(0, len(idx), batch_size):
            out.append(model(builder.batch(idx[s:s + batch_size])).double().numpy())
    if not out:
        return np.zeros((0, sum(HEAD_SIZES)))
    return np.concatenate(out)


def head_f1(logits: np.ndarray, labels: np.ndarray) -> dict[str, float]:
    pred = predict_array(logits)
    return {h: macro_f1(pred[:, j], labels[:, j], n) for j, (h, n) in enumerate(zip(HEADS, HEAD_SIZES))}


def train(
    data: PreparedData,
    kind: str,
    train_config: TrainConfig,
    model_config: ModelConfig,
    block_config: BlockConfig,
    discrete_branch: bool = True,
    on_event: Callable[[dict], None] | None = None,
) -> CheckpointBundle:
    """Train one model on ``data.train_idx`` and keep the epoch with the best
    mean validation macro-F1 over ``data.val_idx``."""
    if len(data.train_idx) == 0 or len(data.val_idx) == 0:
        raise ValueError("training needs non-empty train and validation splits")
    cfg = train_config
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    mcfg = model_config_for(model_config, kind, block_config, data.n_subjects, discrete_branch)
    model = build_model(kind, mcfg)
    builder = InputBuilder(data, kind, block_config, discrete_branch)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    train_labels = data.labels[data.train_idx]
    alphas = resolve_alpha(cfg.focal_alpha, train_labels)
    alpha_t = None if alphas is None else [torch.as_tensor(a, dtype=torch.float32) for a in alphas]
    labels_t = torch.as_tensor(data.labels, dtype=torch.long)
    val_labels = data.labels[data.val_idx]

    history: list[dict] = []
    best_state = None
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = data.train_idx[rng.permutation(len(data.train_idx))]
        total, seen = 0.0, 0
        for step, s in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[s:s + cfg.batch_size]
            logits = model(builder.batch(idx))
            terms = head_loss_terms(logits, labels_t[idx], cfg.focal_gamma, alpha_t)
            loss = sum(t.mean() for t in terms)
            if not torch.isfinite(loss):
                diag = {h: float(t.detach().mean()) for h, t in zip(HEADS, terms)}
                raise TrainingError(f"non-finite loss at epoch {epoch} step {step}: {diag}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
            seen += len(idx)
        val_logits = predict_logits(model, builder, data.val_idx, cfg.eval_batch_size)
        f1 = head_f1(val_logits, val_labels)
        avg = float(np.mean(list(f1.values())))
        entry = {"epoch": epoch, "train_loss": total / seen, "val_f1": f1, "val_average": avg}
        history.append(entry)
        if on_event is not None:
            on_event({"event": "epoch", **entry})
        log.info("epoch %d loss %.4f val macro-F1 %.3f", epoch, total / seen, avg)
        if best_epoch([h["val_average"] for h in history]) == epoch:
            best_state = copy.deepcopy(model.state_dict())
    best = history[best_epoch([h["val_average"] for h in history]) - 1]
    return CheckpointBundle(
        state_dict=best_state,
        epoch=best["epoch"],
        val_f1=best["val_f1"],
        val_average=best["val_average"],
        history=history,
        kind=kind,
        model_config=mcfg,
        block_config=block_config,
        train_config=cfg,
    )


# params.bin: little-endian, magic b"MISP", uint32 version, uint32 tensor
# count, then per tensor: uint16 name length, UTF-8 name, uint8 dtype code,
# uint8 ndim, ndim x uint32 dims, raw row-major data.
PARAMS_MAGIC = b"MISP"
_DTYPES = {0: ("<f4", torch.float32), 1: ("<f8", torch.float64), 2: ("<i8", torch.int64)}
_CODES = {torch.float32: 0, torch.float64: 1, torch.int64: 2}


def write_params(path: str | Path, state: dict[str, torch.Tensor]) -> None:
    parts = [PARAMS_MAGIC, struct.pack("<II", 1, len(state))]
    for name, t in state.items():
        code = _CODES[t.dtype]
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<BB", code, t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t.detach().cpu().numpy(), dtype=_DTYPES[code][0]).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_params(path: str | Path) -> dict[str, torch.Tensor]:
    buf = Path(path).read_bytes()
    if buf[:4] != PARAMS_MAGIC:
        raise ValueError(f"{path}: not a parameter file")
    _, count = struct.unpack_from("<II", buf, 4)
    pos = 12
    state = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + n].decode()
        pos += n
        code, ndim = struct.unpack_from("<BB", buf, pos)
        pos += 2
        dims = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        np_dtype, t_dtype = _DTYPES[code]
        count_el = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(buf, dtype=np_dtype, count=count_el, offset=pos).reshape(dims)
        pos += arr.nbytes
        state[name] = torch.as_tensor(arr.copy(), dtype=t_dtype)
    return state


def _config_dict(obj) -> dict | None:
    return None if obj is None else asdict(obj)


def model_config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    d["continuous"] = ContinuousEncoderConfig(**d["continuous"])
    d["discrete"] = DiscreteEncoderConfig(**d["discrete"])
    return ModelConfig(**d)


def save_checkpoint(bundle: CheckpointBundle, out_dir: str | Path, extra: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_params(out / "params.bin", bundle.state_dict)
    meta = {
        "kind": bundle.kind,
        "epoch": bundle.epoch,
        "val_f1": bundle.val_f1,
        "val_average": bundle.val_average,
        "history": bundle.history,
        "model_config": _config_dict(bundle.model_config),
        "block_config": _config_dict(bundle.block_config),
        "train_config": _config_dict(bundle.train_config),
        **(extra or {}),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return out


def load_checkpoint(path: str | Path) -> CheckpointBundle:
    root = Path(path)
    meta = json.loads((root / "meta.json").read_text())
    block = meta.get("block_config")
    if block is not None:
        block = BlockConfig(**{**block, "value_range": tuple(block["value_range"])})
    tcfg = meta.get("train_config")
    return CheckpointBundle(
        state_dict=read_params(root / "params.bin"),
        epoch=meta["epoch"],
        val_f1=meta["val_f1"],
        val_average=meta["val_average"],
        history=meta["history"],
        kind=meta["kind"],
        model_config=model_config_from_dict(meta["model_config"]),
        block_config=block,
        train_config=None if tcfg is None else TrainConfig(**tcfg),
    )


__all__ = [
    "CheckpointBundle",
    "TrainConfig",
    "TrainingError",
    "balanced_alpha",
    "best_epoch",
    "desk_train_config",
    "focal_loss",
    "load_checkpoint",
    "save_checkpoint",
    "total_loss",
    "train",
]
