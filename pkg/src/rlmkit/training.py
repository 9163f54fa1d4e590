"""Training loop: warmup+cosine schedule, gradient clipping, checkpoints.

Pretraining defaults to a peak learning rate of 1e-3 and fine-tuning to
5e-5, both with linear warmup over the first 10% of steps followed by
cosine decay to zero, and global gradient-norm clipping at 2.0.
Fine-tuning restarts from checkpoint parameters with a fresh optimizer.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import math
import random
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import torch

from rlmkit.data import RegressionExample, TaskMixture, sample_mixture
from rlmkit.model import ModelConfig, RegressionModel, ce_loss
from rlmkit.numeric import EOS_ID, PAD_ID, NumericFormat, encode_metrics
from rlmkit.tokenizer import Vocabulary, encode_text

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    total_steps: int
    batch_size: int
    peak_lr: float | None = None  # None: 1e-3 when training, 5e-5 when fine-tuning
    warmup_fraction: float = 0.10
    grad_clip_norm: float = 2.0
    seed: int = 0
    eval_every: int = 0  # 0: evaluate at the final step only
    freeze_encoder: bool = False

    def __post_init__(self):
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in (0, 1)")
        if self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be positive")
        if self.eval_every < 0:
            raise ValueError("eval_every must be >= 0")

    def resolved_lr(self, default: float) -> float:
        return default if self.peak_lr is None else self.peak_lr


PRETRAIN_DEFAULT_LR = 1e-3
FINETUNE_DEFAULT_LR = 5e-5


def lr_at(step: float, cfg: TrainConfig, peak: float | None = None) -> float:
    """Schedule value: linear 0 -> peak over ceil(warmup_fraction * total)
    steps, then cosine peak -> 0 at total_steps."""
    if peak is None:
        peak = cfg.resolved_lr(PRETRAIN_DEFAULT_LR)
    total = cfg.total_steps
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    warmup = math.ceil(cfg.warmup_fraction * total)
    if step <= warmup:
        return peak * step / warmup if warmup > 0 else peak
    progress = (step - warmup) / (total - warmup)
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, batch_digest: str):
        super().__init__(
            f"non-finite loss at step {step} (batch digest {batch_digest})"
        )
        self.step = step
        self.batch_digest = batch_digest


@dataclass
class TraceRow:
    step: int
    lr: float
    train_loss: float
    val_loss: float | None = None


@dataclass
class TrainResult:
    trace: list[TraceRow]
    final_train_loss: float
    final_val_loss: float | None
    max_post_clip_norm: float


# --------------------------------------------------------- batching


def encode_prompt(text: str, vocab: Vocabulary, max_len: int) -> list[int]:
    """Subword ids for one prompt, end-marked so it is never empty."""
    return encode_text(text, vocab, max_len - 1) + [EOS_ID]


def make_encoder_batch(
    texts: Sequence[str], vocab: Vocabulary, max_len: int
) -> tuple[torch.Tensor, torch.Tensor]:
    rows = [encode_prompt(t, vocab, max_len) for t in texts]
    width = max(len(r) for r in rows)
    ids = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
    mask = torch.zeros((len(rows), width), dtype=torch.bool)
    for i, row in enumerate(rows):
        ids[i, : len(row)] = torch.tensor(row, dtype=torch.long)
        mask[i, : len(row)] = True
    return ids, mask


def make_target_batch(
    examples: Sequence[RegressionExample],
    fmt: NumericFormat,
    max_decoder_len: int,
) -> torch.Tensor:
    rows = []
    for ex in examples:
        ids = list(encode_metrics(ex.metric_values, fmt)) + [EOS_ID]
        if len(ids) + 1 > max_decoder_len:
            raise ValueError(
                f"{len(ex.metrics)} metrics need {len(ids) + 1} decoder "
                f"positions, limit is {max_decoder_len}"
            )
        rows.append(ids)
    width = max(len(r) for r in rows)
    targets = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
    for i, row in enumerate(rows):
        targets[i, : len(row)] = torch.tensor(row, dtype=torch.long)
    return targets


def _batch_digest(ids: torch.Tensor, targets: torch.Tensor | None) -> str:
    h = hashlib.sha256(ids.numpy().tobytes())
    if targets is not None:
        h.update(targets.numpy().tobytes())
    return h.hexdigest()[:16]


def compute_task_ranges(
    mixture: TaskMixture,
) -> dict[str, tuple[float, float]]:
    """Per-task (min, max) of the first metric across a mixture."""
    ranges: dict[str, tuple[float, float]] = {}
    for _, dataset, _ in mixture.entries:
        for ex in dataset:
            value = ex.metric_values[0]
            lo, hi = ranges.get(ex.task_id, (value, value))
            ranges[ex.task_id] = (min(lo, value), max(hi, value))
    return {
        task: (lo, hi if hi > lo else lo + 1.0)
        for task, (lo, hi) in ranges.items()
    }


# ------------------------------------------------------------ losses


def _decoder_loss(model, examples, vocab, fmt):
    ids, mask = make_encoder_batch(
        [ex.input_text for ex in examples], vocab, model.config.max_encoder_len
    )
    targets = make_target_batch(examples, fmt, model.config.max_decoder_len)
    logits = model.forward_targets(ids, targets, mask)
    return ce_loss(logits, targets), ids, targets


def _mse_loss(model, examples, vocab):
    ids, mask = make_encoder_batch(
        [ex.input_text for ex in examples], vocab, model.config.max_encoder_len
    )
    values = torch.tensor(
        [ex.metric_values[0] for ex in examples], dtype=torch.float32
    )
    raw = model.mse_head_raw(ids, mask)
    if model.config.head_kind == "mse_head_normalized":
        values = model.scale_targets(values, [ex.task_id for ex in examples])
    return ((raw - values.to(raw.dtype)) ** 2).mean(), ids, None


def _example_loss(model, examples, vocab, fmt):
    if model.config.head_kind == "decoder":
        return _decoder_loss(model, examples, vocab, fmt)
    return _mse_loss(model, examples, vocab)


def evaluate_loss(
    model: RegressionModel,
    examples: Sequence[RegressionExample],
    vocab: Vocabulary,
    fmt: NumericFormat,
    batch_size: int,
) -> float:
    """Token-mean CE (decoder head) or example-mean MSE on a fixed set."""
    model.eval()
    total, weight = 0.0, 0.0
    with torch.no_grad():
        for start in range(0, len(examples), batch_size):
            chunk = examples[start : start + batch_size]
            loss, _, targets = _example_loss(model, chunk, vocab, fmt)
            if targets is not None:
                w = float((targets != PAD_ID).sum())
            else:
                w = float(len(chunk))
            total += float(loss) * w
            weight += w
    model.train()
    return total / weight


# ----------------------------------------------------------- training


def _trainable_params(model: RegressionModel, freeze_encoder: bool):
    if freeze_encoder:
        frozen = {id(p) for p in model.encoder_parameters()}
        for p in model.parameters():
            if id(p) in frozen:
                p.requires_grad_(False)
    return [p for p in model.parameters() if p.requires_grad]


def train(
    model: RegressionModel,
    mixture: TaskMixture,
    cfg: TrainConfig,
    vocab: Vocabulary,
    fmt: NumericFormat | None = None,
    val_examples: Sequence[RegressionExample] | None = None,
    default_lr: float = PRETRAIN_DEFAULT_LR,
    step_callback: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Optimize ``model`` on a mixture stream.

    Per step: draw a batch, compute the head-appropriate loss, clip the
    global gradient norm, and apply an adaptive-moment update at the
    scheduled learning rate.  Aborts on non-finite loss.  Update k uses
    the schedule value at its completion point lr_at(k).
    """
    fmt = fmt or vocab.numeric_format
    if fmt is None:
        raise ValueError("no numeric format on vocabulary; pass fmt")
    if model.config.head_kind == "mse_head_normalized" and not model.task_ranges:
        model.set_task_ranges(compute_task_ranges(mixture))

    peak = cfg.resolved_lr(default_lr)
    params = _trainable_params(model, cfg.freeze_encoder)
    optimizer = torch.optim.Adam(params, lr=peak)
    stream = sample_mixture(mixture, random.Random(cfg.seed))
    torch.manual_seed(cfg.seed)

    trace: list[TraceRow] = []
    max_norm = 0.0
    model.train()
    for step in range(1, cfg.total_steps + 1):
        batch = list(itertools.islice(stream, cfg.batch_size))
        loss, ids, targets = _example_loss(model, batch, vocab, fmt)
        loss_value = float(loss.detach())
        if not math.isfinite(loss_value):
            raise TrainingDiverged(step, _batch_digest(ids, targets))
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip_norm)
        post = math.sqrt(
            sum(float((p.grad**2).sum()) for p in params if p.grad is not None)
        )
        max_norm = max(max_norm, post)
        lr = lr_at(step, cfg, peak)
        for group in optimizer.param_groups:
            group["lr"] = lr
        optimizer.step()

        val_loss = None
        is_eval_step = step == cfg.total_steps or (
            cfg.eval_every > 0 and step % cfg.eval_every == 0
        )
        if is_eval_step and val_examples:
            val_loss = evaluate_loss(
                model, val_examples, vocab, fmt, cfg.batch_size
            )
        trace.append(TraceRow(step, lr, loss_value, val_loss))
        if step_callback is not None:
            step_callback(step, loss_value)

    return TrainResult(
        trace=trace,
        final_train_loss=trace[-1].train_loss if trace else math.nan,
        final_val_loss=trace[-1].val_loss if trace else None,
        max_post_clip_norm=max_norm,
    )


def write_trace_csv(trace: Sequence[TraceRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lr", "train_loss", "val_loss"])
        for row in trace:
            writer.writerow(
                [
                    row.step,
                    f"{row.lr:.10g}",
                    f"{row.train_loss:.10g}",
                    "" if row.val_loss is None else f"{row.val_loss:.10g}",
                ]
            )


# -------------------------------------------------------- checkpoints


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(
    path,
    model: RegressionModel,
    vocab_hash: str,
    fmt: NumericFormat,
    optimizer: torch.optim.Optimizer | None = None,
    extra: dict | None = None,
) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "state_dict": model.state_dict(),
        "optimizer": None if optimizer is None else optimizer.state_dict(),
        "vocab_hash": vocab_hash,
        "numeric_format": fmt.to_dict(),
        "task_ranges": getattr(model, "task_ranges", {}),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(
    path, vocab_hash: str | None = None
) -> tuple[RegressionModel, dict]:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "version" not in payload:
        raise CheckpointError(f"{path} is not a checkpoint container")
    if payload["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {payload['version']} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    if vocab_hash is not None and payload["vocab_hash"] != vocab_hash:
        raise CheckpointError(
            "vocabulary hash mismatch: checkpoint was written with "
            f"{payload['vocab_hash'][:12]}..., current is {vocab_hash[:12]}..."
        )
    model = RegressionModel(ModelConfig.from_dict(payload["model_config"]))
    model.load_state_dict(payload["state_dict"])
    if payload.get("task_ranges") and hasattr(model, "task_ranges"):
        model.set_task_ranges(payload["task_ranges"])
    return model, payload


def finetune(
    checkpoint_path,
    task_examples: Sequence[RegressionExample],
    cfg: TrainConfig,
    vocab: Vocabulary,
    fmt: NumericFormat | None = None,
    val_examples: Sequence[RegressionExample] | None = None,
    task_name: str = "finetune",
) -> tuple[RegressionModel, TrainResult]:
    """Resume checkpoint parameters on one task with a fresh optimizer.

    Refuses checkpoints whose vocabulary hash differs from ``vocab``.
    Zero-step configs return the loaded parameters untouched.
    """
    model, _ = load_checkpoint(checkpoint_path, vocab_hash=vocab.content_hash())
    if cfg.total_steps == 0:
        return model, TrainResult(
            trace=[],
            final_train_loss=math.nan,
            final_val_loss=None,
            max_post_clip_norm=0.0,
        )
    mixture = TaskMixture(
        entries=[(task_name, list(task_examples), 1.0)], seed=cfg.seed
    )
    result = train(
        model,
        mixture,
        cfg,
        vocab,
        fmt=fmt,
        val_examples=val_examples,
        default_lr=FINETUNE_DEFAULT_LR,
    )
    return model, result
