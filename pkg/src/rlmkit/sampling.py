"""Grammar-constrained sampling of numeric token sequences.

At every decode position the logits are masked so that only tokens the
number grammar allows (sign, digit, or EOS) keep probability mass, which
guarantees each sample decodes to a valid value.  Multi-metric requests
decode jointly: the tokens of metric j condition metrics j+1 and later
within the same sample.  Aggregation over the K samples is componentwise
median (lower middle for even K, so the output is an actually-sampled
value) or mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from rlmkit.model import RegressionModel
from rlmkit.numeric import (
    EOS_ID,
    NumericFormat,
    allowed_tokens,
    decode_metrics,
)
from rlmkit.tokenizer import Vocabulary
from rlmkit.training import make_encoder_batch

AGGREGATIONS = ("median", "mean")


@dataclass
class PredictRequest:
    num_metrics: int = 1
    num_samples: int = 64
    temperature: float = 1.0
    aggregation: str = "median"
    seed: int = 0

    def __post_init__(self):
        if self.num_metrics < 1:
            raise ValueError("num_metrics must be >= 1")
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.temperature < 0.0:
            raise ValueError("temperature must be >= 0 (0 means greedy)")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")


def _allowed_mask(
    fmt: NumericFormat,
    vocab_size: int,
    position: int,
    metrics_done: int,
    total_metrics: int,
) -> torch.Tensor:
    ids = allowed_tokens(
        position, fmt, metrics_decoded=metrics_done,
        total_metrics=total_metrics, eos_id=EOS_ID,
    )
    mask = torch.zeros(vocab_size, dtype=torch.bool)
    mask[sorted(ids)] = True
    return mask


def _sample_block(
    model: RegressionModel,
    fmt: NumericFormat,
    memory: torch.Tensor,
    memory_mask: torch.Tensor,
    num_metrics: int,
    temperature: float,
    generator: torch.Generator,
) -> torch.Tensor:
    """One constrained decode per memory row; returns (rows, L) ids."""
    rows = memory.shape[0]
    seq_len = fmt.seq_len
    total_len = num_metrics * seq_len
    vocab_size = model.config.numeric_vocab_size
    out = torch.empty((rows, total_len), dtype=torch.long)
    prefix = torch.zeros((rows, 0), dtype=torch.long)
    for t in range(total_len):
        logits = model.decode_logits(memory, memory_mask, prefix)[:, -1, :]
        mask = _allowed_mask(fmt, vocab_size, t, t // seq_len, num_metrics)
        masked = logits.masked_fill(~mask[None, :], float("-inf"))
        if temperature == 0.0:
            token = masked.argmax(dim=-1)
        else:
            probs = torch.softmax(masked / temperature, dim=-1)
            token = torch.multinomial(
                probs, num_samples=1, generator=generator
            ).squeeze(-1)
        out[:, t] = token
        prefix = out[:, : t + 1]
    return out


def sample_predictions(
    model: RegressionModel,
    texts: list[str],
    req: PredictRequest,
    vocab: Vocabulary,
    fmt: NumericFormat | None = None,
    chunk_rows: int = 256,
) -> list[list[tuple[float, ...]]]:
    """Per text, K tuples of k decoded values (always grammar-valid)."""
    fmt = fmt or vocab.numeric_format
    if fmt is None:
        raise ValueError("no numeric format on vocabulary; pass fmt")
    needed = req.num_metrics * fmt.seq_len + 1
    if needed > model.config.max_decoder_len:
        raise ValueError(
            f"{req.num_metrics} metrics need {needed} decoder positions, "
            f"limit is {model.config.max_decoder_len}"
        )
    generator = torch.Generator().manual_seed(req.seed)
    model.eval()
    results: list[list[tuple[float, ...]]] = [[] for _ in texts]
    with torch.no_grad():
        ids, mask = make_encoder_batch(
            texts, vocab, model.config.max_encoder_len
        )
        memory, memory_mask = model.encode_forward(ids, mask)
        # One decode row per (text, sample); chunked to bound memory.
        pairs = [
            (i, s) for i in range(len(texts)) for s in range(req.num_samples)
        ]
        for start in range(0, len(pairs), chunk_rows):
            chunk = pairs[start : start + chunk_rows]
            rows = torch.tensor([i for i, _ in chunk])
            tokens = _sample_block(
                model,
                fmt,
                memory[rows],
                memory_mask[rows],
                req.num_metrics,
                req.temperature,
                generator,
            )
            for (i, _), row in zip(chunk, tokens):
                values = decode_metrics(
                    row.tolist(), num_metrics=req.num_metrics, fmt=fmt
                )
                results[i].append(tuple(values))
    return results


def aggregate_pointwise(
    samples: list[tuple[float, ...]], mode: str = "median"
) -> tuple[float, ...]:
    """Componentwise reduction of K equal-length tuples."""
    if not samples:
        raise ValueError("need at least one sample")
    if mode not in AGGREGATIONS:
        raise ValueError(f"mode must be one of {AGGREGATIONS}")
    k = len(samples)
    width = len(samples[0])
    out = []
    for j in range(width):
        column = sorted(s[j] for s in samples)
        if mode == "median":
            out.append(column[(k - 1) // 2])
        else:
            out.append(sum(column) / k)
    return tuple(out)


@dataclass
class Prediction:
    values: tuple[float, ...]
    samples: list[tuple[float, ...]] | None = None


def predict(
    model: RegressionModel,
    texts: list[str],
    req: PredictRequest,
    vocab: Vocabulary,
    fmt: NumericFormat | None = None,
    keep_samples: bool = False,
) -> list[Prediction]:
    """Aggregated point predictions, order-aligned with ``texts``."""
    all_samples = sample_predictions(model, texts, req, vocab, fmt)
    out = []
    for samples in all_samples:
        out.append(
            Prediction(
                values=aggregate_pointwise(samples, req.aggregation),
                samples=samples if keep_samples else None,
            )
        )
    return out
