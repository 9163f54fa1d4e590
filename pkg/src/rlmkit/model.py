"""Small encoder-decoder transformer for text-to-number prediction.

The encoder reads subword token ids; the decoder emits numeric tokens
(sign/digit ids plus EOS) autoregressively.  An encoder-only variant
with a pooled regression head trained on mean squared error serves as
the comparison baseline, in plain and per-task-normalized forms.

Pre-norm residual blocks, learned absolute position embeddings, no
dropout (forward passes are deterministic for fixed weights).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from rlmkit.numeric import PAD_ID

HEAD_KINDS = ("decoder", "mse_head", "mse_head_normalized")


@dataclass
class ModelConfig:
    text_vocab_size: int
    numeric_vocab_size: int
    encoder_layers: int = 2
    decoder_layers: int = 2
    heads: int = 4
    model_dim: int = 128
    ff_dim: int = 512
    max_encoder_len: int = 512
    max_decoder_len: int = 64
    head_kind: str = "decoder"

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ValueError(
                f"model_dim {self.model_dim} not divisible by heads {self.heads}"
            )
        if self.head_kind not in HEAD_KINDS:
            raise ValueError(f"head_kind must be one of {HEAD_KINDS}")
        for name in (
            "text_vocab_size",
            "numeric_vocab_size",
            "encoder_layers",
            "heads",
            "model_dim",
            "ff_dim",
            "max_encoder_len",
            "max_decoder_len",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        kwargs = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        for k, v in kwargs.items():
            if k != "head_kind":
                kwargs[k] = int(v)
        return cls(**kwargs)


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(
        self,
        query: torch.Tensor,
        keyvalue: torch.Tensor,
        key_mask: torch.Tensor | None = None,
        causal: bool = False,
    ) -> torch.Tensor:
        bsz, q_len, dim = query.shape
        k_len = keyvalue.shape[1]

        def split(x, length):
            return x.view(bsz, length, self.heads, self.head_dim).transpose(1, 2)

        q = split(self.q_proj(query), q_len)
        k = split(self.k_proj(keyvalue), k_len)
        v = split(self.v_proj(keyvalue), k_len)
        scores = (q @ k.transpose(-1, -2)) / math.sqrt(self.head_dim)
        if key_mask is not None:
            # key_mask: (bsz, k_len), True marks a real token.
            scores = scores.masked_fill(
                ~key_mask[:, None, None, :], float("-inf")
            )
        if causal:
            future = torch.triu(
                torch.ones(q_len, k_len, dtype=torch.bool, device=query.device),
                diagonal=1,
            )
            scores = scores.masked_fill(future[None, None, :, :], float("-inf"))
        attn = F.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(bsz, q_len, dim)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, ff_dim: int):
        super().__init__()
        self.up = nn.Linear(dim, ff_dim)
        self.down = nn.Linear(ff_dim, dim)

    def forward(self, x):
        return self.down(F.gelu(self.up(x)))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.model_dim)
        self.attn = MultiHeadAttention(cfg.model_dim, cfg.heads)
        self.ln2 = nn.LayerNorm(cfg.model_dim)
        self.ff = FeedForward(cfg.model_dim, cfg.ff_dim)

    def forward(self, x, mask):
        h = self.ln1(x)
        x = x + self.attn(h, h, key_mask=mask)
        x = x + self.ff(self.ln2(x))
        return x


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.model_dim)
        self.self_attn = MultiHeadAttention(cfg.model_dim, cfg.heads)
        self.ln2 = nn.LayerNorm(cfg.model_dim)
        self.cross_attn = MultiHeadAttention(cfg.model_dim, cfg.heads)
        self.ln3 = nn.LayerNorm(cfg.model_dim)
        self.ff = FeedForward(cfg.model_dim, cfg.ff_dim)

    def forward(self, x, self_mask, memory, memory_mask):
        h = self.ln1(x)
        x = x + self.self_attn(h, h, key_mask=self_mask, causal=True)
        x = x + self.cross_attn(self.ln2(x), memory, key_mask=memory_mask)
        x = x + self.ff(self.ln3(x))
        return x


class RegressionModel(nn.Module):
    """Encoder-decoder (or encoder + pooled head) over token ids."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        cfg = config
        self.text_embed = nn.Embedding(cfg.text_vocab_size, cfg.model_dim)
        self.enc_pos = nn.Embedding(cfg.max_encoder_len, cfg.model_dim)
        self.enc_layers = nn.ModuleList(
            EncoderLayer(cfg) for _ in range(cfg.encoder_layers)
        )
        self.enc_norm = nn.LayerNorm(cfg.model_dim)
        if cfg.head_kind == "decoder":
            self.num_embed = nn.Embedding(cfg.numeric_vocab_size, cfg.model_dim)
            self.dec_pos = nn.Embedding(cfg.max_decoder_len, cfg.model_dim)
            self.dec_layers = nn.ModuleList(
                DecoderLayer(cfg) for _ in range(cfg.decoder_layers)
            )
            self.dec_norm = nn.LayerNorm(cfg.model_dim)
            self.lm_head = nn.Linear(cfg.model_dim, cfg.numeric_vocab_size)
        else:
            self.reg_head = nn.Linear(cfg.model_dim, 1)
            # task -> (lo, hi) for the normalized variant
            self.task_ranges: dict[str, tuple[float, float]] = {}
        self.apply(self._init_weights)

    @staticmethod
    def _init_weights(module):
        if isinstance(module, nn.Embedding):
            nn.init.normal_(module.weight, std=0.02)

    # ------------------------------------------------------- encoder

    def encoder_parameters(self):
        names = ("text_embed", "enc_pos", "enc_layers", "enc_norm")
        for name in names:
            yield from getattr(self, name).parameters()

    def _check_ids(self, ids, vocab_size, max_len, what):
        if ids.dim() != 2:
            raise ValueError(f"{what} ids must be 2-D (batch, length)")
        if ids.shape[1] > max_len:
            raise ValueError(
                f"{what} length {ids.shape[1]} exceeds limit {max_len}"
            )
        if ids.numel() and (ids.min() < 0 or ids.max() >= vocab_size):
            raise ValueError(f"{what} ids out of range [0, {vocab_size})")

    def encode_forward(
        self, input_ids: torch.Tensor, input_mask: torch.Tensor | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-position hidden states plus the mask actually used."""
        cfg = self.config
        self._check_ids(input_ids, cfg.text_vocab_size, cfg.max_encoder_len, "encoder")
        if input_mask is None:
            input_mask = input_ids != PAD_ID
        if not bool(input_mask.any(dim=1).all()):
            raise ValueError("every sequence needs at least one real token")
        positions = torch.arange(input_ids.shape[1], device=input_ids.device)
        x = self.text_embed(input_ids) + self.enc_pos(positions)[None, :, :]
        for layer in self.enc_layers:
            x = layer(x, input_mask)
        return self.enc_norm(x), input_mask

    # ------------------------------------------------------- decoder

    def decode_logits(
        self,
        memory: torch.Tensor,
        memory_mask: torch.Tensor,
        prefix_ids: torch.Tensor,
        prefix_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Next-token logits at each position of [start] + prefix.

        An empty prefix yields logits for position 0 only.  Position t
        of the output scores the token that should follow the first t
        prefix tokens.
        """
        if self.config.head_kind != "decoder":
            raise ValueError("model has no decoder head")
        cfg = self.config
        bsz = memory.shape[0]
        start = torch.full(
            (bsz, 1), PAD_ID, dtype=torch.long, device=memory.device
        )
        ids = torch.cat([start, prefix_ids.long()], dim=1)
        self._check_ids(ids, cfg.numeric_vocab_size, cfg.max_decoder_len, "decoder")
        if prefix_mask is None:
            self_mask = torch.ones_like(ids, dtype=torch.bool)
        else:
            self_mask = torch.cat(
                [torch.ones_like(start, dtype=torch.bool), prefix_mask], dim=1
            )
        positions = torch.arange(ids.shape[1], device=ids.device)
        x = self.num_embed(ids) + self.dec_pos(positions)[None, :, :]
        for layer in self.dec_layers:
            x = layer(x, self_mask, memory, memory_mask)
        return self.lm_head(self.dec_norm(x))

    def forward_targets(
        self,
        input_ids: torch.Tensor,
        targets: torch.Tensor,
        input_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Teacher-forced logits aligned with ``targets`` positions."""
        memory, memory_mask = self.encode_forward(input_ids, input_mask)
        prefix = targets[:, :-1]
        prefix_mask = prefix != PAD_ID
        return self.decode_logits(memory, memory_mask, prefix, prefix_mask)

    # ---------------------------------------------------- mse heads

    def mse_head_raw(
        self, input_ids: torch.Tensor, input_mask: torch.Tensor | None = None
    ) -> torch.Tensor:
        """Masked mean-pooled encoder state through the affine head."""
        if self.config.head_kind == "decoder":
            raise ValueError("model has no regression head")
        states, mask = self.encode_forward(input_ids, input_mask)
        weights = mask.to(states.dtype)
        pooled = (states * weights[:, :, None]).sum(dim=1)
        pooled = pooled / weights.sum(dim=1, keepdim=True)
        return self.reg_head(pooled).squeeze(-1)

    def set_task_ranges(self, ranges: dict[str, tuple[float, float]]):
        for task, (lo, hi) in ranges.items():
            if not hi > lo:
                raise ValueError(f"task {task!r} needs hi > lo, got ({lo}, {hi})")
        self.task_ranges = {t: (float(lo), float(hi)) for t, (lo, hi) in ranges.items()}

    def mse_head_forward(
        self,
        input_ids: torch.Tensor,
        input_mask: torch.Tensor | None = None,
        task_ids: list[str] | None = None,
    ) -> torch.Tensor:
        """Scalar predictions; the normalized variant un-scales per task."""
        raw = self.mse_head_raw(input_ids, input_mask)
        if self.config.head_kind == "mse_head":
            return raw
        if task_ids is None:
            raise ValueError("normalized head needs task_ids")
        lows, spans = [], []
        for task in task_ids:
            if task not in self.task_ranges:
                raise ValueError(f"no stored range for task {task!r}")
            lo, hi = self.task_ranges[task]
            lows.append(lo)
            spans.append(hi - lo)
        lo_t = torch.tensor(lows, dtype=raw.dtype, device=raw.device)
        span_t = torch.tensor(spans, dtype=raw.dtype, device=raw.device)
        return lo_t + raw * span_t

    def scale_targets(
        self, values: torch.Tensor, task_ids: list[str]
    ) -> torch.Tensor:
        """Map raw targets into [0, 1] with the stored per-task ranges."""
        lows, spans = [], []
        for task in task_ids:
            if task not in self.task_ranges:
                raise ValueError(f"no stored range for task {task!r}")
            lo, hi = self.task_ranges[task]
            lows.append(lo)
            spans.append(hi - lo)
        lo_t = torch.tensor(lows, dtype=values.dtype, device=values.device)
        span_t = torch.tensor(spans, dtype=values.dtype, device=values.device)
        return (values - lo_t) / span_t


def ce_loss(
    logits: torch.Tensor, targets: torch.Tensor, pad_id: int = PAD_ID
) -> torch.Tensor:
    """Mean token-level NLL over non-pad target positions."""
    if logits.shape[:2] != targets.shape:
        raise ValueError(
            f"logits {tuple(logits.shape[:2])} vs targets {tuple(targets.shape)}"
        )
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]),
        targets.reshape(-1).long(),
        ignore_index=pad_id,
    )


def grad_check(
    model: nn.Module,
    loss_fn,
    num_coords: int = 200,
    step: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between autograd and central finite differences.

    ``loss_fn(model)`` must return a scalar tensor and be deterministic.
    The model is evaluated in double precision on a random coordinate
    subset spread across all parameters.
    """
    model = model.double()
    model.zero_grad(set_to_none=True)
    loss = loss_fn(model)
    loss.backward()

    params = [p for p in model.parameters() if p.requires_grad]
    sizes = [p.numel() for p in params]
    total = sum(sizes)
    rng = torch.Generator().manual_seed(seed)
    count = min(num_coords, total)
    flat_choice = torch.randperm(total, generator=rng)[:count]

    worst = 0.0
    with torch.no_grad():
        for flat in flat_choice.tolist():
            pi = 0
            while flat >= sizes[pi]:
                flat -= sizes[pi]
                pi += 1
            param = params[pi]
            view = param.view(-1)
            analytic = float(param.grad.view(-1)[flat])
            original = float(view[flat])
            view[flat] = original + step
            up = float(loss_fn(model))
            view[flat] = original - step
            down = float(loss_fn(model))
            view[flat] = original
            numeric = (up - down) / (2 * step)
            scale = max(abs(analytic), abs(numeric), 1.0)
            worst = max(worst, abs(analytic - numeric) / scale)
    return worst
