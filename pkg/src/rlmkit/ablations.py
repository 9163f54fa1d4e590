"""Reusable experiment builders and runners for the ablation presets.

Each runner returns a plain JSON-friendly dict so the command line can
write reports and tests can assert on the numbers.  All randomness
derives from explicit seeds.
"""

from __future__ import annotations

import random
from typing import Sequence

from rlmkit.data import (
    Metric,
    PROMPT_SEPARATOR,
    RegressionExample,
    TaskMixture,
    split_examples,
)
from rlmkit.metrics import spearman
from rlmkit.model import ModelConfig, RegressionModel
from rlmkit.numeric import NumericFormat
from rlmkit.sampling import PredictRequest, predict
from rlmkit.synthetic import (
    BinOp,
    Assign,
    SizeParams,
    gen_program,
    generate_examples,
    parse_program,
    static_op_count,
)
from rlmkit.tokenizer import Vocabulary, train_vocab
from rlmkit.training import (
    TrainConfig,
    evaluate_loss,
    finetune,
    save_checkpoint,
    train,
)

import torch

DEFAULT_FMT = NumericFormat()

DESK_MODEL = dict(
    encoder_layers=2,
    decoder_layers=2,
    heads=4,
    model_dim=128,
    ff_dim=512,
)

SMALL_MODEL = dict(
    encoder_layers=1,
    decoder_layers=1,
    heads=4,
    model_dim=64,
    ff_dim=256,
)


# ----------------------------------------------------------- corpora


def build_vocab_for(
    examples: Sequence[RegressionExample],
    target_size: int = 360,
    fmt: NumericFormat = DEFAULT_FMT,
    max_docs: int = 1500,
) -> Vocabulary:
    docs = [ex.input_text for ex in examples[:max_docs]]
    return train_vocab(docs, target_size=target_size, numeric_format=fmt)


def build_opcount_corpus(n: int, seed: int) -> list[RegressionExample]:
    """Programs labeled with their static operator count."""
    return generate_examples(
        n,
        seed=seed,
        metrics_mode="cheap",
        size_params=SizeParams(min_ops=1, max_ops=12, num_vars=3),
        task_id="op_count",
    )


def build_exec_corpus(n: int, seed: int) -> list[RegressionExample]:
    """Programs labeled with interpreter step counts."""
    examples = generate_examples(
        n,
        seed=seed,
        metrics_mode="exec",
        size_params=SizeParams(min_ops=1, max_ops=12, num_vars=3),
        task_id="step_count",
    )
    return [
        RegressionExample(
            task_id=ex.task_id,
            input_text=ex.input_text,
            metrics=(ex.metrics[0],),  # step_count only
            group_id=ex.group_id,
        )
        for ex in examples
    ]


def build_pair_corpus(n: int, seed: int) -> list[RegressionExample]:
    """Programs labeled with the correlated (step_count, peak_stack) pair."""
    examples = generate_examples(
        n,
        seed=seed,
        metrics_mode="exec",
        size_params=SizeParams(min_ops=1, max_ops=12, num_vars=3),
        task_id="exec_pair",
    )
    return examples


def _operator_counts(source: str) -> dict[str, int]:
    counts = {"+": 0, "-": 0, "*": 0}

    def walk(node):
        if isinstance(node, BinOp):
            counts[node.op] += 1
            walk(node.left)
            walk(node.right)

    for stmt in parse_program(source):
        walk(stmt.expr if isinstance(stmt, Assign) else stmt)
    return counts


RANGE_TASKS = (
    # (task_id, low, high, which operator count drives the label)
    ("unit", 0.0, 1.0, "+"),
    ("mid", 50.0, 60.0, "*"),
    ("wide", 80.0, 100.0, "-"),
)


def build_range_tasks(
    n_per_task: int, seed: int
) -> dict[str, list[RegressionExample]]:
    """Three tasks over markedly different target ranges.

    Each task keys its label to a different operator count (0..10),
    linearly mapped into the task's range, and prefixes its prompt with
    the task name so tasks are distinguishable from input text alone.
    """
    rng = random.Random(seed)
    sp = SizeParams(min_ops=1, max_ops=10, num_vars=3)
    out: dict[str, list[RegressionExample]] = {}
    for task_id, lo, hi, op in RANGE_TASKS:
        examples = []
        for _ in range(n_per_task):
            program = gen_program(rng, sp)
            count = _operator_counts(program.source)[op]
            value = lo + (hi - lo) * count / 10.0
            examples.append(
                RegressionExample(
                    task_id=task_id,
                    input_text=(
                        f"{task_id}\n{PROMPT_SEPARATOR}\n{program.source}"
                    ),
                    metrics=(Metric("value", value),),
                )
            )
        out[task_id] = examples
    return out


def build_late_signal_corpus(
    n: int, seed: int, filler_blocks: int = 8
) -> list[RegressionExample]:
    """Inputs whose label depends only on the final text block.

    The leading blocks are independent random programs (so short-context
    models still see varying inputs), and the label is the operator
    count of the last block alone.
    """
    rng = random.Random(seed)
    filler_sp = SizeParams(min_ops=8, max_ops=12, num_vars=3)
    tail_sp = SizeParams(min_ops=1, max_ops=8, num_vars=3)
    out = []
    for _ in range(n):
        blocks = [
            gen_program(rng, filler_sp).source for _ in range(filler_blocks)
        ]
        tail = gen_program(rng, tail_sp)
        out.append(
            RegressionExample(
                task_id="late_signal",
                input_text="\n".join(blocks + [tail.source]),
                metrics=(Metric("tail_ops", float(static_op_count(tail))),),
            )
        )
    return out


# ----------------------------------------------------------- helpers


def train_decoder(
    examples: Sequence[RegressionExample],
    vocab: Vocabulary,
    steps: int,
    batch_size: int,
    seed: int,
    model_kwargs: dict | None = None,
    max_encoder_len: int = 128,
    peak_lr: float = 1e-3,
    val_examples: Sequence[RegressionExample] | None = None,
    eval_every: int = 0,
):
    torch.manual_seed(seed)
    model = RegressionModel(
        ModelConfig(
            text_vocab_size=vocab.size,
            numeric_vocab_size=16,
            max_encoder_len=max_encoder_len,
            max_decoder_len=32,
            head_kind="decoder",
            **(model_kwargs or DESK_MODEL),
        )
    )
    mixture = TaskMixture(entries=[("data", list(examples), 1.0)], seed=seed)
    cfg = TrainConfig(
        total_steps=steps,
        batch_size=batch_size,
        peak_lr=peak_lr,
        seed=seed,
        eval_every=eval_every,
    )
    result = train(
        model, mixture, cfg, vocab, val_examples=val_examples
    )
    return model, result


def train_mse(
    examples: Sequence[RegressionExample],
    vocab: Vocabulary,
    steps: int,
    batch_size: int,
    seed: int,
    head_kind: str,
    model_kwargs: dict | None = None,
    max_encoder_len: int = 128,
    peak_lr: float = 1e-3,
):
    torch.manual_seed(seed)
    model = RegressionModel(
        ModelConfig(
            text_vocab_size=vocab.size,
            numeric_vocab_size=16,
            max_encoder_len=max_encoder_len,
            max_decoder_len=32,
            head_kind=head_kind,
            **(model_kwargs or DESK_MODEL),
        )
    )
    mixture = TaskMixture(entries=[("data", list(examples), 1.0)], seed=seed)
    cfg = TrainConfig(
        total_steps=steps, batch_size=batch_size, peak_lr=peak_lr, seed=seed
    )
    result = train(model, mixture, cfg, vocab)
    return model, result


def decoder_rho(
    model: RegressionModel,
    vocab: Vocabulary,
    examples: Sequence[RegressionExample],
    num_samples: int = 8,
    seed: int = 0,
    metric_index: int = 0,
    num_metrics: int = 1,
) -> float:
    req = PredictRequest(
        num_metrics=num_metrics, num_samples=num_samples, seed=seed
    )
    preds = predict(
        model, [ex.input_text for ex in examples], req, vocab
    )
    return spearman(
        [p.values[metric_index] for p in preds],
        [ex.metric_values[metric_index] for ex in examples],
    )


def mse_rho(
    model: RegressionModel,
    vocab: Vocabulary,
    examples: Sequence[RegressionExample],
) -> float:
    from rlmkit.training import make_encoder_batch

    ids, mask = make_encoder_batch(
        [ex.input_text for ex in examples],
        vocab,
        model.config.max_encoder_len,
    )
    with torch.no_grad():
        if model.config.head_kind == "mse_head_normalized":
            preds = model.mse_head_forward(
                ids, mask, task_ids=[ex.task_id for ex in examples]
            )
        else:
            preds = model.mse_head_forward(ids, mask)
    return spearman(
        preds.tolist(), [ex.metric_values[0] for ex in examples]
    )


# ------------------------------------------------------------ runners


def run_cheap_metric_pretraining(
    seed: int = 0,
    n_examples: int = 10_000,
    steps: int = 1200,
    batch_size: int = 32,
    eval_examples: int = 400,
    num_samples: int = 8,
    checkpoint_path=None,
    vocab_path=None,
) -> dict:
    """Train the desk-scale decoder on operator-count labels."""
    corpus = build_opcount_corpus(n_examples, seed=seed)
    vocab = build_vocab_for(corpus)
    train_set, held_out = split_examples(
        corpus, test_fraction=0.1, mode="shared_group", seed=seed
    )
    model, result = train_decoder(
        train_set,
        vocab,
        steps=steps,
        batch_size=batch_size,
        seed=seed,
        model_kwargs=DESK_MODEL,
    )
    rho = decoder_rho(
        model, vocab, held_out[:eval_examples], num_samples=num_samples,
        seed=seed,
    )
    if checkpoint_path is not None:
        save_checkpoint(
            checkpoint_path, model, vocab.content_hash(), DEFAULT_FMT
        )
    if vocab_path is not None:
        vocab.save(vocab_path)
    return {
        "preset": "cheap-metric-pretraining",
        "seed": seed,
        "n_train": len(train_set),
        "n_eval": min(len(held_out), eval_examples),
        "steps": steps,
        "final_train_loss": round(result.final_train_loss, 6),
        "held_out_spearman": round(rho, 6),
    }


def run_pretrain_transfer(
    checkpoint_path,
    vocab: Vocabulary,
    seeds: Sequence[int] = (0, 1, 2),
    n_finetune: int = 1000,
    n_val: int = 300,
    budget_steps: int = 240,
    eval_every: int = 10,
    batch_size: int = 16,
    peak_lr: float = 1e-3,
    target_ce: float = 0.35,
    data_seed: int = 100,
) -> dict:
    """Steps-to-target comparison: pretrained init vs random init.

    Both arms run the identical fine-tuning config on the same
    interpreter-step corpus; only the initial parameters differ.
    """
    corpus = build_exec_corpus(n_finetune + n_val, seed=data_seed)
    task_examples = corpus[:n_finetune]
    val = corpus[n_finetune:]
    rows = []
    for seed in seeds:
        cfg = TrainConfig(
            total_steps=budget_steps,
            batch_size=batch_size,
            peak_lr=peak_lr,
            seed=seed,
            eval_every=eval_every,
        )
        _, pre_result = finetune(
            checkpoint_path, task_examples, cfg, vocab, val_examples=val
        )
        pre_steps = _steps_to_target(pre_result, target_ce)

        rand_model, _cfg = _fresh_like_checkpoint(checkpoint_path, seed)
        mixture = TaskMixture(
            entries=[("exec", list(task_examples), 1.0)], seed=seed
        )
        rand_result = train(
            rand_model, mixture, cfg, vocab, val_examples=val
        )
        rand_steps = _steps_to_target(rand_result, target_ce)
        rows.append(
            {
                "seed": seed,
                "pretrained_steps_to_target": pre_steps,
                "random_init_steps_to_target": rand_steps,
            }
        )
    return {
        "preset": "pretrain-transfer",
        "target_val_ce": target_ce,
        "budget_steps": budget_steps,
        "rows": rows,
    }


def _steps_to_target(result, target: float):
    for row in result.trace:
        if row.val_loss is not None and row.val_loss <= target:
            return row.step
    return None


def _fresh_like_checkpoint(checkpoint_path, seed: int):
    from rlmkit.training import load_checkpoint

    loaded, payload = load_checkpoint(checkpoint_path)
    torch.manual_seed(seed)
    cfg = ModelConfig.from_dict(payload["model_config"])
    return RegressionModel(cfg), cfg


def run_head_comparison(
    seeds: Sequence[int] = (0, 1, 2),
    n_per_task: int = 700,
    steps: int = 900,
    batch_size: int = 16,
    eval_per_task: int = 150,
    num_samples: int = 8,
    data_seed: int = 7,
) -> dict:
    """Decoder head vs plain and normalized MSE heads on a 3-range mixture."""
    tasks = build_range_tasks(n_per_task, seed=data_seed)
    all_examples = [ex for examples in tasks.values() for ex in examples]
    vocab = build_vocab_for(all_examples)
    splits = {
        task: split_examples(examples, 0.2, "shared_group", seed=data_seed)
        for task, examples in tasks.items()
    }
    train_set = [ex for tr, _ in splits.values() for ex in tr]
    rows = []
    for seed in seeds:
        per_head = {}
        shared = dict(
            steps=steps, batch_size=batch_size, seed=seed,
            model_kwargs=SMALL_MODEL,
        )
        dec_model, _ = train_decoder(train_set, vocab, **shared)
        mse_model, _ = train_mse(
            train_set, vocab, head_kind="mse_head", **shared
        )
        norm_model, _ = train_mse(
            train_set, vocab, head_kind="mse_head_normalized", **shared
        )
        for head, model in (
            ("decoder", dec_model),
            ("mse", mse_model),
            ("mse_normalized", norm_model),
        ):
            rhos = {}
            for task, (_, held) in splits.items():
                held = held[:eval_per_task]
                if head == "decoder":
                    rho = decoder_rho(
                        model, vocab, held, num_samples=num_samples, seed=seed
                    )
                else:
                    rho = mse_rho(model, vocab, held)
                rhos[task] = round(rho, 6)
            per_head[head] = {
                "per_task": rhos,
                "mean": round(sum(rhos.values()) / len(rhos), 6),
            }
        rows.append({"seed": seed, "heads": per_head})
    return {"preset": "head-comparison", "rows": rows}


def run_multiobjective(
    seed: int = 0,
    n_examples: int = 4000,
    steps: int = 900,
    batch_size: int = 16,
    eval_texts: int = 60,
    samples_per_text: int = 20,
) -> dict:
    """Train on a correlated metric pair; measure sample-pair Pearson r."""
    corpus = build_pair_corpus(n_examples, seed=seed)
    vocab = build_vocab_for(corpus)
    train_set, held_out = split_examples(
        corpus, 0.1, "shared_group", seed=seed
    )
    model, _ = train_decoder(
        train_set,
        vocab,
        steps=steps,
        batch_size=batch_size,
        seed=seed,
        model_kwargs=SMALL_MODEL,
    )
    data_r = _pearson(
        [ex.metric_values[0] for ex in corpus],
        [ex.metric_values[1] for ex in corpus],
    )
    req = PredictRequest(
        num_metrics=2, num_samples=samples_per_text, seed=seed
    )
    texts = [ex.input_text for ex in held_out[:eval_texts]]
    preds = predict(model, texts, req, vocab, keep_samples=True)
    first, second = [], []
    for p in preds:
        for a, b in p.samples:
            first.append(a)
            second.append(b)
    sample_r = _pearson(first, second)
    return {
        "preset": "multi-objective",
        "seed": seed,
        "n_sample_pairs": len(first),
        "data_pearson": round(data_r, 6),
        "sample_pearson": round(sample_r, 6),
    }


def _pearson(xs, ys) -> float:
    from scipy import stats

    return float(stats.pearsonr(xs, ys).statistic)


def run_seq_len(
    seeds: Sequence[int] = (0, 1, 2),
    n_examples: int = 2500,
    steps: int = 1400,
    batch_size: int = 8,
    eval_examples: int = 200,
    num_samples: int = 8,
    lengths: Sequence[int] = (128, 512),
    data_seed: int = 11,
) -> dict:
    """Held-out rho at two encoder context lengths on late-signal data."""
    corpus = build_late_signal_corpus(n_examples, seed=data_seed)
    vocab = build_vocab_for(corpus, target_size=320)
    train_set, held_out = split_examples(
        corpus, 0.12, "shared_group", seed=data_seed
    )
    held = held_out[:eval_examples]
    rows = []
    for seed in seeds:
        per_len = {}
        for max_len in lengths:
            model, _ = train_decoder(
                train_set,
                vocab,
                steps=steps,
                batch_size=batch_size,
                seed=seed,
                model_kwargs=SMALL_MODEL,
                max_encoder_len=max_len,
            )
            rho = decoder_rho(
                model, vocab, held, num_samples=num_samples, seed=seed
            )
            per_len[str(max_len)] = round(rho, 6)
        rows.append({"seed": seed, "rho_by_len": per_len})
    return {"preset": "seq-len", "lengths": list(lengths), "rows": rows}
