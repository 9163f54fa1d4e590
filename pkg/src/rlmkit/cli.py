"""Command line entry point wiring all workflows.

Layered option resolution: built-in defaults, then a flat key=value
config file given via --config, then explicit flags.  Every run echoes
the resolved configuration so results can be reproduced exactly.
"""

from __future__ import annotations

import argparse
import glob as globlib
import json
import logging
import os
import sys

from rlmkit.data import (
    RegressionExample,
    Metric,
    load_examples,
    save_examples,
    split_examples,
    TaskMixture,
)
from rlmkit.metrics import (
    EvalReport,
    coefficient_of_variation,
    per_group_spearman,
    topp_containment,
)
from rlmkit.model import HEAD_KINDS, ModelConfig, RegressionModel
from rlmkit.numeric import NumericFormat
from rlmkit.sampling import AGGREGATIONS, PredictRequest, predict
from rlmkit.synthetic import METRIC_MODES, SizeParams, generate_examples
from rlmkit.tokenizer import Vocabulary, train_vocab
from rlmkit.training import (
    TrainConfig,
    finetune,
    load_checkpoint,
    save_checkpoint,
    train,
    write_trace_csv,
)
from rlmkit import ablations

logger = logging.getLogger("rlmkit.cli")

ABLATE_PRESETS = ("head-comparison", "seq-len", "pretrain-transfer")

_LOG_LEVELS = ("debug", "info", "warning", "error")


class UsageError(Exception):
    """Bad flags or config; maps to exit status 2."""


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


class Opt:
    """One resolvable option: flag name, converter, default."""

    def __init__(self, name, conv, default=None, choices=None, help=""):
        self.name = name
        self.conv = conv
        self.default = default
        self.choices = choices
        self.help = help

    @property
    def key(self) -> str:
        return self.name.replace("-", "_")

    def convert(self, raw: str):
        try:
            value = self.conv(raw)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for {self.name}: {exc}") from exc
        if self.choices is not None and value not in self.choices:
            raise UsageError(
                f"bad value for {self.name}: {value!r} "
                f"(choose from {', '.join(map(str, self.choices))})"
            )
        return value


GLOBAL_OPTS = [
    Opt("seed", int, default=0, help="base random seed"),
    Opt("out-dir", str, default=".", help="directory for default outputs"),
    Opt(
        "log-level",
        str,
        default="info",
        choices=_LOG_LEVELS,
        help="logging verbosity",
    ),
]

COMMAND_OPTS: dict[str, list[Opt]] = {
    "tokenizer-train": [
        Opt("corpus", str, help="glob of text files to learn merges from"),
        Opt("size", int, default=1259, help="total vocabulary size"),
        Opt("out", str, help="where to write the vocabulary file"),
    ],
    "synth-gen": [
        Opt("n", int, default=1000, help="number of programs"),
        Opt(
            "metrics",
            str,
            default="both",
            choices=METRIC_MODES,
            help="which metric labels to attach",
        ),
        Opt("min-ops", int, default=1),
        Opt("max-ops", int, default=12),
        Opt("group-size", int, default=0, help="0 disables group ids"),
        Opt("out", str, help="records file to write"),
    ],
    "train": [
        Opt("mixture", str, help="mixture file: name path weight lines"),
        Opt("vocab", str, help="vocabulary file"),
        Opt("val", str, default="", help="held-out records for eval"),
        Opt("head", str, default="decoder", choices=HEAD_KINDS),
        Opt("encoder-layers", int, default=2),
        Opt("decoder-layers", int, default=2),
        Opt("heads", int, default=4),
        Opt("model-dim", int, default=128),
        Opt("ff-dim", int, default=512),
        Opt("max-encoder-len", int, default=512),
        Opt("max-decoder-len", int, default=64),
        Opt("total-steps", int, default=1000),
        Opt("batch-size", int, default=32),
        Opt("peak-lr", float, default=0.0, help="0 means the built-in default"),
        Opt("warmup-fraction", float, default=0.1),
        Opt("grad-clip-norm", float, default=2.0),
        Opt("eval-every", int, default=0),
        Opt("freeze-encoder", _parse_bool, default=False),
        Opt("checkpoint-out", str, default="", help="default <out-dir>/model.pt"),
        Opt("trace-out", str, default="", help="default <out-dir>/trace.csv"),
    ],
    "finetune": [
        Opt("checkpoint", str, help="starting checkpoint"),
        Opt("data", str, help="records file with the finetuning task"),
        Opt("vocab", str, help="vocabulary file"),
        Opt("val", str, default=""),
        Opt("task-name", str, default="finetune"),
        Opt("total-steps", int, default=200),
        Opt("batch-size", int, default=16),
        Opt("peak-lr", float, default=0.0, help="0 means the built-in default"),
        Opt("warmup-fraction", float, default=0.1),
        Opt("grad-clip-norm", float, default=2.0),
        Opt("eval-every", int, default=0),
        Opt("freeze-encoder", _parse_bool, default=False),
        Opt("checkpoint-out", str, default=""),
        Opt("trace-out", str, default=""),
    ],
    "predict": [
        Opt("checkpoint", str),
        Opt("vocab", str),
        Opt("input", str, help="records file, or - for standard input"),
        Opt("metrics", int, default=1, help="metrics per prediction"),
        Opt("samples", int, default=64),
        Opt("temperature", float, default=1.0),
        Opt("agg", str, default="median", choices=AGGREGATIONS),
        Opt("out", str, help="records file with predicted values"),
    ],
    "evaluate": [
        Opt("pred", str, help="records with predicted values"),
        Opt("truth", str, help="records with true values"),
        Opt("group-min-size", int, default=2),
        Opt("report", str, default="", help="default <out-dir>/eval_report.txt"),
    ],
    "ablate": [
        Opt("num-seeds", int, default=3),
        Opt("steps", int, default=0, help="0 means the preset default"),
        Opt("n", int, default=0, help="corpus size; 0 means preset default"),
        Opt("eval-n", int, default=0),
        Opt("batch-size", int, default=0),
        Opt("budget-steps", int, default=240),
        Opt("target-ce", float, default=0.35),
    ],
}

REQUIRED = {
    "tokenizer-train": ("corpus", "out"),
    "synth-gen": ("out",),
    "train": ("mixture", "vocab"),
    "finetune": ("checkpoint", "data", "vocab"),
    "predict": ("checkpoint", "vocab", "input", "out"),
    "evaluate": ("pred", "truth"),
    "ablate": (),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rlmkit",
        description="Text-to-metric regression toolkit",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    for command, opts in COMMAND_OPTS.items():
        p = sub.add_parser(command)
        if command == "ablate":
            p.add_argument("preset", choices=ABLATE_PRESETS)
        p.add_argument("--config", default=None, help="key=value file")
        for opt in GLOBAL_OPTS + opts:
            if opt.conv is _parse_bool:
                p.add_argument(
                    f"--{opt.name}",
                    nargs="?",
                    const="true",
                    default=None,
                    help=opt.help,
                )
            else:
                p.add_argument(f"--{opt.name}", default=None, help=opt.help)
    return parser


def _load_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for i, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise UsageError(
                        f"{path}:{i}: expected key=value, got {line!r}"
                    )
                key, _, value = line.partition("=")
                out[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    return out


def resolve_options(ns: argparse.Namespace) -> dict:
    opts = {o.key: o for o in GLOBAL_OPTS + COMMAND_OPTS[ns.command]}
    resolved = {key: opt.default for key, opt in opts.items()}
    if ns.config:
        for key, raw in _load_config_file(ns.config).items():
            if key not in opts:
                raise UsageError(f"unknown config key: {key}")
            resolved[key] = opts[key].convert(raw)
    for key, opt in opts.items():
        raw = getattr(ns, key, None)
        if raw is not None:
            resolved[key] = opt.convert(raw)
    for name in REQUIRED[ns.command]:
        if not resolved[name.replace("-", "_")]:
            raise UsageError(f"missing required flag: --{name}")
    return resolved


def _setup_logging(level_name: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level_name.upper()),
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _echo_config(command: str, resolved: dict) -> None:
    for key in sorted(resolved):
        logger.info("config %s.%s=%r", command, key, resolved[key])


def _default_path(opts: dict, key: str, filename: str) -> str:
    if opts.get(key):
        return opts[key]
    os.makedirs(opts["out_dir"], exist_ok=True)
    return os.path.join(opts["out_dir"], filename)


# ----------------------------------------------------------- handlers


def cmd_tokenizer_train(opts: dict) -> int:
    paths = sorted(globlib.glob(opts["corpus"], recursive=True))
    if not paths:
        raise RuntimeError(f"corpus glob matched no files: {opts['corpus']}")
    docs = []
    for path in paths:
        with open(path, "r", encoding="utf-8") as fh:
            docs.append(fh.read())
    vocab = train_vocab(
        docs, target_size=opts["size"], numeric_format=NumericFormat()
    )
    vocab.save(opts["out"])
    logger.info(
        "trained vocabulary: size=%d hash=%s out=%s",
        vocab.size,
        vocab.content_hash()[:16],
        opts["out"],
    )
    return 0


def cmd_synth_gen(opts: dict) -> int:
    examples = generate_examples(
        opts["n"],
        seed=opts["seed"],
        metrics_mode=opts["metrics"],
        size_params=SizeParams(
            min_ops=opts["min_ops"], max_ops=opts["max_ops"], num_vars=3
        ),
        group_size=opts["group_size"] or None,
    )
    count = save_examples(opts["out"], examples)
    logger.info("wrote %d records to %s", count, opts["out"])
    return 0


def _read_records(path: str) -> list[RegressionExample]:
    if path == "-":
        out = []
        for i, line in enumerate(sys.stdin, start=1):
            if line.strip():
                out.append(RegressionExample.from_record(json.loads(line)))
        return out
    return list(load_examples(path))


def _read_mixture(path: str, seed: int) -> TaskMixture:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise UsageError(
                    f"{path}:{i}: expected 'name path weight', got {line!r}"
                )
            name, data_path, weight = parts
            entries.append((name, _read_records(data_path), float(weight)))
    return TaskMixture(entries=entries, seed=seed)


def _train_config(opts: dict) -> TrainConfig:
    return TrainConfig(
        total_steps=opts["total_steps"],
        batch_size=opts["batch_size"],
        peak_lr=opts["peak_lr"] or None,
        warmup_fraction=opts["warmup_fraction"],
        grad_clip_norm=opts["grad_clip_norm"],
        seed=opts["seed"],
        eval_every=opts["eval_every"],
        freeze_encoder=opts["freeze_encoder"],
    )


def cmd_train(opts: dict) -> int:
    vocab = Vocabulary.load(opts["vocab"])
    mixture = _read_mixture(opts["mixture"], opts["seed"])
    val = _read_records(opts["val"]) if opts["val"] else None
    import torch

    torch.manual_seed(opts["seed"])
    model = RegressionModel(
        ModelConfig(
            text_vocab_size=vocab.size,
            numeric_vocab_size=16,
            encoder_layers=opts["encoder_layers"],
            decoder_layers=opts["decoder_layers"],
            heads=opts["heads"],
            model_dim=opts["model_dim"],
            ff_dim=opts["ff_dim"],
            max_encoder_len=opts["max_encoder_len"],
            max_decoder_len=opts["max_decoder_len"],
            head_kind=opts["head"],
        )
    )
    result = train(model, mixture, _train_config(opts), vocab, val_examples=val)
    ckpt = _default_path(opts, "checkpoint_out", "model.pt")
    save_checkpoint(ckpt, model, vocab.content_hash(), _fmt_for(vocab))
    trace = _default_path(opts, "trace_out", "trace.csv")
    write_trace_csv(result.trace, trace)
    logger.info(
        "final train loss %.6g; checkpoint %s; trace %s",
        result.final_train_loss,
        ckpt,
        trace,
    )
    return 0


def _fmt_for(vocab: Vocabulary) -> NumericFormat:
    return vocab.numeric_format or NumericFormat()


def cmd_finetune(opts: dict) -> int:
    vocab = Vocabulary.load(opts["vocab"])
    task = _read_records(opts["data"])
    val = _read_records(opts["val"]) if opts["val"] else None
    model, result = finetune(
        opts["checkpoint"],
        task,
        _train_config(opts),
        vocab,
        val_examples=val,
        task_name=opts["task_name"],
    )
    ckpt = _default_path(opts, "checkpoint_out", "finetuned.pt")
    save_checkpoint(ckpt, model, vocab.content_hash(), _fmt_for(vocab))
    trace = _default_path(opts, "trace_out", "finetune_trace.csv")
    write_trace_csv(result.trace, trace)
    logger.info(
        "final train loss %.6g; checkpoint %s; trace %s",
        result.final_train_loss,
        ckpt,
        trace,
    )
    return 0


def cmd_predict(opts: dict) -> int:
    vocab = Vocabulary.load(opts["vocab"])
    model, _ = load_checkpoint(
        opts["checkpoint"], vocab_hash=vocab.content_hash()
    )
    examples = _read_records(opts["input"])
    req = PredictRequest(
        num_metrics=opts["metrics"],
        num_samples=opts["samples"],
        temperature=opts["temperature"],
        aggregation=opts["agg"],
        seed=opts["seed"],
    )
    preds = predict(
        model, [ex.input_text for ex in examples], req, vocab, fmt=_fmt_for(vocab)
    )
    out_examples = []
    for ex, pred in zip(examples, preds):
        if len(ex.metrics) == len(pred.values):
            names = [m.name for m in ex.metrics]
        else:
            names = [f"pred_{i + 1}" for i in range(len(pred.values))]
        out_examples.append(
            RegressionExample(
                task_id=ex.task_id,
                input_text=ex.input_text,
                metrics=tuple(
                    Metric(n, v) for n, v in zip(names, pred.values)
                ),
                group_id=ex.group_id,
            )
        )
    count = save_examples(opts["out"], out_examples)
    logger.info("wrote %d predictions to %s", count, opts["out"])
    return 0


def cmd_evaluate(opts: dict) -> int:
    preds = _read_records(opts["pred"])
    truths = _read_records(opts["truth"])
    if len(preds) != len(truths):
        raise RuntimeError(
            f"pred/truth length mismatch: {len(preds)} vs {len(truths)}"
        )
    for i, (p, t) in enumerate(zip(preds, truths)):
        if p.input_text != t.input_text:
            raise RuntimeError(f"pred/truth input mismatch at record {i + 1}")
    report = EvalReport()
    by_task: dict[str, tuple[list[float], list[float]]] = {}
    for p, t in zip(preds, truths):
        xs, ys = by_task.setdefault(t.task_id, ([], []))
        xs.append(p.metric_values[0])
        ys.append(t.metric_values[0])
    for task_id, (xs, ys) in sorted(by_task.items()):
        report.add_task(task_id, xs, ys)
    grouped: dict[str, tuple[list[float], list[float]]] = {}
    for p, t in zip(preds, truths):
        if t.group_id is not None:
            xs, ys = grouped.setdefault(t.group_id, ([], []))
            xs.append(p.metric_values[0])
            ys.append(t.metric_values[0])
    min_size = opts["group_min_size"]
    if grouped:
        gids, gx, gy = [], [], []
        for gid, (xs, ys) in grouped.items():
            gids.extend([gid] * len(xs))
            gx.extend(xs)
            gy.extend(ys)
        report.group_rhos = per_group_spearman(
            gids, gx, gy, min_size=min_size
        )
        big = [
            (xs, ys) for xs, ys in grouped.values() if len(xs) >= min_size
        ]
        if big:
            ps = [0.05, 0.1, 0.25, 0.5]
            curve, base = topp_containment(big, ps, min_size=min_size)
            report.containment = (ps, curve, base)
            report.group_cvs = [
                cv
                for xs, _ in big
                if not _is_nan(cv := coefficient_of_variation(xs))
            ]
    path = _default_path(opts, "report", "eval_report.txt")
    text = report.to_text()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    if report.containment is not None:
        base, _ = os.path.splitext(path)
        with open(base + ".curves.csv", "w", encoding="utf-8") as fh:
            fh.write(report.containment_csv())
    sys.stdout.write(text)
    logger.info("report written to %s", path)
    return 0


def _is_nan(x: float) -> bool:
    return x != x


def cmd_ablate(opts: dict, preset: str) -> int:
    seed = opts["seed"]
    seeds = tuple(range(seed, seed + opts["num_seeds"]))
    if preset == "head-comparison":
        result = ablations.run_head_comparison(
            seeds=seeds,
            n_per_task=opts["n"] or 700,
            steps=opts["steps"] or 900,
            batch_size=opts["batch_size"] or 16,
            eval_per_task=opts["eval_n"] or 150,
            data_seed=seed + 7000,
        )
    elif preset == "seq-len":
        result = ablations.run_seq_len(
            seeds=seeds,
            n_examples=opts["n"] or 2500,
            steps=opts["steps"] or 1400,
            batch_size=opts["batch_size"] or 8,
            eval_examples=opts["eval_n"] or 200,
            data_seed=seed + 11000,
        )
    else:
        os.makedirs(opts["out_dir"], exist_ok=True)
        ckpt = os.path.join(opts["out_dir"], "pretrained.pt")
        vocab_path = os.path.join(opts["out_dir"], "pretrain_vocab.txt")
        pretrain = ablations.run_cheap_metric_pretraining(
            seed=seed,
            n_examples=opts["n"] or 10_000,
            steps=opts["steps"] or 1200,
            batch_size=opts["batch_size"] or 32,
            eval_examples=opts["eval_n"] or 400,
            checkpoint_path=ckpt,
            vocab_path=vocab_path,
        )
        transfer = ablations.run_pretrain_transfer(
            ckpt,
            Vocabulary.load(vocab_path),
            seeds=seeds,
            budget_steps=opts["budget_steps"],
            target_ce=opts["target_ce"],
            data_seed=seed + 100,
        )
        result = {
            "preset": "pretrain-transfer",
            "pretraining": pretrain,
            "transfer": transfer,
        }
    os.makedirs(opts["out_dir"], exist_ok=True)
    path = os.path.join(opts["out_dir"], f"{preset}.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(result, sort_keys=True, indent=2) + "\n")
    logger.info("report written to %s", path)
    return 0


HANDLERS = {
    "tokenizer-train": cmd_tokenizer_train,
    "synth-gen": cmd_synth_gen,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def run_command(argv) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(list(argv))
    except SystemExit as exc:
        code = exc.code
        return int(code) if code else 0
    if ns.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        resolved = resolve_options(ns)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _setup_logging(resolved["log_level"])
    _echo_config(ns.command, resolved)
    try:
        if ns.command == "ablate":
            return cmd_ablate(resolved, ns.preset)
        return HANDLERS[ns.command](resolved)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
