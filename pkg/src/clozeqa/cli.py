"""Command-line entry point.

Subcommands: corpus validate|synth, train, predict, ensemble train|eval,
eval compare, report, sweep. Logs go to stderr; machine-readable results
go to files or stdout. Exit codes: 0 success, 1 validation/data error,
2 usage error. Every JSON artifact embeds {seed, config_hash, version}.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import subprocess
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .aoa import AggregationConfig, ALL_AGGREGATIONS, AoAConfig, AoAReader
from .corpus import (
    CorpusError,
    DatasetSplit,
    SynthConfig,
    ValidationError,
    generate_synthetic,
    load_biomrc,
    save_split,
)
from .encoder import EncoderError, PrecomputedEmbedding, ToyEmbedding
from .ensemble import (
    EnsembleError,
    WeightingModel,
    default_weighting_config,
    read_score_file,
    train_weighting,
    write_score_file,
)
from .evalkit import (
    EvalError,
    EvalRecord,
    emit_report,
    paired_bitmaps,
    read_predictions,
    write_predictions,
)
from .mathcore import CheckpointError, apply_params, load_params, no_grad, save_params
from .mathcore.tensor import ShapeError
from .sentreader import SentConfig, SentReader
from .tokenizer import Vocab, VocabError, build_vocab
from .trainer import TrainConfig, TrainingDiverged, evaluate, train

USER_ERRORS = (
    CorpusError,
    ValidationError,
    EncoderError,
    EnsembleError,
    EvalError,
    CheckpointError,
    VocabError,
    ShapeError,
    TrainingDiverged,
    FileNotFoundError,
    ValueError,
)


def log(message: str) -> None:
    print(message, file=sys.stderr)


def tool_version() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except OSError:
        pass
    return __version__


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def artifact_meta(seed: int, config: dict) -> dict:
    return {"seed": seed, "config_hash": config_hash(config), "version": tool_version()}


def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if p.suffix == ".toml":
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(p.read_text(encoding="utf-8"))
    return json.loads(p.read_text(encoding="utf-8"))


# -- model construction helpers ----------------------------------------------

def corpus_text(split: DatasetSplit) -> list[str]:
    docs = []
    for s in split:
        docs.append(s.context)
        docs.append(s.question)
        for surfaces in s.candidates.values():
            docs.extend(surfaces)
    return docs


def make_backend(kind: str, vocab_size: int, dim: int, rng: np.random.Generator):
    if kind == "toy":
        return ToyEmbedding(vocab_size, dim, rng)
    if kind.startswith("precomputed:"):
        return PrecomputedEmbedding(kind.split(":", 1)[1], dim)
    raise ValueError(f"unknown embed backend {kind!r} (use toy or precomputed:<dir>)")


def build_reader(reader: str, vocab: Vocab, opts: dict):
    seed = opts["seed"]
    rng = np.random.default_rng(seed)
    backend = make_backend(opts["embed_backend"], len(vocab), opts["embed_dim"], rng)
    if reader == "aoa":
        cfg = AoAConfig(
            embed_dim=opts["embed_dim"],
            hidden_dim=opts["hidden"],
            aggregation=AggregationConfig(opts["agg_token"], opts["agg_occ"]),
            limit=opts["limit"],
            seed=seed,
        )
        return AoAReader(vocab, cfg, backend=backend)
    if reader == "sent":
        cfg = SentConfig(
            embed_dim=opts["embed_dim"],
            scorer_hidden=opts["hidden"],
            limit=opts["limit"],
            seed=seed,
            freeze_top_layer=opts["freeze_top"],
        )
        return SentReader(vocab, cfg, backend=backend)
    raise ValueError(f"unknown reader {reader!r}")


def reader_checkpoint_meta(reader: str, opts: dict, seed: int) -> dict:
    return {
        **artifact_meta(seed, opts),
        "reader": reader,
        "options": {k: opts[k] for k in sorted(opts)},
    }


def restore_reader(checkpoint: str, vocab_path: str | None):
    loaded, meta = load_params(checkpoint)
    reader_kind = meta.get("reader")
    opts = meta.get("options")
    if reader_kind not in ("aoa", "sent") or not isinstance(opts, dict):
        raise CheckpointError(f"{checkpoint}: missing reader metadata")
    vocab_file = vocab_path or str(Path(checkpoint).parent / "vocab.txt")
    vocab = Vocab.load(vocab_file)
    model = build_reader(reader_kind, vocab, opts)
    apply_params(model.parameters(), loaded)
    return model


# -- subcommand implementations ----------------------------------------------

def cmd_corpus_validate(args) -> int:
    split = load_biomrc(args.path)
    log(f"{args.path}: {len(split)} valid samples")
    print(json.dumps({"path": str(args.path), "samples": len(split), "status": "ok"}))
    return 0


def cmd_corpus_synth(args) -> int:
    cfg = SynthConfig(
        n_samples=args.n,
        vocab_size=args.vocab_size,
        n_entities=args.entities,
        context_len=args.context_len,
        seed=args.seed,
        name=args.name,
    )
    split = generate_synthetic(cfg)
    meta = artifact_meta(args.seed, asdict(cfg))
    save_split(split, args.out, meta=meta)
    log(f"wrote {len(split)} samples to {args.out}")
    return 0


TRAIN_OPTION_KEYS = (
    "seed", "epochs", "patience", "batch_size", "lr", "lr_encoder", "optimizer",
    "agg_token", "agg_occ", "embed_dim", "hidden", "embed_backend", "freeze_top",
    "limit", "vocab_cap",
)


def merge_train_options(args) -> dict:
    defaults = {
        "seed": 0, "epochs": 40, "patience": 3, "batch_size": 30,
        "lr": 1e-3, "lr_encoder": 1e-5, "optimizer": "sgd",
        "agg_token": "sum", "agg_occ": "sum", "embed_dim": 64, "hidden": 64,
        "embed_backend": "toy", "freeze_top": False, "limit": 512, "vocab_cap": 20000,
        "keep_checkpoints": None,
    }
    merged = dict(defaults)
    explicit = set()
    file_cfg = load_config_file(getattr(args, "config", None))
    unknown = set(file_cfg) - set(defaults) - {"reader"}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for key, value in file_cfg.items():
        if key != "reader":
            merged[key] = value
            explicit.add(key)
    for key in defaults:  # flags win over the config file
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
            explicit.add(key)
    return merged, explicit


def train_config_from(opts: dict, checkpoint_dir: str | None) -> TrainConfig:
    return TrainConfig(
        max_epochs=opts["epochs"],
        patience=opts["patience"],
        batch_size=opts["batch_size"],
        lr_main=opts["lr"],
        lr_encoder=opts["lr_encoder"],
        seed=opts["seed"],
        optimizer=opts["optimizer"],
        checkpoint_dir=checkpoint_dir,
        keep_checkpoints=opts["keep_checkpoints"],
    )


def _train_one(reader_kind: str, opts: dict, explicit: set, train_split, dev_split,
               out_dir: Path, vocab: Vocab, keep_epochs: bool = True):
    model = build_reader(reader_kind, vocab, opts)
    meta = reader_checkpoint_meta(reader_kind, opts, opts["seed"])
    cfg = train_config_from(opts, str(out_dir / "epochs") if keep_epochs else None)
    if reader_kind == "sent" and "batch_size" not in explicit:
        cfg = cfg.sent_preset()  # fine-tuning the sentence reader defaults to batch 1
    best_state, report = train(model, train_split, dev_split, cfg, checkpoint_meta=meta)
    save_params(out_dir / "checkpoint_best.json", model.parameters(), meta=meta)
    (out_dir / "report.json").write_text(
        json.dumps({"_meta": meta, **report.to_json()}, sort_keys=True, indent=1) + "\n"
    )
    (out_dir / "report.csv").write_text(report.to_csv())
    return model, report


def cmd_train(args) -> int:
    opts, explicit = merge_train_options(args)
    train_split = load_biomrc(args.train, name="train")
    dev_split = load_biomrc(args.dev, name="dev")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab = build_vocab(corpus_text(train_split) + corpus_text(dev_split), opts["vocab_cap"])
    vocab.save(out_dir / "vocab.txt")
    model, report = _train_one(args.reader, opts, explicit, train_split, dev_split, out_dir, vocab)
    log(
        f"best epoch {report.best_epoch} dev accuracy {report.best_dev_accuracy:.4f} "
        f"({'early stop' if report.stopped_early else 'ran out of epochs'})"
    )
    print(json.dumps({"best_epoch": report.best_epoch,
                      "best_dev_accuracy": report.best_dev_accuracy,
                      "epochs_run": len(report.epochs)}))
    return 0


def cmd_predict(args) -> int:
    model = restore_reader(args.checkpoint, args.vocab)
    split = load_biomrc(args.input, name="input")
    preds = []
    with no_grad():
        for sample in split:
            sv = model.score_sample(sample)
            preds.append({
                "id": sample.uid,
                "predicted": sv.best(),
                "gold": sample.gold,
                "candidates": list(sv.candidates),
                "scores": sv.as_floats(),
            })
    _, meta = load_params(args.checkpoint)
    out_meta = {"seed": meta.get("seed", 0), "config_hash": meta.get("config_hash", ""),
                "version": tool_version()}
    if args.out:
        write_predictions(args.out, preds, meta=out_meta)
        log(f"wrote {len(preds)} predictions to {args.out}")
    else:
        print(json.dumps({"meta": out_meta, "predictions": preds}, sort_keys=True, indent=1))
    return 0


def cmd_ensemble_collect(args) -> int:
    from .ensemble import EnsembleSample

    preds_a = read_predictions(args.preds_a)
    preds_b = read_predictions(args.preds_b)
    by_id_b = {p["id"]: p for p in preds_b}
    if {p["id"] for p in preds_a} != set(by_id_b):
        raise EnsembleError("prediction files cover different sample ids")
    samples = []
    for pa in preds_a:
        pb = by_id_b[pa["id"]]
        if "candidates" not in pa or "scores" not in pa:
            raise EnsembleError(f"{pa['id']}: predictions lack per-candidate scores")
        if pa["candidates"] != pb["candidates"]:
            raise EnsembleError(f"{pa['id']}: candidate sets differ between readers")
        if pa["gold"] != pb["gold"]:
            raise EnsembleError(f"{pa['id']}: gold answers disagree")
        samples.append(EnsembleSample(
            uid=pa["id"],
            candidates=list(pa["candidates"]),
            gold=pa["candidates"].index(pa["gold"]),
            scores_a=pa["scores"],
            scores_b=pb["scores"],
        ))
    meta = artifact_meta(0, {"preds_a": str(args.preds_a), "preds_b": str(args.preds_b)})
    write_score_file(samples, args.out, meta=meta)
    log(f"wrote {len(samples)} aligned score records to {args.out}")
    return 0


def cmd_ensemble_train(args) -> int:
    train_scores = read_score_file(args.scores)
    dev_scores = read_score_file(args.dev_scores) if args.dev_scores else train_scores
    cfg = default_weighting_config(seed=args.seed)
    model, report = train_weighting(train_scores, dev_scores, cfg, hidden=args.hidden)
    meta = artifact_meta(args.seed, {"hidden": args.hidden, "scores": str(args.scores)})
    save_params(args.out, model.parameters(), meta=meta)
    log(f"weighting layer: best epoch {report.best_epoch}, dev accuracy "
        f"{report.best_dev_accuracy:.4f}")
    print(json.dumps({"best_epoch": report.best_epoch,
                      "best_dev_accuracy": report.best_dev_accuracy}))
    return 0


def cmd_ensemble_eval(args) -> int:
    samples = read_score_file(args.scores)
    loaded, meta = load_params(args.checkpoint)
    hidden = loaded["weighting.w1"].shape[0]
    model = WeightingModel(hidden=hidden, seed=0)
    apply_params(model.parameters(), loaded)
    acc = evaluate(model, samples)
    acc_a = sum(1 for s in samples if int(np.argmax(s.scores_a)) == s.gold) / len(samples)
    acc_b = sum(1 for s in samples if int(np.argmax(s.scores_b)) == s.gold) / len(samples)
    union = sum(
        1 for s in samples
        if s.gold in (int(np.argmax(s.scores_a)), int(np.argmax(s.scores_b)))
    ) / len(samples)
    result = {
        "ensemble_accuracy": acc,
        "accuracy_a": acc_a,
        "accuracy_b": acc_b,
        "union_accuracy": union,
        "samples": len(samples),
    }
    print(json.dumps(result, sort_keys=True, indent=1))
    return 0


def cmd_eval_compare(args) -> int:
    preds_a = read_predictions(args.preds_a)
    preds_b = read_predictions(args.preds_b)
    bm_a, bm_b = paired_bitmaps(preds_a, preds_b)
    record = EvalRecord(bm_a, bm_b, name_a=args.name_a, name_b=args.name_b)
    text = emit_report([record], args.format, alpha=args.alpha)
    if args.out:
        Path(args.out).write_text(text)
        log(f"wrote report to {args.out}")
    else:
        print(text, end="")
    return 0


def cmd_report(args) -> int:
    doc = json.loads(Path(args.records).read_text(encoding="utf-8"))
    records = []
    for entry in doc["records"]:
        counts = entry["counts"]
        names = entry["names"]
        if len(names) == 2:
            records.append(EvalRecord.from_counts(
                total=counts["total"],
                correct_a=counts[names[0]],
                correct_b=counts[names[1]],
                both=counts["both"],
                name_a=names[0],
                name_b=names[1],
                label=entry.get("label", ""),
            ))
        else:
            bits = np.zeros(counts["total"], dtype=bool)
            bits[: counts[names[0]]] = True
            records.append(EvalRecord(bits, name_a=names[0], label=entry.get("label", "")))
    print(emit_report(records, args.format), end="")
    return 0


def cmd_sweep(args) -> int:
    opts, explicit = merge_train_options(args)
    train_split = load_biomrc(args.train, name="train")
    dev_split = load_biomrc(args.dev, name="dev")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab = build_vocab(corpus_text(train_split) + corpus_text(dev_split), opts["vocab_cap"])
    vocab.save(out_dir / "vocab.txt")

    records = []
    summary = {}
    for agg in ALL_AGGREGATIONS:
        combo_opts = dict(opts, agg_token=agg.token_agg, agg_occ=agg.occurrence_agg)
        combo_dir = out_dir / agg.label.replace("/", "_")
        combo_dir.mkdir(parents=True, exist_ok=True)
        log(f"sweep: training {agg.label}")
        model, report = _train_one("aoa", combo_opts, explicit, train_split, dev_split,
                                   combo_dir, vocab, keep_epochs=False)
        with no_grad():
            bits = [model.predict(s) == s.gold for s in dev_split]
        records.append(EvalRecord(np.array(bits), label=agg.label))
        summary[agg.label] = {
            "best_epoch": report.best_epoch,
            "best_dev_accuracy": report.best_dev_accuracy,
            "epochs_run": len(report.epochs),
        }
    text = emit_report(records, "markdown")
    (out_dir / "sweep.md").write_text(text)
    (out_dir / "sweep.json").write_text(
        json.dumps({"_meta": artifact_meta(opts["seed"], opts), "runs": summary},
                   sort_keys=True, indent=1) + "\n"
    )
    print(text, end="")
    return 0


# -- argument grammar ---------------------------------------------------------

def add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or TOML config file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-encoder", dest="lr_encoder", type=float)
    p.add_argument("--optimizer", choices=["sgd", "adam"])
    p.add_argument("--agg-token", dest="agg_token", choices=["max", "sum"])
    p.add_argument("--agg-occ", dest="agg_occ", choices=["max", "sum"])
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--embed-backend", dest="embed_backend",
                   help="toy or precomputed:<dir>")
    p.add_argument("--freeze-top", dest="freeze_top", action="store_const", const=True)
    p.add_argument("--limit", type=int, help="joint sequence length limit")
    p.add_argument("--vocab-cap", dest="vocab_cap", type=int)
    p.add_argument("--keep-checkpoints", dest="keep_checkpoints", type=int,
                   help="retain only the last N per-epoch checkpoints (best kept)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clozeqa",
                                     description="Cloze-style reading comprehension toolkit")
    parser.add_argument("--version", action="version", version=tool_version())
    sub = parser.add_subparsers(dest="command", required=True)

    corpus = sub.add_parser("corpus", help="dataset validation and synthesis")
    corpus_sub = corpus.add_subparsers(dest="corpus_command", required=True)
    validate = corpus_sub.add_parser("validate", help="check a data file's invariants")
    validate.add_argument("path")
    validate.set_defaults(func=cmd_corpus_validate)
    synth = corpus_sub.add_parser("synth", help="generate a synthetic cue dataset")
    synth.add_argument("--out", required=True)
    synth.add_argument("--n", type=int, required=True)
    synth.add_argument("--vocab-size", dest="vocab_size", type=int, default=200)
    synth.add_argument("--entities", type=int, default=6)
    synth.add_argument("--context-len", dest="context_len", type=int, default=24)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--name", default="train")
    synth.set_defaults(func=cmd_corpus_synth)

    tr = sub.add_parser("train", help="train a reader")
    tr.add_argument("--reader", choices=["aoa", "sent"], default="aoa")
    tr.add_argument("--train", required=True)
    tr.add_argument("--dev", required=True)
    tr.add_argument("--out-dir", dest="out_dir", required=True)
    add_train_flags(tr)
    tr.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="score a data file with a trained reader")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--input", required=True)
    pr.add_argument("--vocab", help="vocab file (default: vocab.txt beside the checkpoint)")
    pr.add_argument("--out", help="write predictions JSON here instead of stdout")
    pr.set_defaults(func=cmd_predict)

    ens = sub.add_parser("ensemble", help="train or evaluate the weighting layer")
    ens_sub = ens.add_subparsers(dest="ensemble_command", required=True)
    ec = ens_sub.add_parser("collect", help="merge two prediction files into a score file")
    ec.add_argument("--preds-a", dest="preds_a", required=True)
    ec.add_argument("--preds-b", dest="preds_b", required=True)
    ec.add_argument("--out", required=True)
    ec.set_defaults(func=cmd_ensemble_collect)
    et = ens_sub.add_parser("train", help="fit the weighting MLP on a score file")
    et.add_argument("--scores", required=True)
    et.add_argument("--dev-scores", dest="dev_scores")
    et.add_argument("--out", required=True)
    et.add_argument("--hidden", type=int, default=8)
    et.add_argument("--seed", type=int, default=0)
    et.set_defaults(func=cmd_ensemble_train)
    ee = ens_sub.add_parser("eval", help="evaluate a trained weighting layer")
    ee.add_argument("--scores", required=True)
    ee.add_argument("--checkpoint", required=True)
    ee.set_defaults(func=cmd_ensemble_eval)

    ev = sub.add_parser("eval", help="model comparison statistics")
    ev_sub = ev.add_subparsers(dest="eval_command", required=True)
    cmp_ = ev_sub.add_parser("compare", help="compare two prediction files")
    cmp_.add_argument("--preds-a", dest="preds_a", required=True)
    cmp_.add_argument("--preds-b", dest="preds_b", required=True)
    cmp_.add_argument("--alpha", type=float, default=0.025)
    cmp_.add_argument("--format", choices=["markdown", "csv", "json"], default="markdown")
    cmp_.add_argument("--name-a", dest="name_a", default="ModelA")
    cmp_.add_argument("--name-b", dest="name_b", default="ModelB")
    cmp_.add_argument("--out")
    cmp_.set_defaults(func=cmd_eval_compare)

    rep = sub.add_parser("report", help="re-render a JSON comparison report")
    rep.add_argument("--records", required=True)
    rep.add_argument("--format", choices=["markdown", "csv", "json"], default="markdown")
    rep.set_defaults(func=cmd_report)

    sw = sub.add_parser("sweep", help="train all four aggregation combinations")
    sw.add_argument("--train", required=True)
    sw.add_argument("--dev", required=True)
    sw.add_argument("--out-dir", dest="out_dir", required=True)
    add_train_flags(sw)
    sw.set_defaults(func=cmd_sweep)

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        log(f"error: {exc}")
        return 1


def main() -> None:
    sys.exit(run())
