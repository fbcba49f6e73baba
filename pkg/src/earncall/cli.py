"""Command-line entry point.

    earncall synth     --out DIR [--seed N] [--strength S] ...
    earncall train     --config PATH [--seed N] [--out DIR]
    earncall evaluate  --config PATH --checkpoint PATH [--out DIR]
    earncall baseline  --config PATH --method mr|tfidf|log1p [--out DIR]
    earncall gradcheck [--config PATH] [--seed N] [--seeds K] [--out DIR]
    earncall predict   --config PATH --checkpoint PATH --transcript PATH

Exit codes: 0 ok, 2 missing file, 3 parse error, 4 validation error,
5 internal invariant violation.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import sys

import numpy as np

from . import baselines, corpus, model as nn, pipeline
from .checkpoint import load_checkpoint, save_checkpoint
from .config import SyntheticSpec, load_run_config
from .errors import EarncallError, InvariantError, ValidationError
from .evaluation import evaluate, format_report, metrics_document, write_metrics
from .labels import Unresolvable
from .synth import write_corpus

log = logging.getLogger("earncall")

GRADCHECK_TOLERANCE = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ValidationError.exit_code, f"{self.prog}: error: {message}\n")


def _now():
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _run_config(args):
    overrides = {
        "seed": args.seed,
        "out_dir": args.out,
        "epochs": getattr(args, "epochs", None),
        "learning_rate": getattr(args, "learning_rate", None),
        "batch_size": getattr(args, "batch_size", None),
        "component": getattr(args, "component", None),
    }
    if args.config is not None and not os.path.exists(args.config):
        raise FileNotFoundError(f"config file not found: {args.config}")
    return load_run_config(args.config, overrides)


def _out_dir(cfg):
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def _predict_labels(model, examples):
    logits = nn.predict_logits(model, examples)
    return [int(p > 0.5) for p in nn.sigmoid(logits)]


# ---------------------------------------------------------------------------


def cmd_synth(args):
    fields = {
        "n_companies": args.companies,
        "transcripts_per_company": args.transcripts,
        "strength": args.strength,
        "embed_dim": args.embed_dim,
        "seed": args.seed,
    }
    spec = SyntheticSpec(**{k: v for k, v in fields.items() if v is not None})
    paths = write_corpus(spec, args.out or "synthetic")
    print(f"wrote {paths.transcripts}, {paths.prices}, {paths.embeddings}")
    print(f"run config: {paths.config}")
    return 0


def cmd_train(args):
    cfg = _run_config(args)
    prep = pipeline.prepare(cfg)
    out = _out_dir(cfg)
    train_set = prep.encoded(prep.train)
    test_set = prep.encoded(prep.test)
    if not test_set:
        raise ValidationError("holdout produced an empty test set")
    model, train_log = nn.train(train_set, pipeline.train_config(cfg), pipeline.model_config(cfg, prep.table))

    save_checkpoint(
        os.path.join(out, "checkpoint.bin"),
        model,
        vocab_hash=prep.vocab.hash(),
        embedding_hash=prep.table.file_hash,
        run_config=cfg.snapshot(),
    )
    report = evaluate(_predict_labels(model, test_set), prep.test)
    doc = metrics_document(
        report,
        config_hash=cfg.hash(),
        dataset_hash=prep.dataset_hash,
        created_at=_now(),
        extra={
            "command": "train",
            "n_train": len(prep.train),
            "n_test": len(prep.test),
            "n_excluded": len(prep.exclusions),
            "vocab_size": len(prep.vocab),
            "embedding_coverage": prep.table.coverage,
            "selected_epoch": train_log["selected_epoch"],
            "history": train_log["epochs"],
        },
    )
    write_metrics(os.path.join(out, "metrics.json"), doc)
    print(format_report(report, "attention model, holdout"))
    return 0


def _load_model(args, prep):
    if not os.path.exists(args.checkpoint):
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    model, _ = load_checkpoint(args.checkpoint, vocab_hash=prep.vocab.hash(), embedding_hash=prep.table.file_hash)
    return model


def cmd_evaluate(args):
    cfg = _run_config(args)
    prep = pipeline.prepare(cfg)
    model = _load_model(args, prep)
    report = evaluate(_predict_labels(model, prep.encoded(prep.test)), prep.test)
    doc = metrics_document(
        report, config_hash=cfg.hash(), dataset_hash=prep.dataset_hash, created_at=_now(),
        extra={"command": "evaluate", "n_test": len(prep.test)},
    )
    write_metrics(os.path.join(_out_dir(cfg), "evaluate_metrics.json"), doc)
    print(format_report(report, "attention model, holdout"))
    return 0


def cmd_baseline(args):
    cfg = _run_config(args)
    prep = pipeline.prepare(cfg)
    extra = {"command": "baseline", "method": args.method}
    if args.method == "mr":
        preds, kept = [], []
        for ex in prep.test:
            y_hat = baselines.mean_reversion_predict(prep.prices[ex.ticker], ex.day, cfg.ma_window)
            if isinstance(y_hat, Unresolvable):
                continue
            preds.append(y_hat)
            kept.append(ex)
        extra.update(ma_window=cfg.ma_window, n_unresolvable=len(prep.test) - len(kept))
        test = kept
    else:
        dim = len(prep.vocab)
        docs_train = [ex.sequence.tokens() for ex in prep.train]
        docs_test = [ex.sequence.tokens() for ex in prep.test]
        if args.method == "tfidf":
            idf = baselines.build_idf(docs_train)
            featurize = lambda doc: baselines.tfidf_vector(doc, idf, dim)  # noqa: E731
        else:
            featurize = lambda doc: baselines.log1p_vector(doc, dim)  # noqa: E731
        x_train = [featurize(d) for d in docs_train]
        x_test = [featurize(d) for d in docs_test]
        y_train = [ex.label for ex in prep.train]
        lr = baselines.baseline_train(x_train, y_train, l2=cfg.baseline_l2, seed=cfg.seed)
        preds = [baselines.baseline_predict(lr, x) for x in x_test]
        test = prep.test
        extra.update(learner="l2-logistic-regression", l2=cfg.baseline_l2)
        if args.export_features:
            with open(os.path.join(_out_dir(cfg), f"features_{args.method}_train.txt"), "w", encoding="utf-8") as fh:
                baselines.write_feature_matrix(fh, x_train, y_train)
            with open(os.path.join(_out_dir(cfg), f"features_{args.method}_test.txt"), "w", encoding="utf-8") as fh:
                baselines.write_feature_matrix(fh, x_test, [ex.label for ex in prep.test])
    report = evaluate(preds, test)
    extra["n_test"] = len(test)
    doc = metrics_document(report, config_hash=cfg.hash(), dataset_hash=prep.dataset_hash, created_at=_now(), extra=extra)
    write_metrics(os.path.join(_out_dir(cfg), f"baseline_{args.method}.json"), doc)
    print(format_report(report, f"baseline {args.method}, holdout"))
    return 0


def cmd_gradcheck(args):
    base_seed = args.seed if args.seed is not None else 0
    if args.config is not None:
        base_seed = _run_config(args).seed if args.seed is None else args.seed
    hidden = tuple(int(h) for h in args.hidden.split(","))
    results = []
    for k in range(args.seeds):
        model, batch, labels = nn.random_gradcheck_case(
            base_seed + k, args.embed_dim, args.industry_dim, args.sentences, args.batch, hidden
        )
        err = nn.grad_check(model, batch, labels, eps=args.eps, seed=base_seed + k)
        results.append({"seed": base_seed + k, "max_relative_error": err})
        print(f"seed {base_seed + k:>4}  max relative error {err:.3e}")
    worst = max(r["max_relative_error"] for r in results)
    print(f"max relative error over {args.seeds} seeds: {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:g})")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_metrics(
            os.path.join(args.out, "gradcheck.json"),
            {"format_version": 1, "eps": args.eps, "tolerance": GRADCHECK_TOLERANCE,
             "max_relative_error": worst, "seeds": results, "created_at": _now()},
        )
    if worst >= GRADCHECK_TOLERANCE:
        raise InvariantError(f"gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:g}")
    return 0


def cmd_predict(args):
    cfg = _run_config(args)
    if not os.path.exists(args.transcript):
        raise FileNotFoundError(f"transcript file not found: {args.transcript}")
    transcripts = corpus.parse_transcript_file(args.transcript)
    if len(transcripts) != 1:
        raise ValidationError(f"expected exactly one transcript, found {len(transcripts)}")
    t = transcripts[0]
    prep = pipeline.prepare(cfg)
    model = _load_model(args, prep)
    seq = corpus.prepare_answer_sequence(t, prep.vocab, cfg.n_max, cfg.min_sentences, pipeline.component_kind(cfg))
    if isinstance(seq, corpus.Skipped):
        raise ValidationError(
            f"transcript has {seq.sentence_count} usable sentences, fewer than {cfg.min_sentences}"
        )
    V = pipeline.encode_sequence(seq, prep.table)
    if len(V) == 0:
        raise ValidationError("no sentence of the transcript has an embedded token")
    prob, label = nn.predict(model, V, t.sector)
    print(json.dumps({"company_id": t.company_id, "call_date": t.call_date.isoformat(),
                      "probability": prob, "label": label}))
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="earncall", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--strength", type=float)
    p.add_argument("--companies", type=int)
    p.add_argument("--transcripts", type=int)
    p.add_argument("--embed-dim", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the attention model")
    common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--component", choices=["answer", "presentation"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the holdout")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="run a baseline on the holdout")
    common(p)
    p.add_argument("--method", choices=["mr", "tfidf", "log1p"], required=True)
    p.add_argument("--export-features", action="store_true")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    common(p, config_required=False)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--embed-dim", type=int, default=4)
    p.add_argument("--industry-dim", type=int, default=3)
    p.add_argument("--sentences", type=int, default=5)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--hidden", default="16,16")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("predict", help="score one transcript")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--transcript", required=True)
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EarncallError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # anything unexpected is an internal fault
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return InvariantError.exit_code


if __name__ == "__main__":
    sys.exit(main())
