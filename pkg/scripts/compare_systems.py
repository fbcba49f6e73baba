"""Sweep the synthetic signal strength and compare every system on the holdout.

    python scripts/compare_systems.py --strengths 0.0 0.3 0.6 0.9 --out runs/sweep

For each strength a corpus is generated, the attention model is trained with
the corpus run config and the three baselines are fitted. The script prints
one accuracy / MCC table and writes it to `<out>/summary.json`.
"""

import argparse
import json
import os

import numpy as np

from earncall import baselines, model as nn, pipeline
from earncall.config import DOWN_TOKENS, UP_TOKENS, SyntheticSpec, load_run_config
from earncall.evaluation import evaluate
from earncall.labels import Unresolvable
from earncall.synth import write_corpus


def attention_row(prep, cfg):
    train_set, test_set = prep.encoded(prep.train), prep.encoded(prep.test)
    model, log = nn.train(train_set, pipeline.train_config(cfg), pipeline.model_config(cfg, prep.table))
    preds = [int(p > 0.5) for p in nn.sigmoid(nn.predict_logits(model, test_set))]
    ids = {prep.vocab.token_to_id[t] for t in UP_TOKENS + DOWN_TOKENS if t in prep.vocab}
    ratio = pipeline.signal_attention_ratio(model, prep.test, ids, prep.table)
    return evaluate(preds, prep.test), {"attention_ratio": ratio, "selected_epoch": log["selected_epoch"]}


def mr_row(prep, cfg):
    preds, kept = [], []
    for ex in prep.test:
        y = baselines.mean_reversion_predict(prep.prices[ex.ticker], ex.day, cfg.ma_window)
        if not isinstance(y, Unresolvable):
            preds.append(y)
            kept.append(ex)
    return evaluate(preds, kept), {"n_scored": len(kept)}


def bow_row(prep, cfg, method):
    dim = len(prep.vocab)
    train_docs = [ex.sequence.tokens() for ex in prep.train]
    if method == "tfidf":
        idf = baselines.build_idf(train_docs)
        featurize = lambda doc: baselines.tfidf_vector(doc, idf, dim)  # noqa: E731
    else:
        featurize = lambda doc: baselines.log1p_vector(doc, dim)  # noqa: E731
    lr = baselines.baseline_train([featurize(d) for d in train_docs], [ex.label for ex in prep.train], cfg.baseline_l2)
    preds = [baselines.baseline_predict(lr, featurize(ex.sequence.tokens())) for ex in prep.test]
    return evaluate(preds, prep.test), {}


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--strengths", type=float, nargs="+", default=[0.0, 0.3, 0.6, 0.9])
    ap.add_argument("--companies", type=int, default=100)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default="runs/sweep")
    args = ap.parse_args()

    rows = []
    for s in args.strengths:
        data_dir = os.path.join(args.out, f"strength_{s:.2f}")
        paths = write_corpus(SyntheticSpec(n_companies=args.companies, strength=s, seed=args.seed), data_dir)
        cfg = load_run_config(paths.config)
        prep = pipeline.prepare(cfg)
        systems = {
            "attention": attention_row(prep, cfg),
            "mr": mr_row(prep, cfg),
            "tfidf": bow_row(prep, cfg, "tfidf"),
            "log1p": bow_row(prep, cfg, "log1p"),
        }
        for name, (report, extra) in systems.items():
            rows.append({"strength": s, "system": name, "accuracy": report.accuracy, "mcc": report.mcc,
                         "n_test": report.counts.total, **extra})

    print(f"{'strength':>8}  {'system':<10}{'acc':>8}{'mcc':>8}{'n':>6}  note")
    for r in rows:
        note = f"attention/uniform {r['attention_ratio']:.2f}" if "attention_ratio" in r else ""
        print(f"{r['strength']:>8.2f}  {r['system']:<10}{r['accuracy']:>8.4f}{r['mcc']:>8.4f}{r['n_test']:>6}  {note}")

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2, default=lambda x: float(x) if isinstance(x, np.floating) else str(x))
        fh.write("\n")


if __name__ == "__main__":
    main()
