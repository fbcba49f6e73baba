"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with `pytest tests/test_acceptance.py -v`.
"""

import contextlib
import datetime as dt
import json
import math
import time

import numpy as np
import pytest

from earncall import model as nn
from earncall import pipeline
from earncall.baselines import build_idf, log1p_vector, mean_reversion_predict, tfidf_vector
from earncall.cli import main
from earncall.config import DOWN_TOKENS, UP_TOKENS, SyntheticSpec, load_run_config
from earncall.corpus import (
    AnswerSequence,
    ComponentKind,
    RawTranscript,
    Skipped,
    TranscriptComponent,
    build_vocabulary,
    prepare_answer_sequence,
)
from earncall.evaluation import ConfusionCounts, holdout_split, mcc
from earncall.labels import PriceSeries
from earncall.synth import write_corpus


@pytest.fixture()
def criterion(capsys):
    """Yields a recorder; prints `criterion N: PASS|FAIL ...` on exit."""

    @contextlib.contextmanager
    def record(number, title):
        notes = []
        start = time.perf_counter()
        try:
            yield notes
        except BaseException:
            status = "FAIL"
            raise
        else:
            status = "PASS"
        finally:
            elapsed = time.perf_counter() - start
            detail = "; ".join(notes)
            with capsys.disabled():
                print(f"\ncriterion {number:>2} {status}  {title} ({elapsed:.1f}s) {detail}".rstrip())

    return record


# 1 ---------------------------------------------------------------------------


def test_01_gradient_fidelity(criterion):
    with criterion(1, "gradient check, 10 seeds") as notes:
        start = time.perf_counter()
        errors = []
        for seed in range(10):
            model, batch, labels = nn.random_gradcheck_case(seed, embed_dim=4, industry_dim=3, n_sentences=5, batch=4)
            assert batch.V.dtype == np.float64
            errors.append(nn.grad_check(model, batch, labels, eps=1e-5, seed=seed))
        elapsed = time.perf_counter() - start
        notes.append(f"max rel err {max(errors):.2e}")
        assert all(e < 1e-4 for e in errors), errors
        assert elapsed < 10.0


# 2 ---------------------------------------------------------------------------


def test_02_attention_invariants(criterion):
    with criterion(2, "attention invariants, 200 cases each") as notes:
        start = time.perf_counter()
        worst_sum = worst_bias = worst_mask = worst_perm = 0.0
        for seed in range(200):
            rng = np.random.default_rng(seed)
            N, d = int(rng.integers(1, 15)), int(rng.integers(1, 5))
            V = rng.normal(0, 2, size=(N, 2 * d))
            u = rng.normal(0, 2, size=2 * d)
            ones = np.ones(N, dtype=bool)
            alpha = nn.attention_weights(V, ones, u)
            worst_sum = max(worst_sum, abs(alpha.sum() - 1.0))

            perm = rng.permutation(N)
            E = nn.aggregate(V, alpha)
            Ep = nn.aggregate(V[perm], nn.attention_weights(V[perm], ones, u))
            worst_perm = max(worst_perm, float(np.max(np.abs(E - Ep))))

            cfg = nn.ModelConfig(embed_dim=d, industry_dim=3, hidden=(6, 5), dropout=0.5)
            model = nn.Model.init(cfg, seed)
            items = [(rng.normal(size=(int(rng.integers(1, 8)), 2 * d)), int(rng.integers(11))) for _ in range(3)]
            batch = nn.make_batch(items)
            base, _ = nn.forward(model, batch, nn.EVAL)

            shifted = model.copy()
            shifted.params["attention.b"] = shifted.params["attention.b"] + rng.normal(0, 100)
            z, _ = nn.forward(shifted, batch, nn.EVAL)
            worst_bias = max(worst_bias, float(np.max(np.abs(z - base))))

            padded = nn.make_batch(items, n_pad=batch.V.shape[1] + 4)
            padded.V[~padded.mask] = rng.normal(0, 1e3, size=int((~padded.mask).sum() * 2 * d)).reshape(-1, 2 * d)
            z, _ = nn.forward(model, padded, nn.EVAL)
            worst_mask = max(worst_mask, float(np.max(np.abs(z - base))))
        elapsed = time.perf_counter() - start
        notes.append(f"|sum-1| {worst_sum:.1e}, bias {worst_bias:.1e}, mask {worst_mask:.1e}, perm {worst_perm:.1e}")
        assert worst_sum <= 1e-6
        assert worst_bias <= 1e-12
        assert worst_mask <= 1e-12
        assert worst_perm <= 1e-12
        assert elapsed < 30.0


# 3 and 4 -----------------------------------------------------------------------


def fit_synthetic(out_dir, strength):
    paths = write_corpus(SyntheticSpec(strength=strength, seed=7), out_dir)
    cfg = load_run_config(paths.config)
    prep = pipeline.prepare(cfg)
    train_set, test_set = prep.encoded(prep.train), prep.encoded(prep.test)
    model, _ = nn.train(train_set, pipeline.train_config(cfg), pipeline.model_config(cfg, prep.table))

    def acc(examples):
        preds = nn.sigmoid(nn.predict_logits(model, examples)) > 0.5
        return float(np.mean(preds == np.array([ex.label == 1 for ex in examples])))

    return prep, model, acc(train_set), acc(test_set)


@pytest.fixture(scope="module")
def strong_fit(tmp_path_factory):
    start = time.perf_counter()
    result = fit_synthetic(tmp_path_factory.mktemp("strong"), 0.9)
    return result, time.perf_counter() - start


def test_03_end_to_end_learnability(criterion, strong_fit, tmp_path):
    with criterion(3, "synthetic learnability") as notes:
        (_, _, train_acc, test_acc), strong_time = strong_fit
        start = time.perf_counter()
        _, _, _, null_acc = fit_synthetic(tmp_path, 0.0)
        elapsed = strong_time + time.perf_counter() - start
        notes.append(f"s=0.9 train {train_acc:.4f} holdout {test_acc:.4f}; s=0.0 holdout {null_acc:.4f}")
        assert train_acc >= 0.99
        assert test_acc >= 0.90
        assert 0.45 <= null_acc <= 0.55
        assert elapsed < 300.0


def test_04_attention_on_planted_sentences(criterion, strong_fit):
    with criterion(4, "attention on planted sentences") as notes:
        (prep, model, _, _), _ = strong_fit
        ids = {prep.vocab.token_to_id[t] for t in UP_TOKENS + DOWN_TOKENS if t in prep.vocab}
        ratio = pipeline.signal_attention_ratio(model, prep.test, ids, prep.table)
        notes.append(f"mean weight / uniform = {ratio:.2f}")
        assert ratio >= 2.0


# 5 ---------------------------------------------------------------------------


def test_05_metric_correctness(criterion):
    with criterion(5, "MCC values and symmetry") as notes:
        assert mcc(ConfusionCounts(tp=10, tn=7, fp=0, fn=0)) == 1.0
        assert mcc(ConfusionCounts(tp=0, tn=0, fp=6, fn=9)) == -1.0
        assert abs(mcc(ConfusionCounts(tp=3, tn=2, fp=1, fn=2)) - 4 / math.sqrt(240)) < 1e-12
        assert abs(4 / math.sqrt(240) - 0.2582) < 1e-4
        rng = np.random.default_rng(0)
        for _ in range(1000):
            tp, tn, fp, fn = (int(x) for x in rng.integers(0, 500, size=4))
            assert mcc(ConfusionCounts(tp, tn, fp, fn)) == mcc(ConfusionCounts(tn, tp, fn, fp))
        for c in (ConfusionCounts(tp=5, fp=3), ConfusionCounts(tn=4, fn=2), ConfusionCounts(tp=1, fn=1), ConfusionCounts(tn=1, fp=1)):
            assert mcc(c) == 0.0
        notes.append("hand values, 1000 swaps, zero denominators")


# 6 ---------------------------------------------------------------------------


def brute_force(docs):
    n = len(docs)
    vocab = sorted({w for d in docs for w in d.split()})
    df = {w: sum(w in d.split() for d in docs) for w in vocab}
    rows = []
    for d in docs:
        words = d.split()
        tf = {vocab.index(w): words.count(w) * math.log(n / df[w]) for w in set(words) if df[w] < n}
        lg = {vocab.index(w): math.log(1 + words.count(w)) for w in set(words)}
        rows.append((tf, lg))
    return vocab, rows


def test_06_bag_of_words_oracle(criterion):
    with criterion(6, "TFIDF/LOG1P vs string recount, 25 corpora") as notes:
        n_vectors = 0
        for seed in range(25):
            rng = np.random.default_rng(1000 + seed)
            words = [f"tok{i}" for i in range(int(rng.integers(2, 15)))]
            docs = [" ".join(rng.choice(words, size=int(rng.integers(1, 31)))) for _ in range(int(rng.integers(1, 11)))]
            vocab, expected = brute_force(docs)
            ids = {w: i for i, w in enumerate(vocab)}
            id_docs = [[ids[w] for w in d.split()] for d in docs]
            idf = build_idf(id_docs)
            for doc, (tf, lg) in zip(id_docs, expected):
                assert tfidf_vector(doc, idf, len(vocab)).to_dict() == tf
                assert log1p_vector(doc, len(vocab)).to_dict() == lg
                n_vectors += 2
        notes.append(f"{n_vectors} vectors matched exactly")


# 7 ---------------------------------------------------------------------------


class _Item:
    def __init__(self, company_id, call_date):
        self.company_id, self.call_date = company_id, call_date


def test_07_holdout_protocol(criterion):
    with criterion(7, "holdout, counts 3..40") as notes:
        rng = np.random.default_rng(0)
        counts = list(range(3, 41))
        data = []
        for c, n in enumerate(counts):
            days = rng.choice(4000, size=n, replace=False)
            data += [_Item(f"C{c:02d}", dt.date(2001, 1, 1) + dt.timedelta(days=int(x))) for x in days]
        rng.shuffle(data)
        train, test = holdout_split(data, 5)
        for c, n in enumerate(counts):
            mine = sorted((x.call_date for x in data if x.company_id == f"C{c:02d}"))
            te = sorted(x.call_date for x in test if x.company_id == f"C{c:02d}")
            tr = sorted(x.call_date for x in train if x.company_id == f"C{c:02d}")
            k = min(n, 5)
            assert te == mine[n - k :]
            assert tr == mine[: n - k]
        notes.append(f"{len(counts)} companies, {len(test)} test / {len(train)} train")


# 8 ---------------------------------------------------------------------------


def _transcript(n_sentences):
    text = " ".join(f"Alpha beta gamma{i % 2}." for i in range(n_sentences))
    comps = (TranscriptComponent(ComponentKind.ANSWER, text, 0),)
    return RawTranscript("A", "A", dt.date(2020, 1, 6), 0, comps)


def test_08_preprocessing_rules(criterion):
    with criterion(8, "vocabulary floor, sentence floor, truncation") as notes:
        docs = [["common"] * 4 + ["three"] * 2 + ["delta", "alpha", "beta", "gamma0", "gamma1"] * 4, ["three", "rare"]]
        vocab = build_vocabulary(docs, min_frequency=4)
        assert all(f >= 4 for f in vocab.frequencies.values())
        assert "three" not in vocab and "rare" not in vocab
        assert {"common", "three", "alpha"} - set(vocab.tokens) == {"three"}

        lengths = {}
        for n in (9, 10, 11, 299, 300, 301):
            out = prepare_answer_sequence(_transcript(n), vocab)
            lengths[n] = None if isinstance(out, Skipped) else len(out)
        assert lengths == {9: None, 10: 10, 11: 11, 299: 299, 300: 300, 301: 300}
        kept = prepare_answer_sequence(_transcript(301), vocab)
        assert isinstance(kept, AnswerSequence) and kept.original_sentence_count == 301
        notes.append(str(lengths))


# 9 ---------------------------------------------------------------------------


def _series(closes):
    days = tuple(dt.date(2018, 1, 1) + dt.timedelta(days=i) for i in range(len(closes)))
    return PriceSeries("T", days, np.asarray(closes, dtype=float))


def test_09_mean_reversion(criterion):
    with criterion(9, "mean reversion shapes and scale invariance") as notes:
        shapes = [_series(np.full(60, 41.3)), _series(np.linspace(10, 30, 60)), _series(np.linspace(30, 10, 60))]
        assert [mean_reversion_predict(s, s.dates[-1]) for s in shapes] == [0, 0, 1]
        rng = np.random.default_rng(0)
        checked = 0
        for _ in range(100):
            s = _series(50 * np.exp(np.cumsum(rng.normal(0, 0.02, size=90))))
            c = float(np.exp(rng.uniform(-5, 5)))
            for day in s.dates[59:]:
                assert mean_reversion_predict(s, day) == mean_reversion_predict(s.scaled(c), day)
                checked += 1
        notes.append(f"{checked} scaled predictions agree")


# 10 --------------------------------------------------------------------------


def test_10_reproducibility(criterion, tmp_path):
    with criterion(10, "bitwise reproducible training") as notes:
        paths = write_corpus(SyntheticSpec(seed=7), tmp_path / "data")
        runs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["train", "--config", paths.config, "--out", str(out)]) == 0
            metrics = json.loads((out / "metrics.json").read_text())
            metrics.pop("created_at")
            runs.append(((out / "checkpoint.bin").read_bytes(), metrics))
        assert runs[0][0] == runs[1][0]
        assert runs[0][1] == runs[1][1]
        notes.append(f"checkpoint {len(runs[0][0])} bytes identical")
