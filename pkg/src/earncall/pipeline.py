"""End-to-end data preparation shared by the CLI commands.

Order matters for leakage: labels are resolved first, the per-company
holdout is fixed next, and only then is the vocabulary counted, on the
training side alone.
"""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import corpus, labels
from .config import RunConfig
from .corpus import ComponentKind
from .embeddings import EmbeddingTable, embed_sentence, encode_sequence, file_sha256, load_embeddings
from .errors import ValidationError
from .evaluation import holdout_split
from .model import Example, ModelConfig, TrainConfig, attention_weights

log = logging.getLogger(__name__)


@dataclass
class Prepared:
    config: RunConfig
    vocab: corpus.Vocabulary
    table: EmbeddingTable
    prices: dict
    train: list
    test: list
    exclusions: list = field(default_factory=list)
    dataset_hash: str = ""

    def encoded(self, examples):
        return [encode_example(ex, self.table) for ex in examples]


@dataclass(frozen=True)
class _Candidate:
    company_id: str
    call_date: object


def _require(path, what):
    if path is None or not os.path.exists(path):
        raise FileNotFoundError(f"{what} file not found: {path}")


def component_kind(config: RunConfig):
    return ComponentKind.ANSWER if config.component == "answer" else ComponentKind.PRESENTATION


def encode_example(ex: labels.LabeledExample, table: EmbeddingTable) -> Example:
    return Example(encode_sequence(ex.sequence, table), ex.sector, ex.label, ex.company_id, ex.call_date)


def prepare(config: RunConfig) -> Prepared:
    for path, what in ((config.transcripts, "transcripts"), (config.prices, "prices"), (config.embeddings, "embeddings")):
        _require(path, what)
    if config.stop_words is not None:
        _require(config.stop_words, "stop-word")

    transcripts = corpus.parse_transcript_file(config.transcripts)
    prices = labels.load_prices_csv(config.prices)
    stop_words = corpus.load_stop_words(config.stop_words)
    kind = component_kind(config)
    if not transcripts:
        raise ValidationError("no transcripts to work with")

    tokenized = {}
    candidates = []
    for t in transcripts:
        series = prices.get(t.ticker)
        if series is None or isinstance(labels.movement_label(series, t.call_date), labels.Unresolvable):
            continue
        sentences = corpus.tokenize_transcript(t, stop_words, kind)
        # vocabulary filtering can only shrink this count
        if len(sentences) < config.min_sentences:
            continue
        tokenized[t.key] = sentences
        candidates.append(_Candidate(t.company_id, t.call_date))
    candidates.sort(key=lambda c: (c.company_id, c.call_date))
    cand_train, cand_test = holdout_split(candidates, config.n_test)
    if not cand_train:
        raise ValidationError("holdout leaves no training transcripts")
    train_keys = {(c.company_id, c.call_date) for c in cand_train}

    docs = [[tok for sent in tokenized[k] for tok in sent] for k in sorted(train_keys)]
    vocab = corpus.build_vocabulary(docs, config.min_frequency, stop_words)

    sequences = {
        t.key: corpus.prepare_answer_sequence(t, vocab, config.n_max, config.min_sentences, kind)
        for t in transcripts
    }
    examples, exclusions = labels.build_dataset(transcripts, sequences, prices)

    table = load_embeddings(config.embeddings, vocab)
    if config.embed_dim is not None and table.dim != config.embed_dim:
        raise ValidationError(f"embedding file has d={table.dim}, config expects {config.embed_dim}")
    log.info("vocabulary %d tokens, embedding coverage %.3f", len(vocab), table.coverage)

    kept = []
    for ex in examples:
        n_embedded = len(encode_sequence(ex.sequence, table))
        if n_embedded < config.min_sentences:
            exclusions.append(
                labels.Exclusion(ex.company_id, ex.ticker, ex.call_date, f"only {n_embedded} embedded sentences")
            )
        else:
            kept.append(ex)
    train = [ex for ex in kept if (ex.company_id, ex.call_date) in train_keys]
    test = [ex for ex in kept if (ex.company_id, ex.call_date) not in train_keys]

    h = hashlib.sha256()
    for path in (config.transcripts, config.prices):
        h.update(file_sha256(path).encode())
    h.update(table.file_hash.encode())
    h.update("\n".join(sorted(stop_words)).encode("utf-8"))
    return Prepared(config, vocab, table, prices, train, test, exclusions, h.hexdigest())


def model_config(config: RunConfig, table: EmbeddingTable) -> ModelConfig:
    return ModelConfig(
        embed_dim=table.dim,
        industry_dim=config.industry_dim,
        hidden=config.hidden,
        dropout=config.dropout,
    )


def train_config(config: RunConfig) -> TrainConfig:
    return TrainConfig(
        seed=config.seed,
        batch_size=config.batch_size,
        epochs=config.epochs,
        learning_rate=config.learning_rate,
        val_fraction=config.val_fraction,
    )


def signal_attention_ratio(model, examples, signal_ids, table):
    """Mean over examples of (mean attention on sentences holding a signal
    token) * N, where N is the number of sentences. 1.0 means uniform."""
    ratios = []
    for ex in examples:
        kept = [s for s in ex.sequence.sentences if embed_sentence(s, table) is not None]
        V = np.vstack([embed_sentence(s, table) for s in kept])
        is_signal = np.array([any(t in signal_ids for t in s) for s in kept])
        if not is_signal.any():
            continue
        alpha = attention_weights(V, np.ones(len(V), dtype=bool), model.params["attention.u"])
        ratios.append(alpha[is_signal].mean() * len(V))
    return float(np.mean(ratios)) if ratios else float("nan")
