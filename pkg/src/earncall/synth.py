"""Synthetic corpora with a planted, controllable signal.

Each transcript gets a latent up/down label. A fixed number of its answer
sentences carry one signal token; with probability (1 + strength) / 2 the
token comes from the list matching the label, otherwise from the opposite
list. strength=1 plants only matching tokens, strength=0 makes the tokens
independent of the label. The next-session close moves by a factor
1 +/- delta (delta in [0.001, 0.02]) in the label's direction, so the
movement label always equals the latent one.

Signal tokens share a large "salience" coordinate and sit at +/-2 on a
"direction" coordinate. Filler words have low salience but noisy
direction values, so averaging every sentence blurs the signal while
attending to salient sentences recovers it.
"""

from __future__ import annotations

import datetime as dt
import json
import os
from dataclasses import dataclass

import numpy as np

from .config import SyntheticSpec
from .corpus import load_stop_words

START = dt.date(2015, 1, 5)  # a Monday
HISTORY_SESSIONS = 90
CALL_SPACING = 63

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class SynthPaths:
    transcripts: str
    prices: str
    embeddings: str
    spec: str
    config: str


def _filler_words(rng, n, banned):
    syllables = [c + v for c in _CONSONANTS for v in _VOWELS]
    words = []
    seen = set(banned)
    while len(words) < n:
        k = 2 + int(rng.integers(2))
        w = "".join(syllables[i] for i in rng.integers(len(syllables), size=k))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _sentence(rng, filler, lo, hi, extra=None):
    words = [filler[i] for i in rng.integers(len(filler), size=int(rng.integers(lo, hi + 1)))]
    if extra is not None:
        words.insert(int(rng.integers(len(words) + 1)), extra)
    return words[0].capitalize() + " " + " ".join(words[1:]) + "."


def _trading_days(n):
    days, day = [], START
    while len(days) < n:
        if day.weekday() < 5:
            days.append(day)
        day += dt.timedelta(days=1)
    return days


def _fmt(x):
    return f"{x:.6f}"


def generate(spec: SyntheticSpec):
    """Build the corpus in memory.

    Returns (transcript records, price rows, embedding lines, latent labels).
    """
    rng = np.random.default_rng(spec.seed)
    stop = load_stop_words()
    signal = set(spec.up_tokens) | set(spec.down_tokens)
    filler = _filler_words(rng, spec.n_filler, stop | signal)

    n_sessions = HISTORY_SESSIONS + spec.transcripts_per_company * CALL_SPACING + 10
    days = _trading_days(n_sessions)
    p_match = (1.0 + spec.strength) / 2.0

    records, price_rows, latent = [], [], []
    for c in range(spec.n_companies):
        company, ticker = f"C{c:03d}", f"SYN{c:03d}"
        sector = int(rng.integers(11))
        call_sessions = [
            HISTORY_SESSIONS + j * CALL_SPACING + int(rng.integers(-5, 6))
            for j in range(spec.transcripts_per_company)
        ]
        labels = rng.integers(2, size=len(call_sessions))
        forced = {}
        for t, y in zip(call_sessions, labels):
            forced[t + 1] = (t, int(y), float(rng.uniform(0.001, 0.02)))

        closes = [round(float(rng.uniform(20.0, 100.0)), 6)]
        for t in range(1, n_sessions):
            if t in forced:
                base, y, delta = forced[t]
                value = closes[base] * (1.0 + delta if y else 1.0 - delta)
            else:
                value = closes[-1] * float(np.exp(spec.price_noise * rng.standard_normal()))
            closes.append(round(value, 6))
        for t, y in zip(call_sessions, labels):
            assert (closes[t + 1] > closes[t]) == bool(y)
        price_rows.extend((ticker, day.isoformat(), _fmt(v)) for day, v in zip(days, closes))

        for t, y in zip(call_sessions, labels):
            session = days[t]
            # calls on Monday sessions sometimes land on the weekend before
            back = int(rng.integers(3)) if session.weekday() == 0 else 0
            call_date = session - dt.timedelta(days=back)

            n_sent = int(rng.integers(spec.sentences_min, spec.sentences_max + 1))
            planted = set(rng.choice(n_sent, size=spec.signal_sentences, replace=False).tolist())
            sentences = []
            for i in range(n_sent):
                if i in planted:
                    match = rng.random() < p_match
                    up = bool(y) == match
                    pool = spec.up_tokens if up else spec.down_tokens
                    token = pool[int(rng.integers(len(pool)))]
                    sentences.append(_sentence(rng, filler, 5, 10, token))
                else:
                    sentences.append(_sentence(rng, filler, 6, 12))

            n_blocks = int(rng.integers(2, 5))
            cuts = np.array_split(np.arange(n_sent), n_blocks)
            components = [
                {"kind": "presentation_operator_message", "text": "Welcome to the quarterly call."},
                {"kind": "presentation", "text": " ".join(_sentence(rng, filler, 6, 12) for _ in range(4))},
            ]
            for idx in cuts:
                q = _sentence(rng, filler, 5, 9)[:-1] + "?"
                components.append({"kind": "question", "text": q})
                components.append({"kind": "answer", "text": " ".join(sentences[i] for i in idx)})
            records.append(
                {
                    "company_id": company,
                    "ticker": ticker,
                    "call_date": call_date.isoformat(),
                    "sector": sector,
                    "components": components,
                }
            )
            latent.append(int(y))

    vectors = []
    d = spec.embed_dim
    for w in filler:
        v = rng.normal(0.0, 0.5, size=d)
        v[0] = rng.normal(0.0, 0.7)  # direction noise: uniform pooling over fillers is unreliable
        v[1] = rng.normal(-0.5, 0.2)  # low salience
        vectors.append((w, v))
    for w in spec.up_tokens + spec.down_tokens:
        v = rng.normal(0.0, 0.3, size=d)
        v[0] = 2.0 if w in spec.up_tokens else -2.0
        v[1] = 2.0
        vectors.append((w, v))
    # rows for tokens the corpus never uses
    for w in _filler_words(rng, 20, stop | signal | set(filler)):
        vectors.append((w, rng.normal(0.0, 0.5, size=d)))
    emb_lines = [w + " " + " ".join(_fmt(x) for x in v) for w, v in vectors]
    return records, price_rows, emb_lines, latent


def write_corpus(spec: SyntheticSpec, out_dir) -> SynthPaths:
    os.makedirs(out_dir, exist_ok=True)
    records, price_rows, emb_lines, _ = generate(spec)
    paths = SynthPaths(
        transcripts=os.path.join(out_dir, "transcripts.jsonl"),
        prices=os.path.join(out_dir, "prices.csv"),
        embeddings=os.path.join(out_dir, "embeddings.txt"),
        spec=os.path.join(out_dir, "synth_spec.json"),
        config=os.path.join(out_dir, "config.json"),
    )
    with open(paths.transcripts, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")
    with open(paths.prices, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("ticker,date,close\n")
        for row in price_rows:
            fh.write(",".join(row) + "\n")
    with open(paths.embeddings, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(emb_lines) + "\n")
    with open(paths.spec, "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    run_config = {
        "seed": spec.seed,
        "transcripts": "transcripts.jsonl",
        "prices": "prices.csv",
        "embeddings": "embeddings.txt",
        "embed_dim": spec.embed_dim,
        "hidden": [16, 16],
        "industry_dim": 4,
        "dropout": 0.2,
        "learning_rate": 0.003,
        "batch_size": 32,
        "epochs": 60,
    }
    with open(paths.config, "w", encoding="utf-8") as fh:
        json.dump(run_config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
