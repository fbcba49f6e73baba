"""Transcript ingestion and text preprocessing.

Transcripts arrive as JSONL, one call per line. From each call we keep the
text of one component kind (Answer by default), split it into sentences,
tokenize, and map tokens onto a vocabulary built from the training split.
"""

from __future__ import annotations

import datetime as dt
import enum
import hashlib
import io
import json
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

from .errors import ParseError, ValidationError

N_SECTORS = 11


class ComponentKind(enum.Enum):
    PRESENTATION_OPERATOR_MESSAGE = "presentation_operator_message"
    PRESENTATION = "presentation"
    QUESTION = "question"
    ANSWER = "answer"


@dataclass(frozen=True)
class TranscriptComponent:
    kind: ComponentKind
    text: str
    order_index: int


@dataclass(frozen=True)
class RawTranscript:
    company_id: str
    ticker: str
    call_date: dt.date
    sector: int
    components: tuple[TranscriptComponent, ...]

    def __post_init__(self):
        if not 0 <= self.sector < N_SECTORS:
            raise ValidationError(f"sector {self.sector} outside 0..{N_SECTORS - 1}")
        indices = [c.order_index for c in self.components]
        if indices != list(range(len(indices))):
            raise ValidationError("component order_index values must be 0..n-1 in order")

    @property
    def key(self):
        return (self.company_id, self.call_date)


# ---------------------------------------------------------------------------
# parsing


def _parse_date(value, line):
    if not isinstance(value, str):
        raise ParseError("call_date must be a YYYY-MM-DD string", line)
    try:
        return dt.date.fromisoformat(value)
    except ValueError:
        raise ParseError(f"invalid call_date {value!r}", line) from None


def _parse_record(obj, line):
    if not isinstance(obj, dict):
        raise ParseError("expected a JSON object", line)
    for name in ("company_id", "ticker", "call_date", "sector", "components"):
        if name not in obj:
            raise ParseError(f"missing field {name!r}", line)
    for name in ("company_id", "ticker"):
        if not isinstance(obj[name], str):
            raise ParseError(f"{name} must be a string", line)
    sector = obj["sector"]
    if isinstance(sector, bool) or not isinstance(sector, int):
        raise ParseError("sector must be an integer", line)
    if not 0 <= sector < N_SECTORS:
        raise ParseError(f"sector {sector} outside 0..{N_SECTORS - 1}", line)
    if not isinstance(obj["components"], list):
        raise ParseError("components must be an array", line)

    components = []
    for i, comp in enumerate(obj["components"]):
        if not isinstance(comp, dict) or "kind" not in comp or "text" not in comp:
            raise ParseError(f"component {i} needs 'kind' and 'text'", line)
        try:
            kind = ComponentKind(comp["kind"])
        except ValueError:
            raise ParseError(f"unknown component kind {comp['kind']!r}", line) from None
        if not isinstance(comp["text"], str):
            raise ParseError(f"component {i} text must be a string", line)
        components.append(TranscriptComponent(kind, comp["text"], i))

    return RawTranscript(
        company_id=obj["company_id"],
        ticker=obj["ticker"],
        call_date=_parse_date(obj["call_date"], line),
        sector=sector,
        components=tuple(components),
    )


def parse_transcript_file(data) -> list[RawTranscript]:
    """Parse transcript JSONL from bytes, a text/binary stream or a path.

    Blank lines are ignored. Errors carry the 1-based line number.
    """
    if isinstance(data, (bytes, bytearray)):
        text = bytes(data).decode("utf-8")
    elif isinstance(data, str):
        with open(data, encoding="utf-8") as fh:
            text = fh.read()
    elif hasattr(data, "__fspath__"):
        with open(data, encoding="utf-8") as fh:
            text = fh.read()
    else:
        raw = data.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw

    out = []
    for lineno, line in enumerate(io.StringIO(text), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed JSON: {exc.msg}", lineno) from None
        out.append(_parse_record(obj, lineno))
    return out


def transcript_to_json(t: RawTranscript) -> str:
    return json.dumps(
        {
            "company_id": t.company_id,
            "ticker": t.ticker,
            "call_date": t.call_date.isoformat(),
            "sector": t.sector,
            "components": [{"kind": c.kind.value, "text": c.text} for c in t.components],
        },
        ensure_ascii=False,
    )


def extract_component_text(t: RawTranscript, kind=ComponentKind.ANSWER) -> list[str]:
    kind = ComponentKind(kind)
    return [c.text for c in t.components if c.kind is kind]


# ---------------------------------------------------------------------------
# sentences and tokens

ABBREVIATIONS = frozenset(
    ["mr.", "ms.", "dr.", "inc.", "corp.", "approx.", "vs.", "u.s.", "q1.", "q2.", "q3.", "q4."]
)
_TERMINATORS = ".!?"


def _word_before(text, end):
    start = end
    while start > 0 and not text[start - 1].isspace():
        start -= 1
    word = text[start : end + 1].lower()
    # leading brackets/quotes are not part of an abbreviation
    i = 0
    while i < len(word) and not word[i].isalnum():
        i += 1
    return word[i:]


def split_sentences(text: str) -> list[str]:
    """Split after '.', '!' or '?' when followed by whitespace and then an
    uppercase letter or a digit, except after a known abbreviation."""
    sentences = []
    start = 0
    n = len(text)
    for i, ch in enumerate(text):
        if ch not in _TERMINATORS or i + 1 >= n or not text[i + 1].isspace():
            continue
        j = i + 1
        while j < n and text[j].isspace():
            j += 1
        if j == n or not (text[j].isupper() or text[j].isdigit()):
            continue
        if ch == "." and _word_before(text, i) in ABBREVIATIONS:
            continue
        piece = text[start : i + 1].strip()
        if piece:
            sentences.append(piece)
        start = i + 1
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def _strippable(ch):
    return ch != "%" and unicodedata.category(ch).startswith("P")


def _clean_token(raw):
    lo, hi = 0, len(raw)
    while lo < hi and _strippable(raw[lo]):
        lo += 1
    while hi > lo and _strippable(raw[hi - 1]):
        hi -= 1
    return raw[lo:hi]


def tokenize(sentence: str, stop_words=frozenset()) -> list[str]:
    """Lowercase whitespace tokens with boundary punctuation removed.

    '$' and '%' survive at token edges and any symbol survives inside a
    token, so "$1.2B" becomes "$1.2b". Tokens without a letter or digit and
    stop words are dropped.
    """
    tokens = []
    for raw in sentence.lower().split():
        tok = _clean_token(raw)
        if not tok or tok in stop_words:
            continue
        if not any(c.isalnum() for c in tok):
            continue
        tokens.append(tok)
    return tokens


def load_stop_words(path=None) -> frozenset[str]:
    """Read a one-token-per-line stop-word file; the bundled list by default."""
    if path is None:
        text = resources.files("earncall").joinpath("data/stop_words.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


def tokenize_transcript(t: RawTranscript, stop_words, kind=ComponentKind.ANSWER) -> list[list[str]]:
    """Tokenized non-empty sentences of every component of `kind`, in order."""
    out = []
    for block in extract_component_text(t, kind):
        for sentence in split_sentences(block):
            tokens = tokenize(sentence, stop_words)
            if tokens:
                out.append(tokens)
    return out


# ---------------------------------------------------------------------------
# vocabulary


@dataclass(frozen=True)
class Vocabulary:
    token_to_id: dict
    frequencies: dict
    min_frequency: int
    stop_words: frozenset = field(repr=False)

    def __len__(self):
        return len(self.token_to_id)

    def __contains__(self, token):
        return token in self.token_to_id

    @property
    def tokens(self) -> list[str]:
        return sorted(self.token_to_id, key=self.token_to_id.__getitem__)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        ids = self.token_to_id
        return [ids[t] for t in tokens if t in ids]

    def hash(self) -> str:
        h = hashlib.sha256()
        h.update(f"min_frequency={self.min_frequency}\n".encode())
        for tok in self.tokens:
            h.update(f"{tok}\t{self.frequencies[tok]}\n".encode("utf-8"))
        h.update("\n".join(sorted(self.stop_words)).encode("utf-8"))
        return h.hexdigest()


def build_vocabulary(corpus: Sequence[Sequence[str]], min_frequency=4, stop_words=frozenset()) -> Vocabulary:
    """Count tokens over training documents and keep the frequent ones.

    Ids go to tokens by descending frequency, ties broken lexicographically.
    """
    if not corpus:
        raise ValidationError("cannot build a vocabulary from an empty corpus")
    if min_frequency < 1:
        raise ValidationError("min_frequency must be >= 1")
    counts = Counter()
    for doc in corpus:
        counts.update(doc)
    kept = sorted(
        ((tok, n) for tok, n in counts.items() if n >= min_frequency and tok not in stop_words),
        key=lambda item: (-item[1], item[0]),
    )
    return Vocabulary(
        token_to_id={tok: i for i, (tok, _) in enumerate(kept)},
        frequencies={tok: n for tok, n in kept},
        min_frequency=min_frequency,
        stop_words=frozenset(stop_words),
    )


# ---------------------------------------------------------------------------
# answer sequences


@dataclass(frozen=True)
class AnswerSequence:
    sentences: tuple[tuple[int, ...], ...]
    original_sentence_count: int
    company_id: str
    call_date: dt.date

    def __len__(self):
        return len(self.sentences)

    def tokens(self) -> list[int]:
        return [tok for sent in self.sentences for tok in sent]


@dataclass(frozen=True)
class Skipped:
    reason: str
    sentence_count: int
    company_id: str
    call_date: dt.date


TOO_SHORT = "TooShort"


def prepare_answer_sequence(
    t: RawTranscript,
    vocab: Vocabulary,
    n_max=300,
    min_sentences=10,
    kind=ComponentKind.ANSWER,
):
    """Map a transcript to vocabulary ids, one tuple per sentence.

    Sentences left empty after stop-word and out-of-vocabulary filtering are
    dropped before the length floor is applied. Long answers keep their
    first `n_max` sentences. Returns `Skipped` below the floor.
    """
    sentences = []
    for tokens in tokenize_transcript(t, vocab.stop_words, kind):
        ids = tuple(vocab.encode(tokens))
        if ids:
            sentences.append(ids)
    if len(sentences) < min_sentences:
        return Skipped(TOO_SHORT, len(sentences), t.company_id, t.call_date)
    return AnswerSequence(
        sentences=tuple(sentences[:n_max]),
        original_sentence_count=len(sentences),
        company_id=t.company_id,
        call_date=t.call_date,
    )
