"""Run and synthetic-corpus configuration."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

from .errors import ParseError, ValidationError


@dataclass(frozen=True)
class RunConfig:
    seed: int
    transcripts: str = "transcripts.jsonl"
    prices: str = "prices.csv"
    embeddings: str = "embeddings.txt"
    stop_words: str | None = None
    out_dir: str = "runs"

    component: str = "answer"
    n_max: int = 300
    min_sentences: int = 10
    min_frequency: int = 4
    n_test: int = 5
    embed_dim: int | None = None

    industry_dim: int = 16
    hidden: tuple = (64, 64)
    dropout: float = 0.5
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    val_fraction: float = 0.1

    ma_window: int = 60
    baseline_l2: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")
        if self.component not in ("answer", "presentation"):
            raise ValidationError("component must be 'answer' or 'presentation'")
        checks = [
            (self.n_max >= 1, "n_max must be >= 1"),
            (1 <= self.min_sentences <= self.n_max, "min_sentences must lie in [1, n_max]"),
            (self.min_frequency >= 1, "min_frequency must be >= 1"),
            (self.n_test >= 1, "n_test must be >= 1"),
            (self.embed_dim is None or self.embed_dim >= 1, "embed_dim must be positive"),
            (self.industry_dim >= 1, "industry_dim must be >= 1"),
            (len(self.hidden) >= 1 and min(self.hidden) >= 1, "hidden widths must be positive"),
            (0.0 <= self.dropout < 1.0, "dropout must lie in [0, 1)"),
            (0.0 <= self.learning_rate <= 1.0, "learning_rate must lie in [0, 1]"),
            (self.batch_size >= 2, "batch_size must be >= 2"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (0.0 <= self.val_fraction < 1.0, "val_fraction must lie in [0, 1)"),
            (self.ma_window >= 1, "ma_window must be >= 1"),
            (self.baseline_l2 >= 0, "baseline_l2 must be >= 0"),
        ]
        for ok, message in checks:
            if not ok:
                raise ValidationError(message)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def snapshot(self):
        """Settings that determine results (the output location does not)."""
        d = self.to_dict()
        del d["out_dir"]
        for key in ("transcripts", "prices", "embeddings", "stop_words"):
            if d[key] is not None:
                d[key] = os.path.basename(d[key])
        return d

    def hash(self):
        blob = json.dumps(self.snapshot(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def load_run_config(path=None, overrides=None) -> RunConfig:
    """Read a JSON config; relative paths resolve against its directory.
    Non-None `overrides` replace file values."""
    data = {}
    base = "."
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"config is not valid JSON: {exc.msg}", exc.lineno) from None
        base = os.path.dirname(os.path.abspath(path))
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    if "seed" not in data:
        raise ValidationError("a seed is required (config file or --seed)")
    for key in ("transcripts", "prices", "embeddings", "stop_words"):
        if data.get(key) is not None and not os.path.isabs(data[key]):
            data[key] = os.path.join(base, data[key])
    try:
        return RunConfig(**data)
    except TypeError as exc:
        raise ValidationError(str(exc)) from None


UP_TOKENS = ("surge", "beat", "record", "robust", "upbeat")
DOWN_TOKENS = ("miss", "decline", "weak", "shortfall", "headwind")


@dataclass(frozen=True)
class SyntheticSpec:
    n_companies: int = 100
    transcripts_per_company: int = 10
    sentences_min: int = 15
    sentences_max: int = 30
    signal_sentences: int = 5
    up_tokens: tuple = UP_TOKENS
    down_tokens: tuple = DOWN_TOKENS
    strength: float = 0.9
    price_noise: float = 0.01
    embed_dim: int = 8
    n_filler: int = 300
    seed: int = 7

    def __post_init__(self):
        object.__setattr__(self, "up_tokens", tuple(self.up_tokens))
        object.__setattr__(self, "down_tokens", tuple(self.down_tokens))
        if self.n_companies < 1 or self.transcripts_per_company < 1:
            raise ValidationError("need at least one company and one transcript per company")
        if not 0.0 <= self.strength <= 1.0:
            raise ValidationError("strength must lie in [0, 1]")
        if set(self.up_tokens) & set(self.down_tokens):
            raise ValidationError("up and down signal tokens must be disjoint")
        if not self.up_tokens or not self.down_tokens:
            raise ValidationError("signal token lists must be non-empty")
        if not 1 <= self.sentences_min <= self.sentences_max:
            raise ValidationError("need 1 <= sentences_min <= sentences_max")
        if not 0 <= self.signal_sentences <= self.sentences_min:
            raise ValidationError("signal_sentences must lie in [0, sentences_min]")
        if self.price_noise < 0 or self.embed_dim < 2 or self.n_filler < 10:
            raise ValidationError("price_noise >= 0, embed_dim >= 2, n_filler >= 10 required")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["up_tokens"] = list(self.up_tokens)
        d["down_tokens"] = list(self.down_tokens)
        return d
