"""Comparison systems: moving-average mean reversion, and bag-of-words
TFIDF / LOG1P features with an L2-regularized logistic regression."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
import scipy.optimize
import scipy.sparse
import scipy.special

from .errors import ValidationError
from .labels import PriceSeries, Unresolvable


def mean_reversion_predict(series: PriceSeries, day, window=60):
    """1 when the close on `day` sits below its trailing `window`-session
    mean (expect a move back up), else 0. The mean includes `day` itself."""
    i = series.index_of(day)
    if i is None:
        return Unresolvable(f"{day} is not a trading day for {series.ticker}")
    if i + 1 < window:
        return Unresolvable(f"only {i + 1} sessions up to {day}, need {window}")
    closes = np.asarray(series.closes[i + 1 - window : i + 1])
    # close < mean  <=>  sum(close_j - close) > 0; a flat window sums to exactly 0
    return int(np.sum(closes - closes[-1]) > 0.0)


@dataclass(frozen=True)
class SparseFeatureVector:
    ids: np.ndarray
    weights: np.ndarray
    dim: int

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        weights = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "weights", weights)
        if ids.shape != weights.shape or ids.ndim != 1:
            raise ValidationError("ids and weights must be 1-d and equally long")
        if len(ids) and (np.any(np.diff(ids) <= 0) or ids[0] < 0 or ids[-1] >= self.dim):
            raise ValidationError("ids must be strictly increasing and inside [0, dim)")
        if not np.all(np.isfinite(weights)) or np.any(weights == 0):
            raise ValidationError("weights must be finite and non-zero")

    def to_dict(self):
        return dict(zip(self.ids.tolist(), self.weights.tolist()))


@dataclass(frozen=True)
class IdfTable:
    idf: dict
    n_docs: int


def build_idf(corpus) -> IdfTable:
    """Natural-log inverse document frequency over training documents.

    Each document is an iterable of token ids; only tokens seen in at least
    one document get an entry.
    """
    if not corpus:
        raise ValidationError("cannot build IDF from an empty corpus")
    df = Counter()
    for doc in corpus:
        df.update(set(doc))
    n = len(corpus)
    return IdfTable({tok: math.log(n / k) for tok, k in df.items()}, n)


def _sparse(weights: dict, dim):
    pairs = sorted((i, w) for i, w in weights.items() if w != 0)
    return SparseFeatureVector(
        np.array([i for i, _ in pairs], dtype=np.int64), np.array([w for _, w in pairs]), dim
    )


def tfidf_vector(doc, idf: IdfTable, dim) -> SparseFeatureVector:
    counts = Counter(doc)
    return _sparse({tok: n * idf.idf[tok] for tok, n in counts.items() if tok in idf.idf}, dim)


def log1p_vector(doc, dim) -> SparseFeatureVector:
    counts = Counter(t for t in doc if 0 <= t < dim)
    # 1 + n is exact for integer counts, so log1p buys nothing here
    return _sparse({tok: math.log(1 + n) for tok, n in counts.items()}, dim)


def to_csr(features, dim=None):
    if dim is None:
        dim = features[0].dim
    data, indices, indptr = [], [], [0]
    for f in features:
        if f.dim != dim:
            raise ValidationError(f"feature dimension {f.dim} != {dim}")
        indices.append(f.ids)
        data.append(f.weights)
        indptr.append(indptr[-1] + len(f.ids))
    return scipy.sparse.csr_matrix(
        (np.concatenate(data) if data else [], np.concatenate(indices) if indices else [], indptr),
        shape=(len(features), dim),
    )


@dataclass
class LinearBaselineModel:
    weights: np.ndarray
    bias: float
    l2: float

    @property
    def dim(self):
        return len(self.weights)

    def logits(self, X):
        return X @ self.weights + self.bias


def _objective(theta, X, y, l2):
    w, c = theta[:-1], theta[-1]
    z = X @ w + c
    # mean log loss in the overflow-free form
    loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * w @ w
    r = (scipy.special.expit(z) - y) / len(y)
    grad = np.empty_like(theta)
    grad[:-1] = X.T @ r + l2 * w
    grad[-1] = r.sum()
    return loss, grad


def baseline_train(features, labels, l2=1.0, max_iter=500, seed=0) -> LinearBaselineModel:
    """Fit logistic regression by L-BFGS from a zero start.

    The bias is unpenalized. `seed` is accepted for interface symmetry with
    the neural trainer; the fit itself draws no random numbers.
    """
    del seed
    if not features:
        raise ValidationError("empty training set")
    if len(features) != len(labels):
        raise ValidationError("features and labels differ in length")
    X = to_csr(features)
    y = np.asarray(labels, dtype=np.float64)
    theta0 = np.zeros(X.shape[1] + 1)
    res = scipy.optimize.minimize(
        _objective, theta0, args=(X, y, l2), jac=True, method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": 1e-10},
    )
    return LinearBaselineModel(res.x[:-1].copy(), float(res.x[-1]), l2)


def baseline_predict(model: LinearBaselineModel, feature: SparseFeatureVector) -> int:
    if feature.dim != model.dim:
        raise ValidationError(f"feature dimension {feature.dim} != model dimension {model.dim}")
    logit = float(feature.weights @ model.weights[feature.ids]) + model.bias
    return int(logit > 0.0)  # probability exactly 0.5 maps to 0


def write_feature_matrix(fh, features, labels):
    """Text export: header `|V| n_docs`, then `label id:weight ...` per document."""
    dim = features[0].dim if features else 0
    fh.write(f"{dim} {len(features)}\n")
    for f, y in zip(features, labels):
        cells = " ".join(f"{i}:{w!r}" for i, w in zip(f.ids.tolist(), f.weights.tolist()))
        fh.write(f"{int(y)} {cells}".rstrip() + "\n")
