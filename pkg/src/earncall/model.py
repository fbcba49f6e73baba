"""Sentence attention, sector embedding and the feedforward classifier.

Everything is float64 numpy with hand-written backpropagation. A batch holds
B answer sequences padded to a common length N; padded rows are masked out
of the attention softmax. Shapes used below:

    V      (B, N, F)   sentence vectors, F = 2d
    mask   (B, N)      True for real sentences
    alpha  (B, N)      attention weights
    E      (B, F)      attention-pooled transcript vector
    I      (B, k)      sector embedding rows
    x      (B, F + k)  classifier input

Each hidden block is batch-norm -> dropout -> linear -> ReLU; a final linear
layer maps the last hidden width to one logit.
"""

from __future__ import annotations

import copy
import datetime as dt
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .corpus import N_SECTORS
from .errors import InvariantError, ValidationError

TRAIN = "train"
EVAL = "eval"


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int
    industry_dim: int = 16
    hidden: tuple = (64, 64)
    dropout: float = 0.5
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    n_sectors: int = N_SECTORS
    industry_trainable: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.embed_dim < 1 or self.industry_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValidationError("dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must lie in [0, 1)")

    @property
    def feature_dim(self):
        return 2 * self.embed_dim

    @property
    def input_dim(self):
        return self.feature_dim + self.industry_dim

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


class Model:
    """Parameters (trainable) and buffers (batch-norm running statistics)."""

    def __init__(self, config: ModelConfig, params: dict, buffers: dict, seed=None):
        self.config = config
        self.params = params
        self.buffers = buffers
        self.seed = seed

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "Model":
        rng = np.random.default_rng([seed, 0])
        F = config.feature_dim
        params = {
            "attention.u": rng.normal(0.0, 1.0 / math.sqrt(F), size=F),
            "attention.b": np.zeros(()),
            "industry.table": rng.normal(0.0, 0.1, size=(config.n_sectors, config.industry_dim)),
        }
        buffers = {}
        width = config.input_dim
        for i, h in enumerate(config.hidden):
            params[f"block{i}.bn.gamma"] = np.ones(width)
            params[f"block{i}.bn.beta"] = np.zeros(width)
            params[f"block{i}.linear.weight"] = _glorot(rng, width, h)
            params[f"block{i}.linear.bias"] = np.zeros(h)
            buffers[f"block{i}.bn.running_mean"] = np.zeros(width)
            buffers[f"block{i}.bn.running_var"] = np.ones(width)
            width = h
        params["output.weight"] = _glorot(rng, width, 1)
        params["output.bias"] = np.zeros(1)
        return cls(config, params, buffers, seed)

    def copy(self) -> "Model":
        return Model(self.config, copy.deepcopy(self.params), copy.deepcopy(self.buffers), self.seed)

    @property
    def n_blocks(self):
        return len(self.config.hidden)

    def trainable_names(self):
        names = list(self.params)
        if not self.config.industry_trainable:
            names.remove("industry.table")
        return names

    def check_finite(self):
        for name, value in {**self.params, **self.buffers}.items():
            if not np.all(np.isfinite(value)):
                raise InvariantError(f"non-finite values in {name}")
        for i in range(self.n_blocks):
            if np.any(self.buffers[f"block{i}.bn.running_var"] < 0):
                raise InvariantError("negative running variance")


def _glorot(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


# ---------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    V: np.ndarray
    mask: np.ndarray
    sectors: np.ndarray

    def __len__(self):
        return self.V.shape[0]


def make_batch(items, n_pad=None) -> Batch:
    """Pad (V, sector) or (V, mask, sector) items to a common length."""
    rows = []
    for item in items:
        if len(item) == 2:
            V, sector = item
            mask = np.ones(len(V), dtype=bool)
        else:
            V, mask, sector = item
        rows.append((np.asarray(V, dtype=np.float64), np.asarray(mask, dtype=bool), int(sector)))
    if not rows:
        raise ValidationError("empty batch")
    F = rows[0][0].shape[1]
    N = max(len(V) for V, _, _ in rows)
    if n_pad is not None:
        N = max(N, n_pad)
    B = len(rows)
    Vb = np.zeros((B, N, F))
    mb = np.zeros((B, N), dtype=bool)
    sectors = np.empty(B, dtype=np.int64)
    for j, (V, mask, sector) in enumerate(rows):
        if V.ndim != 2 or V.shape[1] != F:
            raise ValidationError("sentence matrices must share the feature width")
        Vb[j, : len(V)] = V
        mb[j, : len(V)] = mask
        sectors[j] = sector
    return Batch(Vb, mb, sectors)


# ---------------------------------------------------------------------------
# building blocks


def attention_weights(V, mask, u, b=0.0):
    """Softmax of u.v_l + b over unmasked sentences; masked weights are 0.

    Works on a single (N, F) sequence or a (B, N, F) batch. The bias shifts
    every score equally and cancels in the normalization, so it is not added.
    """
    V = _as_float(V)
    mask = np.asarray(mask, dtype=bool)
    if not np.all(mask.any(axis=-1)):
        raise ValidationError("attention needs at least one unmasked sentence")
    del b
    scores = np.where(mask, np.where(mask[..., None], V, 0.0) @ u, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(scores), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def aggregate(V, alpha):
    """Attention-weighted sum of sentence vectors."""
    return np.einsum("...n,...nf->...f", _as_float(alpha), _as_float(V))


def industry_embed(sector, table):
    table = np.asarray(table)
    sector = np.asarray(sector)
    if np.any(sector < 0) or np.any(sector >= table.shape[0]):
        raise ValidationError(f"sector {sector} outside 0..{table.shape[0] - 1}")
    return table[sector]


def _as_float(a):
    a = np.asarray(a)
    return a if np.issubdtype(a.dtype, np.floating) else a.astype(np.float64)


def _mean_bce(z, y):
    return np.mean(np.logaddexp(0, z) - y * z)


def loss(logits, labels):
    """Mean binary cross-entropy on logits."""
    return float(_mean_bce(_as_float(logits), _as_float(labels)))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# forward / backward


def forward(model: Model, batch: Batch, mode=TRAIN, rng=None, update_running=True):
    """Logits for a batch plus the cache `backward` needs.

    Train mode normalizes with batch statistics (and folds them into the
    running averages unless `update_running` is False) and samples dropout
    masks from `rng`. Eval mode uses running statistics and no dropout.
    """
    if mode not in (TRAIN, EVAL):
        raise ValueError(f"unknown mode {mode!r}")
    cfg = model.config
    p = model.params
    B = len(batch)
    if batch.V.shape[-1] != cfg.feature_dim:
        raise ValidationError(f"sentence vectors have width {batch.V.shape[-1]}, model expects {cfg.feature_dim}")
    if mode == TRAIN and B < 2:
        raise ValidationError("train-mode batch norm needs at least 2 examples")
    if mode == TRAIN and cfg.dropout > 0 and rng is None:
        raise ValidationError("train mode with dropout needs an rng")

    V = np.where(batch.mask[..., None], batch.V, 0.0)
    alpha = attention_weights(V, batch.mask, p["attention.u"])
    E = aggregate(V, alpha)
    I = industry_embed(batch.sectors, p["industry.table"])
    h = np.concatenate([E, I], axis=1)

    blocks = []
    for i in range(model.n_blocks):
        gamma, beta = p[f"block{i}.bn.gamma"], p[f"block{i}.bn.beta"]
        if mode == TRAIN:
            mu = h.mean(axis=0)
            var = h.var(axis=0)
            if update_running:
                m = cfg.bn_momentum
                rm = model.buffers[f"block{i}.bn.running_mean"]
                rv = model.buffers[f"block{i}.bn.running_var"]
                rm *= 1.0 - m
                rm += m * mu
                rv *= 1.0 - m
                rv += m * var * B / (B - 1)
        else:
            mu = model.buffers[f"block{i}.bn.running_mean"]
            var = model.buffers[f"block{i}.bn.running_var"]
        inv_std = 1.0 / np.sqrt(var + cfg.bn_eps)
        xhat = (h - mu) * inv_std
        y = gamma * xhat + beta
        if mode == TRAIN and cfg.dropout > 0:
            keep = (rng.random(y.shape) >= cfg.dropout) / (1.0 - cfg.dropout)
        else:
            keep = None
        yd = y * keep if keep is not None else y
        z = yd @ p[f"block{i}.linear.weight"] + p[f"block{i}.linear.bias"]
        out = np.maximum(z, 0.0)
        blocks.append({"xhat": xhat, "inv_std": inv_std, "keep": keep, "yd": yd, "z": z})
        h = out

    logits = (h @ p["output.weight"])[:, 0] + p["output.bias"][0]
    cache = {
        "mode": mode,
        "config": cfg,
        "batch": batch,
        "alpha": alpha,
        "V": V,
        "E": E,
        "blocks": blocks,
        "h_last": h,
        "logits": logits,
    }
    return logits, cache


def backward(cache, labels, model: Model) -> dict:
    """Gradients of the mean BCE loss with respect to every parameter."""
    if cache.get("mode") != TRAIN:
        raise ValidationError("backward needs a train-mode cache")
    if cache["config"] != model.config:
        raise ValidationError("cache was produced by a model with a different configuration")
    cfg = model.config
    p = model.params
    batch = cache["batch"]
    B = len(batch)
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (B,):
        raise ValidationError(f"expected {B} labels")

    grads = {}
    g = (sigmoid(cache["logits"]) - y) / B
    grads["output.weight"] = cache["h_last"].T @ g[:, None]
    grads["output.bias"] = np.array([g.sum()])
    dh = g[:, None] @ p["output.weight"].T

    for i in reversed(range(model.n_blocks)):
        blk = cache["blocks"][i]
        dz = dh * (blk["z"] > 0)
        grads[f"block{i}.linear.weight"] = blk["yd"].T @ dz
        grads[f"block{i}.linear.bias"] = dz.sum(axis=0)
        dy = dz @ p[f"block{i}.linear.weight"].T
        if blk["keep"] is not None:
            dy = dy * blk["keep"]
        xhat = blk["xhat"]
        grads[f"block{i}.bn.gamma"] = (dy * xhat).sum(axis=0)
        grads[f"block{i}.bn.beta"] = dy.sum(axis=0)
        dxhat = dy * p[f"block{i}.bn.gamma"]
        dh = blk["inv_std"] / B * (B * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))

    F = cfg.feature_dim
    dE, dI = dh[:, :F], dh[:, F:]
    table_grad = np.zeros_like(p["industry.table"])
    if cfg.industry_trainable:
        np.add.at(table_grad, batch.sectors, dI)
    grads["industry.table"] = table_grad

    alpha, V = cache["alpha"], cache["V"]
    dalpha = np.einsum("bnf,bf->bn", V, dE)
    dscore = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
    grads["attention.u"] = np.einsum("bn,bnf->f", dscore, V)
    grads["attention.b"] = np.asarray(dscore.sum())
    return grads


# ---------------------------------------------------------------------------
# gradient check


def gradient_errors(model: Model, batch: Batch, labels, eps=1e-5, seed=0, oracle_dtype=np.longdouble) -> dict:
    """Per-parameter max relative error between `backward` and central
    differences.

    Both sides use train-mode batch statistics, identical dropout masks
    (same seed every evaluation) and frozen running statistics. The
    analytic side runs in float64. The difference quotient is evaluated in
    `oracle_dtype`: in float64 its rounding noise (~1e-11) swamps the 1e-8
    floor of the relative error for parameters whose true gradient is ~0.
    """
    labels = np.asarray(labels, dtype=np.float64)
    logits, cache = forward(model, batch, TRAIN, np.random.default_rng(seed), update_running=False)
    analytic = backward(cache, labels, model)

    probe = Model(
        model.config,
        {k: v.astype(oracle_dtype) for k, v in model.params.items()},
        {k: v.astype(oracle_dtype) for k, v in model.buffers.items()},
        model.seed,
    )
    probe_batch = Batch(batch.V.astype(oracle_dtype), batch.mask, batch.sectors)
    probe_labels = labels.astype(oracle_dtype)
    step = oracle_dtype(eps)

    def objective():
        z, _ = forward(probe, probe_batch, TRAIN, np.random.default_rng(seed), update_running=False)
        return _mean_bce(z, probe_labels)

    errors = {}
    for name in model.trainable_names():
        flat = probe.params[name].reshape(-1)
        worst = 0.0
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            plus = objective()
            hi = flat[j]
            flat[j] = orig - step
            minus = objective()
            lo = flat[j]
            flat[j] = orig
            numeric = float((plus - minus) / (hi - lo))
            a = analytic[name].reshape(-1)[j]
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
        errors[name] = worst
    return errors


def grad_check(model: Model, batch: Batch, labels, eps=1e-5, seed=0) -> float:
    return max(gradient_errors(model, batch, labels, eps, seed).values())


def random_gradcheck_case(seed, embed_dim=4, industry_dim=3, n_sentences=5, batch=4, hidden=(16, 16), dropout=0.5):
    """A random model, batch and labels for gradient checking.

    Batch-norm affine parameters are moved off (1, 0) and the sector table
    is drawn at unit scale: at its 0.1 init scale, normalizing four sector
    rows can hit columns with variance near zero, where a 1e-5 difference
    step is no longer small. Some sentences are masked.
    """
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(embed_dim=embed_dim, industry_dim=industry_dim, hidden=hidden, dropout=dropout)
    model = Model.init(cfg, seed)
    for name in model.params:
        if ".bn." in name:
            model.params[name] = model.params[name] + rng.normal(0.0, 0.3, model.params[name].shape)
    model.params["industry.table"] = rng.normal(0.0, 1.0, model.params["industry.table"].shape)
    items = []
    for _ in range(batch):
        mask = rng.random(n_sentences) < 0.8
        mask[0] = True
        items.append((rng.normal(size=(n_sentences, 2 * embed_dim)), mask, int(rng.integers(cfg.n_sectors))))
    labels = rng.integers(2, size=batch).astype(np.float64)
    return model, make_batch(items), labels


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class Example:
    """Encoded example: sentence-vector matrix, sector and label."""

    V: np.ndarray
    sector: int
    label: int
    company_id: str = ""
    call_date: dt.date = dt.date.min


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    batch_size: int = 32
    epochs: int = 30
    learning_rate: float = 1e-3
    val_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValidationError("batch_size must be >= 2 for batch norm")
        if self.epochs < 0 or self.learning_rate < 0:
            raise ValidationError("epochs and learning_rate must be non-negative")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValidationError("val_fraction must lie in [0, 1)")


def validation_split(dataset, fraction):
    """Per company, the latest ceil(fraction * n) examples become validation
    (companies with a single example keep it for fitting)."""
    by_company = {}
    for i, ex in enumerate(dataset):
        by_company.setdefault(ex.company_id, []).append(i)
    fit, val = [], []
    for company in sorted(by_company):
        idx = sorted(by_company[company], key=lambda i: (dataset[i].call_date, i))
        n_val = math.ceil(fraction * len(idx)) if len(idx) > 1 else 0
        fit.extend(idx[: len(idx) - n_val])
        val.extend(idx[len(idx) - n_val :])
    return fit, val


class Adam:
    def __init__(self, params: dict, names, lr, beta1, beta2, eps):
        self.names = list(names)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {n: np.zeros_like(params[n]) for n in self.names}
        self.v = {n: np.zeros_like(params[n]) for n in self.names}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for n in self.names:
            g = grads[n]
            self.m[n] = self.beta1 * self.m[n] + (1.0 - self.beta1) * g
            self.v[n] = self.beta2 * self.v[n] + (1.0 - self.beta2) * g * g
            params[n] -= self.lr * (self.m[n] / c1) / (np.sqrt(self.v[n] / c2) + self.eps)


def _batches(indices, batch_size):
    chunks = [indices[i : i + batch_size] for i in range(0, len(indices), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def predict_logits(model: Model, examples, batch_size=256) -> np.ndarray:
    out = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start : start + batch_size]
        logits, _ = forward(model, make_batch([(ex.V, ex.sector) for ex in chunk]), EVAL)
        out.append(logits)
    return np.concatenate(out) if out else np.zeros(0)


def _score(model, examples):
    if not examples:
        return float("nan"), float("nan")
    logits = predict_logits(model, examples)
    labels = np.array([ex.label for ex in examples], dtype=np.float64)
    acc = float(np.mean((sigmoid(logits) > 0.5) == (labels == 1)))
    return loss(logits, labels), acc


def train(dataset, config: TrainConfig, model_config: ModelConfig, model: Model | None = None):
    """Adam on mini-batches; returns the parameters of the epoch with the
    best validation accuracy (first one on ties) and a log holding the
    selected epoch and per-epoch losses and accuracies.

    Without a validation split the final epoch is returned.
    """
    if not dataset:
        raise ValidationError("empty training set")
    if len(dataset) < config.batch_size:
        raise ValidationError(f"{len(dataset)} examples is fewer than batch size {config.batch_size}")
    if model is None:
        model = Model.init(model_config, config.seed)
    rng = np.random.default_rng([config.seed, 1])
    fit_idx, val_idx = validation_split(dataset, config.val_fraction)
    if len(fit_idx) < 2:
        raise ValidationError("need at least 2 fitting examples")
    fit = [dataset[i] for i in fit_idx]
    val = [dataset[i] for i in val_idx]
    opt = Adam(model.params, model.trainable_names(), config.learning_rate, config.beta1, config.beta2, config.adam_eps)

    history = []
    best = None
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(fit))
        for chunk in _batches(order, config.batch_size):
            batch = make_batch([(fit[i].V, fit[i].sector) for i in chunk])
            labels = np.array([fit[i].label for i in chunk], dtype=np.float64)
            logits, cache = forward(model, batch, TRAIN, rng)
            grads = backward(cache, labels, model)
            opt.step(model.params, grads)
        model.check_finite()
        train_loss, train_acc = _score(model, fit)
        val_loss, val_acc = _score(model, val)
        history.append(
            {"epoch": epoch, "train_loss": train_loss, "train_accuracy": train_acc,
             "val_loss": val_loss, "val_accuracy": val_acc}
        )
        if val and (best is None or val_acc > best[0]):
            best = (val_acc, epoch, model.copy())
    selected = config.epochs
    if best is not None:
        _, selected, model = best
    return model, {"selected_epoch": selected, "epochs": history}


def predict(model: Model, V, sector):
    """Probability of an up move and the thresholded label (0.5 maps to 0)."""
    logits, _ = forward(model, make_batch([(V, sector)]), EVAL)
    prob = float(sigmoid(logits)[0])
    return prob, int(prob > 0.5)
