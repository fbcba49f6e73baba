import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from earncall import model as nn
from earncall.checkpoint import load_checkpoint, read_header, save_checkpoint
from earncall.errors import ParseError, ValidationError

GRADCHECK_TOL = 1e-4


def tiny_config(**kw):
    base = dict(embed_dim=2, industry_dim=3, hidden=(5, 4), dropout=0.0)
    base.update(kw)
    return nn.ModelConfig(**base)


def random_batch(rng, B=4, N=6, F=4, masked=True):
    items = []
    for _ in range(B):
        mask = rng.random(N) < 0.7 if masked else np.ones(N, dtype=bool)
        mask[0] = True
        items.append((rng.normal(size=(N, F)), mask, int(rng.integers(11))))
    return nn.make_batch(items)


# -- attention ---------------------------------------------------------------


def test_attention_example():
    V = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    alpha = nn.attention_weights(V, np.ones(3, dtype=bool), np.array([np.log(2.0), 0.0]))
    # scores ln2, 0, ln2 -> weights 2:1:2
    np.testing.assert_allclose(alpha, [0.4, 0.2, 0.4], rtol=1e-15)
    np.testing.assert_allclose(nn.aggregate(V, alpha), [0.8, 0.6], rtol=1e-15)


def test_attention_zero_u_is_uniform():
    V = np.random.default_rng(0).normal(size=(7, 3))
    alpha = nn.attention_weights(V, np.ones(7, dtype=bool), np.zeros(3))
    np.testing.assert_allclose(alpha, np.full(7, 1 / 7), rtol=1e-15)


def test_attention_single_sentence():
    alpha = nn.attention_weights(np.array([[3.0, -1.0]]), np.ones(1, dtype=bool), np.array([5.0, 5.0]))
    assert alpha.tolist() == [1.0]


def test_attention_huge_scores_stay_finite():
    V = np.array([[1e3], [-1e3]])
    alpha = nn.attention_weights(V, np.ones(2, dtype=bool), np.array([10.0]))
    np.testing.assert_array_equal(alpha, [1.0, 0.0])


def test_attention_all_masked_raises():
    with pytest.raises(ValidationError):
        nn.attention_weights(np.ones((2, 2)), np.zeros(2, dtype=bool), np.ones(2))


case_seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=200, deadline=None)
@given(case_seeds)
def test_attention_properties(seed):
    rng = np.random.default_rng(seed)
    N, F = int(rng.integers(1, 12)), int(rng.integers(1, 6))
    V = rng.normal(0, 3, size=(N, F))
    u = rng.normal(0, 2, size=F)
    ones = np.ones(N, dtype=bool)
    alpha = nn.attention_weights(V, ones, u)
    assert abs(alpha.sum() - 1.0) <= 1e-6 and np.all(alpha >= 0)
    E = nn.aggregate(V, alpha)
    assert np.all(E >= V.min(axis=0) - 1e-12) and np.all(E <= V.max(axis=0) + 1e-12)

    perm = rng.permutation(N)
    np.testing.assert_allclose(nn.aggregate(V[perm], nn.attention_weights(V[perm], ones, u)), E, atol=1e-12)

    # padding with masked garbage rows changes nothing
    Vp = np.vstack([V, rng.normal(0, 50, size=(3, F))])
    mp = np.concatenate([ones, np.zeros(3, dtype=bool)])
    ap = nn.attention_weights(Vp, mp, u)
    assert np.all(ap[N:] == 0)
    np.testing.assert_allclose(nn.aggregate(Vp, ap), E, atol=1e-12)

    # moving every sentence along a direction orthogonal to u moves E by the same amount
    w = rng.normal(size=F)
    w -= (w @ u) / (u @ u) * u
    shifted = nn.aggregate(V + w, nn.attention_weights(V + w, ones, u))
    np.testing.assert_allclose(shifted, E + w, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(case_seeds, st.floats(-1e3, 1e3))
def test_bias_shift_and_padding_leave_logits_alone(seed, c):
    rng = np.random.default_rng(seed)
    model = nn.Model.init(tiny_config(), int(rng.integers(1000)))
    batch = random_batch(rng)
    base, _ = nn.forward(model, batch, nn.EVAL)
    shifted = model.copy()
    shifted.params["attention.b"] = shifted.params["attention.b"] + c
    z, _ = nn.forward(shifted, batch, nn.EVAL)
    np.testing.assert_allclose(z, base, rtol=0, atol=1e-12)
    padded = nn.Batch(
        np.concatenate([batch.V, rng.normal(0, 10, size=(len(batch), 2, 4))], axis=1),
        np.concatenate([batch.mask, np.zeros((len(batch), 2), dtype=bool)], axis=1),
        batch.sectors,
    )
    z, _ = nn.forward(model, padded, nn.EVAL)
    np.testing.assert_allclose(z, base, rtol=0, atol=1e-12)


# -- loss and output ------------------------------------------------------------


def test_loss_at_zero_logit():
    assert nn.loss([0.0], [1.0]) == pytest.approx(np.log(2), rel=1e-15)


def test_loss_saturated():
    assert nn.loss([40.0, -40.0], [1.0, 0.0]) < 1e-15
    assert nn.loss([1000.0], [0.0]) == pytest.approx(1000.0)


def test_sigmoid_extremes():
    np.testing.assert_array_equal(nn.sigmoid([0.0, 800.0, -800.0]), [0.5, 1.0, 0.0])


def test_predict_tie_maps_to_zero():
    model = nn.Model.init(tiny_config(), 0)
    model.params["output.weight"][:] = 0.0
    prob, label = nn.predict(model, np.ones((3, 4)), 2)
    assert prob == 0.5 and label == 0


def test_predict_saturates_cleanly():
    model = nn.Model.init(tiny_config(hidden=(3,)), 0)
    model.params["output.weight"][:] = 0.0
    model.params["output.bias"][:] = 1e3
    assert nn.predict(model, np.ones((3, 4)), 2) == (1.0, 1)


# -- forward / backward ----------------------------------------------------------


def test_forward_modes():
    rng = np.random.default_rng(1)
    model = nn.Model.init(tiny_config(dropout=0.5), 3)
    batch = random_batch(rng)
    with pytest.raises(ValidationError):
        nn.forward(model, batch, nn.TRAIN)
    with pytest.raises(ValidationError):
        nn.forward(model, nn.make_batch([(np.ones((2, 4)), 0)]), nn.TRAIN, rng)
    before = model.buffers["block0.bn.running_mean"].copy()
    nn.forward(model, batch, nn.TRAIN, rng, update_running=False)
    np.testing.assert_array_equal(model.buffers["block0.bn.running_mean"], before)
    nn.forward(model, batch, nn.TRAIN, rng)
    assert not np.array_equal(model.buffers["block0.bn.running_mean"], before)
    a, _ = nn.forward(model, batch, nn.EVAL)
    b, _ = nn.forward(model, batch, nn.EVAL)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(nn.forward(model, nn.make_batch([(batch.V[0], batch.mask[0], 1)]), nn.EVAL)[0].shape, (1,))


def test_backward_rejects_eval_cache():
    model = nn.Model.init(tiny_config(), 0)
    _, cache = nn.forward(model, random_batch(np.random.default_rng(0)), nn.EVAL)
    with pytest.raises(ValidationError):
        nn.backward(cache, np.zeros(4), model)


def test_dropped_unit_gets_no_weight_gradient():
    rng = np.random.default_rng(5)
    model = nn.Model.init(tiny_config(dropout=0.5), 1)
    _, cache = nn.forward(model, random_batch(rng, B=6), nn.TRAIN, rng)
    grads = nn.backward(cache, rng.integers(2, size=6), model)
    keep = cache["blocks"][0]["keep"]
    dropped_everywhere = np.all(keep == 0, axis=0)
    assert dropped_everywhere.any()
    assert np.all(grads["block0.linear.weight"][dropped_everywhere] == 0)


def test_frozen_industry_table_gets_zero_gradient():
    rng = np.random.default_rng(2)
    model = nn.Model.init(tiny_config(industry_trainable=False), 1)
    _, cache = nn.forward(model, random_batch(rng), nn.TRAIN, rng)
    grads = nn.backward(cache, np.array([0, 1, 1, 0]), model)
    assert np.all(grads["industry.table"] == 0)
    assert "industry.table" not in model.trainable_names()


@pytest.mark.parametrize("seed", range(10))
def test_gradient_check(seed):
    model, batch, labels = nn.random_gradcheck_case(seed)
    assert nn.grad_check(model, batch, labels, eps=1e-5, seed=seed) < GRADCHECK_TOL


def test_gradient_check_at_zero_parameters():
    model, batch, labels = nn.random_gradcheck_case(0)
    for name in model.params:
        model.params[name] = np.zeros_like(model.params[name])
    assert nn.grad_check(model, batch, labels) < GRADCHECK_TOL


def test_large_step_is_coarser():
    model, batch, labels = nn.random_gradcheck_case(1)
    assert nn.grad_check(model, batch, labels, eps=1e-2) > nn.grad_check(model, batch, labels, eps=1e-5)


def test_near_constant_sector_columns_converge_with_step():
    # sector rows at init scale: batch norm divides by a tiny column variance,
    # so the difference quotient carries an O(eps^2) truncation error
    model, batch, labels = nn.random_gradcheck_case(3)
    model.params["industry.table"] = nn.Model.init(model.config, 3).params["industry.table"]
    errs = [nn.gradient_errors(model, batch, labels, eps=e)["industry.table"] for e in (1e-5, 1e-6, 1e-7)]
    assert errs[1] < errs[0] / 50 and errs[2] < errs[1] / 50
    assert errs[2] < 1e-7


def test_gradient_matches_in_float64_oracle_for_large_gradients():
    model, batch, labels = nn.random_gradcheck_case(4)
    errs = nn.gradient_errors(model, batch, labels, oracle_dtype=np.float64)
    assert errs["output.weight"] < 1e-6


# -- training -------------------------------------------------------------------


def separable_examples(n=40, seed=0, F=4):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        y = i % 2
        V = rng.normal(0, 0.3, size=(int(rng.integers(3, 7)), F))
        V[:, 0] += 1.5 if y else -1.5
        out.append(nn.Example(V, int(rng.integers(11)), y, f"C{i % 4}", dt.date(2020, 1, 1) + dt.timedelta(days=i)))
    return out


def test_training_is_deterministic():
    data = separable_examples()
    cfg = nn.TrainConfig(seed=3, batch_size=8, epochs=3)
    m1, log1 = nn.train(data, cfg, tiny_config(dropout=0.3))
    m2, log2 = nn.train(data, cfg, tiny_config(dropout=0.3))
    assert log1 == log2
    for name in m1.params:
        np.testing.assert_array_equal(m1.params[name], m2.params[name])


def test_zero_learning_rate_keeps_parameters():
    data = separable_examples()
    cfg = nn.TrainConfig(seed=0, batch_size=8, epochs=2, learning_rate=0.0)
    trained, _ = nn.train(data, cfg, tiny_config())
    init = nn.Model.init(tiny_config(), 0)
    for name in init.params:
        np.testing.assert_array_equal(trained.params[name], init.params[name])


def test_fits_a_separable_set():
    data = separable_examples(n=20)
    cfg = nn.TrainConfig(seed=0, batch_size=4, epochs=60, learning_rate=0.01, val_fraction=0.0)
    model, log = nn.train(data, cfg, tiny_config(hidden=(8,)))
    assert log["selected_epoch"] == 60
    assert log["epochs"][-1]["train_accuracy"] == 1.0
    preds = [nn.predict(model, ex.V, ex.sector)[1] for ex in data]
    assert preds == [ex.label for ex in data]


def test_train_rejects_small_dataset():
    with pytest.raises(ValidationError):
        nn.train(separable_examples(n=5), nn.TrainConfig(batch_size=8), tiny_config())


def test_validation_split_takes_latest_per_company():
    data = separable_examples(n=40)
    fit, val = nn.validation_split(data, 0.1)
    assert len(val) == 4 and len(fit) == 36
    for i in val:
        same = [j for j in fit if data[j].company_id == data[i].company_id]
        assert all(data[j].call_date < data[i].call_date for j in same)


def test_batches_never_leave_a_single_example():
    chunks = nn._batches(np.arange(33), 8)
    assert [len(c) for c in chunks] == [8, 8, 8, 9]


# -- checkpoints ------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    model = nn.Model.init(tiny_config(), 9)
    model.buffers["block1.bn.running_var"][:] = 2.5
    path = tmp_path / "m.bin"
    save_checkpoint(path, model, vocab_hash="v", embedding_hash="e", run_config={"seed": 9})
    back, header = load_checkpoint(path, vocab_hash="v", embedding_hash="e")
    assert back.config == model.config and header["run_config"] == {"seed": 9}
    for name in model.params:
        assert back.params[name].tobytes() == model.params[name].tobytes()
    for name in model.buffers:
        assert back.buffers[name].tobytes() == model.buffers[name].tobytes()
    save_checkpoint(tmp_path / "again.bin", back, vocab_hash="v", embedding_hash="e", run_config={"seed": 9})
    assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()
    assert read_header(path)["vocab_hash"] == "v"


def test_checkpoint_refuses_mismatched_inputs(tmp_path):
    path = tmp_path / "m.bin"
    save_checkpoint(path, nn.Model.init(tiny_config(), 0), vocab_hash="v", embedding_hash="e")
    with pytest.raises(ValidationError):
        load_checkpoint(path, vocab_hash="other")
    with pytest.raises(ValidationError):
        load_checkpoint(path, embedding_hash="other")


def test_checkpoint_corruption(tmp_path):
    path = tmp_path / "m.bin"
    save_checkpoint(path, nn.Model.init(tiny_config(), 0), vocab_hash="v", embedding_hash="e")
    data = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(data[:-8])
    (tmp_path / "magic.bin").write_bytes(b"X" + data[1:])
    for name in ("short.bin", "magic.bin"):
        with pytest.raises(ParseError):
            load_checkpoint(tmp_path / name)
