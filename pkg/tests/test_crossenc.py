"""Transformer pair scorer: forward semantics, gradients, training loop."""

import numpy as np
import pytest

from subrank.crossenc import (
    CrossEncoderConfig,
    CrossEncoderModel,
    OptimizerState,
    TrainConfig,
    adamw_step,
    encode_pairs,
    forward,
    init_model,
    load_model,
    loss_and_grad,
    parameter_shapes,
    save_model,
    score_pairs,
    train,
)
from subrank.data import DatasetSplit, LabeledPair, PairKind
from subrank.errors import ConfigError, DataError, TrainingDivergedError
from subrank.text import PAD_ID, Vocabulary, build_vocab, encode_pair, tokenize

SMALL = CrossEncoderConfig(
    vocab_size=16, d_model=8, n_heads=2, n_layers=1, d_ff=16,
    max_len=10, dropout_rate=0.0,
)

BATCH = np.array([
    [2, 5, 7, 3, 9, 11, 3, 0, 0, 0],
    [2, 4, 3, 8, 3, 0, 0, 0, 0, 0],
    [2, 15, 14, 13, 3, 12, 10, 6, 3, 0],
])


# --- config and parameters ----------------------------------------------


def test_config_validation():
    with pytest.raises(ConfigError, match="divisible"):
        CrossEncoderConfig(vocab_size=16, d_model=10, n_heads=4)
    with pytest.raises(ConfigError, match="max_len"):
        CrossEncoderConfig(vocab_size=16, max_len=4)
    with pytest.raises(ConfigError, match="dropout"):
        CrossEncoderConfig(vocab_size=16, dropout_rate=1.0)
    with pytest.raises(ConfigError, match="positive"):
        CrossEncoderConfig(vocab_size=0)


def test_parameter_shapes_layout():
    shapes = dict(parameter_shapes(SMALL))
    assert len(shapes) == 2 + 16 * SMALL.n_layers + 4
    assert shapes["token_embedding"] == (16, 8)
    assert shapes["position_embedding"] == (10, 8)
    assert shapes["layer0.attn.wq"] == (8, 8)
    assert shapes["layer0.ffn.w1"] == (8, 16)
    assert shapes["head.weight"] == (8,)
    assert shapes["head.bias"] == (1,)
    names = [n for n, _ in parameter_shapes(SMALL)]
    assert names[0] == "token_embedding" and names[-1] == "head.bias"


def test_init_is_deterministic_per_seed():
    a = init_model(SMALL, seed=7)
    b = init_model(SMALL, seed=7)
    c = init_model(SMALL, seed=8)
    for name in a.parameter_names:
        np.testing.assert_array_equal(a.params[name], b.params[name])
    assert any(
        not np.array_equal(a.params[n], c.params[n]) for n in a.parameter_names
    )


def test_init_gains_ones_biases_zeros():
    model = init_model(SMALL, seed=0)
    np.testing.assert_array_equal(model.params["layer0.attn_norm.gain"], np.ones(8))
    np.testing.assert_array_equal(model.params["layer0.attn.bq"], np.zeros(8))
    np.testing.assert_array_equal(model.params["final_norm.bias"], np.zeros(8))


def test_model_rejects_missing_or_misshaped_params():
    model = init_model(SMALL, seed=0)
    broken = model.copy_params()
    del broken["head.weight"]
    with pytest.raises(ConfigError, match="head.weight"):
        CrossEncoderModel(SMALL, broken)
    broken = model.copy_params()
    broken["head.weight"] = np.zeros(9)
    with pytest.raises(ConfigError):
        CrossEncoderModel(SMALL, broken)


# --- forward -------------------------------------------------------------


def test_forward_shapes_and_attention_rows():
    model = init_model(SMALL, seed=0)
    scores, cache = forward(model, BATCH)
    assert scores.shape == (3,)
    assert len(cache["attention"]) == SMALL.n_layers
    att = cache["attention"][0]
    assert att.shape == (3, SMALL.n_heads, SMALL.max_len, SMALL.max_len)
    np.testing.assert_allclose(att.sum(axis=-1), 1.0, atol=1e-12)


def test_forward_masks_pad_keys():
    model = init_model(SMALL, seed=0)
    _, cache = forward(model, BATCH)
    att = cache["attention"][0]
    pad = BATCH == PAD_ID
    for b in range(BATCH.shape[0]):
        assert np.all(att[b][:, :, pad[b]] == 0.0)


def test_forward_batch_equals_per_row():
    model = init_model(SMALL, seed=3)
    batch_scores, _ = forward(model, BATCH)
    for i in range(BATCH.shape[0]):
        row_score, _ = forward(model, BATCH[i : i + 1])
        assert batch_scores[i] == pytest.approx(row_score[0], abs=1e-12)


def test_forward_rejects_bad_tokens():
    model = init_model(SMALL, seed=0)
    with pytest.raises(DataError, match="must be"):
        forward(model, BATCH[:, :5])
    bad = BATCH.copy()
    bad[0, 0] = 16
    with pytest.raises(DataError, match="out of range"):
        forward(model, bad)
    bad[0, 0] = -1
    with pytest.raises(DataError, match="out of range"):
        forward(model, bad)


def test_dropout_requires_rng_to_act():
    config = CrossEncoderConfig(
        vocab_size=16, d_model=8, n_heads=2, n_layers=1, d_ff=16,
        max_len=10, dropout_rate=0.5,
    )
    model = init_model(config, seed=0)
    plain_a, _ = forward(model, BATCH)
    plain_b, _ = forward(model, BATCH)
    np.testing.assert_array_equal(plain_a, plain_b)  # no rng: deterministic
    dropped, _ = forward(model, BATCH, dropout_rng=np.random.default_rng(0))
    assert not np.allclose(dropped, plain_a)
    again, _ = forward(model, BATCH, dropout_rng=np.random.default_rng(0))
    np.testing.assert_array_equal(dropped, again)


# --- gradients -----------------------------------------------------------


def test_loss_and_grad_covers_every_parameter():
    model = init_model(SMALL, seed=0)
    labels = np.array([0.3, -1.2, 2.0])
    loss, grads = loss_and_grad(model, BATCH, labels, "mse")
    scores, _ = forward(model, BATCH)
    assert loss == pytest.approx(float(np.mean((scores - labels) ** 2)))
    assert set(grads) == set(model.parameter_names)
    for name in model.parameter_names:
        assert grads[name].shape == model.params[name].shape


@pytest.mark.parametrize("name,index", [
    ("head.weight", (0,)),
    ("layer0.attn.wq", (1, 2)),
    ("layer0.ffn.w1", (0, 3)),
    ("token_embedding", (5, 1)),
    ("layer0.attn_norm.gain", (4,)),
])
def test_gradient_matches_finite_difference(name, index):
    model = init_model(SMALL, seed=0)
    labels = np.array([0.3, -1.2, 2.0])
    _, grads = loss_and_grad(model, BATCH, labels, "mse")
    w = model.params[name][index]
    h = 1e-3 * max(1.0, abs(w))

    def loss_at(value):
        model.params[name][index] = value
        scores, _ = forward(model, BATCH)
        return float(np.mean((scores - labels) ** 2))

    numeric = (loss_at(w + h) - loss_at(w - h)) / (2 * h)
    model.params[name][index] = w
    analytic = grads[name][index]
    denom = max(abs(numeric), abs(analytic), 1e-8)
    assert abs(numeric - analytic) / denom < 1e-4


def test_logistic_loss_validates_labels():
    model = init_model(SMALL, seed=0)
    with pytest.raises(DataError, match="requires labels"):
        loss_and_grad(model, BATCH, np.array([0.0, 0.5, 1.0]), "logistic")
    with pytest.raises(ConfigError, match="loss"):
        loss_and_grad(model, BATCH, np.array([0.0, 1.0, 1.0]), "huber")


def test_loss_rejects_misaligned_labels():
    model = init_model(SMALL, seed=0)
    with pytest.raises(DataError, match="labels shape"):
        loss_and_grad(model, BATCH, np.array([0.3, -1.2]), "mse")


# --- optimizer -----------------------------------------------------------


def test_adamw_zero_gradient_only_decays():
    model = init_model(SMALL, seed=0)
    state = OptimizerState.for_model(model, learning_rate=0.1, weight_decay=0.5)
    before = model.copy_params()
    grads = {name: np.zeros_like(p) for name, p in model.params.items()}
    adamw_step(model, grads, state)
    for name in model.parameter_names:
        np.testing.assert_allclose(
            model.params[name], before[name] * (1.0 - 0.1 * 0.5), atol=1e-15
        )


def test_adamw_first_step_matches_hand_formula():
    model = init_model(SMALL, seed=0)
    lr, wd, eps = 1e-3, 0.01, 1e-8
    state = OptimizerState.for_model(model, learning_rate=lr, weight_decay=wd, eps=eps)
    g = 0.25
    w0 = float(model.params["head.bias"][0])
    grads = {name: np.zeros_like(p) for name, p in model.params.items()}
    grads["head.bias"][0] = g
    adamw_step(model, grads, state)
    # bias corrections cancel at step 1: mhat = g, vhat = g^2
    want = w0 * (1 - lr * wd) - lr * g / (abs(g) + eps)
    assert model.params["head.bias"][0] == pytest.approx(want, abs=1e-15)
    assert state.step == 1


def test_optimizer_state_tracks_every_parameter():
    model = init_model(SMALL, seed=0)
    state = OptimizerState.for_model(model)
    assert set(state.m) == set(model.parameter_names)
    assert all(np.all(v == 0) for v in state.v.values())


# --- training loop -------------------------------------------------------


def lp(q, c, label):
    return LabeledPair(f"Q{q}", f"C{c}", q, c, label, PairKind.POSITIVE, "US")


@pytest.fixture
def toy_task():
    """Eight short title pairs with labels tied to token overlap."""
    titles = ["red mug", "red cup", "blue mug", "green bowl",
              "red bowl", "blue cup", "green mug", "blue bowl"]
    pairs = []
    for i, (a, b) in enumerate(zip(titles, titles[1:] + titles[:1])):
        overlap = len(set(a.split()) & set(b.split()))
        pairs.append(lp(a, b, float(overlap)))
    vocab = build_vocab([tokenize(t) for t in titles])
    return pairs, vocab


def small_train_config(**overrides):
    kwargs = dict(batch_size=4, epochs=12, learning_rate=3e-3, seed=0)
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=-1)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(loss="huber")


def test_encode_pairs_layout(toy_task):
    pairs, vocab = toy_task
    tokens = encode_pairs(pairs, vocab, max_len=10)
    assert tokens.shape == (len(pairs), 10)
    assert tokens.dtype == np.int64
    want = encode_pair(
        tokenize(pairs[0].query_title), tokenize(pairs[0].candidate_title), vocab, 10
    )
    np.testing.assert_array_equal(tokens[0], want)


def test_train_zero_epochs_returns_init(toy_task):
    pairs, vocab = toy_task
    split = DatasetSplit(train=pairs, validation=[])
    model, history = train(split, vocab, SMALL, small_train_config(epochs=0))
    assert history == []
    from subrank.seeding import derive_seed

    reference = init_model(SMALL, derive_seed(0, "init"))
    for name in model.parameter_names:
        np.testing.assert_array_equal(model.params[name], reference.params[name])


def test_train_learns_and_is_deterministic(toy_task):
    pairs, vocab = toy_task
    split = DatasetSplit(train=pairs, validation=[])
    model_a, hist_a = train(split, vocab, SMALL, small_train_config())
    model_b, hist_b = train(split, vocab, SMALL, small_train_config())
    assert hist_a == hist_b
    for name in model_a.parameter_names:
        np.testing.assert_array_equal(model_a.params[name], model_b.params[name])
    assert hist_a[-1]["train_loss"] < hist_a[0]["train_loss"]
    assert all(h["val_loss"] is None for h in hist_a)


def test_train_keeps_best_validation_epoch(toy_task):
    pairs, vocab = toy_task
    split = DatasetSplit(train=pairs[:6], validation=pairs[6:])
    model, history = train(split, vocab, SMALL, small_train_config(epochs=8))
    best = min(h["val_loss"] for h in history)
    scores = score_pairs(model, split.validation, vocab)
    labels = np.array([p.label for p in split.validation])
    returned = float(np.mean((scores - labels) ** 2))
    assert returned == pytest.approx(best, abs=1e-12)


def test_train_rejects_empty_split(toy_task):
    _, vocab = toy_task
    with pytest.raises(DataError, match="empty"):
        train(DatasetSplit(train=[], validation=[]), vocab, SMALL, small_train_config())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # overflow is the point
def test_train_reports_divergence(toy_task):
    pairs, vocab = toy_task
    split = DatasetSplit(train=pairs, validation=[])
    with pytest.raises(TrainingDivergedError) as exc_info:
        train(split, vocab, SMALL,
              small_train_config(learning_rate=1e6, epochs=40, weight_decay=0.01))
    assert exc_info.value.epoch >= 0


# --- scoring and serialization -------------------------------------------


def test_score_pairs_empty_and_chunking(toy_task):
    pairs, vocab = toy_task
    model = init_model(SMALL, seed=2)
    assert score_pairs(model, [], vocab).shape == (0,)
    all_at_once = score_pairs(model, pairs, vocab, batch_size=256)
    chunked = score_pairs(model, pairs, vocab, batch_size=3)
    # BLAS blocking depends on matrix shape, so only near-equality holds
    np.testing.assert_allclose(chunked, all_at_once, rtol=0, atol=1e-12)


def test_save_load_round_trip(toy_task, tmp_path):
    pairs, vocab = toy_task
    model = init_model(
        CrossEncoderConfig(vocab_size=len(vocab.tokens), d_model=8, n_heads=2,
                           n_layers=1, d_ff=16, max_len=10, dropout_rate=0.0),
        seed=5,
    )
    save_model(model, vocab, tmp_path / "model")
    loaded, loaded_vocab = load_model(tmp_path / "model")
    assert loaded.config == model.config
    assert loaded_vocab.tokens == vocab.tokens
    for name in model.parameter_names:
        np.testing.assert_array_equal(loaded.params[name], model.params[name])
    np.testing.assert_array_equal(
        score_pairs(loaded, pairs, loaded_vocab), score_pairs(model, pairs, vocab)
    )


def test_load_rejects_foreign_manifest(tmp_path):
    directory = tmp_path / "model"
    directory.mkdir()
    (directory / "manifest.json").write_text('{"format": "other"}')
    (directory / "params.bin").write_bytes(b"")
    with pytest.raises(DataError, match="not a cross-encoder"):
        load_model(directory)


def test_load_rejects_truncated_blob(toy_task, tmp_path):
    _, vocab = toy_task
    model = init_model(
        CrossEncoderConfig(vocab_size=len(vocab.tokens), d_model=8, n_heads=2,
                           n_layers=1, d_ff=16, max_len=10, dropout_rate=0.0),
        seed=5,
    )
    save_model(model, vocab, tmp_path / "model")
    blob = (tmp_path / "model" / "params.bin").read_bytes()
    (tmp_path / "model" / "params.bin").write_bytes(blob[:-16])
    with pytest.raises(DataError, match="declares"):
        load_model(tmp_path / "model")
