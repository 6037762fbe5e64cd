"""Interaction-based transformer scorer over jointly encoded title pairs.

Everything is explicit double-precision numpy: forward pass, reverse-mode
backward pass, AdamW, and the training loop. No autograd framework.

Architecture: token + learned positional embeddings, then ``n_layers`` of
pre-norm blocks (norm -> multi-head self-attention with PAD key masking ->
residual, norm -> GELU feed-forward -> residual), a final norm, the CLS
position vector, and a linear head producing one real score per sequence.
Dropout (inverted scaling) is active only when a training RNG is supplied;
scoring is deterministic.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf

from .data import DatasetSplit, LabeledPair
from .errors import ConfigError, DataError, TrainingDivergedError
from .seeding import derive_seed
from .text import PAD_ID, Vocabulary, encode_pair, tokenize

LN_EPS = 1e-5
MASK_FILL = -1e9
LOSS_KINDS = ("mse", "logistic")


@dataclass(frozen=True)
class CrossEncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 128
    max_len: int = 64
    dropout_rate: float = 0.1

    def __post_init__(self):
        if min(self.vocab_size, self.d_model, self.n_heads, self.n_layers, self.d_ff) < 1:
            raise ConfigError(f"model dimensions must be positive: {self}")
        if self.max_len < 5:
            raise ConfigError(f"max_len must be >= 5, got {self.max_len}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


def parameter_shapes(config: CrossEncoderConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Declared parameter order; serialization and the optimizer follow it."""
    d, f = config.d_model, config.d_ff
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("token_embedding", (config.vocab_size, d)),
        ("position_embedding", (config.max_len, d)),
    ]
    for i in range(config.n_layers):
        p = f"layer{i}."
        shapes += [
            (p + "attn_norm.gain", (d,)),
            (p + "attn_norm.bias", (d,)),
            (p + "attn.wq", (d, d)),
            (p + "attn.bq", (d,)),
            (p + "attn.wk", (d, d)),
            (p + "attn.bk", (d,)),
            (p + "attn.wv", (d, d)),
            (p + "attn.bv", (d,)),
            (p + "attn.wo", (d, d)),
            (p + "attn.bo", (d,)),
            (p + "ffn_norm.gain", (d,)),
            (p + "ffn_norm.bias", (d,)),
            (p + "ffn.w1", (d, f)),
            (p + "ffn.b1", (f,)),
            (p + "ffn.w2", (f, d)),
            (p + "ffn.b2", (d,)),
        ]
    shapes += [
        ("final_norm.gain", (d,)),
        ("final_norm.bias", (d,)),
        ("head.weight", (d,)),
        ("head.bias", (1,)),
    ]
    return shapes


class CrossEncoderModel:
    def __init__(self, config: CrossEncoderConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params
        for name, shape in parameter_shapes(config):
            if name not in params or params[name].shape != shape:
                raise ConfigError(f"parameter {name!r} missing or misshaped")

    @property
    def parameter_names(self) -> list[str]:
        return [name for name, _ in parameter_shapes(self.config)]

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}


def init_model(config: CrossEncoderConfig, seed: int) -> CrossEncoderModel:
    """Scaled-normal init (std 0.02) for embeddings and projections, ones for
    norm gains, zeros for every bias. Deterministic per seed."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(config):
        if name.endswith(".gain"):
            params[name] = np.ones(shape, dtype=np.float64)
        elif name.endswith((".bias", ".bq", ".bk", ".bv", ".bo", ".b1", ".b2")):
            params[name] = np.zeros(shape, dtype=np.float64)
        else:
            params[name] = rng.normal(0.0, 0.02, size=shape)
    return CrossEncoderModel(config, params)


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return cdf + x * pdf


def _softmax_last(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _layernorm_fwd(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return gain * xhat + bias, (xhat, inv, gain)


def _layernorm_bwd(dy, cache):
    xhat, inv, gain = cache
    axes = tuple(range(dy.ndim - 1))
    dgain = (dy * xhat).sum(axis=axes)
    dbias = dy.sum(axis=axes)
    dxhat = dy * gain
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def _dropout(x, rate, rng):
    if rng is None or rate == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def _check_tokens(config: CrossEncoderConfig, tokens) -> np.ndarray:
    t = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    if t.ndim != 2 or t.shape[1] != config.max_len:
        raise DataError(f"token batch must be (B, {config.max_len}), got {t.shape}")
    if t.size and (t.min() < 0 or t.max() >= config.vocab_size):
        raise DataError(
            f"token id out of range [0, {config.vocab_size}): "
            f"min {t.min()}, max {t.max()}"
        )
    return t


def forward(model: CrossEncoderModel, tokens, dropout_rng=None):
    """Score a batch of encoded sequences. Returns (scores, cache); the cache
    feeds the backward pass and exposes per-layer attention probabilities."""
    cfg = model.config
    p = model.params
    t = _check_tokens(cfg, tokens)
    B, L = t.shape
    H, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
    scale = 1.0 / math.sqrt(dh)
    pad = t == PAD_ID  # (B, L); keys at these positions are masked out
    neg = np.where(pad, MASK_FILL, 0.0)[:, None, None, :]

    x0 = p["token_embedding"][t] + p["position_embedding"][None, :, :]
    x, emb_mask = _dropout(x0, cfg.dropout_rate, dropout_rng)

    layers = []
    attention = []
    for i in range(cfg.n_layers):
        pre = f"layer{i}."
        a_in = x
        h, ln1 = _layernorm_fwd(a_in, p[pre + "attn_norm.gain"], p[pre + "attn_norm.bias"])
        q = (h @ p[pre + "attn.wq"] + p[pre + "attn.bq"]).reshape(B, L, H, dh).transpose(0, 2, 1, 3)
        k = (h @ p[pre + "attn.wk"] + p[pre + "attn.bk"]).reshape(B, L, H, dh).transpose(0, 2, 1, 3)
        v = (h @ p[pre + "attn.wv"] + p[pre + "attn.bv"]).reshape(B, L, H, dh).transpose(0, 2, 1, 3)
        scores = q @ k.transpose(0, 1, 3, 2) * scale + neg
        att = _softmax_last(scores)
        ctx = (att @ v).transpose(0, 2, 1, 3).reshape(B, L, cfg.d_model)
        out = ctx @ p[pre + "attn.wo"] + p[pre + "attn.bo"]
        out, attn_mask = _dropout(out, cfg.dropout_rate, dropout_rng)
        x = a_in + out

        f_in = x
        h2, ln2 = _layernorm_fwd(f_in, p[pre + "ffn_norm.gain"], p[pre + "ffn_norm.bias"])
        z1 = h2 @ p[pre + "ffn.w1"] + p[pre + "ffn.b1"]
        a1 = _gelu(z1)
        z2 = a1 @ p[pre + "ffn.w2"] + p[pre + "ffn.b2"]
        z2, ffn_mask = _dropout(z2, cfg.dropout_rate, dropout_rng)
        x = f_in + z2

        layers.append(
            dict(h=h, ln1=ln1, q=q, k=k, v=v, att=att, ctx=ctx,
                 attn_mask=attn_mask, h2=h2, ln2=ln2, z1=z1, a1=a1,
                 ffn_mask=ffn_mask)
        )
        attention.append(att)

    xf, lnf = _layernorm_fwd(x, p["final_norm.gain"], p["final_norm.bias"])
    cls = xf[:, 0, :]
    out_scores = cls @ p["head.weight"] + p["head.bias"][0]

    cache = dict(tokens=t, pad_mask=pad, emb_mask=emb_mask, layers=layers,
                 lnf=lnf, cls=cls, attention=attention, shape=(B, L, H, dh),
                 scale=scale)
    return out_scores, cache


def _loss_and_dscores(loss_kind: str, scores: np.ndarray, labels: np.ndarray):
    n = scores.size
    if loss_kind == "mse":
        resid = scores - labels
        return float(np.mean(resid**2)), 2.0 * resid / n
    if loss_kind == "logistic":
        if not np.all((labels == 0) | (labels == 1)):
            raise DataError("logistic loss requires labels in {0, 1}")
        softplus = np.maximum(scores, 0.0) + np.log1p(np.exp(-np.abs(scores)))
        sig = np.where(
            scores >= 0,
            1.0 / (1.0 + np.exp(-np.maximum(scores, 0.0))),
            np.exp(np.minimum(scores, 0.0)) / (1.0 + np.exp(np.minimum(scores, 0.0))),
        )
        return float(np.mean(softplus - labels * scores)), (sig - labels) / n
    raise ConfigError(f"loss must be one of {LOSS_KINDS}, got {loss_kind!r}")


def loss_and_grad(model: CrossEncoderModel, tokens, labels, loss_kind: str = "mse",
                  dropout_rng=None):
    """Full reverse-mode pass. Returns (loss, grads) with one gradient array
    per parameter, shaped like the parameter."""
    cfg = model.config
    p = model.params
    y = np.atleast_1d(np.asarray(labels, dtype=np.float64))
    scores, cache = forward(model, tokens, dropout_rng)
    if y.shape != scores.shape:
        raise DataError(f"labels shape {y.shape} does not match batch {scores.shape}")
    loss, ds = _loss_and_dscores(loss_kind, scores, y)

    B, L, H, dh = cache["shape"]
    grads = {name: np.zeros_like(arr) for name, arr in p.items()}

    grads["head.weight"] += cache["cls"].T @ ds
    grads["head.bias"][0] = ds.sum()
    d_cls = ds[:, None] * p["head.weight"][None, :]
    d_xf = np.zeros((B, L, cfg.d_model))
    d_xf[:, 0, :] = d_cls
    d_x, dg, db = _layernorm_bwd(d_xf, cache["lnf"])
    grads["final_norm.gain"] += dg
    grads["final_norm.bias"] += db

    for i in reversed(range(cfg.n_layers)):
        pre = f"layer{i}."
        c = cache["layers"][i]

        # feed-forward block: x = f_in + dropout(gelu(h2 w1 + b1) w2 + b2)
        d_z2 = d_x if c["ffn_mask"] is None else d_x * c["ffn_mask"]
        flat_a1 = c["a1"].reshape(-1, cfg.d_ff)
        grads[pre + "ffn.w2"] += flat_a1.T @ d_z2.reshape(-1, cfg.d_model)
        grads[pre + "ffn.b2"] += d_z2.sum(axis=(0, 1))
        d_a1 = d_z2 @ p[pre + "ffn.w2"].T
        d_z1 = d_a1 * _gelu_grad(c["z1"])
        flat_h2 = c["h2"].reshape(-1, cfg.d_model)
        grads[pre + "ffn.w1"] += flat_h2.T @ d_z1.reshape(-1, cfg.d_ff)
        grads[pre + "ffn.b1"] += d_z1.sum(axis=(0, 1))
        d_h2 = d_z1 @ p[pre + "ffn.w1"].T
        d_f_in, dg, db = _layernorm_bwd(d_h2, c["ln2"])
        grads[pre + "ffn_norm.gain"] += dg
        grads[pre + "ffn_norm.bias"] += db
        d_x = d_x + d_f_in

        # attention block: x = a_in + dropout((softmax(qk/s + mask) v) wo + bo)
        d_out = d_x if c["attn_mask"] is None else d_x * c["attn_mask"]
        flat_ctx = c["ctx"].reshape(-1, cfg.d_model)
        grads[pre + "attn.wo"] += flat_ctx.T @ d_out.reshape(-1, cfg.d_model)
        grads[pre + "attn.bo"] += d_out.sum(axis=(0, 1))
        d_ctx = (d_out @ p[pre + "attn.wo"].T).reshape(B, L, H, dh).transpose(0, 2, 1, 3)
        att, v = c["att"], c["v"]
        d_att = d_ctx @ v.transpose(0, 1, 3, 2)
        d_v = att.transpose(0, 1, 3, 2) @ d_ctx
        d_sc = att * (d_att - (d_att * att).sum(axis=-1, keepdims=True))
        d_q = d_sc @ c["k"] * cache["scale"]
        d_k = d_sc.transpose(0, 1, 3, 2) @ c["q"] * cache["scale"]

        def unhead(a):
            return a.transpose(0, 2, 1, 3).reshape(B, L, cfg.d_model)

        d_qf, d_kf, d_vf = unhead(d_q), unhead(d_k), unhead(d_v)
        flat_h = c["h"].reshape(-1, cfg.d_model)
        for mat, dflat in (("wq", d_qf), ("wk", d_kf), ("wv", d_vf)):
            grads[pre + f"attn.{mat}"] += flat_h.T @ dflat.reshape(-1, cfg.d_model)
            grads[pre + f"attn.b{mat[-1]}"] += dflat.sum(axis=(0, 1))
        d_h = (
            d_qf @ p[pre + "attn.wq"].T
            + d_kf @ p[pre + "attn.wk"].T
            + d_vf @ p[pre + "attn.wv"].T
        )
        d_a_in, dg, db = _layernorm_bwd(d_h, c["ln1"])
        grads[pre + "attn_norm.gain"] += dg
        grads[pre + "attn_norm.bias"] += db
        d_x = d_x + d_a_in

    d_x0 = d_x if cache["emb_mask"] is None else d_x * cache["emb_mask"]
    grads["position_embedding"] += d_x0.sum(axis=0)
    np.add.at(grads["token_embedding"], cache["tokens"], d_x0)
    return loss, grads


@dataclass
class OptimizerState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: CrossEncoderModel, **hyper) -> "OptimizerState":
        state = cls(**hyper)
        state.m = {k: np.zeros_like(p) for k, p in model.params.items()}
        state.v = {k: np.zeros_like(p) for k, p in model.params.items()}
        return state


def adamw_step(model: CrossEncoderModel, grads: dict[str, np.ndarray],
               state: OptimizerState) -> None:
    """One in-place AdamW update: decoupled decay on the weights themselves,
    then a bias-corrected Adam step ``w -= lr * mhat / (sqrt(vhat) + eps)``."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name in model.parameter_names:
        w = model.params[name]
        g = grads[name]
        w *= 1.0 - state.learning_rate * state.weight_decay
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        mhat = state.m[name] / bc1
        vhat = state.v[name] / bc2
        w -= state.learning_rate * mhat / (np.sqrt(vhat) + state.eps)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 10
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss: str = "mse"
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError(f"invalid batch_size/epochs: {self}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")


def encode_pairs(pairs: list[LabeledPair], vocab: Vocabulary, max_len: int) -> np.ndarray:
    rows = [
        encode_pair(tokenize(p.query_title), tokenize(p.candidate_title), vocab, max_len)
        for p in pairs
    ]
    return np.asarray(rows, dtype=np.int64).reshape(len(pairs), max_len)


def _eval_loss(model, tokens, labels, loss_kind, batch_size) -> float:
    total = 0.0
    for start in range(0, tokens.shape[0], batch_size):
        sl = slice(start, start + batch_size)
        scores, _ = forward(model, tokens[sl])
        chunk, _ = _loss_and_dscores(loss_kind, scores, labels[sl])
        total += chunk * len(labels[sl])
    return total / tokens.shape[0]


def train(split: DatasetSplit, vocab: Vocabulary, model_config: CrossEncoderConfig,
          train_config: TrainConfig):
    """Mini-batch AdamW training with a per-epoch seeded shuffle.

    Returns (model, history); the model carries the parameters of the epoch
    with the lowest validation loss (falling back to training loss when the
    validation side is empty). A non-finite loss aborts immediately with the
    offending epoch and batch index.
    """
    if not split.train:
        raise DataError("training split is empty")
    x_train = encode_pairs(split.train, vocab, model_config.max_len)
    y_train = np.asarray([p.label for p in split.train], dtype=np.float64)
    x_val = encode_pairs(split.validation, vocab, model_config.max_len)
    y_val = np.asarray([p.label for p in split.validation], dtype=np.float64)
    have_val = len(split.validation) > 0

    model = init_model(model_config, derive_seed(train_config.seed, "init"))
    state = OptimizerState.for_model(
        model,
        learning_rate=train_config.learning_rate,
        weight_decay=train_config.weight_decay,
        beta1=train_config.beta1,
        beta2=train_config.beta2,
        eps=train_config.eps,
    )
    shuffle_rng = np.random.default_rng(derive_seed(train_config.seed, "shuffle"))
    dropout_rng = np.random.default_rng(derive_seed(train_config.seed, "dropout"))

    n = x_train.shape[0]
    history: list[dict] = []
    best_loss = math.inf
    best_params = model.copy_params()
    for epoch in range(train_config.epochs):
        perm = shuffle_rng.permutation(n)
        running = 0.0
        for batch_index, start in enumerate(range(0, n, train_config.batch_size)):
            idx = perm[start:start + train_config.batch_size]
            loss, grads = loss_and_grad(
                model, x_train[idx], y_train[idx], train_config.loss, dropout_rng
            )
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}, batch {batch_index}",
                    epoch=epoch, batch=batch_index,
                )
            adamw_step(model, grads, state)
            running += loss * len(idx)
        train_loss = running / n
        val_loss = (
            _eval_loss(model, x_val, y_val, train_config.loss, train_config.batch_size)
            if have_val else None
        )
        selector = val_loss if have_val else train_loss
        if not math.isfinite(selector):
            raise TrainingDivergedError(
                f"non-finite validation loss after epoch {epoch}",
                epoch=epoch, batch=-1,
            )
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        if selector < best_loss:
            best_loss = selector
            best_params = model.copy_params()
    model.params = best_params
    return model, history


def score_pairs(model: CrossEncoderModel, pairs, vocab: Vocabulary,
                batch_size: int = 256) -> np.ndarray:
    """Deterministic scores (dropout off), one per pair, in input order."""
    if not len(pairs):
        return np.zeros(0, dtype=np.float64)
    tokens = np.asarray(
        [
            encode_pair(
                tokenize(p.query_title), tokenize(p.candidate_title),
                vocab, model.config.max_len,
            )
            for p in pairs
        ],
        dtype=np.int64,
    )
    chunks = []
    for start in range(0, tokens.shape[0], batch_size):
        scores, _ = forward(model, tokens[start:start + batch_size])
        chunks.append(scores)
    return np.concatenate(chunks)


MANIFEST_NAME = "manifest.json"
PARAMS_NAME = "params.bin"


def save_model(model: CrossEncoderModel, vocab: Vocabulary, directory: str | Path) -> None:
    """Write a manifest (config, vocab, parameter layout) plus one flat
    little-endian float64 blob holding the parameters in declared order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    layout = []
    offset = 0
    blobs = []
    for name in model.parameter_names:
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        layout.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        blobs.append(arr.tobytes())
    manifest = {
        "format": "subrank-crossenc",
        "version": 1,
        "config": asdict(model.config),
        "vocab": list(vocab.tokens),
        "parameters": layout,
        "total_values": offset,
    }
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest, sort_keys=True, ensure_ascii=False), encoding="utf-8"
    )
    (directory / PARAMS_NAME).write_bytes(b"".join(blobs))


def load_model(directory: str | Path) -> tuple[CrossEncoderModel, Vocabulary]:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_NAME).read_text(encoding="utf-8"))
    if manifest.get("format") != "subrank-crossenc":
        raise DataError(f"not a cross-encoder artifact: {directory}")
    config = CrossEncoderConfig(**manifest["config"])
    raw = np.frombuffer((directory / PARAMS_NAME).read_bytes(), dtype="<f8")
    if raw.size != manifest["total_values"]:
        raise DataError(
            f"parameter blob holds {raw.size} values, manifest declares "
            f"{manifest['total_values']}"
        )
    params = {}
    for entry in manifest["parameters"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        chunk = raw[entry["offset"]:entry["offset"] + size]
        params[entry["name"]] = chunk.reshape(entry["shape"]).astype(np.float64)
    return CrossEncoderModel(config, params), Vocabulary(list(manifest["vocab"]))
