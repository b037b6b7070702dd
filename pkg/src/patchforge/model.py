"""Transformer encoder-decoder in plain numpy with hand-written gradients.

The model maximizes the factorized conditional probability of the output
sequence given the input sequence: the encoder maps source ids to hidden
states H, and the decoder predicts each target position from H and the
target prefix under a causal mask.

Post-layer-norm architecture, sinusoidal positions, separate source/target
embeddings and output projection. Masked attention uses -inf logits, so
outputs at position i are exactly (bitwise) independent of positions > i.
float32 by default; the gradient-check path runs the same graph in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codec import BOS, EOS, PAD
from .errors import DataError, NumericsError, UsageError

NEG_INF = float("-inf")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 256
    max_positions: int = 256
    dropout: float = 0.0
    dtype: str = "float32"

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise UsageError(
                f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise UsageError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.vocab_size < 4:
            raise UsageError("vocab_size must cover pad/bos/eos plus content")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def as_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "d_ff": self.d_ff,
            "max_positions": self.max_positions,
            "dropout": self.dropout,
            "dtype": self.dtype,
        }


Params = dict[str, np.ndarray]


def _glorot(rng: np.random.Generator, shape: tuple[int, int], dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _attn_param_names(prefix: str) -> list[str]:
    return [f"{prefix}.{n}" for n in ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")]


def init_params(config: ModelConfig, rng: np.random.Generator) -> Params:
    """Fresh trainable tensors; iteration order is fixed by construction."""
    d, f, v = config.d_model, config.d_ff, config.vocab_size
    dt = config.np_dtype
    params: Params = {}
    params["src_embed"] = (rng.standard_normal((v, d)) * d**-0.5).astype(dt)
    params["tgt_embed"] = (rng.standard_normal((v, d)) * d**-0.5).astype(dt)

    def add_attn(prefix: str):
        for n in ("wq", "wk", "wv", "wo"):
            params[f"{prefix}.{n}"] = _glorot(rng, (d, d), dt)
        for n in ("bq", "bk", "bv", "bo"):
            params[f"{prefix}.{n}"] = np.zeros(d, dtype=dt)

    def add_ln(prefix: str):
        params[f"{prefix}.g"] = np.ones(d, dtype=dt)
        params[f"{prefix}.b"] = np.zeros(d, dtype=dt)

    def add_ffn(prefix: str):
        params[f"{prefix}.w1"] = _glorot(rng, (d, f), dt)
        params[f"{prefix}.b1"] = np.zeros(f, dtype=dt)
        params[f"{prefix}.w2"] = _glorot(rng, (f, d), dt)
        params[f"{prefix}.b2"] = np.zeros(d, dtype=dt)

    for i in range(config.n_layers):
        add_attn(f"enc.{i}.self")
        add_ln(f"enc.{i}.ln1")
        add_ffn(f"enc.{i}.ffn")
        add_ln(f"enc.{i}.ln2")
    for i in range(config.n_layers):
        add_attn(f"dec.{i}.self")
        add_ln(f"dec.{i}.ln1")
        add_attn(f"dec.{i}.cross")
        add_ln(f"dec.{i}.ln2")
        add_ffn(f"dec.{i}.ffn")
        add_ln(f"dec.{i}.ln3")
    params["out.w"] = _glorot(rng, (d, v), dt)
    params["out.b"] = np.zeros(v, dtype=dt)
    return params


def positional_encoding(length: int, d_model: int, dtype) -> np.ndarray:
    """Standard sinusoidal table [length, d_model]."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    dim = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2 * (dim // 2)) / d_model)
    table = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(dtype)


def _check_finite(name: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.isfinite(a).all():
            raise NumericsError(f"non-finite activation in {name}")


def _check_ids(ids: np.ndarray, vocab_size: int, what: str) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise DataError(f"{what} id out of range [0, {vocab_size})")


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    z = x - m
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


# ---------------------------------------------------------------------------
# Primitive layers: each forward returns (output, cache) and each backward
# consumes (upstream gradient, cache).
# ---------------------------------------------------------------------------


def _linear_fwd(x, w, b):
    return x @ w + b, (x, w)


def _linear_bwd(dy, cache):
    x, w = cache
    dx = dy @ w.T
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw = x2.T @ dy2
    db = dy2.sum(axis=0)
    return dx, dw, db


_LN_EPS = 1e-5


def _layernorm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv_std
    return xhat * g + b, (xhat, inv_std, g)


def _layernorm_bwd(dy, cache):
    xhat, inv_std, g = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    dxhat = dy * g
    mean1 = dxhat.mean(axis=-1, keepdims=True)
    mean2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv_std * (dxhat - mean1 - xhat * mean2)
    return dx, dg, db


def _softmax_bwd(da, a):
    return a * (da - np.sum(da * a, axis=-1, keepdims=True))


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _join_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def _attention_fwd(q_in, kv_in, params, prefix, mask, n_heads):
    """Multi-head attention; ``mask`` is a boolean [B or 1, 1, Tq, Tk] array
    that is True where attention is allowed. Disallowed logits are -inf, so
    masked positions contribute exactly zero."""
    q, cq = _linear_fwd(q_in, params[f"{prefix}.wq"], params[f"{prefix}.bq"])
    k, ck = _linear_fwd(kv_in, params[f"{prefix}.wk"], params[f"{prefix}.bk"])
    v, cv = _linear_fwd(kv_in, params[f"{prefix}.wv"], params[f"{prefix}.bv"])
    qh, kh, vh = (_split_heads(x, n_heads) for x in (q, k, v))
    scale = 1.0 / np.sqrt(qh.shape[-1])
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    scores = np.where(mask, scores, NEG_INF)
    attn = softmax(scores)
    ctx = attn @ vh
    joined = _join_heads(ctx)
    out, co = _linear_fwd(joined, params[f"{prefix}.wo"], params[f"{prefix}.bo"])
    cache = (cq, ck, cv, co, qh, kh, vh, attn, scale, n_heads)
    return out, cache


def _attention_bwd(dout, cache, grads, prefix):
    cq, ck, cv, co, qh, kh, vh, attn, scale, n_heads = cache
    djoined, dwo, dbo = _linear_bwd(dout, co)
    grads[f"{prefix}.wo"] += dwo
    grads[f"{prefix}.bo"] += dbo
    dctx = _split_heads(djoined, n_heads)
    dattn = dctx @ vh.transpose(0, 1, 3, 2)
    dvh = attn.transpose(0, 1, 3, 2) @ dctx
    dscores = _softmax_bwd(dattn, attn) * scale
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 1, 3, 2) @ qh
    dq, dk, dv = (_join_heads(x) for x in (dqh, dkh, dvh))
    dq_in, dwq, dbq = _linear_bwd(dq, cq)
    dk_in, dwk, dbk = _linear_bwd(dk, ck)
    dv_in, dwv, dbv = _linear_bwd(dv, cv)
    grads[f"{prefix}.wq"] += dwq
    grads[f"{prefix}.bq"] += dbq
    grads[f"{prefix}.wk"] += dwk
    grads[f"{prefix}.bk"] += dbk
    grads[f"{prefix}.wv"] += dwv
    grads[f"{prefix}.bv"] += dbv
    return dq_in, dk_in + dv_in


def _ffn_fwd(x, params, prefix):
    h_pre, c1 = _linear_fwd(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"])
    h = np.maximum(h_pre, 0.0)
    out, c2 = _linear_fwd(h, params[f"{prefix}.w2"], params[f"{prefix}.b2"])
    return out, (c1, c2, h_pre)


def _ffn_bwd(dout, cache, grads, prefix):
    c1, c2, h_pre = cache
    dh, dw2, db2 = _linear_bwd(dout, c2)
    grads[f"{prefix}.w2"] += dw2
    grads[f"{prefix}.b2"] += db2
    dh_pre = dh * (h_pre > 0)
    dx, dw1, db1 = _linear_bwd(dh_pre, c1)
    grads[f"{prefix}.w1"] += dw1
    grads[f"{prefix}.b1"] += db1
    return dx


def _dropout_fwd(x, p, rng):
    if p <= 0.0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * keep, keep


def _dropout_bwd(dy, keep):
    return dy if keep is None else dy * keep


# ---------------------------------------------------------------------------
# Full model
# ---------------------------------------------------------------------------


def _embed_fwd(ids, table, pe, scale):
    return table[ids] * scale + pe[: ids.shape[1]]


def _make_masks(src_ids, tgt_len, dtype_bool=bool):
    """(encoder self, decoder self, cross) attention masks."""
    src_allowed = src_ids != PAD  # [B,S]
    enc_mask = src_allowed[:, None, None, :]  # queries may attend non-pad keys
    causal = np.tril(np.ones((tgt_len, tgt_len), dtype=dtype_bool))
    dec_mask = causal[None, None, :, :]
    cross_mask = src_allowed[:, None, None, :]
    return enc_mask, dec_mask, cross_mask


def forward_train(
    params: Params,
    config: ModelConfig,
    src_ids: np.ndarray,
    tgt_in_ids: np.ndarray,
    rng: np.random.Generator | None = None,
    check: bool = True,
):
    """Logits [B, T, vocab] plus the tape needed for the backward pass."""
    src_ids = np.asarray(src_ids)
    tgt_in_ids = np.asarray(tgt_in_ids)
    _check_ids(src_ids, config.vocab_size, "source")
    _check_ids(tgt_in_ids, config.vocab_size, "target")
    s_len, t_len = src_ids.shape[1], tgt_in_ids.shape[1]
    if s_len > config.max_positions or t_len > config.max_positions:
        raise DataError(
            f"sequence length ({s_len} source / {t_len} target) exceeds "
            f"max_positions={config.max_positions}"
        )
    dt = config.np_dtype
    scale = dt.type(np.sqrt(config.d_model))
    pe = positional_encoding(config.max_positions, config.d_model, dt)
    p = config.dropout

    tape: dict = {"src_ids": src_ids, "tgt_ids": tgt_in_ids, "scale": scale}
    enc_mask, dec_mask, cross_mask = _make_masks(src_ids, t_len)

    x = _embed_fwd(src_ids, params["src_embed"], pe, scale)
    x, tape["enc_drop"] = _dropout_fwd(x, p, rng)
    if check:
        _check_finite("encoder embedding", x)
    enc_layers = []
    for i in range(config.n_layers):
        pre = f"enc.{i}"
        attn_out, attn_cache = _attention_fwd(x, x, params, f"{pre}.self", enc_mask, config.n_heads)
        attn_out, drop1 = _dropout_fwd(attn_out, p, rng)
        x1, ln1_cache = _layernorm_fwd(x + attn_out, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
        ffn_out, ffn_cache = _ffn_fwd(x1, params, f"{pre}.ffn")
        ffn_out, drop2 = _dropout_fwd(ffn_out, p, rng)
        x, ln2_cache = _layernorm_fwd(x1 + ffn_out, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
        if check:
            _check_finite(f"encoder layer {i}", x)
        enc_layers.append((attn_cache, drop1, ln1_cache, ffn_cache, drop2, ln2_cache))
    tape["enc_layers"] = enc_layers
    memory = x

    y = _embed_fwd(tgt_in_ids, params["tgt_embed"], pe, scale)
    y, tape["dec_drop"] = _dropout_fwd(y, p, rng)
    if check:
        _check_finite("decoder embedding", y)
    dec_layers = []
    for i in range(config.n_layers):
        pre = f"dec.{i}"
        self_out, self_cache = _attention_fwd(y, y, params, f"{pre}.self", dec_mask, config.n_heads)
        self_out, drop1 = _dropout_fwd(self_out, p, rng)
        y1, ln1_cache = _layernorm_fwd(y + self_out, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
        cross_out, cross_cache = _attention_fwd(
            y1, memory, params, f"{pre}.cross", cross_mask, config.n_heads
        )
        cross_out, drop2 = _dropout_fwd(cross_out, p, rng)
        y2, ln2_cache = _layernorm_fwd(y1 + cross_out, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
        ffn_out, ffn_cache = _ffn_fwd(y2, params, f"{pre}.ffn")
        ffn_out, drop3 = _dropout_fwd(ffn_out, p, rng)
        y, ln3_cache = _layernorm_fwd(y2 + ffn_out, params[f"{pre}.ln3.g"], params[f"{pre}.ln3.b"])
        if check:
            _check_finite(f"decoder layer {i}", y)
        dec_layers.append(
            (self_cache, drop1, ln1_cache, cross_cache, drop2, ln2_cache, ffn_cache, drop3, ln3_cache)
        )
    tape["dec_layers"] = dec_layers

    logits, out_cache = _linear_fwd(y, params["out.w"], params["out.b"])
    if check:
        _check_finite("output projection", logits)
    tape["out_cache"] = out_cache
    tape["memory"] = memory
    return logits, tape


def backward(
    params: Params, config: ModelConfig, tape: dict, dlogits: np.ndarray
) -> Params:
    """Gradients for every parameter tensor, mirroring forward_train."""
    grads: Params = {k: np.zeros_like(v) for k, v in params.items()}
    scale = tape["scale"]

    dy, dw, db = _linear_bwd(dlogits, tape["out_cache"])
    grads["out.w"] += dw
    grads["out.b"] += db

    dmemory = np.zeros_like(tape["memory"])
    for i in reversed(range(config.n_layers)):
        pre = f"dec.{i}"
        self_cache, drop1, ln1_cache, cross_cache, drop2, ln2_cache, ffn_cache, drop3, ln3_cache = tape[
            "dec_layers"
        ][i]
        dy2_plus_ffn, dg, dbias = _layernorm_bwd(dy, ln3_cache)
        grads[f"{pre}.ln3.g"] += dg
        grads[f"{pre}.ln3.b"] += dbias
        dffn = _dropout_bwd(dy2_plus_ffn, drop3)
        dy2 = dy2_plus_ffn + _ffn_bwd(dffn, ffn_cache, grads, f"{pre}.ffn")
        dy1_plus_cross, dg, dbias = _layernorm_bwd(dy2, ln2_cache)
        grads[f"{pre}.ln2.g"] += dg
        grads[f"{pre}.ln2.b"] += dbias
        dcross = _dropout_bwd(dy1_plus_cross, drop2)
        dq_in, dkv = _attention_bwd(dcross, cross_cache, grads, f"{pre}.cross")
        dmemory += dkv
        dy1 = dy1_plus_cross + dq_in
        dy_plus_self, dg, dbias = _layernorm_bwd(dy1, ln1_cache)
        grads[f"{pre}.ln1.g"] += dg
        grads[f"{pre}.ln1.b"] += dbias
        dself = _dropout_bwd(dy_plus_self, drop1)
        dq_in, dkv = _attention_bwd(dself, self_cache, grads, f"{pre}.self")
        dy = dy_plus_self + dq_in + dkv

    dy = _dropout_bwd(dy, tape["dec_drop"])
    np.add.at(grads["tgt_embed"], tape["tgt_ids"], dy * scale)

    dx = dmemory
    for i in reversed(range(config.n_layers)):
        pre = f"enc.{i}"
        attn_cache, drop1, ln1_cache, ffn_cache, drop2, ln2_cache = tape["enc_layers"][i]
        dx1_plus_ffn, dg, dbias = _layernorm_bwd(dx, ln2_cache)
        grads[f"{pre}.ln2.g"] += dg
        grads[f"{pre}.ln2.b"] += dbias
        dffn = _dropout_bwd(dx1_plus_ffn, drop2)
        dx1 = dx1_plus_ffn + _ffn_bwd(dffn, ffn_cache, grads, f"{pre}.ffn")
        dx_plus_attn, dg, dbias = _layernorm_bwd(dx1, ln1_cache)
        grads[f"{pre}.ln1.g"] += dg
        grads[f"{pre}.ln1.b"] += dbias
        dattn = _dropout_bwd(dx_plus_attn, drop1)
        dq_in, dkv = _attention_bwd(dattn, attn_cache, grads, f"{pre}.self")
        dx = dx_plus_attn + dq_in + dkv

    dx = _dropout_bwd(dx, tape["enc_drop"])
    np.add.at(grads["src_embed"], tape["src_ids"], dx * scale)
    return grads


def forward(
    params: Params,
    config: ModelConfig,
    src_ids: np.ndarray,
    tgt_prefix_ids: np.ndarray,
    check: bool = True,
) -> np.ndarray:
    """Next-token probability distributions at every target position.

    Position i depends only on the source and target positions < i.
    """
    logits, _ = forward_train(params, config, src_ids, tgt_prefix_ids, rng=None, check=check)
    return softmax(logits)


@dataclass
class TrainingBatch:
    source: np.ndarray  # [B, S], PAD-padded
    target_in: np.ndarray  # [B, T], BOS-prefixed
    target_out: np.ndarray  # [B, T], EOS-suffixed

    def __post_init__(self):
        if self.target_in.shape != self.target_out.shape:
            raise DataError("target_in and target_out must be shifted views of one sequence")


def make_batch(examples: list[tuple[list[int], list[int]]], dtype=np.int64) -> TrainingBatch:
    """Pad a list of (source ids, target ids) into one batch."""
    if not examples:
        raise DataError("empty batch")
    s_max = max(len(s) for s, _ in examples)
    t_max = max(len(t) for _, t in examples) + 1  # room for BOS/EOS shift
    b = len(examples)
    src = np.full((b, s_max), PAD, dtype=dtype)
    tin = np.full((b, t_max), PAD, dtype=dtype)
    tout = np.full((b, t_max), PAD, dtype=dtype)
    for r, (s, t) in enumerate(examples):
        src[r, : len(s)] = s
        tin[r, 0] = BOS
        tin[r, 1 : len(t) + 1] = t
        tout[r, : len(t)] = t
        tout[r, len(t)] = EOS
    return TrainingBatch(src, tin, tout)


def loss_and_gradients(
    params: Params,
    config: ModelConfig,
    batch: TrainingBatch,
    rng: np.random.Generator | None = None,
) -> tuple[float, Params]:
    """Mean negative log-likelihood over non-pad target positions, plus
    exact gradients for the implemented graph."""
    logits, tape = forward_train(params, config, batch.source, batch.target_in, rng=rng)
    loss, dlogits = nll_and_dlogits(logits, batch.target_out)
    if not np.isfinite(loss):
        raise NumericsError("NaN loss")
    grads = backward(params, config, tape, dlogits)
    return float(loss), grads


def nll_and_dlogits(logits: np.ndarray, target_out: np.ndarray):
    mask = target_out != PAD
    n = int(mask.sum())
    if n == 0:
        raise DataError("batch has no non-pad target positions")
    logp = log_softmax(logits)
    b_idx, t_idx = np.nonzero(mask)
    picked = logp[b_idx, t_idx, target_out[b_idx, t_idx]]
    loss = -picked.sum() / n
    probs = np.exp(logp)
    dlogits = probs * (mask[..., None] / n)
    dlogits[b_idx, t_idx, target_out[b_idx, t_idx]] -= 1.0 / n
    return loss, dlogits


def per_position_nll(params: Params, config: ModelConfig, batch: TrainingBatch) -> np.ndarray:
    """-log p(target_out) at every position (pad positions zeroed); used to
    verify that losses do not depend on batch composition."""
    logits, _ = forward_train(params, config, batch.source, batch.target_in)
    logp = log_softmax(logits)
    target_mask = batch.target_out != PAD
    out = np.zeros(batch.target_out.shape, dtype=logits.dtype)
    b_idx, t_idx = np.nonzero(target_mask)
    out[b_idx, t_idx] = -logp[b_idx, t_idx, batch.target_out[b_idx, t_idx]]
    return out


# ---------------------------------------------------------------------------
# Incremental decoding with key/value caches (inference only)
# ---------------------------------------------------------------------------


class IncrementalDecoder:
    """Stepwise decoder over a fixed source batch.

    Encodes the source once, precomputes cross-attention keys/values, and
    extends per-layer self-attention caches one target position at a time.
    Rows of the batch are independent hypotheses; ``reorder`` gathers the
    caches when beam search reshuffles them.
    """

    def __init__(self, params: Params, config: ModelConfig, src_ids: np.ndarray):
        self.params = params
        self.config = config
        src_ids = np.atleast_2d(np.asarray(src_ids))
        _check_ids(src_ids, config.vocab_size, "source")
        dt = config.np_dtype
        self.pe = positional_encoding(config.max_positions, config.d_model, dt)
        self.scale = dt.type(np.sqrt(config.d_model))
        enc_mask = (src_ids != PAD)[:, None, None, :]
        x = _embed_fwd(src_ids, params["src_embed"], self.pe, self.scale)
        for i in range(config.n_layers):
            pre = f"enc.{i}"
            attn, _ = _attention_fwd(x, x, params, f"{pre}.self", enc_mask, config.n_heads)
            x1, _ = _layernorm_fwd(x + attn, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
            ffn, _ = _ffn_fwd(x1, params, f"{pre}.ffn")
            x, _ = _layernorm_fwd(x1 + ffn, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
        self.memory = x
        self.src_allowed = (src_ids != PAD)[:, None, None, :]
        # Cross-attention K/V never change during decoding.
        self.cross_kv = []
        for i in range(config.n_layers):
            pre = f"dec.{i}.cross"
            k = _split_heads(x @ params[f"{pre}.wk"] + params[f"{pre}.bk"], config.n_heads)
            v = _split_heads(x @ params[f"{pre}.wv"] + params[f"{pre}.bv"], config.n_heads)
            self.cross_kv.append((k, v))
        b = src_ids.shape[0]
        self.self_kv: list[tuple[np.ndarray, np.ndarray]] = [
            (
                np.zeros((b, config.n_heads, 0, config.head_dim), dtype=dt),
                np.zeros((b, config.n_heads, 0, config.head_dim), dtype=dt),
            )
            for _ in range(config.n_layers)
        ]
        self.length = 0

    def reorder(self, index: np.ndarray) -> None:
        self.self_kv = [(k[index], v[index]) for k, v in self.self_kv]
        self.memory = self.memory[index]
        self.src_allowed = self.src_allowed[index]
        self.cross_kv = [(k[index], v[index]) for k, v in self.cross_kv]

    def step(self, prev_ids: np.ndarray) -> np.ndarray:
        """Log-probabilities [B, vocab] for the next position, given the
        previous emitted id per row (BOS on the first call)."""
        cfg = self.config
        params = self.params
        t = self.length
        if t + 1 >= cfg.max_positions:
            raise DataError(f"decode length exceeds max_positions={cfg.max_positions}")
        prev_ids = np.asarray(prev_ids).reshape(-1, 1)
        _check_ids(prev_ids, cfg.vocab_size, "target")
        y = _embed_fwd(prev_ids, params["tgt_embed"], self.pe[t : t + 1], self.scale)
        for i in range(cfg.n_layers):
            pre = f"dec.{i}"
            q = _split_heads(y @ params[f"{pre}.self.wq"] + params[f"{pre}.self.bq"], cfg.n_heads)
            k_new = _split_heads(y @ params[f"{pre}.self.wk"] + params[f"{pre}.self.bk"], cfg.n_heads)
            v_new = _split_heads(y @ params[f"{pre}.self.wv"] + params[f"{pre}.self.bv"], cfg.n_heads)
            k_all = np.concatenate([self.self_kv[i][0], k_new], axis=2)
            v_all = np.concatenate([self.self_kv[i][1], v_new], axis=2)
            self.self_kv[i] = (k_all, v_all)
            scale = 1.0 / np.sqrt(cfg.head_dim)
            scores = (q @ k_all.transpose(0, 1, 3, 2)) * scale
            ctx = softmax(scores) @ v_all
            attn = _join_heads(ctx) @ params[f"{pre}.self.wo"] + params[f"{pre}.self.bo"]
            y1, _ = _layernorm_fwd(y + attn, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
            qc = _split_heads(y1 @ params[f"{pre}.cross.wq"] + params[f"{pre}.cross.bq"], cfg.n_heads)
            kc, vc = self.cross_kv[i]
            cscores = (qc @ kc.transpose(0, 1, 3, 2)) * scale
            cscores = np.where(self.src_allowed, cscores, NEG_INF)
            cctx = softmax(cscores) @ vc
            cross = _join_heads(cctx) @ params[f"{pre}.cross.wo"] + params[f"{pre}.cross.bo"]
            y2, _ = _layernorm_fwd(y1 + cross, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
            ffn, _ = _ffn_fwd(y2, params, f"{pre}.ffn")
            y, _ = _layernorm_fwd(y2 + ffn, params[f"{pre}.ln3.g"], params[f"{pre}.ln3.b"])
        logits = y[:, 0, :] @ params["out.w"] + params["out.b"]
        _check_finite("decode step", logits)
        self.length += 1
        return log_softmax(logits)


def greedy_decode(
    params: Params, config: ModelConfig, src_ids: list[int], max_len: int
) -> list[int]:
    """Argmax decoding until EOS or max_len; returns emitted ids without
    BOS/EOS framing."""
    dec = IncrementalDecoder(params, config, np.asarray([src_ids]))
    prev = np.array([BOS])
    out: list[int] = []
    for _ in range(max_len):
        logp = dec.step(prev)
        nxt = int(np.argmax(logp[0]))
        if nxt == EOS:
            break
        out.append(nxt)
        prev = np.array([nxt])
    return out
