"""Standard Transformer building blocks, original recipe: post-norm residual
sublayers, sinusoidal positions, scaled dot-product multi-head attention.

Parameters live in flat dicts keyed by dotted names ("enc.0.self_attn.wq",
"fwd.extra.1.ffn.w2", ...). Attention masks are plain boolean arrays with
True = attention allowed, broadcastable to [batch, heads, T_q, T_k].
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import (
    Tensor,
    add,
    embedding_lookup,
    layer_norm,
    mask_fill,
    matmul,
    mul,
    relu,
    reshape,
    scale,
    softmax,
    swapaxes,
)

MASKED_SCORE = -1e9  # finite stand-in for -inf; exp underflows to exactly 0


def positional_encoding(max_len: int, d_model: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal table: sin at even columns, cos at odd, wavelengths 10000^(2i/d)."""
    if d_model % 2 != 0:
        raise ValueError(f"positional encoding needs even d_model, got {d_model}")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, i / d_model)
    pe = np.zeros((max_len, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe.astype(dtype)


def causal_mask(t: int) -> np.ndarray:
    """[1,1,t,t] lower-triangular (diagonal included) allow-mask."""
    return np.tril(np.ones((t, t), dtype=bool))[None, None, :, :]


def key_padding_mask(key_nonpad: np.ndarray) -> np.ndarray:
    """[B,1,1,T_k] allow-mask from a [B,T_k] non-pad flag array."""
    key_nonpad = np.asarray(key_nonpad, dtype=bool)
    return key_nonpad[:, None, None, :]


def _require_attendable(allowed: np.ndarray) -> None:
    # Softmax over an all-masked row would be uniform garbage; forbid it.
    if not allowed.any(axis=-1).all():
        raise ValueError("attention mask leaves a query row with no allowed key")


# --- parameter initialization -------------------------------------------------

def init_linear(rng: np.random.Generator, d_in: int, d_out: int, dtype) -> tuple[Tensor, Tensor]:
    bound = 1.0 / math.sqrt(d_in)
    w = rng.uniform(-bound, bound, size=(d_in, d_out))
    b = np.zeros(d_out)
    return (
        Tensor(w.astype(dtype), requires_grad=True, dtype=dtype),
        Tensor(b.astype(dtype), requires_grad=True, dtype=dtype),
    )


def init_embedding(rng: np.random.Generator, vocab: int, d_model: int, dtype) -> Tensor:
    table = rng.normal(0.0, d_model ** -0.5, size=(vocab, d_model))
    return Tensor(table.astype(dtype), requires_grad=True, dtype=dtype)


def _init_layer_norm(params: dict, prefix: str, d: int, dtype) -> None:
    params[f"{prefix}.gamma"] = Tensor(np.ones(d, dtype=dtype), requires_grad=True, dtype=dtype)
    params[f"{prefix}.beta"] = Tensor(np.zeros(d, dtype=dtype), requires_grad=True, dtype=dtype)


def _init_attention(params: dict, prefix: str, rng, d_model: int, dtype) -> None:
    for name in ("wq", "wk", "wv", "wo"):
        w, b = init_linear(rng, d_model, d_model, dtype)
        params[f"{prefix}.{name}"] = w
        params[f"{prefix}.{name[1]}b"] = b  # qb, kb, vb, ob


def _init_ffn(params: dict, prefix: str, rng, d_model: int, d_ff: int, dtype) -> None:
    w1, b1 = init_linear(rng, d_model, d_ff, dtype)
    w2, b2 = init_linear(rng, d_ff, d_model, dtype)
    params[f"{prefix}.w1"] = w1
    params[f"{prefix}.b1"] = b1
    params[f"{prefix}.w2"] = w2
    params[f"{prefix}.b2"] = b2


def init_encoder_params(rng, config, dtype=np.float32, prefix: str = "enc") -> dict:
    params: dict = {}
    for i in range(config.n_enc_layers):
        lp = f"{prefix}.{i}"
        _init_attention(params, f"{lp}.self_attn", rng, config.d_model, dtype)
        _init_layer_norm(params, f"{lp}.ln1", config.d_model, dtype)
        _init_ffn(params, f"{lp}.ffn", rng, config.d_model, config.d_ff, dtype)
        _init_layer_norm(params, f"{lp}.ln2", config.d_model, dtype)
    return params


def init_decoder_params(rng, config, extra_blocks: int, vocab: int, dtype=np.float32, prefix: str = "dec") -> dict:
    params: dict = {}
    for i in range(config.n_dec_layers):
        lp = f"{prefix}.{i}"
        _init_attention(params, f"{lp}.self_attn", rng, config.d_model, dtype)
        _init_layer_norm(params, f"{lp}.ln1", config.d_model, dtype)
        _init_attention(params, f"{lp}.cross_attn", rng, config.d_model, dtype)
        _init_layer_norm(params, f"{lp}.ln2", config.d_model, dtype)
        _init_ffn(params, f"{lp}.ffn", rng, config.d_model, config.d_ff, dtype)
        _init_layer_norm(params, f"{lp}.ln3", config.d_model, dtype)
    for k in range(extra_blocks):
        bp = f"{prefix}.extra.{k}"
        _init_ffn(params, f"{bp}.ffn", rng, config.d_model, config.d_ff, dtype)
        _init_layer_norm(params, f"{bp}.ln", config.d_model, dtype)
    w, b = init_linear(rng, config.d_model, vocab, dtype)
    params[f"{prefix}.out.w"] = w
    params[f"{prefix}.out.b"] = b
    return params


# --- forward pieces -----------------------------------------------------------

def linear(x: Tensor, params: dict, w_key: str, b_key: str) -> Tensor:
    return add(matmul(x, params[w_key]), params[b_key])


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, allowed: np.ndarray,
                         n_heads: int, params: dict, prefix: str) -> Tensor:
    """Scaled dot-product attention over n_heads splits of d_model.

    `allowed` broadcasts to [B, heads, T_q, T_k]; masked positions get exactly
    zero weight (their scores drop to MASKED_SCORE and underflow in exp).
    """
    d_model = q.data.shape[-1]
    if d_model % n_heads != 0:
        raise ValueError(f"d_model {d_model} not divisible by {n_heads} heads")
    d_head = d_model // n_heads
    b, tq = q.data.shape[0], q.data.shape[1]
    tk = k.data.shape[1]
    _require_attendable(np.broadcast_to(allowed, (b, 1, tq, tk)))

    def split(x: Tensor, t: int) -> Tensor:
        return swapaxes(reshape(x, (b, t, n_heads, d_head)), 1, 2)  # [B,h,t,dh]

    qh = split(linear(q, params, f"{prefix}.wq", f"{prefix}.qb"), tq)
    kh = split(linear(k, params, f"{prefix}.wk", f"{prefix}.kb"), tk)
    vh = split(linear(v, params, f"{prefix}.wv", f"{prefix}.vb"), tk)

    scores = scale(matmul(qh, swapaxes(kh, 2, 3)), 1.0 / math.sqrt(d_head))
    weights = softmax(mask_fill(scores, allowed, MASKED_SCORE), axis=-1)
    ctx = matmul(weights, vh)  # [B,h,Tq,dh]
    merged = reshape(swapaxes(ctx, 1, 2), (b, tq, d_model))
    return linear(merged, params, f"{prefix}.wo", f"{prefix}.ob")


def feed_forward(x: Tensor, params: dict, prefix: str) -> Tensor:
    h = relu(linear(x, params, f"{prefix}.w1", f"{prefix}.b1"))
    return add(matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def residual_block(x: Tensor, params: dict, prefix: str) -> Tensor:
    """y = LayerNorm(x + FFN(x)); shape-preserving."""
    return layer_norm(add(x, feed_forward(x, params, f"{prefix}.ffn")),
                      params[f"{prefix}.ln.gamma"], params[f"{prefix}.ln.beta"])


def _dropout(x: Tensor, rate: float, rng) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype) / x.data.dtype.type(1.0 - rate)
    return mul(x, Tensor(keep, dtype=x.data.dtype))


def embed_tokens(ids: np.ndarray, table: Tensor, config, pe: np.ndarray | None,
                 dropout_rng=None) -> Tensor:
    x = scale(embedding_lookup(table, ids), math.sqrt(config.d_model))
    if pe is not None:
        x = add(x, Tensor(pe[: ids.shape[1]], dtype=table.data.dtype))
    return _dropout(x, config.dropout, dropout_rng)


def encoder_forward(src_ids: np.ndarray, src_nonpad: np.ndarray, params: dict,
                    config, dropout_rng=None, prefix: str = "enc") -> Tensor:
    """n_enc_layers of (self-attention + FFN), post-norm residual throughout."""
    src_ids = np.asarray(src_ids)
    if src_ids.shape[1] > config.max_len:
        raise ValueError(f"source length {src_ids.shape[1]} exceeds max_len {config.max_len}")
    pe = positional_encoding(config.max_len, config.d_model, params["src_emb"].data.dtype) \
        if config.use_pos_enc else None
    x = embed_tokens(src_ids, params["src_emb"], config, pe, dropout_rng)
    allowed = key_padding_mask(src_nonpad)
    for i in range(config.n_enc_layers):
        lp = f"{prefix}.{i}"
        attn = _dropout(multi_head_attention(x, x, x, allowed, config.n_heads, params, f"{lp}.self_attn"),
                        config.dropout, dropout_rng)
        x = layer_norm(add(x, attn), params[f"{lp}.ln1.gamma"], params[f"{lp}.ln1.beta"])
        ff = _dropout(feed_forward(x, params, f"{lp}.ffn"), config.dropout, dropout_rng)
        x = layer_norm(add(x, ff), params[f"{lp}.ln2.gamma"], params[f"{lp}.ln2.beta"])
    return x


def decoder_forward(tgt_in_ids: np.ndarray, enc_out: Tensor, src_nonpad: np.ndarray,
                    params: dict, config, extra_blocks: int, prefix: str,
                    dropout_rng=None) -> Tensor:
    """Masked self-attention + cross-attention + FFN per layer, then the
    direction's extra residual blocks on final hidden states, then vocab logits."""
    tgt_in_ids = np.asarray(tgt_in_ids)
    b, t = tgt_in_ids.shape
    if t > config.max_len:
        raise ValueError(f"target length {t} exceeds max_len {config.max_len}")
    if enc_out.data.shape[0] != b:
        raise ValueError(f"batch mismatch: encoder {enc_out.data.shape[0]} vs decoder {b}")

    emb_key = "tgt_emb" if "tgt_emb" in params else f"{prefix}.tgt_emb"
    pe = positional_encoding(config.max_len, config.d_model, params[emb_key].data.dtype) \
        if config.use_pos_enc else None
    x = embed_tokens(tgt_in_ids, params[emb_key], config, pe, dropout_rng)
    self_allowed = causal_mask(t)
    cross_allowed = key_padding_mask(src_nonpad)
    for i in range(config.n_dec_layers):
        lp = f"{prefix}.{i}"
        attn = _dropout(multi_head_attention(x, x, x, self_allowed, config.n_heads, params, f"{lp}.self_attn"),
                        config.dropout, dropout_rng)
        x = layer_norm(add(x, attn), params[f"{lp}.ln1.gamma"], params[f"{lp}.ln1.beta"])
        cross = _dropout(
            multi_head_attention(x, enc_out, enc_out, cross_allowed, config.n_heads, params, f"{lp}.cross_attn"),
            config.dropout, dropout_rng)
        x = layer_norm(add(x, cross), params[f"{lp}.ln2.gamma"], params[f"{lp}.ln2.beta"])
        ff = _dropout(feed_forward(x, params, f"{lp}.ffn"), config.dropout, dropout_rng)
        x = layer_norm(add(x, ff), params[f"{lp}.ln3.gamma"], params[f"{lp}.ln3.beta"])
    for k in range(extra_blocks):
        x = residual_block(x, params, f"{prefix}.extra.{k}")
    return linear(x, params, f"{prefix}.out.w", f"{prefix}.out.b")
