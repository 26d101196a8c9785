"""The bidirectional model: one shared encoder feeding two independent
decoders. The forward (left-to-right) decoder carries extra_res_fwd residual
blocks on top of its stack, the reverse (right-to-left) decoder extra_res_rev;
defaults 2 and 1. The decoders never interact during decoding: they meet only
in the joint loss (training) and in the merge step (inference).

Baselines are configurations of this same code: directions="forward" with
lambda 1 is the plain left-to-right Transformer, directions="reverse" with
lambda 0 the right-to-left one.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .data import PAD_ID, BOS_ID, EOS_ID
from .rng import make_rng, STREAM_INIT
from .tensor import Tensor, add, cross_entropy, reshape, scale
from .transformer import (
    decoder_forward,
    encoder_forward,
    init_decoder_params,
    init_embedding,
    init_encoder_params,
)

FORWARD = "forward"
REVERSE = "reverse"
BOTH = "both"


@dataclass
class ModelConfig:
    src_vocab: int
    tgt_vocab: int
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    extra_res_fwd: int = 2
    extra_res_rev: int = 1
    max_len: int = 64
    dropout: float = 0.0
    loss_weight_lambda: float = 0.5
    seed: int = 0
    directions: str = BOTH  # "both" | "forward" | "reverse"
    share_tgt_embedding: bool = True
    tie_embeddings: bool = False  # reserved knob; enabling is rejected
    use_pos_enc: bool = True  # disabled only by equivariance tests

    def validate(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.d_model % 2 != 0:
            raise ValueError("d_model must be even for sinusoidal positions")
        if not 0.0 <= self.loss_weight_lambda <= 1.0:
            raise ValueError("loss_weight_lambda must lie in [0, 1]")
        if self.extra_res_fwd < 0 or self.extra_res_rev < 0:
            raise ValueError("extra residual block counts must be >= 0")
        if self.src_vocab < 5 or self.tgt_vocab < 5:
            raise ValueError("vocabularies need at least one token beyond the 4 reserved ids")
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.directions not in (BOTH, FORWARD, REVERSE):
            raise ValueError(f"unknown directions {self.directions!r}")
        if self.directions == FORWARD and self.loss_weight_lambda != 1.0:
            raise ValueError("directions='forward' requires loss_weight_lambda == 1.0")
        if self.directions == REVERSE and self.loss_weight_lambda != 0.0:
            raise ValueError("directions='reverse' requires loss_weight_lambda == 0.0")
        if self.tie_embeddings:
            raise ValueError("embedding/output weight tying is not supported")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        cfg = cls(**d)
        cfg.validate()
        return cfg


@dataclass
class BidirModel:
    config: ModelConfig
    params: dict[str, Tensor]

    @property
    def has_forward(self) -> bool:
        return self.config.directions in (BOTH, FORWARD)

    @property
    def has_reverse(self) -> bool:
        return self.config.directions in (BOTH, REVERSE)

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def decoder_prefix(self, direction: str) -> str:
        if direction == FORWARD and self.has_forward:
            return "fwd"
        if direction == REVERSE and self.has_reverse:
            return "rev"
        raise ValueError(f"model has no {direction} decoder")


def init_model(config: ModelConfig, dtype=np.float32) -> BidirModel:
    """Build all parameters from the Philox init stream of config.seed.

    Draw order is fixed and documented (checkpoint blobs rely on sorted names,
    the degeneracy tests on this order): src_emb, tgt_emb, encoder, forward
    decoder (stack, extra blocks, output head), reverse decoder.
    """
    config.validate()
    rng = make_rng(config.seed, STREAM_INIT)
    params: dict[str, Tensor] = {}
    params["src_emb"] = init_embedding(rng, config.src_vocab, config.d_model, dtype)
    if config.share_tgt_embedding:
        params["tgt_emb"] = init_embedding(rng, config.tgt_vocab, config.d_model, dtype)
    params.update(init_encoder_params(rng, config, dtype, prefix="enc"))
    if config.directions in (BOTH, FORWARD):
        if not config.share_tgt_embedding:
            params["fwd.tgt_emb"] = init_embedding(rng, config.tgt_vocab, config.d_model, dtype)
        params.update(init_decoder_params(rng, config, config.extra_res_fwd, config.tgt_vocab, dtype, prefix="fwd"))
    if config.directions in (BOTH, REVERSE):
        if not config.share_tgt_embedding:
            params["rev.tgt_emb"] = init_embedding(rng, config.tgt_vocab, config.d_model, dtype)
        params.update(init_decoder_params(rng, config, config.extra_res_rev, config.tgt_vocab, dtype, prefix="rev"))
    return BidirModel(config=config, params=params)


@dataclass
class TrainBatch:
    """Teacher-forcing views of one batch.

    tgt_fwd_* frame the target left-to-right ([BOS, t1..tn] / [t1..tn, EOS]);
    tgt_rev_* frame the reversed content the same way, so the reverse decoder
    is structurally identical to the forward one. Pad positions match between
    the two framings by construction.
    """

    src: np.ndarray          # [B, S] int64
    src_nonpad: np.ndarray   # [B, S] bool
    tgt_fwd_in: np.ndarray   # [B, T] int64
    tgt_fwd_out: np.ndarray  # [B, T] int64
    tgt_rev_in: np.ndarray   # [B, T] int64
    tgt_rev_out: np.ndarray  # [B, T] int64
    n_skipped: int = 0

    @property
    def size(self) -> int:
        return self.src.shape[0]


def make_train_batch(pairs: list[tuple[list[int], list[int]]], max_len: int | None = None) -> TrainBatch:
    """Pad a list of (src_ids, tgt_ids) into a TrainBatch.

    Pairs with an empty target are skipped and counted in n_skipped.
    """
    kept = [(s, t) for s, t in pairs if len(t) > 0]
    n_skipped = len(pairs) - len(kept)
    if not kept:
        raise ValueError("batch has no usable pairs (all targets empty)")
    if max_len is not None:
        for s, t in kept:
            if len(s) > max_len or len(t) + 1 > max_len:
                raise ValueError(f"pair exceeds max_len {max_len}; truncate during encoding")

    s_max = max(len(s) for s, _ in kept)
    t_max = max(len(t) for _, t in kept) + 1  # room for BOS/EOS shift
    b = len(kept)
    src = np.full((b, s_max), PAD_ID, dtype=np.int64)
    fwd_in = np.full((b, t_max), PAD_ID, dtype=np.int64)
    fwd_out = np.full((b, t_max), PAD_ID, dtype=np.int64)
    rev_in = np.full((b, t_max), PAD_ID, dtype=np.int64)
    rev_out = np.full((b, t_max), PAD_ID, dtype=np.int64)
    for i, (s, t) in enumerate(kept):
        src[i, : len(s)] = s
        n = len(t)
        r = t[::-1]
        fwd_in[i, 0] = BOS_ID
        fwd_in[i, 1 : n + 1] = t
        fwd_out[i, :n] = t
        fwd_out[i, n] = EOS_ID
        rev_in[i, 0] = BOS_ID
        rev_in[i, 1 : n + 1] = r
        rev_out[i, :n] = r
        rev_out[i, n] = EOS_ID
    return TrainBatch(
        src=src,
        src_nonpad=src != PAD_ID,
        tgt_fwd_in=fwd_in,
        tgt_fwd_out=fwd_out,
        tgt_rev_in=rev_in,
        tgt_rev_out=rev_out,
        n_skipped=n_skipped,
    )


def encode_src(model: BidirModel, src: np.ndarray, src_nonpad: np.ndarray, dropout_rng=None) -> Tensor:
    return encoder_forward(src, src_nonpad, model.params, model.config, dropout_rng)


def decode_logits(model: BidirModel, tgt_in: np.ndarray, enc_out: Tensor,
                  src_nonpad: np.ndarray, direction: str, dropout_rng=None) -> Tensor:
    prefix = model.decoder_prefix(direction)
    extra = model.config.extra_res_fwd if direction == FORWARD else model.config.extra_res_rev
    return decoder_forward(tgt_in, enc_out, src_nonpad, model.params, model.config,
                           extra, prefix, dropout_rng)


def forward_pass(model: BidirModel, batch: TrainBatch, dropout_rng=None):
    """Encode once, decode along every configured direction.

    Returns (logits_fwd, logits_rev); an absent path yields None.
    """
    enc_out = encode_src(model, batch.src, batch.src_nonpad, dropout_rng)
    logits_fwd = logits_rev = None
    if model.has_forward:
        logits_fwd = decode_logits(model, batch.tgt_fwd_in, enc_out, batch.src_nonpad, FORWARD, dropout_rng)
    if model.has_reverse:
        logits_rev = decode_logits(model, batch.tgt_rev_in, enc_out, batch.src_nonpad, REVERSE, dropout_rng)
    return logits_fwd, logits_rev


def _path_ce(logits: Tensor, targets: np.ndarray) -> Tensor:
    b, t, v = logits.data.shape
    return cross_entropy(reshape(logits, (b * t, v)), targets.reshape(-1), ignore_id=PAD_ID)


def joint_loss(logits_fwd, logits_rev, batch: TrainBatch, lam: float):
    """lam * CE(forward) + (1 - lam) * CE(reverse), PAD ignored."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if logits_fwd is None and logits_rev is None:
        raise ValueError("joint_loss needs at least one decoding path")
    if logits_fwd is None and lam != 0.0:
        raise ValueError("lambda must be 0 when the forward path is absent")
    if logits_rev is None and lam != 1.0:
        raise ValueError("lambda must be 1 when the reverse path is absent")
    if logits_rev is None:
        return _path_ce(logits_fwd, batch.tgt_fwd_out)
    if logits_fwd is None:
        return _path_ce(logits_rev, batch.tgt_rev_out)
    ce_fwd = _path_ce(logits_fwd, batch.tgt_fwd_out)
    ce_rev = _path_ce(logits_rev, batch.tgt_rev_out)
    return add(scale(ce_fwd, lam), scale(ce_rev, 1.0 - lam))
