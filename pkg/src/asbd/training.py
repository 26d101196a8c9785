"""Optimizer, schedule, training loop with early stopping, checkpoints.

The training recipe: Adam (beta1 0.9, beta2 0.98, eps 1e-9) under the inverse
square-root warmup schedule, seeded shuffling with length-sorted chunks to
limit padding, global-norm gradient clipping, greedy validation after every
epoch scored by mean sentence BLEU, early stopping on that metric, and
best-so-far checkpointing. The reported score of a run is the maximum
validation value across its epochs.

Checkpoint format (little-endian): magic "ASBD", u32 version, u64 header
length, UTF-8 JSON header (config, vocabs, epoch, history), then one f32 blob
of all parameters concatenated in sorted-name order.
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import dataclass

import numpy as np

from .data import Vocab, encode_corpus
from .decoding import translate_batch
from .metrics import sentence_bleu
from .model import BidirModel, ModelConfig, Tensor, forward_pass, init_model, joint_loss, make_train_batch
from .rng import make_rng, STREAM_SHUFFLE, STREAM_DROPOUT
from .tensor import NumericsError, Tape

CHECKPOINT_MAGIC = b"ASBD"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Base for unreadable checkpoint files."""


class CheckpointMagicError(CheckpointError):
    """File does not start with the checkpoint magic bytes."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an unsupported format version."""


class CheckpointTruncatedError(CheckpointError):
    """Header or parameter blob is shorter than declared."""


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9

    @classmethod
    def for_params(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls(m={k: np.zeros_like(p.data) for k, p in params.items()},
                   v={k: np.zeros_like(p.data) for k, p in params.items()})


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place. Zero grads leave params alone."""
    if lr <= 0:
        raise ValueError("learning rate must be > 0")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.data.shape}")
        if not np.isfinite(g).all():
            raise NumericsError(f"non-finite gradient for parameter {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= (lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)


def lr_schedule(step: int, d_model: int, warmup: int) -> float:
    """d_model^-0.5 * min(step^-0.5, step * warmup^-1.5); branches meet at warmup."""
    if step < 1:
        raise ValueError("schedule is defined for step >= 1")
    if warmup < 1:
        raise ValueError("warmup must be >= 1")
    return d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


@dataclass
class EarlyStopState:
    patience: int = 10
    min_delta: float = 0.0
    best: float = -math.inf
    best_epoch: int = 0
    epochs_since_improvement: int = 0
    epoch: int = 0  # number of updates seen


def early_stop_update(state: EarlyStopState, metric: float) -> tuple[EarlyStopState, bool]:
    """Track a higher-is-better metric; stop after `patience` stale epochs."""
    if not math.isfinite(metric):
        raise ValueError("early stopping metric must be finite")
    state.epoch += 1
    if metric > state.best + state.min_delta:
        state.best = metric
        state.best_epoch = state.epoch
        state.epochs_since_improvement = 0
    else:
        state.epochs_since_improvement += 1
    return state, state.epochs_since_improvement >= state.patience


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for g in grads.values():
        total += float((g.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= g.dtype.type(factor)
    return norm


@dataclass
class TrainSettings:
    epochs: int = 100
    batch_size: int = 32
    warmup: int = 200
    lr_factor: float = 0.3  # desk-scale default; 1.0 is the classic recipe
    clip_norm: float = 1.0
    patience: int = 10
    min_delta: float = 0.0
    strategy: str = "score_split"
    shuffle_chunk_batches: int = 64


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    valid_bleu: float


@dataclass
class TrainResult:
    model: BidirModel
    history: list[EpochStats]
    best_bleu: float
    best_epoch: int
    stopped_early: bool
    wall_seconds: float


def _length_sorted_batches(encoded, order, batch_size: int, chunk_batches: int, rng):
    """Cut the shuffled order into chunks, sort each by length, cut batches,
    then shuffle the batch order (keeps padding low without length curriculum)."""
    chunk = batch_size * chunk_batches
    batches = []
    for start in range(0, len(order), chunk):
        idx = sorted(order[start : start + chunk],
                     key=lambda i: (len(encoded[i][1]), len(encoded[i][0])))
        for b in range(0, len(idx), batch_size):
            batches.append([encoded[i] for i in idx[b : b + batch_size]])
    return [batches[i] for i in rng.permutation(len(batches))]


def validation_bleu(model: BidirModel, valid_pairs, src_vocab: Vocab, tgt_vocab: Vocab,
                    strategy: str) -> float:
    """Mean sentence BLEU of (batched greedy) translations against references."""
    srcs = [src_vocab.encode(s) for s, _ in valid_pairs]
    refs = [t for _, t in valid_pairs]
    outs = translate_batch(model, srcs, strategy=strategy, beam=1)
    total = 0.0
    for out, ref in zip(outs, refs):
        total += sentence_bleu(tgt_vocab.decode(out.tokens), ref).value
    return total / len(refs)


def train(model: BidirModel, train_corpus, valid_corpus, src_vocab: Vocab,
          tgt_vocab: Vocab, settings: TrainSettings, checkpoint_path=None,
          log=None) -> TrainResult:
    """Joint training with per-epoch validation and early stopping.

    Saves the best-so-far checkpoint to checkpoint_path (if given) whenever
    validation improves. Raises NumericsError with epoch/batch context when a
    loss goes non-finite.
    """
    cfg = model.config
    encoded, _ = encode_corpus(train_corpus, src_vocab, tgt_vocab, cfg.max_len)
    shuffle_rng = make_rng(cfg.seed, STREAM_SHUFFLE)
    dropout_rng = make_rng(cfg.seed, STREAM_DROPOUT) if cfg.dropout > 0 else None
    opt = AdamState.for_params(model.params)
    stopper = EarlyStopState(patience=settings.patience, min_delta=settings.min_delta)
    history: list[EpochStats] = []
    stopped = False
    started = time.perf_counter()

    for epoch in range(1, settings.epochs + 1):
        order = [int(i) for i in shuffle_rng.permutation(len(encoded))]
        batches = _length_sorted_batches(encoded, order, settings.batch_size,
                                         settings.shuffle_chunk_batches, shuffle_rng)
        loss_sum = 0.0
        for b_idx, pairs in enumerate(batches):
            batch = make_train_batch(pairs, max_len=cfg.max_len)
            try:
                with Tape() as tape:
                    logits_fwd, logits_rev = forward_pass(model, batch, dropout_rng)
                    loss = joint_loss(logits_fwd, logits_rev, batch, cfg.loss_weight_lambda)
                    loss_value = loss.item()
                    if not math.isfinite(loss_value):
                        raise NumericsError("loss is non-finite")
                    grad_map = tape.backward(loss)
            except NumericsError as e:
                raise NumericsError(f"epoch {epoch}, batch {b_idx}: {e}") from e
            grads = {name: grad_map.get(p, np.zeros_like(p.data)) for name, p in model.params.items()}
            clip_gradients(grads, settings.clip_norm)
            lr = settings.lr_factor * lr_schedule(opt.step + 1, cfg.d_model, settings.warmup)
            adam_step(model.params, grads, opt, lr)
            loss_sum += loss_value
        train_loss = loss_sum / max(1, len(batches))

        valid_bleu = validation_bleu(model, valid_corpus.pairs, src_vocab, tgt_vocab,
                                     settings.strategy)
        history.append(EpochStats(epoch=epoch, train_loss=train_loss, valid_bleu=valid_bleu))
        improved = valid_bleu > stopper.best + stopper.min_delta
        stopper, stop = early_stop_update(stopper, valid_bleu)
        if log:
            log(f"epoch {epoch}: train_loss {train_loss:.4f}  valid_bleu {valid_bleu:.3f}")
        if improved and checkpoint_path is not None:
            save_checkpoint(checkpoint_path, model, src_vocab, tgt_vocab, epoch, history)
        if stop:
            stopped = True
            break

    best = max((h.valid_bleu for h in history), default=0.0)
    best_epoch = stopper.best_epoch if history else 0
    return TrainResult(model=model, history=history, best_bleu=best, best_epoch=best_epoch,
                       stopped_early=stopped, wall_seconds=time.perf_counter() - started)


# --- checkpoint persistence ----------------------------------------------------

def canonical_param_order(params: dict[str, Tensor]) -> list[str]:
    return sorted(params)


def save_checkpoint(path, model: BidirModel, src_vocab: Vocab, tgt_vocab: Vocab,
                    epoch: int, history) -> None:
    header = {
        "config": model.config.to_dict(),
        "src_vocab": src_vocab.id_to_token,
        "tgt_vocab": tgt_vocab.id_to_token,
        "epoch": epoch,
        "history": [
            {"epoch": h.epoch, "train_loss": h.train_loss, "valid_bleu": h.valid_bleu}
            for h in history
        ],
    }
    header_bytes = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for name in canonical_param_order(model.params):
            f.write(np.ascontiguousarray(model.params[name].data, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[BidirModel, Vocab, Vocab, dict]:
    """Rebuild the model from a checkpoint; bitwise-faithful parameters."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointMagicError(f"{path}: bad magic (not a checkpoint file)")
    if len(blob) < 16:
        raise CheckpointTruncatedError(f"{path}: header fields missing")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, supported {CHECKPOINT_VERSION}")
    (header_len,) = struct.unpack_from("<Q", blob, 8)
    if len(blob) < 16 + header_len:
        raise CheckpointTruncatedError(f"{path}: truncated JSON header")
    try:
        header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointTruncatedError(f"{path}: unreadable header: {e}") from e

    config = ModelConfig.from_dict(header["config"])
    model = init_model(config)
    payload = blob[16 + header_len :]
    expected = 4 * sum(p.data.size for p in model.params.values())
    if len(payload) != expected:
        raise CheckpointTruncatedError(
            f"{path}: parameter blob is {len(payload)} bytes, expected {expected}")
    offset = 0
    for name in canonical_param_order(model.params):
        p = model.params[name]
        count = p.data.size
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        p.data = arr.astype(np.float32).reshape(p.data.shape).copy()
        offset += 4 * count
    return model, Vocab(header["src_vocab"]), Vocab(header["tgt_vocab"]), header
