"""Gradient validation harness: central differences vs tape gradients.

Each check builds a scalar function from one primitive (or a composed block)
with random float64 inputs, weights the op output by a fixed random tensor so
transposition/permutation bugs cannot cancel, and reports the max relative
error over all input coordinates across the requested seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .model import ModelConfig, forward_pass, init_model, joint_loss, make_train_batch
from .tensor import Tensor, grad_check

THRESHOLD = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_err: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < THRESHOLD


def _t(rng, *shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape), dtype=np.float64)


def _weigher(rng, shape):
    """Scalarize an op output against a weight drawn once (f must stay pure)."""
    w = Tensor(rng.normal(size=shape), dtype=np.float64)
    return lambda out: tt.sum_all(tt.mul(out, w))


def _primitive_checks(rng):
    """(name, x, f) triples; everything except x is captured as fixed data."""
    checks = []

    a = _t(rng, 3, 4)
    b = _t(rng, 4, 2)
    w_ab = _weigher(rng, (3, 2))
    checks.append(("matmul_lhs", a, lambda x, b=b, w=w_ab: w(tt.matmul(x, b))))
    checks.append(("matmul_rhs", b, lambda x, a=a, w=w_ab: w(tt.matmul(a, x))))

    ab = _t(rng, 2, 3, 4)
    bb = _t(rng, 2, 4, 3)
    w_bat = _weigher(rng, (2, 3, 3))
    checks.append(("matmul_batched", ab, lambda x, bb=bb, w=w_bat: w(tt.matmul(x, bb))))

    x = _t(rng, 2, 5)
    y = _t(rng, 5)
    w_xy = _weigher(rng, (2, 5))
    checks.append(("add_broadcast", y, lambda v, x=x, w=w_xy: w(tt.add(x, v))))
    checks.append(("mul_broadcast", y, lambda v, x=x, w=w_xy: w(tt.mul(x, v))))

    # keep coordinates away from the relu kink by more than the fd step
    xr = Tensor(rng.uniform(0.1, 1.0, size=(3, 4)) * rng.choice([-1.0, 1.0], size=(3, 4)),
                dtype=np.float64)
    checks.append(("relu", xr, lambda v, w=_weigher(rng, (3, 4)): w(tt.relu(v))))

    xs = _t(rng, 3, 5, low=-3.0, high=3.0)
    checks.append(("softmax", xs, lambda v, w=_weigher(rng, (3, 5)): w(tt.softmax(v, axis=-1))))

    xl = _t(rng, 2, 6)
    gamma = _t(rng, 6, low=0.5, high=1.5)
    beta = _t(rng, 6)
    w_ln = _weigher(rng, (2, 6))
    checks.append(("layer_norm_x", xl,
                   lambda v, g=gamma, b2=beta, w=w_ln: w(tt.layer_norm(v, g, b2))))
    checks.append(("layer_norm_gamma", gamma,
                   lambda v, x2=xl, b2=beta, w=w_ln: w(tt.layer_norm(x2, v, b2))))
    checks.append(("layer_norm_beta", beta,
                   lambda v, x2=xl, g=gamma, w=w_ln: w(tt.layer_norm(x2, g, v))))

    table = _t(rng, 7, 4)
    ids = rng.integers(0, 7, size=(2, 5))
    checks.append(("embedding_lookup", table,
                   lambda v, ids=ids, w=_weigher(rng, (2, 5, 4)): w(tt.embedding_lookup(v, ids))))

    logits = _t(rng, 6, 7, low=-2.0, high=2.0)
    targets = rng.integers(0, 7, size=6)
    targets[1] = 9  # one ignored row
    checks.append(("cross_entropy", logits,
                   lambda v, tg=targets: tt.cross_entropy(v, tg, ignore_id=9)))

    checks.append(("cross_entropy_softmax_chain", _t(rng, 4, 6, low=-2.0, high=2.0),
                   lambda v, tg=rng.integers(0, 6, size=4): tt.cross_entropy(
                       tt.softmax(v, axis=-1), tg)))

    xm = _t(rng, 3, 4)
    allowed = rng.random((3, 4)) > 0.3
    allowed[:, 0] = True
    checks.append(("mask_fill", xm,
                   lambda v, m=allowed, w=_weigher(rng, (3, 4)): w(tt.mask_fill(v, m, -25.0))))

    xv = _t(rng, 2, 3, 4)
    checks.append(("reshape", xv, lambda v, w=_weigher(rng, (6, 4)): w(tt.reshape(v, (6, 4)))))
    checks.append(("swapaxes", xv, lambda v, w=_weigher(rng, (2, 4, 3)): w(tt.swapaxes(v, 1, 2))))
    checks.append(("scale", _t(rng, 3, 3), lambda v, w=_weigher(rng, (3, 3)): w(tt.scale(v, -1.7))))
    checks.append(("sum_of_squares", _t(rng, 5), lambda v: tt.sum_all(tt.mul(v, v))))

    return checks


def _tiny_config(seed: int) -> ModelConfig:
    return ModelConfig(src_vocab=11, tgt_vocab=11, d_model=8, n_heads=2, d_ff=16,
                       n_enc_layers=1, n_dec_layers=1, extra_res_fwd=1, extra_res_rev=1,
                       max_len=8, seed=seed)


def _composed_check(seed: int):
    """Joint loss of a tiny full model, differentiated through chosen parameters."""
    rng = np.random.default_rng(seed + 5000)
    cfg = _tiny_config(seed)
    model = init_model(cfg, dtype=np.float64)
    pairs = [([4, 5, 6], [7, 8]), ([9, 10], [4, 6, 5])]
    batch = make_train_batch(pairs, max_len=cfg.max_len)

    def loss_fn(_x):
        lf, lr = forward_pass(model, batch)
        return joint_loss(lf, lr, batch, cfg.loss_weight_lambda)

    picks = ["enc.0.self_attn.wq", "fwd.0.cross_attn.wv", "fwd.extra.0.ffn.w1",
             "rev.0.ln3.gamma", "tgt_emb", "fwd.out.b"]
    errs = []
    for name in picks:
        p = model.params[name]
        # larger step than the primitives: keeps cancellation noise below the
        # threshold on near-zero gradient coordinates of the deep composition
        errs.append(grad_check(loss_fn, p, h=1e-4))
    return max(errs)


def run_suite(n_seeds: int = 20, base_seed: int = 0, inject_sign_flip: bool = False) -> list[CheckResult]:
    """Run every primitive and the composed encoder-decoder check over seeds."""
    worst: dict[str, float] = {}
    for s in range(n_seeds):
        rng = np.random.default_rng(base_seed + s)
        for name, x, f in _primitive_checks(rng):
            err = grad_check(f, x, h=1e-5)
            worst[name] = max(worst.get(name, 0.0), err)
    worst["composed_encoder_decoder"] = max(
        _composed_check(base_seed + s) for s in range(n_seeds))

    if inject_sign_flip:
        worst["injected_sign_flip"] = _sign_flipped_check(base_seed)

    return [CheckResult(name=k, max_rel_err=v) for k, v in worst.items()]


def _sign_flipped_check(seed: int) -> float:
    """Testing hook: report sum(x^2) with a sign-flipped analytic gradient.

    This is what a backward-rule bug looks like to the harness; the resulting
    relative error must be caught (it is ~1 by construction).
    """
    rng = np.random.default_rng(seed)
    x = _t(rng, 4, low=0.5, high=1.5)

    def f(v):
        return tt.sum_all(tt.mul(v, v))

    x.requires_grad = True
    with tt.Tape() as tape:
        tape.watch(x)
        analytic = -tape.backward(f(x))[x]  # the injected fault

    h = 1e-5
    numeric = np.zeros_like(x.data)
    with tt.no_grad():
        flat = x.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(x).item()
            flat[i] = orig - h
            fm = f(x).item()
            flat[i] = orig
            numeric.reshape(-1)[i] = (fp - fm) / (2 * h)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
