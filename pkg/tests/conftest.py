import math
import os
from collections import Counter

# acceptance runtimes are quoted single-core; pin BLAS before numpy loads
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest

from asbd.data import EOS_ID
from asbd.model import ModelConfig, init_model


def tiny_config(**kw) -> ModelConfig:
    base = dict(src_vocab=12, tgt_vocab=12, d_model=8, n_heads=2, d_ff=16,
                n_enc_layers=1, n_dec_layers=1, extra_res_fwd=2, extra_res_rev=1,
                max_len=12, seed=0)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def tiny_model():
    return init_model(tiny_config())


class ScriptedScorer:
    """Fixed next-token log-distributions keyed by prefix, for decode tests."""

    def __init__(self, table: dict, vocab_size: int):
        self.table = {tuple(k): np.asarray(v, dtype=np.float64) for k, v in table.items()}
        self.vocab_size = vocab_size

    def step_logprobs(self, prefix):
        return self.table[tuple(prefix)]


NEG = -1e30  # for symbols a scripted model never emits


def scripted_from_probs(table: dict, vocab_size: int) -> ScriptedScorer:
    """Build a scorer from {prefix: {token: prob}} dicts; missing tokens get NEG."""
    rows = {}
    for prefix, dist in table.items():
        row = np.full(vocab_size, NEG)
        for tok, p in dist.items():
            row[tok] = math.log(p)
        rows[prefix] = row
    return ScriptedScorer(rows, vocab_size)


def random_scripted_model(rng: np.random.Generator, content: tuple = (3, 4, 5, 6),
                          vocab_size: int = 7, depth: int = 3) -> ScriptedScorer:
    """Random distributions over content+EOS for every prefix shorter than depth."""
    rows = {}

    def fill(prefix):
        probs = rng.dirichlet(np.ones(len(content) + 1))
        row = np.full(vocab_size, NEG)
        row[EOS_ID] = math.log(probs[0])
        for k, tok in enumerate(content):
            row[tok] = math.log(probs[k + 1])
        rows[prefix] = row
        if len(prefix) < depth - 1:
            for tok in content:
                fill(prefix + (tok,))

    fill(())
    return ScriptedScorer(rows, vocab_size)


def enumerate_sequences(scorer: ScriptedScorer, content: tuple, max_len: int):
    """All decodable outcomes with their (score incl. EOS when finished) sums.

    Yields (tokens, score, finished): sequences shorter than max_len are
    EOS-terminated, length-max_len ones are unterminated cutoffs.
    """
    out = []

    def walk(prefix, score):
        lp = scorer.step_logprobs(list(prefix))
        out.append((list(prefix), score + float(lp[EOS_ID]), True))
        if len(prefix) == max_len - 1:
            for tok in content:
                out.append((list(prefix) + [tok], score + float(lp[tok]), False))
        else:
            for tok in content:
                walk(prefix + (tok,), score + float(lp[tok]))

    walk((), 0.0)
    return out


def exhaustive_top1(scorer: ScriptedScorer, content: tuple, max_len: int, alpha: float):
    pool = enumerate_sequences(scorer, content, max_len)
    key = lambda e: (-(e[1] / max(1, len(e[0])) ** alpha), len(e[0]), tuple(e[0]))
    return sorted(pool, key=key)[0]


# --- independent BLEU oracle (hand-count style, kept separate from the library) ---

def oracle_bleu(hyp, ref, max_n=4):
    if len(hyp) == 0:
        return 0.0
    logs = []
    for n in range(1, max_n + 1):
        hyp_ngrams = [tuple(hyp[i: i + n]) for i in range(len(hyp) - n + 1)]
        if not hyp_ngrams:
            continue
        ref_ngrams = [tuple(ref[i: i + n]) for i in range(len(ref) - n + 1)]
        ref_counts = Counter(ref_ngrams)
        hits = 0
        for g, c in Counter(hyp_ngrams).items():
            hits += min(c, ref_counts.get(g, 0))
        if n == 1:
            p = hits / len(hyp_ngrams)
        else:
            p = (hits + 1) / (len(hyp_ngrams) + 1)
        if p == 0:
            return 0.0
        logs.append(math.log(p))
    bp = min(1.0, math.exp(1 - len(ref) / len(hyp)))
    return 100.0 * bp * math.exp(sum(logs) / len(logs))
