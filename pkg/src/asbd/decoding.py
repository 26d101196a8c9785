"""Greedy/beam decoding per direction, plus the segmented merge.

A forward decoder tends to degrade toward the end of its output and a reverse
decoder toward the beginning. The merge treats the two hypotheses as aligned
attempts at the same output positions and scans the seam: position i takes
the first i tokens from the forward hypothesis and the rest from the reverse
one, scored by the length-normalized sum of own-decoder log-probs. The two
pure hypotheses are always candidates too, which makes the merged score
dominate both by construction. (Seam alignment is what keeps the merge from
degenerating into a short "best average confidence" fragment, which is what
an unconstrained prefix/suffix search maximizing mean log-prob would pick.)

Reverse hypotheses are produced in reversed token order and un-reversed on
construction: `tokens` and `logprobs` of any Hypothesis are in the original
target order, and logprobs[k] is the log-probability the owning decoder
assigned to tokens[k] at its generation step. EOS log-probs never appear in
`logprobs` (merge scoring is over content tokens only).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PAD_ID, BOS_ID, EOS_ID
from .model import FORWARD, REVERSE, BidirModel, decode_logits, encode_src
from .tensor import no_grad

STRATEGIES = ("score_split", "midpoint", "rescore", "l2r_only", "r2l_only")

_NEVER = -1e30  # selection bar for PAD/BOS: finite, never argmax


@dataclass
class Hypothesis:
    direction: str                 # "forward" | "reverse"
    tokens: list[int]              # content ids, original target order
    logprobs: list[float]          # own-decoder log-prob per token, aligned
    total_logprob: float
    finished: bool                 # True iff EOS was emitted

    def __post_init__(self):
        if len(self.tokens) != len(self.logprobs):
            raise ValueError("tokens and logprobs must align")
        if any(t in (PAD_ID, BOS_ID, EOS_ID) for t in self.tokens):
            raise ValueError("special tokens may not appear in hypothesis content")

    @classmethod
    def from_generation(cls, direction: str, gen_tokens: list[int],
                        gen_logprobs: list[float], finished: bool) -> "Hypothesis":
        """Un-reverse a reverse-direction generation into original order."""
        if direction == REVERSE:
            gen_tokens = gen_tokens[::-1]
            gen_logprobs = gen_logprobs[::-1]
        logprobs = [float(x) for x in gen_logprobs]
        # summed in stored order, so pure-candidate scores in the merge match bitwise
        return cls(direction=direction, tokens=list(gen_tokens), logprobs=logprobs,
                   total_logprob=float(sum(logprobs)), finished=finished)

    @property
    def norm_score(self) -> float:
        return self.total_logprob / max(1, len(self.tokens))


@dataclass
class MergedTranslation:
    tokens: list[int]
    split: tuple[int, int]   # (forward prefix length i, reverse suffix start j)
    norm_score: float
    strategy: str


def _log_softmax(row: np.ndarray) -> np.ndarray:
    m = row.max()
    z = row - m
    return z - np.log(np.exp(z).sum())


class ModelScorer:
    """Next-token log-probabilities for one direction of a model, one source.

    The encoder runs once at construction; each step re-runs the decoder on
    the whole prefix (fine at desk scale). Prefixes are in generation order,
    i.e. reversed target order for the reverse direction.
    """

    def __init__(self, model: BidirModel, src_ids: list[int], direction: str):
        if not src_ids:
            raise ValueError("cannot decode an empty source")
        self.model = model
        self.direction = direction
        self.vocab_size = model.config.tgt_vocab
        self._src = np.asarray([src_ids], dtype=np.int64)
        self._nonpad = self._src != PAD_ID
        with no_grad():
            self._enc = encode_src(model, self._src, self._nonpad)

    def step_logprobs(self, prefix: list[int]) -> np.ndarray:
        tgt_in = np.asarray([[BOS_ID] + list(prefix)], dtype=np.int64)
        with no_grad():
            logits = decode_logits(self.model, tgt_in, self._enc, self._nonpad, self.direction)
        return _log_softmax(logits.data[0, -1].astype(np.float64))


def _as_scorer(model, src, direction):
    if hasattr(model, "step_logprobs"):
        return model  # scripted scorer in tests
    return ModelScorer(model, src, direction)


def greedy_decode(model, src, direction: str, max_len: int) -> Hypothesis:
    """Argmax chain until EOS or max_len content tokens.

    PAD and BOS are barred from selection (a hypothesis carries content ids
    only); reported log-probs are the unbarred log-softmax values.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    scorer = _as_scorer(model, src, direction)
    tokens: list[int] = []
    logprobs: list[float] = []
    finished = False
    while len(tokens) < max_len:
        lp = scorer.step_logprobs(tokens)
        choice = lp.copy()
        choice[PAD_ID] = _NEVER
        choice[BOS_ID] = _NEVER
        nxt = int(choice.argmax())
        if nxt == EOS_ID:
            finished = True
            break
        tokens.append(nxt)
        logprobs.append(float(lp[nxt]))
    return Hypothesis.from_generation(direction, tokens, logprobs, finished)


def greedy_decode_batch(model: BidirModel, srcs: list[list[int]], direction: str,
                        max_len: int) -> list[Hypothesis]:
    """Batched greedy decoding: one decoder pass per step for all sentences."""
    if not srcs:
        return []
    if any(len(s) == 0 for s in srcs):
        raise ValueError("cannot decode an empty source")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    b = len(srcs)
    s_max = max(len(s) for s in srcs)
    src = np.full((b, s_max), PAD_ID, dtype=np.int64)
    for i, s in enumerate(srcs):
        src[i, : len(s)] = s
    nonpad = src != PAD_ID

    gen = np.full((b, max_len + 1), EOS_ID, dtype=np.int64)
    gen[:, 0] = BOS_ID
    lens = np.zeros(b, dtype=np.int64)
    lps = [[] for _ in range(b)]
    done = np.zeros(b, dtype=bool)
    with no_grad():
        enc = encode_src(model, src, nonpad)
        for t in range(1, max_len + 1):
            logits = decode_logits(model, gen[:, :t], enc, nonpad, direction)
            last = logits.data[:, -1].astype(np.float64)
            m = last.max(axis=1, keepdims=True)
            z = last - m
            lp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
            choice = lp.copy()
            choice[:, PAD_ID] = _NEVER
            choice[:, BOS_ID] = _NEVER
            nxt = choice.argmax(axis=1)
            for i in range(b):
                if done[i]:
                    continue
                if nxt[i] == EOS_ID:
                    done[i] = True
                else:
                    gen[i, t] = nxt[i]
                    lens[i] = t
                    lps[i].append(float(lp[i, nxt[i]]))
            if done.all():
                break
    out = []
    for i in range(b):
        toks = [int(x) for x in gen[i, 1 : lens[i] + 1]]
        out.append(Hypothesis.from_generation(direction, toks, lps[i], bool(done[i])))
    return out


def beam_decode(model, src, direction: str, beam: int, max_len: int,
                length_alpha: float = 0.6) -> list[Hypothesis]:
    """Standard beam search; beam=1 reproduces greedy_decode token-exactly.

    Candidate expansion ranks by the running sum of emitted log-probs, EOS
    included when a candidate finishes (this is what makes beam=1 coincide
    with greedy and keeps the empty hypothesis comparable). Final ranking is
    that sum divided by max(1, content length)^length_alpha.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    scorer = _as_scorer(model, src, direction)

    # live entries: (tokens, logprobs, running sum of emitted content log-probs)
    live = [([], [], 0.0)]
    pool: list[tuple[list[int], list[float], float, bool]] = []
    for _ in range(max_len):
        if not live:
            break
        candidates = []
        for tokens, lgs, score in live:
            lp = scorer.step_logprobs(tokens)
            for tok in range(len(lp)):
                if tok in (PAD_ID, BOS_ID):
                    continue
                candidates.append((score + float(lp[tok]), tok, tokens, lgs, float(lp[tok])))
        candidates.sort(key=lambda c: (-c[0], c[1], tuple(c[2])))
        live = []
        for cand_score, tok, tokens, lgs, tok_lp in candidates[:beam]:
            if tok == EOS_ID:
                pool.append((tokens, lgs, cand_score, True))
            else:
                live.append((tokens + [tok], lgs + [tok_lp], cand_score))
    for tokens, lgs, score in live:  # max_len reached without EOS
        pool.append((tokens, lgs, score, False))

    def ranked_key(entry):
        tokens, _, score, _ = entry
        return (-(score / max(1, len(tokens)) ** length_alpha), len(tokens), tuple(tokens))

    pool.sort(key=ranked_key)
    return [Hypothesis.from_generation(direction, toks, lgs, fin)
            for toks, lgs, _, fin in pool[:beam]]


def _prefix_sums(values: list[float]) -> list[float]:
    out = [0.0]
    for v in values:
        out.append(out[-1] + v)
    return out


def _merge_candidates(nf: int, nr: int):
    """Seam splits (i, i) plus the two pure hypotheses."""
    cands = [(i, i) for i in range(min(nf, nr) + 1)]
    cands.append((nf, nr))  # pure forward
    cands.append((0, 0))    # pure reverse
    return cands


def merge_by_score(f_hyp: Hypothesis, r_hyp: Hypothesis) -> MergedTranslation:
    """Best seam split of forward prefix + reverse suffix by normalized log-prob.

    Candidates are the seam splits (i, i) — first i positions from F, the rest
    from R — plus pure-forward (|F|, |R|) and pure-reverse (0, 0); candidate
    score is (sum F.logprobs[:i] + sum R.logprobs[j:]) / merged length, so the
    winner never scores below either pure hypothesis. Ties prefer longer
    output, then a smaller seam index.

    Suffix sums are computed the same left-to-right way plain sums are, so
    pure-candidate scores are bit-identical to summing a hypothesis directly.
    """
    nf, nr = len(f_hyp.tokens), len(r_hyp.tokens)
    if nf == 0 and nr == 0:
        raise ValueError("cannot merge two empty hypotheses")
    pref = _prefix_sums(f_hyp.logprobs)
    suff = [sum(r_hyp.logprobs[j:]) for j in range(nr + 1)]

    best = None  # ((norm, length, -i), i, j)
    for i, j in _merge_candidates(nf, nr):
        length = i + (nr - j)
        if length < 1:
            continue
        norm = (pref[i] + suff[j]) / length
        key = (norm, length, -i)
        if best is None or key > best[0]:
            best = (key, i, j)
    (norm, _, _), i, j = best
    return MergedTranslation(
        tokens=f_hyp.tokens[:i] + r_hyp.tokens[j:],
        split=(i, j),
        norm_score=norm,
        strategy="score_split",
    )


def merge_midpoint(f_hyp: Hypothesis, r_hyp: Hypothesis) -> MergedTranslation:
    """Fixed halfway split: first half from F, second half from R."""
    nf, nr = len(f_hyp.tokens), len(r_hyp.tokens)
    if nf == 0 and nr == 0:
        raise ValueError("cannot merge two empty hypotheses")
    if nf == 0:
        i, j = 0, 0
    elif nr == 0:
        i, j = nf, 0
    else:
        i = (nf + 1) // 2
        j = nr // 2
    tokens = f_hyp.tokens[:i] + r_hyp.tokens[j:]
    total = sum(f_hyp.logprobs[:i]) + sum(r_hyp.logprobs[j:])
    return MergedTranslation(tokens=tokens, split=(i, j),
                             norm_score=total / max(1, len(tokens)), strategy="midpoint")


def merge_rescore(f_hyp: Hypothesis, r_hyp: Hypothesis, model: BidirModel,
                  src: list[int], top_n: int = 8) -> MergedTranslation:
    """Re-rank the top_n split candidates under the forward decoder.

    The heuristic split scores mix two factorizations; this mode scores each
    candidate sequence exactly as (sum of forward-decoder log-probs of its
    tokens plus EOS) / (length + 1) and keeps the best.
    """
    nf, nr = len(f_hyp.tokens), len(r_hyp.tokens)
    if nf == 0 and nr == 0:
        raise ValueError("cannot merge two empty hypotheses")
    pref = _prefix_sums(f_hyp.logprobs)
    suff = [sum(r_hyp.logprobs[j:]) for j in range(nr + 1)]
    ranked = []
    for i, j in _merge_candidates(nf, nr):
        length = i + (nr - j)
        if length < 1:
            continue
        ranked.append(((pref[i] + suff[j]) / length, length, -i, i, j))
    ranked.sort(reverse=True)

    scorer = ModelScorer(model, src, FORWARD)
    seen = set()
    best = None
    for _, _, _, i, j in ranked[:top_n]:
        tokens = tuple(f_hyp.tokens[:i] + r_hyp.tokens[j:])
        if tokens in seen:
            continue
        seen.add(tokens)
        total = 0.0
        for k, tok in enumerate(tokens):
            total += float(scorer.step_logprobs(list(tokens[:k]))[tok])
        total += float(scorer.step_logprobs(list(tokens))[EOS_ID])
        exact = total / (len(tokens) + 1)
        key = (exact, len(tokens), -i)
        if best is None or key > best[0]:
            best = (key, i, j, list(tokens))
    (exact, _, _), i, j, tokens = best
    return MergedTranslation(tokens=tokens, split=(i, j), norm_score=exact, strategy="rescore")


def _pure(hyp: Hypothesis, strategy: str, side: str) -> MergedTranslation:
    split = (len(hyp.tokens), 0) if side == "F" else (0, 0)
    return MergedTranslation(tokens=list(hyp.tokens), split=split,
                             norm_score=hyp.norm_score, strategy=strategy)


def _empty(strategy: str) -> MergedTranslation:
    # both decoders emitted EOS immediately (an untrained or confused model);
    # the translation is empty and scores 0 BLEU downstream
    return MergedTranslation(tokens=[], split=(0, 0), norm_score=0.0, strategy=strategy)


def translate(model: BidirModel, src: list[int], strategy: str = "score_split",
              beam: int = 1, max_len: int | None = None) -> MergedTranslation:
    """Decode one source: run the needed direction(s), then merge or bypass."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    if not src:
        raise ValueError("cannot translate an empty source")
    if max_len is None:
        max_len = model.config.max_len - 1

    def decode(direction):
        if beam == 1:
            return greedy_decode(model, src, direction, max_len)
        return beam_decode(model, src, direction, beam, max_len)[0]

    if strategy == "l2r_only":
        return _pure(decode(FORWARD), strategy, "F")
    if strategy == "r2l_only":
        return _pure(decode(REVERSE), strategy, "R")
    f_hyp = decode(FORWARD)
    r_hyp = decode(REVERSE)
    if not f_hyp.tokens and not r_hyp.tokens:
        return _empty(strategy)
    if strategy == "score_split":
        return merge_by_score(f_hyp, r_hyp)
    if strategy == "midpoint":
        return merge_midpoint(f_hyp, r_hyp)
    return merge_rescore(f_hyp, r_hyp, model, src)


def translate_batch(model: BidirModel, srcs: list[list[int]], strategy: str = "score_split",
                    beam: int = 1, max_len: int | None = None) -> list[MergedTranslation]:
    """Translate many sources; greedy decoding is batched per direction."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    if not srcs:
        return []
    if max_len is None:
        max_len = model.config.max_len - 1
    if beam != 1 or strategy == "rescore":
        return [translate(model, s, strategy, beam, max_len) for s in srcs]

    if strategy == "l2r_only":
        return [_pure(h, strategy, "F") for h in greedy_decode_batch(model, srcs, FORWARD, max_len)]
    if strategy == "r2l_only":
        return [_pure(h, strategy, "R") for h in greedy_decode_batch(model, srcs, REVERSE, max_len)]
    f_hyps = greedy_decode_batch(model, srcs, FORWARD, max_len)
    r_hyps = greedy_decode_batch(model, srcs, REVERSE, max_len)
    merge = merge_by_score if strategy == "score_split" else merge_midpoint
    return [merge(f, r) if f.tokens or r.tokens else _empty(strategy)
            for f, r in zip(f_hyps, r_hyps)]
