import math

import numpy as np
import pytest

from asbd.data import EOS_ID
from asbd.decoding import (
    Hypothesis,
    beam_decode,
    greedy_decode,
    greedy_decode_batch,
    merge_by_score,
    merge_midpoint,
    translate,
    translate_batch,
)
from asbd.model import FORWARD, REVERSE

from conftest import exhaustive_top1, random_scripted_model, scripted_from_probs


A, B, C = 4, 5, 6  # content token ids used by scripted models


def test_greedy_on_scripted_two_step():
    scorer = scripted_from_probs({
        (): {A: 0.9, B: 0.05, EOS_ID: 0.05},
        (A,): {EOS_ID: 0.8, A: 0.1, B: 0.1},
    }, vocab_size=7)
    hyp = greedy_decode(scorer, None, FORWARD, max_len=5)
    assert hyp.tokens == [A]
    assert hyp.logprobs == [pytest.approx(math.log(0.9))]
    assert hyp.finished


def test_greedy_reverse_unreverses():
    scorer = scripted_from_probs({
        (): {C: 0.9, EOS_ID: 0.1},
        (C,): {B: 0.9, EOS_ID: 0.1},
        (C, B): {A: 0.9, EOS_ID: 0.1},
        (C, B, A): {EOS_ID: 0.99, A: 0.01},
    }, vocab_size=7)
    hyp = greedy_decode(scorer, None, REVERSE, max_len=5)
    assert hyp.tokens == [A, B, C]
    assert hyp.finished
    # logprobs align with un-reversed tokens: tokens[2]=C was generated first
    assert hyp.logprobs[2] == pytest.approx(math.log(0.9))


def test_greedy_max_len_bound():
    scorer = scripted_from_probs({
        (): {A: 0.99, EOS_ID: 0.01},
        (A,): {A: 0.99, EOS_ID: 0.01},
    }, vocab_size=7)
    hyp = greedy_decode(scorer, None, FORWARD, max_len=1)
    assert len(hyp.tokens) <= 1
    assert not hyp.finished


def test_hypothesis_invariants():
    hyp = Hypothesis(FORWARD, [A, B], [-0.1, -0.2], -0.3, True)
    assert abs(hyp.total_logprob - sum(hyp.logprobs)) < 1e-6
    with pytest.raises(ValueError):
        Hypothesis(FORWARD, [A, EOS_ID], [-0.1, -0.2], -0.3, True)
    with pytest.raises(ValueError):
        Hypothesis(FORWARD, [A], [-0.1, -0.2], -0.3, True)


def test_unreverse_involution():
    gen_tokens, gen_lps = [C, B, A], [-0.3, -0.2, -0.1]
    rev = Hypothesis.from_generation(REVERSE, gen_tokens, gen_lps, True)
    assert rev.tokens == [A, B, C]
    assert rev.logprobs == [-0.1, -0.2, -0.3]
    # reversing the stored order again recovers the generation order
    assert rev.tokens[::-1] == gen_tokens
    fwd = Hypothesis.from_generation(FORWARD, gen_tokens, gen_lps, True)
    assert fwd.tokens == gen_tokens


def test_beam_equals_greedy_on_random_scripted_models():
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        scorer = random_scripted_model(rng, depth=4)
        g = greedy_decode(scorer, None, FORWARD, max_len=3)
        b = beam_decode(scorer, None, FORWARD, beam=1, max_len=3)[0]
        assert g.tokens == b.tokens, f"seed {seed}"
        assert g.logprobs == pytest.approx(b.logprobs)
        assert g.finished == b.finished


def test_beam_matches_exhaustive_enumeration():
    content = (3, 4, 5, 6)
    for seed in range(100):
        rng = np.random.default_rng(2000 + seed)
        scorer = random_scripted_model(rng, content=content, depth=3)
        best = beam_decode(scorer, None, FORWARD, beam=128, max_len=3, length_alpha=0.6)[0]
        oracle_tokens, _, oracle_fin = exhaustive_top1(scorer, content, 3, 0.6)
        assert best.tokens == oracle_tokens, f"seed {seed}"
        assert best.finished == oracle_fin


def test_beam_alpha_zero_ranks_by_raw_score():
    rng = np.random.default_rng(7)
    scorer = random_scripted_model(rng, depth=3)
    hyps = beam_decode(scorer, None, FORWARD, beam=128, max_len=2, length_alpha=0.0)
    oracle_tokens, _, _ = exhaustive_top1(scorer, (3, 4, 5, 6), 2, 0.0)
    assert hyps[0].tokens == oracle_tokens


def _hyp(tokens, logprobs, direction=FORWARD):
    return Hypothesis(direction, list(tokens), list(map(float, logprobs)),
                      float(sum(logprobs)), True)


def brute_force_merge(f, r):
    """Independent enumeration of the seam splits plus the two pure outputs."""
    nf, nr = len(f.tokens), len(r.tokens)
    pairs = [(i, i) for i in range(min(nf, nr) + 1)] + [(nf, nr), (0, 0)]
    best = None
    for i, j in pairs:
        length = i + nr - j
        if length < 1:
            continue
        norm = (sum(f.logprobs[:i]) + sum(r.logprobs[j:])) / length
        key = (norm, length, -i)
        if best is None or key > best[0]:
            best = (key, i, j)
    (norm, _, _), i, j = best
    return f.tokens[:i] + r.tokens[j:], (i, j), norm


def test_merge_by_score_worked_example():
    # seam (2,2) keeps F's confident prefix [x,y] and R's confident suffix [z]
    f = _hyp([10, 11, 12], [-0.1, -0.2, -1.5])
    r = _hyp([10, 13, 12], [-1.2, -0.3, -0.1], REVERSE)
    merged = merge_by_score(f, r)
    assert merged.split == (2, 2)
    assert merged.tokens == [10, 11, 12]
    assert merged.norm_score == pytest.approx(-0.4 / 3)
    assert merged.strategy == "score_split"
    # the pure candidates it had to beat
    assert sum(f.logprobs) / 3 == pytest.approx(-0.6)
    assert sum(r.logprobs) / 3 == pytest.approx(-1.6 / 3)
    tokens, split, norm = brute_force_merge(f, r)
    assert merged.tokens == tokens and merged.split == split
    assert merged.norm_score == pytest.approx(norm)


def test_merge_by_score_matches_brute_force_on_random_pairs():
    rng = np.random.default_rng(17)
    for _ in range(300):
        nf, nr = int(rng.integers(0, 7)), int(rng.integers(0, 7))
        if nf == 0 and nr == 0:
            continue
        f = _hyp(rng.integers(4, 12, size=nf), -rng.random(nf) * 3)
        r = _hyp(rng.integers(4, 12, size=nr), -rng.random(nr) * 3, REVERSE)
        merged = merge_by_score(f, r)
        tokens, split, norm = brute_force_merge(f, r)
        assert merged.tokens == tokens
        assert merged.split == split
        assert merged.norm_score == pytest.approx(norm, abs=1e-12)


def test_merge_by_score_empty_reverse():
    f = _hyp([10, 11], [-0.5, -0.5])
    r = _hyp([], [], REVERSE)
    merged = merge_by_score(f, r)
    assert merged.tokens == [10, 11]
    assert merged.norm_score == pytest.approx(f.norm_score)


def test_merge_by_score_identical_hypotheses():
    # F == R: every seam reproduces the same tokens and the pure score
    f = _hyp([10, 11], [-0.5, -0.4])
    r = _hyp([10, 11], [-0.5, -0.4], REVERSE)
    merged = merge_by_score(f, r)
    assert merged.tokens == [10, 11]
    assert merged.norm_score == pytest.approx(f.norm_score)


def test_merge_both_empty_rejected():
    with pytest.raises(ValueError):
        merge_by_score(_hyp([], []), _hyp([], [], REVERSE))
    with pytest.raises(ValueError):
        merge_midpoint(_hyp([], []), _hyp([], [], REVERSE))


def test_merge_dominance_random():
    rng = np.random.default_rng(3)
    for _ in range(200):
        nf, nr = int(rng.integers(0, 9)), int(rng.integers(0, 9))
        if nf == 0 and nr == 0:
            continue
        f = _hyp(rng.integers(4, 12, size=nf), -rng.random(nf) * 3)
        r = _hyp(rng.integers(4, 12, size=nr), -rng.random(nr) * 3, REVERSE)
        merged = merge_by_score(f, r)
        pures = [h.norm_score for h in (f, r) if h.tokens]
        assert merged.norm_score >= max(pures)


def test_merge_midpoint_even():
    f = _hyp(range(10, 16), [-0.1] * 6)
    r = _hyp(range(20, 26), [-0.1] * 6, REVERSE)
    merged = merge_midpoint(f, r)
    assert merged.split == (3, 3)
    assert merged.tokens == [10, 11, 12, 23, 24, 25]


def test_merge_midpoint_uneven():
    f = _hyp(range(10, 15), [-0.1] * 5)
    r = _hyp(range(20, 24), [-0.1] * 4, REVERSE)
    merged = merge_midpoint(f, r)
    assert merged.split == (3, 2)
    assert merged.tokens == [10, 11, 12, 22, 23]


def test_merge_midpoint_empty_forward():
    f = _hyp([], [])
    r = _hyp([20, 21], [-0.2, -0.3], REVERSE)
    merged = merge_midpoint(f, r)
    assert merged.tokens == [20, 21]


def craft_recovery_case(rng):
    """Aligned length-L hypotheses: F correct on [0..m), R correct on [m..L).

    Correct tokens score strictly higher than the erroneous regions, so the
    seam at m (the only all-correct candidate) wins strictly.
    """
    ref_len = int(rng.integers(2, 10))
    ref = [int(t) for t in rng.integers(4, 20, size=ref_len)]
    m = int(rng.integers(1, ref_len))
    highs_f = (-0.15 * rng.random(m) - 0.01).tolist()
    highs_r = (-0.15 * rng.random(ref_len - m) - 0.01).tolist()
    f_tokens = ref[:m] + [21] * (ref_len - m)  # 21/22: garbage outside ref alphabet
    f_lps = highs_f + (-2.0 - 3.0 * rng.random(ref_len - m)).tolist()
    r_tokens = [22] * m + ref[m:]
    r_lps = (-2.0 - 3.0 * rng.random(m)).tolist() + highs_r
    return ref, _hyp(f_tokens, f_lps), _hyp(r_tokens, r_lps, REVERSE)


def test_crafted_error_recovery():
    rng = np.random.default_rng(9)
    for case in range(50):
        ref, f, r = craft_recovery_case(rng)
        merged = merge_by_score(f, r)
        assert merged.tokens == ref, f"case {case}"


def test_translate_strategies_on_real_model(tiny_model):
    src = [4, 5, 6]
    out_l2r = translate(tiny_model, src, strategy="l2r_only")
    f_hyp = greedy_decode(tiny_model, src, FORWARD, tiny_model.config.max_len - 1)
    assert out_l2r.tokens == f_hyp.tokens

    out_r2l = translate(tiny_model, src, strategy="r2l_only")
    r_hyp = greedy_decode(tiny_model, src, REVERSE, tiny_model.config.max_len - 1)
    assert out_r2l.tokens == r_hyp.tokens

    if f_hyp.tokens or r_hyp.tokens:
        out = translate(tiny_model, src, strategy="score_split")
        pures = [h.norm_score for h in (f_hyp, r_hyp) if h.tokens]
        assert out.norm_score >= max(pures)


def test_translate_empty_source_rejected(tiny_model):
    with pytest.raises(ValueError):
        translate(tiny_model, [], strategy="score_split")


def test_translate_unknown_strategy(tiny_model):
    with pytest.raises(ValueError):
        translate(tiny_model, [4], strategy="zigzag")


def test_batched_greedy_matches_sequential(tiny_model):
    srcs = [[4, 5, 6], [7, 8], [9, 10, 11, 4]]
    batched = greedy_decode_batch(tiny_model, srcs, FORWARD, max_len=8)
    for src, hyp in zip(srcs, batched):
        solo = greedy_decode(tiny_model, src, FORWARD, max_len=8)
        assert hyp.tokens == solo.tokens
        assert hyp.finished == solo.finished
        assert hyp.logprobs == pytest.approx(solo.logprobs, abs=1e-4)


def test_translate_batch_matches_translate(tiny_model):
    srcs = [[4, 5, 6], [7, 8]]
    outs = translate_batch(tiny_model, srcs, strategy="score_split")
    for src, out in zip(srcs, outs):
        solo = translate(tiny_model, src, strategy="score_split")
        assert out.tokens == solo.tokens


def test_rescore_strategy_runs(tiny_model):
    out = translate(tiny_model, [4, 5, 6], strategy="rescore")
    assert out.strategy == "rescore"
    assert len(out.tokens) >= 0
