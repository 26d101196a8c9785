import math

import pytest

from asbd.metrics import bucket_report, corpus_mean_bleu, sentence_bleu

from conftest import oracle_bleu


# the five fixture pairs; expected values frozen from the hand-count oracle
FIXTURE_PAIRS = [
    ("the cat sat on the mat", "the cat sat on the mat"),
    ("the the the", "the cat"),
    ("c d", "c d e f"),
    ("the cat sat on mat", "the cat is on the mat"),
    ("x y", "p q r"),
]
FIXTURE_EXPECTED = [
    100.0,
    38.1571414184444,    # 100 * (1/3 * 1/3 * 1/2)^(1/3)
    36.7879441171442,    # 100 * e^-1 * (1 * 1)^(1/2)
    33.0851636149926,    # 100 * e^-0.2 * (4/5 * 2/5 * 1/4 * 1/3)^(1/4)
    0.0,
]


@pytest.mark.parametrize("pair,expected", list(zip(FIXTURE_PAIRS, FIXTURE_EXPECTED)))
def test_fixture_pairs_match_oracle(pair, expected):
    hyp, ref = pair[0].split(), pair[1].split()
    score = sentence_bleu(hyp, ref)
    assert score.value == pytest.approx(oracle_bleu(hyp, ref), abs=1e-6)
    assert score.value == pytest.approx(expected, abs=1e-6)


def test_identity_is_100():
    for sent in (["a"], ["a", "b"], list("abcdefgh")):
        assert sentence_bleu(sent, sent).value == pytest.approx(100.0)


def test_brevity_penalty_formula():
    score = sentence_bleu(["a", "b"], ["c", "d", "e", "f"])
    assert score.brevity_penalty == pytest.approx(math.exp(1 - 4 / 2))


def test_the_the_the_components():
    score = sentence_bleu("the the the".split(), "the cat".split())
    assert score.precisions[0] == pytest.approx(1 / 3)
    assert score.precisions[1] == pytest.approx(1 / 3)   # (0+1)/(2+1)
    assert score.precisions[2] == pytest.approx(1 / 2)   # (0+1)/(1+1)
    assert score.precisions[3] is None                    # no 4-grams
    assert score.orders_used == [1, 2, 3]
    assert score.brevity_penalty == 1.0


def test_empty_hypothesis_scores_zero():
    assert sentence_bleu([], ["a"]).value == 0.0


def test_empty_reference_rejected():
    with pytest.raises(ValueError):
        sentence_bleu(["a"], [])


def test_bounds_random():
    import numpy as np

    rng = np.random.default_rng(0)
    for _ in range(200):
        hyp = [int(x) for x in rng.integers(0, 6, size=rng.integers(1, 12))]
        ref = [int(x) for x in rng.integers(0, 6, size=rng.integers(1, 12))]
        s = sentence_bleu(hyp, ref)
        assert 0.0 <= s.value <= 100.0
        assert s.value == pytest.approx(oracle_bleu(hyp, ref), abs=1e-6)


def test_unigram_match_count_monotone():
    # adding a correct token never lowers the clipped unigram match count
    ref = "a b c d".split()
    hyp = "a x".split()

    def clipped_matches(h):
        from collections import Counter

        rc = Counter(ref)
        return sum(min(c, rc[t]) for t, c in Counter(h).items())

    assert clipped_matches(hyp + ["b"]) >= clipped_matches(hyp)
    assert clipped_matches(hyp + ["c"] + ["d"]) >= clipped_matches(hyp + ["c"])


def test_corpus_mean():
    pairs = [(["a"], ["a"]), (["x"], ["y"])]
    assert corpus_mean_bleu(pairs) == pytest.approx(50.0)
    assert corpus_mean_bleu(list(reversed(pairs))) == pytest.approx(50.0)
    single = [(["a", "b"], ["a", "b"])]
    assert corpus_mean_bleu(single) == pytest.approx(sentence_bleu(["a", "b"], ["a", "b"]).value)


def test_corpus_mean_empty_rejected():
    with pytest.raises(ValueError):
        corpus_mean_bleu([])


def test_bucket_report_means():
    items = [(5, {"sys": 50.0}), (15, {"sys": 30.0})]
    rep = bucket_report(items, [10, 20])
    assert rep.labels == ["1-10", "11-20", "21+"]
    assert rep.counts == [1, 1, 0]
    assert rep.means[0] == [50.0]
    assert rep.means[1] == [30.0]
    assert rep.means[2] == [None]


def test_bucket_report_single_bucket():
    items = [(3, {"s": 10.0}), (4, {"s": 20.0})]
    rep = bucket_report(items, [10, 20])
    assert rep.counts == [2, 0, 0]
    assert rep.means[0] == [15.0]


def test_bucket_report_three_systems():
    items = [(5, {"a": 1.0, "b": 2.0, "c": 3.0})]
    rep = bucket_report(items, [10])
    assert rep.systems == ["a", "b", "c"]
    assert rep.means[0] == [1.0, 2.0, 3.0]


def test_bucket_counts_sum_to_corpus_size():
    import numpy as np

    rng = np.random.default_rng(1)
    items = [(int(rng.integers(1, 50)), {"s": float(rng.random() * 100)}) for _ in range(73)]
    rep = bucket_report(items, [10, 20, 30])
    assert sum(rep.counts) == 73
