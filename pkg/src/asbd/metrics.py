"""Smoothed sentence-level BLEU and length-bucketed aggregation.

Scoring rules, fixed here so scores are hand-checkable:
  * modified (clipped) n-gram precisions up to max_n=4;
  * add-one smoothing on numerator and denominator for orders n >= 2;
  * orders with zero hypothesis n-grams are dropped from the geometric mean;
  * brevity penalty min(1, exp(1 - |ref|/|hyp|));
  * empty hypothesis scores 0 by convention; a zero unigram precision
    (unsmoothed) also gives 0.
Corpus-level numbers are arithmetic means of per-sentence scores.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from .data import length_bucket, bucket_labels


@dataclass
class BleuScore:
    value: float                      # in [0, 100]
    precisions: list[float | None]    # p1..p4; None where the order was unused
    brevity_penalty: float
    orders_used: list[int]


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def sentence_bleu(hyp: list, ref: list, max_n: int = 4) -> BleuScore:
    if len(ref) == 0:
        raise ValueError("BLEU reference must be nonempty")
    if len(hyp) == 0:
        return BleuScore(value=0.0, precisions=[None] * max_n, brevity_penalty=0.0, orders_used=[])

    precisions: list[float | None] = []
    orders_used = []
    log_sum = 0.0
    zero_hit = False
    for n in range(1, max_n + 1):
        hyp_counts = _ngrams(hyp, n)
        total = sum(hyp_counts.values())
        if total == 0:
            precisions.append(None)
            continue
        ref_counts = _ngrams(ref, n)
        matched = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
        if n >= 2:
            p = (matched + 1) / (total + 1)
        else:
            p = matched / total
        precisions.append(p)
        orders_used.append(n)
        if p == 0.0:
            zero_hit = True
        else:
            log_sum += math.log(p)

    bp = min(1.0, math.exp(1.0 - len(ref) / len(hyp)))
    if zero_hit or not orders_used:
        value = 0.0
    else:
        value = 100.0 * bp * math.exp(log_sum / len(orders_used))
    return BleuScore(value=value, precisions=precisions, brevity_penalty=bp, orders_used=orders_used)


def corpus_mean_bleu(pairs: list[tuple[list, list]]) -> float:
    """Arithmetic mean of per-sentence scores."""
    if not pairs:
        raise ValueError("corpus_mean_bleu needs at least one pair")
    return sum(sentence_bleu(h, r).value for h, r in pairs) / len(pairs)


@dataclass
class BucketReport:
    boundaries: list[int]
    labels: list[str]
    systems: list[str]
    counts: list[int]                      # per bucket
    means: list[list[float | None]]        # [bucket][system]; None if empty


def bucket_report(items: list[tuple[int, dict[str, float]]], boundaries: list[int],
                  systems: list[str] | None = None) -> BucketReport:
    """Aggregate (source length, per-system sentence BLEU) rows into buckets."""
    if not items:
        raise ValueError("bucket_report needs at least one item")
    if systems is None:
        systems = list(items[0][1].keys())
    labels = bucket_labels(boundaries)
    n_buckets = len(labels)
    counts = [0] * n_buckets
    sums = [[0.0] * len(systems) for _ in range(n_buckets)]
    for src_len, scores in items:
        b = length_bucket(src_len, boundaries)
        counts[b] += 1
        for k, sysname in enumerate(systems):
            sums[b][k] += scores[sysname]
    means: list[list[float | None]] = []
    for b in range(n_buckets):
        if counts[b] == 0:
            means.append([None] * len(systems))
        else:
            means.append([sums[b][k] / counts[b] for k in range(len(systems))])
    return BucketReport(boundaries=list(boundaries), labels=labels,
                        systems=list(systems), counts=counts, means=means)
