"""Corpus ingestion, vocabulary, length bucketing, and synthetic tasks.

Tokenization is whitespace splitting end to end; no subword machinery.
Parallel corpora are UTF-8 TSV, one `source<TAB>target` pair per line.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .rng import make_rng, STREAM_SPLIT, STREAM_SYNTH

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
RESERVED = (PAD, BOS, EOS, UNK)

SYNTH_TASKS = ("copy", "reverse", "suffix_checksum")


@dataclass
class Vocab:
    id_to_token: list[str]
    token_to_id: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if list(self.id_to_token[:4]) != list(RESERVED):
            raise ValueError("vocab must start with the reserved tokens")
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("vocab contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]


def build_vocab(sentences, min_freq: int = 1, max_size: int | None = None) -> Vocab:
    """Reserved ids first, then tokens by (frequency desc, token asc).

    max_size caps the total vocabulary size, reserved ids included.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts = Counter()
    for tokens in sentences:
        counts.update(tokens)
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(
        (t for t, c in counts.items() if c >= min_freq and t not in RESERVED),
        key=lambda t: (-counts[t], t),
    )
    if max_size is not None:
        if max_size < len(RESERVED) + 1:
            raise ValueError("max_size leaves no room for content tokens")
        ranked = ranked[: max_size - len(RESERVED)]
    return Vocab(list(RESERVED) + ranked)


@dataclass
class ParallelCorpus:
    pairs: list[tuple[list[str], list[str]]]
    path: str | None = None
    n_skipped: int = 0

    def __len__(self) -> int:
        return len(self.pairs)

    def sources(self):
        return (s for s, _ in self.pairs)

    def targets(self):
        return (t for _, t in self.pairs)


def load_parallel_tsv(path) -> ParallelCorpus:
    """One pair per line, source<TAB>target. Lines without a tab or with an
    empty side are skipped and counted. CRLF is normalized to LF."""
    try:
        with open(path, encoding="utf-8", newline="") as f:
            raw = f.read()
    except OSError as e:
        raise OSError(f"cannot read corpus {path}: {e}") from e
    pairs = []
    n_skipped = 0
    for line in raw.replace("\r\n", "\n").split("\n"):
        if line == "":
            continue
        if "\t" not in line:
            n_skipped += 1
            continue
        src_text, tgt_text = line.split("\t", 1)
        src, tgt = src_text.split(), tgt_text.split()
        if not src or not tgt:
            n_skipped += 1
            continue
        pairs.append((src, tgt))
    if not pairs:
        raise ValueError(f"no valid pairs in {path} ({n_skipped} lines skipped)")
    return ParallelCorpus(pairs=pairs, path=str(path), n_skipped=n_skipped)


def write_parallel_tsv(corpus: ParallelCorpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for src, tgt in corpus.pairs:
            f.write(f"{' '.join(src)}\t{' '.join(tgt)}\n")


def length_bucket(src_len: int, boundaries: list[int]) -> int:
    """Index of the smallest bucket whose upper bound covers src_len; lengths
    beyond the last boundary fall into the overflow bucket."""
    if src_len <= 0:
        raise ValueError("length buckets are defined for positive lengths only")
    bs = list(boundaries)
    if not bs or any(b2 <= b1 for b1, b2 in zip(bs, bs[1:])) or bs[0] < 1:
        raise ValueError(f"boundaries must be strictly ascending positive ints, got {boundaries}")
    for i, bound in enumerate(bs):
        if src_len <= bound:
            return i
    return len(bs)


def bucket_labels(boundaries: list[int]) -> list[str]:
    labels = []
    lo = 1
    for b in boundaries:
        labels.append(f"{lo}-{b}")
        lo = b + 1
    labels.append(f"{lo}+")
    return labels


def gen_synthetic(task: str, n: int, len_range: tuple[int, int], alphabet: int, seed: int) -> ParallelCorpus:
    """Deterministic toy corpora over tokens t4..t{alphabet+3}.

    copy: tgt = src. reverse: tgt = reversed(src). suffix_checksum: tgt = src
    plus one final token t{(sum of payload ids) mod alphabet + 4}, so the last
    target token depends on the entire source.
    """
    if task not in SYNTH_TASKS:
        raise ValueError(f"unknown task {task!r}; choose from {SYNTH_TASKS}")
    lo, hi = len_range
    if alphabet < 2:
        raise ValueError("alphabet must be >= 2")
    if lo < 1 or hi < lo:
        raise ValueError(f"bad length range {len_range}")
    if n < 1:
        raise ValueError("n must be >= 1")
    offset = len(RESERVED)
    rng = make_rng(seed, STREAM_SYNTH)
    pairs = []
    for _ in range(n):
        length = int(rng.integers(lo, hi + 1))
        ids = rng.integers(offset, offset + alphabet, size=length)
        src = [f"t{i}" for i in ids]
        if task == "copy":
            tgt = list(src)
        elif task == "reverse":
            tgt = src[::-1]
        else:
            checksum = int(ids.sum()) % alphabet + offset
            tgt = list(src) + [f"t{checksum}"]
        pairs.append((src, tgt))
    return ParallelCorpus(pairs=pairs, path=None)


def split_corpus(corpus: ParallelCorpus, seed: int,
                 ratios: tuple[float, float] = (0.8, 0.1)) -> tuple[ParallelCorpus, ParallelCorpus, ParallelCorpus]:
    """Seeded shuffle, then train/valid/test split: floor(r0*n), floor(r1*n), rest."""
    n = len(corpus.pairs)
    order = make_rng(seed, STREAM_SPLIT).permutation(n)
    shuffled = [corpus.pairs[i] for i in order]
    n_train = int(n * ratios[0])
    n_valid = int(n * ratios[1])
    mk = lambda pairs: ParallelCorpus(pairs=pairs, path=corpus.path)
    return (
        mk(shuffled[:n_train]),
        mk(shuffled[n_train : n_train + n_valid]),
        mk(shuffled[n_train + n_valid :]),
    )


def encode_corpus(corpus: ParallelCorpus, src_vocab: Vocab, tgt_vocab: Vocab,
                  max_len: int) -> tuple[list[tuple[list[int], list[int]]], int]:
    """Encode pairs to ids, truncating overlong sides (kept, with a counter).

    Targets are cut to max_len - 1 so the BOS-shifted input still fits.
    """
    encoded = []
    n_truncated = 0
    for src, tgt in corpus.pairs:
        s = src_vocab.encode(src)
        t = tgt_vocab.encode(tgt)
        if len(s) > max_len or len(t) > max_len - 1:
            n_truncated += 1
            s = s[:max_len]
            t = t[: max_len - 1]
        encoded.append((s, t))
    return encoded, n_truncated
