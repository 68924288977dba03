"""Parallel corpora: loading, length filtering, token-budget batching and
synthetic domain generation."""
from __future__ import annotations

import math
import string
from functools import lru_cache
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .tokenization import PAD_ID

ROLES = ("train", "dev", "test")


class AlignmentError(ValueError):
    def __init__(self, n_source: int, n_target: int):
        super().__init__(f"parallel files are misaligned: {n_source} source lines vs {n_target} target lines")
        self.counts = (n_source, n_target)


class BatchingError(ValueError):
    pass


class SynthConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SentencePair:
    source: tuple
    target: tuple


@dataclass(frozen=True)
class Corpus:
    pairs: tuple[SentencePair, ...]
    domain_tag: str
    role: str = "train"

    def __post_init__(self):
        if not self.domain_tag:
            raise ValueError("domain_tag must be non-empty")
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    @classmethod
    def from_pairs(cls, pairs, domain_tag: str, role: str = "train") -> "Corpus":
        return cls(tuple(SentencePair(tuple(s), tuple(t)) for s, t in pairs), domain_tag, role)

    @property
    def sources(self) -> list[tuple]:
        return [p.source for p in self.pairs]

    @property
    def targets(self) -> list[tuple]:
        return [p.target for p in self.pairs]

    def sentences(self) -> list[tuple]:
        """Both sides of every pair, source first."""
        return self.sources + self.targets

    def with_role(self, role: str) -> "Corpus":
        return Corpus(self.pairs, self.domain_tag, role)

    def encode(self, tokenizer) -> "Corpus":
        src = tokenizer.transform(self.sources)
        tgt = tokenizer.transform(self.targets)
        return Corpus.from_pairs(zip(src, tgt), self.domain_tag, self.role)


def concat(corpora: Sequence[Corpus], domain_tag: str | None = None) -> Corpus:
    tag = domain_tag or "+".join(c.domain_tag for c in corpora)
    pairs = tuple(p for c in corpora for p in c.pairs)
    return Corpus(pairs, tag, corpora[0].role)


def load_parallel(source_path, target_path, domain_tag: str, role: str = "train") -> Corpus:
    src_lines = Path(source_path).read_text(encoding="utf-8").splitlines()
    tgt_lines = Path(target_path).read_text(encoding="utf-8").splitlines()
    if len(src_lines) != len(tgt_lines):
        raise AlignmentError(len(src_lines), len(tgt_lines))
    return Corpus.from_pairs(((s.split(), t.split()) for s, t in zip(src_lines, tgt_lines)), domain_tag, role)


def save_parallel(corpus: Corpus, source_path, target_path) -> None:
    for path in (source_path, target_path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(source_path).write_text("".join(" ".join(p.source) + "\n" for p in corpus), encoding="utf-8")
    Path(target_path).write_text("".join(" ".join(p.target) + "\n" for p in corpus), encoding="utf-8")


def filter_by_length(corpus: Corpus, max_len: int = 50) -> Corpus:
    """Keep pairs whose sides are both non-empty and at most ``max_len`` tokens."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    kept = tuple(p for p in corpus if 0 < len(p.source) <= max_len and 0 < len(p.target) <= max_len)
    return Corpus(kept, corpus.domain_tag, corpus.role)


def oversample_mix(in_corpus: Corpus, out_corpus: Corpus) -> Corpus:
    """Repeat the in-domain pairs ceil(|out|/|in|) times and append the out-domain pairs."""
    if len(in_corpus) == 0 or len(out_corpus) == 0:
        raise ValueError("oversample_mix needs two non-empty corpora")
    reps = math.ceil(len(out_corpus) / len(in_corpus))
    pairs = in_corpus.pairs * reps + out_corpus.pairs
    return Corpus(pairs, f"{in_corpus.domain_tag}+{out_corpus.domain_tag}", in_corpus.role)


# --------------------------------------------------------------------------
# batching


@dataclass(frozen=True)
class Batch:
    """Padded index matrices for a group of encoded pairs.

    ``target`` keeps the begin/end markers; the decoder reads ``target[:, :-1]``
    and predicts ``target[:, 1:]``.
    """

    source: torch.Tensor
    target: torch.Tensor
    source_lengths: torch.Tensor
    target_lengths: torch.Tensor
    token_count: int
    indices: tuple[int, ...] = field(default=())

    @property
    def size(self) -> int:
        return int(self.source.shape[0])

    @property
    def decoder_input(self) -> torch.Tensor:
        return self.target[:, :-1]

    @property
    def decoder_output(self) -> torch.Tensor:
        return self.target[:, 1:]

    @property
    def output_mask(self) -> torch.Tensor:
        """True at target positions that are predicted (not padding)."""
        steps = torch.arange(self.target.shape[1] - 1)
        return steps[None, :] < (self.target_lengths[:, None] - 1)

    def select(self, order: Sequence[int]) -> "Batch":
        idx = torch.as_tensor(list(order), dtype=torch.long)
        return Batch(
            self.source[idx], self.target[idx], self.source_lengths[idx], self.target_lengths[idx],
            self.token_count, tuple(self.indices[i] for i in order) if self.indices else (),
        )


def _pad(seqs: Sequence[Sequence[int]]) -> torch.Tensor:
    width = max(len(s) for s in seqs)
    out = torch.full((len(seqs), width), PAD_ID, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
    return out


def collate(pairs: Sequence[SentencePair], indices: Sequence[int] = ()) -> Batch:
    srcs = [p.source for p in pairs]
    tgts = [p.target for p in pairs]
    src_len = torch.as_tensor([len(s) for s in srcs], dtype=torch.long)
    tgt_len = torch.as_tensor([len(t) for t in tgts], dtype=torch.long)
    width = max(int(src_len.max()), int(tgt_len.max()))
    return Batch(_pad(srcs), _pad(tgts), src_len, tgt_len, width * len(pairs), tuple(indices))


def make_batches(corpus: Corpus, token_budget: int = 1000, rng_seed: int = 0) -> list[Batch]:
    """Group pairs of similar length so that rows x longest side <= token_budget.

    Pairs are sorted by (target length, source length) with a seeded shuffle
    as tie-break, cut greedily into batches, and the batch order is shuffled.
    """
    if len(corpus) == 0:
        return []
    rng = np.random.default_rng(rng_seed)
    lengths = [max(len(p.source), len(p.target)) for p in corpus]
    longest = max(lengths)
    if longest > token_budget:
        raise BatchingError(f"a pair of length {longest} exceeds the token budget {token_budget}")
    jitter = rng.permutation(len(corpus))
    order = sorted(range(len(corpus)),
                   key=lambda i: (len(corpus.pairs[i].target), len(corpus.pairs[i].source), jitter[i]))
    groups: list[list[int]] = []
    current: list[int] = []
    width = 0
    for i in order:
        w = max(width, lengths[i])
        if current and w * (len(current) + 1) > token_budget:
            groups.append(current)
            current, w = [], lengths[i]
        current.append(i)
        width = w
    if current:
        groups.append(current)
    batches = [collate([corpus.pairs[i] for i in g], g) for g in groups]
    return [batches[i] for i in rng.permutation(len(batches))]


# --------------------------------------------------------------------------
# synthetic domains


def _word_stream(seed: int, count: int, min_len: int = 3, max_len: int = 7) -> list[str]:
    """``count`` distinct lowercase words; prefix-stable in ``count``."""
    rng = np.random.default_rng(seed)
    letters = string.ascii_lowercase
    seen: set[str] = set()
    out: list[str] = []
    while len(out) < count:
        chunk = max(count - len(out), 64)
        lens = rng.integers(min_len, max_len + 1, size=chunk)
        codes = rng.integers(0, 26, size=(chunk, max_len))
        for n, row in zip(lens.tolist(), codes.tolist()):
            w = "".join(letters[c] for c in row[:n])
            if w not in seen:
                seen.add(w)
                out.append(w)
                if len(out) == count:
                    break
    return out


# pool layout inside the word stream: [shared | private(domain 0) | private(domain 1) | ...]
_POOL_SLOTS = 2048


class TransductionRule:
    """The translation knowledge every synthetic domain shares.

    A fixed word lexicon generated from ``rule_seed`` plus a local reordering:
    each source sentence is translated word by word and adjacent word pairs
    are swapped.
    """

    def __init__(self, rule_seed: int, max_domains: int = 8):
        self.rule_seed = rule_seed
        self.max_domains = max_domains
        total = _POOL_SLOTS * (max_domains + 1)
        stream = _word_stream(rule_seed, 2 * total)
        self.source_words = stream[0::2]
        self.target_words = stream[1::2]
        self.lexicon = dict(zip(self.source_words, self.target_words))

    def shared_pool(self, size: int) -> list[str]:
        return self.source_words[:size]

    def private_pool(self, domain_index: int, size: int) -> list[str]:
        if not 0 <= domain_index < self.max_domains:
            raise SynthConfigError(f"domain_index must lie in [0, {self.max_domains})")
        start = _POOL_SLOTS * (domain_index + 1)
        return self.source_words[start:start + size]

    def marker_translation(self, marker: str) -> str:
        return marker.upper()

    def apply(self, source: Sequence[str]) -> tuple[str, ...]:
        words = [self.lexicon[w] if w in self.lexicon else self.marker_translation(w) for w in source]
        for i in range(0, len(words) - 1, 2):
            words[i], words[i + 1] = words[i + 1], words[i]
        return tuple(words)


@lru_cache(maxsize=8)
def get_rule(rule_seed: int) -> TransductionRule:
    return TransductionRule(rule_seed)


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one synthetic domain.

    Content words are drawn from the shared pool with probability
    ``overlap`` and from the domain's private pool otherwise; both pools
    hold ``vocab_size`` words ranked by a Zipf law.  Style markers are
    domain-specific tokens prepended with probability ``marker_rate``.
    """

    domain_tag: str
    rule_seed: int = 7
    vocab_size: int = 300
    overlap: float = 0.5
    style_markers: tuple[str, ...] = ()
    num_pairs: int = 2000
    domain_index: int = 0
    marker_rate: float = 0.3
    min_len: int = 4
    max_len: int = 10
    zipf: float = 1.0
    role: str = "train"

    KEYS = ("domain_tag", "rule_seed", "vocab_size", "overlap", "style_markers", "num_pairs",
            "domain_index", "marker_rate", "min_len", "max_len", "zipf", "role")

    @classmethod
    def from_mapping(cls, data: dict) -> "SynthSpec":
        unknown = set(data) - set(cls.KEYS)
        if unknown:
            raise SynthConfigError(f"unknown synth keys: {sorted(unknown)}")
        kw = dict(data)
        markers = kw.get("style_markers", ())
        if isinstance(markers, str):
            markers = markers.split()
        kw["style_markers"] = tuple(markers)
        return cls(**kw)

    def inventory(self, rule: TransductionRule) -> set[str]:
        """Content words this domain can emit."""
        words: set[str] = set()
        if self.overlap > 0:
            words.update(rule.shared_pool(self.vocab_size))
        if self.overlap < 1:
            words.update(rule.private_pool(self.domain_index, self.vocab_size))
        return words


def _zipf_probs(n: int, exponent: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** exponent
    return w / w.sum()


def synth_domain_corpus(spec: SynthSpec, rng_seed: int = 0) -> Corpus:
    if spec.vocab_size < 1:
        raise SynthConfigError("vocab_size must be >= 1")
    if not 0.0 <= spec.overlap <= 1.0:
        raise SynthConfigError(f"overlap must lie in [0, 1], got {spec.overlap}")
    if spec.num_pairs < 0 or not 1 <= spec.min_len <= spec.max_len:
        raise SynthConfigError("need num_pairs >= 0 and 1 <= min_len <= max_len")
    if spec.vocab_size > _POOL_SLOTS:
        raise SynthConfigError(f"vocab_size is limited to {_POOL_SLOTS}")
    rule = get_rule(spec.rule_seed)
    shared = rule.shared_pool(spec.vocab_size)
    private = rule.private_pool(spec.domain_index, spec.vocab_size)
    probs = _zipf_probs(spec.vocab_size, spec.zipf)
    rng = np.random.default_rng([spec.rule_seed, spec.domain_index, rng_seed])

    pairs = []
    for _ in range(spec.num_pairs):
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        from_shared = rng.random(n) < spec.overlap
        ranks = rng.choice(spec.vocab_size, size=n, p=probs)
        src = [shared[r] if s else private[r] for r, s in zip(ranks, from_shared)]
        if spec.style_markers and rng.random() < spec.marker_rate:
            src.insert(0, spec.style_markers[int(rng.integers(len(spec.style_markers)))])
        pairs.append((src, rule.apply(src)))
    return Corpus.from_pairs(pairs, spec.domain_tag, spec.role)
