"""Byte pair encoding and the joint subword vocabulary.

Words are split into characters with an end-of-word marker attached to the
last character, and merges never cross word boundaries.  Subwords exposed to
the outside world use the ``@@`` continuation convention: every subword that
does not end a word carries a trailing ``@@``.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

EOW = "</w>"
CONT = "@@"

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
RESERVED = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3


class EmptyInputError(ValueError):
    pass


class VocabularyConfigError(ValueError):
    pass


def _word_symbols(word: str) -> tuple[str, ...]:
    return tuple(word[:-1]) + (word[-1] + EOW,)


def _merge_pair(symbols: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    left, right = pair
    out = []
    i = 0
    n = len(symbols)
    while i < n:
        if i < n - 1 and symbols[i] == left and symbols[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def _pair_counts(word_freqs: dict[tuple[str, ...], int]) -> Counter:
    counts: Counter = Counter()
    for symbols, freq in word_freqs.items():
        for a, b in zip(symbols, symbols[1:]):
            counts[(a, b)] += freq
    return counts


def _iter_words(sentences: Iterable[Sequence[str] | str]) -> Iterable[str]:
    for sent in sentences:
        tokens = sent.split() if isinstance(sent, str) else sent
        yield from tokens


@dataclass(frozen=True)
class BpeModel:
    merges: tuple[tuple[str, str], ...]
    base_symbols: frozenset[str]
    # merge frequencies at selection time; empty for models read from disk
    merge_counts: tuple[int, ...] = ()
    _cache: dict = field(default_factory=dict, repr=False, compare=False, hash=False)

    def segment_word(self, word: str) -> tuple[str, ...]:
        """Split one word into subwords using the ``@@`` convention."""
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        symbols = _word_symbols(word)
        for pair in self.merges:
            if len(symbols) == 1:
                break
            symbols = _merge_pair(symbols, pair)
        out = tuple(s[: -len(EOW)] if s.endswith(EOW) else s + CONT for s in symbols)
        self._cache[word] = out
        return out

    def segment(self, sentence: Sequence[str] | str) -> list[str]:
        tokens = sentence.split() if isinstance(sentence, str) else sentence
        out: list[str] = []
        for word in tokens:
            out.extend(self.segment_word(word))
        return out

    def unknown_characters(self, word: str) -> set[str]:
        return set(word) - self.base_symbols

    def save(self, path: str | Path) -> None:
        lines = [f"{a} {b}" for a, b in self.merges]
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BpeModel":
        merges = []
        base: set[str] = set()
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            parts = line.split(" ")
            if len(parts) != 2 or not all(parts):
                raise ValueError(f"{path}:{lineno}: malformed merge rule {line!r}")
            merges.append((parts[0], parts[1]))
            for sym in parts:
                stem = sym[: -len(EOW)] if sym.endswith(EOW) else sym
                base.update(stem)
        return cls(merges=tuple(merges), base_symbols=frozenset(base))


def learn_bpe(corpus: Iterable[Sequence[str] | str], num_merges: int) -> BpeModel:
    """Learn up to ``num_merges`` merge rules, most frequent pair first.

    Ties between equally frequent pairs go to the lexicographically smallest
    pair.  ``corpus`` is any iterable of sentences (token lists or strings).
    """
    if num_merges < 0:
        raise ValueError(f"num_merges must be >= 0, got {num_merges}")
    word_counts = Counter(_iter_words(corpus))
    if not word_counts:
        raise EmptyInputError("cannot learn BPE from an empty corpus")
    base = frozenset(ch for word in word_counts for ch in word)
    word_freqs = {_word_symbols(w): c for w, c in word_counts.items()}

    merges: list[tuple[str, str]] = []
    counts: list[int] = []
    for _ in range(num_merges):
        pair_counts = _pair_counts(word_freqs)
        if not pair_counts:
            break
        best, freq = min(pair_counts.items(), key=lambda kv: (-kv[1], kv[0]))
        merges.append(best)
        counts.append(freq)
        merged: dict[tuple[str, ...], int] = {}
        for symbols, f in word_freqs.items():
            new = _merge_pair(symbols, best)
            merged[new] = merged.get(new, 0) + f
        word_freqs = merged
    return BpeModel(merges=tuple(merges), base_symbols=base, merge_counts=tuple(counts))


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if self.tokens[: len(RESERVED)] != RESERVED:
            raise VocabularyConfigError(f"first tokens must be {RESERVED}")
        if len(set(self.tokens)) != len(self.tokens):
            raise VocabularyConfigError("vocabulary tokens must be unique")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def index(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls(tuple(Path(path).read_text(encoding="utf-8").splitlines()))


def build_vocab(corpus: Iterable[Sequence[str] | str], bpe: BpeModel, cap: int) -> Vocabulary:
    """Keep the ``cap - 4`` most frequent subwords after the reserved tokens."""
    if cap < len(RESERVED):
        raise VocabularyConfigError(f"vocabulary cap {cap} is below the {len(RESERVED)} reserved tokens")
    counts: Counter = Counter()
    for sent in corpus:
        counts.update(bpe.segment(sent))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked if tok not in RESERVED][: cap - len(RESERVED)]
    return Vocabulary(RESERVED + tuple(kept))


def encode(sentence: Sequence[str] | str, bpe: BpeModel, vocab: Vocabulary) -> list[int]:
    """Map a sentence to indices framed by begin/end markers.

    Subwords missing from the vocabulary, including those built on characters
    never seen during BPE learning, become the unknown index.
    """
    ids = [BOS_ID]
    ids.extend(vocab.index(sub) for sub in bpe.segment(sentence))
    ids.append(EOS_ID)
    return ids


def decode(ids: Sequence[int], vocab: Vocabulary) -> list[str]:
    """Invert :func:`encode`, dropping pad and begin/end markers."""
    subwords = [vocab.token(i) for i in ids if i not in (PAD_ID, BOS_ID, EOS_ID)]
    words: list[str] = []
    buf = ""
    for sub in subwords:
        if sub.endswith(CONT):
            buf += sub[: -len(CONT)]
        else:
            words.append(buf + sub)
            buf = ""
    if buf:
        words.append(buf)
    return words


class BpeTokenizer(BaseEstimator, TransformerMixin):
    """Joint BPE + vocabulary as a fit/transform step.

    ``fit`` takes every sentence from every domain (both sides) so that all
    models share one embedding index space.
    """

    def __init__(self, num_merges: int = 500, vocab_cap: int = 2000):
        self.num_merges = num_merges
        self.vocab_cap = vocab_cap

    def fit(self, X, y=None):
        sentences = list(X)
        self.bpe_ = learn_bpe(sentences, self.num_merges)
        self.vocab_ = build_vocab(sentences, self.bpe_, self.vocab_cap)
        return self

    def transform(self, X) -> list[list[int]]:
        check_is_fitted(self, "vocab_")
        return [encode(s, self.bpe_, self.vocab_) for s in X]

    def inverse_transform(self, X) -> list[str]:
        check_is_fitted(self, "vocab_")
        return [" ".join(decode(ids, self.vocab_)) for ids in X]

    @property
    def vocab_size(self) -> int:
        check_is_fitted(self, "vocab_")
        return len(self.vocab_)

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.bpe_.save(directory / "bpe.codes")
        self.vocab_.save(directory / "vocab.txt")

    @classmethod
    def load(cls, directory: str | Path) -> "BpeTokenizer":
        directory = Path(directory)
        bpe = BpeModel.load(directory / "bpe.codes")
        vocab = Vocabulary.load(directory / "vocab.txt")
        # characters are recovered from the vocabulary as well as the merges
        chars = set(bpe.base_symbols)
        for tok in vocab.tokens[len(RESERVED):]:
            chars.update(tok[: -len(CONT)] if tok.endswith(CONT) else tok)
        tok = cls(num_merges=len(bpe.merges), vocab_cap=len(vocab))
        tok.bpe_ = BpeModel(merges=bpe.merges, base_symbols=frozenset(chars))
        tok.vocab_ = vocab
        return tok
