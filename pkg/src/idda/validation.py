"""Argument checks shared by the estimator wrappers."""
from __future__ import annotations

import numbers
from typing import Sequence

from .corpus import Corpus


def check_parallel(X, y, name: str = "X") -> tuple[list[str], list[str]]:
    """Two equally long sequences of whitespace-tokenized strings."""
    if isinstance(X, str) or isinstance(y, str):
        raise TypeError(f"{name} and y must be sequences of sentences, not a single string")
    X, y = list(X), list(y)
    if len(X) != len(y):
        raise ValueError(f"{name} has {len(X)} sentences but y has {len(y)}")
    if not X:
        raise ValueError(f"{name} is empty")
    for i, (s, t) in enumerate(zip(X, y)):
        if not isinstance(s, str) or not isinstance(t, str):
            raise TypeError(f"sentence pair {i} is not a pair of strings")
    return X, y


def check_sentences(X, name: str = "X") -> list[str]:
    if isinstance(X, str):
        raise TypeError(f"{name} must be a sequence of sentences, not a single string")
    X = list(X)
    if not all(isinstance(s, str) for s in X):
        raise TypeError(f"{name} must contain strings")
    return X


def check_fraction(value, name: str, low: float = 0.0, high: float = 1.0) -> float:
    if not isinstance(value, numbers.Real) or not low <= float(value) <= high:
        raise ValueError(f"{name} must be a number in [{low}, {high}], got {value!r}")
    return float(value)


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_choice(value, name: str, choices: Sequence[str]) -> str:
    if value not in choices:
        raise ValueError(f"{name} must be one of {tuple(choices)}, got {value!r}")
    return value


def to_corpus(X: list[str], y: list[str], tag: str, role: str = "train") -> Corpus:
    return Corpus.from_pairs([(s.split(), t.split()) for s, t in zip(X, y)], tag, role)
