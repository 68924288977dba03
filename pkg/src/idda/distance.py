"""Proxy A-distance between corpora and the many-to-one transfer order."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.feature_extraction.text import CountVectorizer
from sklearn.linear_model import SGDClassifier
from sklearn.model_selection import StratifiedKFold, train_test_split
from sklearn.preprocessing import normalize

from .corpus import Corpus

MIN_SENTENCES = 20


class CorpusTooSmallError(ValueError):
    pass


@dataclass(frozen=True)
class ADistance:
    a_distance: float
    epsilon: float


@dataclass(frozen=True)
class DomainDescriptor:
    domain_tag: str
    train: Corpus | None = None
    dev: Corpus | None = None
    a_distance: float = 0.0
    epsilon: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 0.5:
            raise ValueError(f"epsilon must lie in [0, 0.5], got {self.epsilon}")
        if abs(self.a_distance - 2.0 * (1.0 - 2.0 * self.epsilon)) > 1e-12:
            raise ValueError("a_distance must equal 2 * (1 - 2 * epsilon)")


def _identity(tokens):
    return list(tokens)


class ProxyADistance(BaseEstimator):
    """Domain discriminator whose held-out error gives the proxy A-distance.

    Source sentences of the two corpora are labelled by domain, the larger
    corpus is subsampled to the size of the smaller one, and a linear
    hinge-loss classifier is trained on L2-normalized bag-of-subword counts.
    ``epsilon_`` is the held-out error (one stratified split, or the mean
    over ``cv_folds`` folds), clamped to [0, 0.5].
    """

    def __init__(self, test_size: float = 0.2, alpha: float = 1e-4, max_iter: int = 50,
                 cv_folds: int = 0, segment: Callable | None = None, random_state: int = 0):
        self.test_size = test_size
        self.alpha = alpha
        self.max_iter = max_iter
        self.cv_folds = cv_folds
        self.segment = segment
        self.random_state = random_state

    def _classifier(self, seed: int) -> SGDClassifier:
        return SGDClassifier(loss="hinge", penalty="l2", alpha=self.alpha, max_iter=self.max_iter,
                             tol=None, random_state=seed)

    def fit(self, corpus_a: Corpus, corpus_b: Corpus):
        for c in (corpus_a, corpus_b):
            if len(c) < MIN_SENTENCES:
                raise CorpusTooSmallError(
                    f"corpus {c.domain_tag!r} has {len(c)} sentences, need at least {MIN_SENTENCES}")
        rng = np.random.default_rng(self.random_state)
        n = min(len(corpus_a), len(corpus_b))
        docs, labels = [], []
        for label, c in enumerate((corpus_a, corpus_b)):
            pick = np.sort(rng.choice(len(c), size=n, replace=False))
            for i in pick:
                src = c.pairs[i].source
                docs.append(self.segment(src) if self.segment else list(src))
                labels.append(label)
        y = np.array(labels)
        X = CountVectorizer(analyzer=_identity).fit_transform(docs)
        X = normalize(X.astype(np.float64))
        seed = int(rng.integers(2**31 - 1))
        if self.cv_folds and self.cv_folds > 1:
            errors = []
            folds = StratifiedKFold(self.cv_folds, shuffle=True, random_state=seed)
            for tr, te in folds.split(X, y):
                clf = self._classifier(seed).fit(X[tr], y[tr])
                errors.append(float(np.mean(clf.predict(X[te]) != y[te])))
            err = float(np.mean(errors))
        else:
            X_tr, X_te, y_tr, y_te = train_test_split(X, y, test_size=self.test_size, stratify=y,
                                                      random_state=seed)
            clf = self._classifier(seed).fit(X_tr, y_tr)
            err = float(np.mean(clf.predict(X_te) != y_te))
        self.raw_error_ = err
        self.epsilon_ = min(max(err, 0.0), 0.5)
        self.a_distance_ = 2.0 * (1.0 - 2.0 * self.epsilon_)
        return self


def proxy_a_distance(corpus_a: Corpus, corpus_b: Corpus, rng_seed: int = 0, **kw) -> ADistance:
    est = ProxyADistance(random_state=rng_seed, **kw).fit(corpus_a, corpus_b)
    return ADistance(est.a_distance_, est.epsilon_)


def describe(in_corpus: Corpus, train: Corpus, dev: Corpus | None = None, rng_seed: int = 0,
             **kw) -> DomainDescriptor:
    d = proxy_a_distance(in_corpus, train, rng_seed, **kw)
    return DomainDescriptor(train.domain_tag, train, dev, d.a_distance, d.epsilon)


def transfer_order(in_domain: DomainDescriptor | None,
                   outs: Sequence[DomainDescriptor]) -> list[DomainDescriptor]:
    """Most distant domain first; ties keep their input order."""
    return sorted(outs, key=lambda d: -d.a_distance)
