"""scikit-learn style wrappers: fit on sentence pairs, predict translations, score with BLEU.

    >>> est = Seq2SeqTranslator(max_epochs=2).fit(src_lines, tgt_lines)
    >>> est.predict(["some source sentence"])
    >>> idda = IddaTranslator(K=3, lam=0.4).fit(src, tgt, out_domains={"news": (news_src, news_tgt)})
"""
from __future__ import annotations

import logging

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .adaptation import VARIANTS, DomainData, IddaConfig, run_idda, train_initial
from .corpus import filter_by_length
from .decoding import DecodeConfig, bleu, translate
from .distance import describe, transfer_order
from .model import ModelConfig
from .seeding import derive_seed
from .tokenization import BpeTokenizer, decode
from .transfer import TrainConfig, TransferConfig
from .validation import (
    check_choice, check_fraction, check_parallel, check_positive_int, check_sentences, to_corpus,
)

logger = logging.getLogger(__name__)


class Seq2SeqTranslator(BaseEstimator):
    """Transformer translation model trained with the likelihood loss and dev early stopping.

    Without a dev set, the first ``dev_size`` training pairs double as dev data.
    """

    def __init__(self, embed_dim: int = 64, hidden_dim: int = 128, num_heads: int = 2, num_layers: int = 1,
                 max_positions: int = 64, num_merges: int = 1000, vocab_cap: int = 2000, max_epochs: int = 10,
                 patience: int = 3, dev_eval_every: int = 50, lr: float = 1e-3, token_budget: int = 1000,
                 beam_size: int = 4, dev_size: int = 200, random_state: int = 0):
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.num_heads = num_heads
        self.num_layers = num_layers
        self.max_positions = max_positions
        self.num_merges = num_merges
        self.vocab_cap = vocab_cap
        self.max_epochs = max_epochs
        self.patience = patience
        self.dev_eval_every = dev_eval_every
        self.lr = lr
        self.token_budget = token_budget
        self.beam_size = beam_size
        self.dev_size = dev_size
        self.random_state = random_state

    # configuration pieces -------------------------------------------------

    def _decode_config(self) -> DecodeConfig:
        return DecodeConfig(beam_size=check_positive_int(self.beam_size, "beam_size"))

    def _model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size, self.embed_dim, self.hidden_dim, self.num_heads, self.num_layers,
                           self.max_positions)

    def _train_config(self) -> TrainConfig:
        for name in ("max_epochs", "patience", "dev_eval_every", "token_budget"):
            check_positive_int(getattr(self, name), name)
        return TrainConfig(self.max_epochs, self.patience, self.dev_eval_every, self.random_state,
                           self.token_budget, self.lr, self._decode_config())

    def _domain(self, X, y, X_dev, y_dev) -> tuple[list[str], list[str], list[str], list[str]]:
        X, y = check_parallel(X, y)
        if X_dev is None:
            X_dev, y_dev = X[: self.dev_size], y[: self.dev_size]
        else:
            X_dev, y_dev = check_parallel(X_dev, y_dev, "X_dev")
        return X, y, X_dev, y_dev

    def _encode(self, X, y, X_dev, y_dev, tag: str) -> DomainData:
        tok = self.tokenizer_
        parts = []
        for corpus in (to_corpus(X, y, tag), to_corpus(X_dev, y_dev, tag, "dev")):
            encoded = corpus.encode(tok)
            kept = filter_by_length(encoded, self.max_positions)
            if len(kept) < len(encoded):
                logger.warning("%s/%s: dropped %d pairs longer than %d subwords", tag, corpus.role,
                               len(encoded) - len(kept), self.max_positions)
            if len(kept) == 0:
                raise ValueError(f"no {corpus.role} pair of {tag!r} fits in max_positions={self.max_positions}")
            parts.append(kept)
        return DomainData(*parts)

    # estimator API --------------------------------------------------------

    def fit(self, X, y, X_dev=None, y_dev=None):
        X, y, X_dev, y_dev = self._domain(X, y, X_dev, y_dev)
        self.tokenizer_ = BpeTokenizer(self.num_merges, self.vocab_cap).fit(X + y)
        data = self._encode(X, y, X_dev, y_dev, "in")
        cfg = self._train_config().with_seed(derive_seed(self.random_state, "initial", "in"))
        result = train_initial(data, self._model_config(self.tokenizer_.vocab_size), cfg, self.tokenizer_.vocab_)
        self.params_ = result.params
        self.dev_bleu_ = result.best_score
        self.n_steps_ = result.steps
        return self

    def _predict_with(self, params, X) -> list[str]:
        X = check_sentences(X)
        if not X:
            return []
        hyps = translate(params, self.tokenizer_.transform(X), self._decode_config())
        return [" ".join(decode(h.tokens, self.tokenizer_.vocab_)) for h in hyps]

    def predict(self, X) -> list[str]:
        check_is_fitted(self, "params_")
        return self._predict_with(self.params_, X)

    def score(self, X, y) -> float:
        """Corpus BLEU of ``predict(X)`` against ``y``."""
        X, y = check_parallel(X, y)
        return bleu([h.split() for h in self.predict(X)], [t.split() for t in y]).score


class IddaTranslator(Seq2SeqTranslator):
    """In-domain translator adapted by iterative dual transfer with one or more out-domains.

    ``fit`` takes the in-domain pairs plus ``out_domains``, a mapping from
    tag to ``(X, y)``; several out-domains are visited in proxy A-distance
    order (most distant first) unless ``order="given"``.
    """

    def __init__(self, K: int = 3, lam: float = 0.4, variant: str = "full", order: str = "distance",
                 transfer_epochs: int = 4, transfer_patience: int = 2, transfer_lr: float = 1e-3,
                 embed_dim: int = 64, hidden_dim: int = 128, num_heads: int = 2, num_layers: int = 1,
                 max_positions: int = 64, num_merges: int = 1000, vocab_cap: int = 2000, max_epochs: int = 10,
                 patience: int = 3, dev_eval_every: int = 50, lr: float = 1e-3, token_budget: int = 1000,
                 beam_size: int = 4, dev_size: int = 200, random_state: int = 0):
        super().__init__(embed_dim, hidden_dim, num_heads, num_layers, max_positions, num_merges, vocab_cap,
                         max_epochs, patience, dev_eval_every, lr, token_budget, beam_size, dev_size, random_state)
        self.K = K
        self.lam = lam
        self.variant = variant
        self.order = order
        self.transfer_epochs = transfer_epochs
        self.transfer_patience = transfer_patience
        self.transfer_lr = transfer_lr

    def _idda_config(self) -> IddaConfig:
        check_fraction(self.lam, "lam")
        check_choice(self.variant, "variant", VARIANTS)
        base = self._train_config()
        transfer = TransferConfig(self.transfer_epochs, self.transfer_patience, self.dev_eval_every, 0,
                                  self.token_budget, self.transfer_lr, base.decode, lam=self.lam)
        return IddaConfig(K=check_positive_int(self.K, "K"), initial=base, transfer=transfer,
                          rng_seed=self.random_state)

    def fit(self, X, y, out_domains=None, X_dev=None, y_dev=None, out_dev=None):
        if not out_domains:
            raise ValueError("out_domains must map at least one tag to (X, y)")
        check_choice(self.order, "order", ("distance", "given"))
        cfg = self._idda_config()
        X, y, X_dev, y_dev = self._domain(X, y, X_dev, y_dev)
        outs = {}
        for tag, (Xo, yo) in out_domains.items():
            dev = (out_dev or {}).get(tag, (None, None))
            outs[tag] = self._domain(Xo, yo, dev[0], dev[1])
        everything = X + y + [s for parts in outs.values() for s in parts[0] + parts[1]]
        self.tokenizer_ = BpeTokenizer(self.num_merges, self.vocab_cap).fit(everything)
        in_tag = "in" if "in" not in outs else "in-domain"
        in_data = self._encode(X, y, X_dev, y_dev, in_tag)
        out_data = {tag: self._encode(*parts, tag) for tag, parts in outs.items()}
        ordered = list(out_data.values())
        if self.order == "distance" and len(ordered) > 1:
            descs = [describe(in_data.train, d.train, rng_seed=derive_seed(self.random_state, "adist"))
                     for d in ordered]
            self.a_distances_ = {d.domain_tag: d.a_distance for d in descs}
            ordered = [out_data[d.domain_tag] for d in transfer_order(None, descs)]
        self.transfer_order_ = [d.tag for d in ordered]
        result = run_idda(in_data, ordered, self._model_config(self.tokenizer_.vocab_size), cfg,
                          self.tokenizer_.vocab_, variant=self.variant)
        self.result_ = result
        self.params_ = result.theta_in
        self.out_params_ = result.theta_out
        self.dev_bleu_ = result.in_dev_bleu
        self.history_ = result.registry.to_records()
        return self

    def predict(self, X, domain: str | None = None) -> list[str]:
        """Translate with the adapted in-domain model, or with out-domain ``domain``'s model."""
        check_is_fitted(self, "params_")
        if domain is None:
            return self._predict_with(self.params_, X)
        if domain not in self.out_params_:
            raise ValueError(f"unknown domain {domain!r}; fitted out-domains are {sorted(self.out_params_)}")
        return self._predict_with(self.out_params_[domain], X)
