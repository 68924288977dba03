import pytest
from sklearn.base import clone

from idda.corpus import SynthSpec, synth_domain_corpus
from idda.estimators import IddaTranslator, Seq2SeqTranslator

SMALL = dict(embed_dim=8, hidden_dim=8, num_heads=2, max_positions=24, num_merges=30, vocab_cap=200,
             max_epochs=1, dev_eval_every=100, token_budget=300, beam_size=1, dev_size=10)


def pairs(tag, index, n=40, seed=0):
    spec = SynthSpec(domain_tag=tag, vocab_size=12, overlap=0.7, domain_index=index, num_pairs=n,
                     style_markers=(), min_len=2, max_len=4)
    c = synth_domain_corpus(spec, seed)
    return [" ".join(p.source) for p in c], [" ".join(p.target) for p in c]


def test_get_params_and_clone():
    est = Seq2SeqTranslator(**SMALL)
    assert est.get_params()["embed_dim"] == 8
    assert clone(est).get_params() == est.get_params()
    idda = IddaTranslator(K=2, lam=0.3, **SMALL)
    assert idda.get_params()["lam"] == 0.3 and idda.get_params()["max_epochs"] == 1


def test_fit_predict_score():
    X, y = pairs("a", 0)
    est = Seq2SeqTranslator(**SMALL).fit(X, y)
    out = est.predict(X[:5])
    assert len(out) == 5 and all(isinstance(s, str) for s in out)
    assert 0.0 <= est.score(X[:10], y[:10]) <= 100.0
    assert est.predict([]) == []


def test_idda_fit_two_out_domains():
    X, y = pairs("a", 0)
    est = IddaTranslator(K=1, **SMALL).fit(X, y, out_domains={"b": pairs("b", 1, seed=1), "c": pairs("c", 2, seed=2)})
    assert set(est.transfer_order_) == {"b", "c"}
    assert set(est.a_distances_) == {"b", "c"}
    assert est.dev_bleu_ >= est.result_.registry.history[est.result_.in_tag][0].score
    assert len(est.predict(X[:3], domain="b")) == 3
    with pytest.raises(ValueError):
        est.predict(X[:3], domain="zz")


def test_validation_errors():
    X, y = pairs("a", 0)
    with pytest.raises(ValueError):
        Seq2SeqTranslator(**SMALL).fit(X, y[:-1])
    with pytest.raises(TypeError):
        Seq2SeqTranslator(**SMALL).fit("a b", "c d")
    with pytest.raises(ValueError):
        IddaTranslator(lam=1.5, **SMALL).fit(X, y, out_domains={"b": pairs("b", 1)})
    with pytest.raises(ValueError):
        IddaTranslator(**SMALL).fit(X, y)
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        Seq2SeqTranslator().predict(["a"])
