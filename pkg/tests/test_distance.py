import pytest

from idda.corpus import Corpus, SynthSpec, synth_domain_corpus
from idda.distance import (
    CorpusTooSmallError, DomainDescriptor, ProxyADistance, describe, proxy_a_distance, transfer_order,
)


def synth(tag, overlap, index, seed, n=600):
    spec = SynthSpec(domain_tag=tag, vocab_size=150, overlap=overlap, domain_index=index, num_pairs=n,
                     style_markers=(), min_len=4, max_len=8)
    return synth_domain_corpus(spec, seed)


def test_same_distribution_is_near_zero():
    a, b = synth("a", 0.6, 0, 1), synth("a", 0.6, 0, 2)
    assert proxy_a_distance(a, b, 0).a_distance <= 0.2


def test_disjoint_vocabularies_are_far():
    a, b = synth("a", 0.0, 0, 1), synth("b", 0.0, 1, 2)
    assert proxy_a_distance(a, b, 0).a_distance >= 1.8


def test_relation_between_distance_and_error():
    d = proxy_a_distance(synth("a", 0.9, 0, 1), synth("b", 0.5, 1, 2), 3)
    assert d.a_distance == pytest.approx(2 * (1 - 2 * d.epsilon))
    assert 0.0 <= d.epsilon <= 0.5


def test_deterministic_given_seed():
    a, b = synth("a", 0.9, 0, 1), synth("b", 0.5, 1, 2)
    assert proxy_a_distance(a, b, 4) == proxy_a_distance(a, b, 4)


def test_cross_validated_variant():
    a, b = synth("a", 0.0, 0, 1), synth("b", 0.0, 1, 2)
    est = ProxyADistance(cv_folds=5, random_state=0).fit(a, b)
    assert est.a_distance_ >= 1.8


def test_small_corpus_rejected():
    tiny = Corpus.from_pairs([(["a"], ["b"])] * 5, "tiny")
    with pytest.raises(CorpusTooSmallError):
        proxy_a_distance(tiny, synth("a", 0.5, 0, 1), 0)


def test_transfer_order_most_distant_first():
    descs = [DomainDescriptor("near", a_distance=0.4, epsilon=0.4), DomainDescriptor("far", a_distance=1.6, epsilon=0.1),
             DomainDescriptor("mid", a_distance=1.0, epsilon=0.25)]
    assert [d.domain_tag for d in transfer_order(None, descs)] == ["far", "mid", "near"]


def test_transfer_order_stable_on_ties():
    descs = [DomainDescriptor(t, a_distance=1.0, epsilon=0.25) for t in ("x", "y", "z")]
    assert [d.domain_tag for d in transfer_order(None, descs)] == ["x", "y", "z"]


def test_descriptor_validates_relation():
    with pytest.raises(ValueError):
        DomainDescriptor("x", a_distance=1.0, epsilon=0.1)
    desc = describe(synth("a", 0.9, 0, 1), synth("b", 0.3, 1, 2), rng_seed=0)
    assert desc.domain_tag == "b"


def test_estimator_params():
    assert ProxyADistance(alpha=0.01).get_params()["alpha"] == 0.01
