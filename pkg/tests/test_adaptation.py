import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import idda.adaptation as adaptation
from idda.adaptation import (
    CheckpointRegistry, DomainData, IddaConfig, RegistryInvariantError, baseline_transfer_config,
    idda_fix_teacher, idda_one_to_one, idda_unidir, run_baseline, run_idda,
)
from idda.corpus import Corpus
from idda.decoding import DecodeConfig
from idda.model import ModelConfig, clone_params, init_model
from idda.training import StepLog
from idda.transfer import TrainConfig, TrainResult, TransferConfig

TINY = ModelConfig(vocab_size=10, embed_dim=8, hidden_dim=8, num_heads=2, num_layers=1, max_positions=12)
_counter = itertools.count(100)


def fresh():
    return init_model(TINY, next(_counter))


def toy_domain(tag, seed, n=12):
    rng = np.random.default_rng(seed)
    pairs = [([1, *rng.integers(4, 10, size=3).tolist(), 2], [1, *rng.integers(4, 10, size=3).tolist(), 2])
             for _ in range(n)]
    return DomainData(Corpus.from_pairs(pairs, tag, "train"), Corpus.from_pairs(pairs[:4], tag, "dev"))


IN, OUT, OUT2 = toy_domain("in", 0), toy_domain("out", 1), toy_domain("far", 2)


def initial_cache(scores):
    return {tag: TrainResult(fresh(), s, 0, [(0, s)], 1, StepLog()) for tag, s in scores.items()}


class ScriptedTransfer:
    """Stands in for transfer_model: records every call and returns scripted dev scores."""

    def __init__(self, scores):
        self.scores = iter(scores)
        self.calls = []

    def __call__(self, source, corpus, teacher, dev, cfg, vocab=None, log=None, on_init=None):
        out = fresh()
        score = next(self.scores)
        self.calls.append(dict(source=source, teacher=teacher, target=corpus.domain_tag, cfg=cfg,
                               result=out, score=score))
        return TrainResult(out, score, 1, [(1, score)], 1, log or StepLog())


@pytest.fixture
def scripted(monkeypatch):
    def install(scores):
        fake = ScriptedTransfer(scores)
        monkeypatch.setattr(adaptation, "transfer_model", fake)
        return fake
    return install


CFG = IddaConfig(K=2)


def test_strict_acceptance_equal_score_rejected(scripted):
    fake = scripted([10.0, 20.0, 11.0, 20.0])
    init = initial_cache({"in": 20.0, "out": 10.0})
    r = idda_one_to_one(IN, OUT, TINY, CFG, initial=init)
    # k=1 in->out ties the out incumbent, out->in ties the in incumbent
    assert [e.accepted for e in r.trace] == [False, False, True, False]
    assert r.theta_in is init["in"].params
    assert r.theta_out["out"] is fake.calls[2]["result"]


def test_registry_seeded_with_initial_models_as_teachers(scripted):
    fake = scripted([1.0, 1.0, 1.0, 1.0])
    init = initial_cache({"in": 5.0, "out": 5.0})
    idda_one_to_one(IN, OUT, TINY, CFG, initial=init)
    assert fake.calls[0]["teacher"] is init["out"].params
    assert fake.calls[1]["teacher"] is init["in"].params
    assert fake.calls[0]["source"] is init["in"].params


def test_students_start_from_latest_source_models(scripted):
    fake = scripted([1.0, 9.0, 2.0, 3.0])
    init = initial_cache({"in": 5.0, "out": 5.0})
    idda_one_to_one(IN, OUT, TINY, CFG, initial=init)
    c = fake.calls
    assert [x["target"] for x in c] == ["out", "in", "out", "in"]
    # out->in always starts from this iteration's out model, accepted or not
    assert c[1]["source"] is c[0]["result"]
    assert c[2]["source"] is c[1]["result"]
    assert c[3]["source"] is c[2]["result"]
    # the accepted in-domain candidate becomes the in-domain teacher
    assert c[3]["teacher"] is c[1]["result"]
    assert c[2]["teacher"] is init["out"].params


def test_fixed_teacher_never_changes(scripted):
    fake = scripted([9.0, 9.0, 10.0, 10.0])
    init = initial_cache({"in": 5.0, "out": 5.0})
    idda_fix_teacher(IN, OUT, TINY, CFG, initial=init)
    assert all(c["teacher"] is init[c["target"]].params for c in fake.calls)


def test_unidir_skips_in_to_out(scripted):
    fake = scripted([6.0, 7.0])
    init = initial_cache({"in": 5.0, "out": 5.0})
    r = idda_unidir(IN, OUT, TINY, CFG, initial=init)
    assert [c["target"] for c in fake.calls] == ["in", "in"]
    assert all(c["source"] is init["out"].params for c in fake.calls)
    assert r.registry.accepted_scores("in") == [5.0, 6.0, 7.0]


def test_many_to_one_visits_domains_in_order(scripted):
    fake = scripted([0.0] * 8)
    init = initial_cache({"in": 5.0, "far": 5.0, "out": 5.0})
    run_idda(IN, [OUT2, OUT], TINY, CFG, initial=init)
    assert [c["target"] for c in fake.calls] == ["far", "in", "out", "in"] * 2
    # the second out-domain starts from the in-domain model left by the first
    assert fake.calls[2]["source"] is fake.calls[1]["result"]


def test_k1_without_improvement_keeps_initial(scripted):
    scripted([0.0, 0.0])
    init = initial_cache({"in": 5.0, "out": 5.0})
    r = idda_one_to_one(IN, OUT, TINY, IddaConfig(K=1), initial=init)
    assert r.theta_in is init["in"].params


def test_transfer_seeds_depend_on_iteration_and_direction(scripted):
    fake = scripted([0.0] * 4)
    idda_one_to_one(IN, OUT, TINY, CFG, initial=initial_cache({"in": 1.0, "out": 1.0}))
    seeds = [c["cfg"].rng_seed for c in fake.calls]
    assert len(set(seeds)) == 4
    assert all(c["cfg"].lam == CFG.transfer.lam for c in fake.calls)


def test_early_exit_stops_after_idle_iteration(scripted):
    fake = scripted([0.0] * 6)
    idda_one_to_one(IN, OUT, TINY, IddaConfig(K=3, early_exit=True), initial=initial_cache({"in": 1.0, "out": 1.0}))
    assert len(fake.calls) == 2


def test_unknown_variant_and_empty_outs():
    with pytest.raises(ValueError):
        run_idda(IN, [OUT], TINY, CFG, variant="sideways")
    with pytest.raises(ValueError):
        run_idda(IN, [], TINY, CFG)


# --------------------------------------------------------------------------
# registry


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 100), st.lists(st.floats(0, 100), max_size=12))
def test_registry_monotone_under_any_proposals(seed_score, proposals):
    reg = CheckpointRegistry()
    reg.seed("d", fresh(), seed_score)
    best = seed_score
    for k, s in enumerate(proposals, start=1):
        accepted = reg.propose("d", k, fresh(), s)
        assert accepted == (s > best)
        best = max(best, s)
        assert reg.best_score["d"] == best
    acc = reg.accepted_scores("d")
    assert all(a < b for a, b in zip(acc, acc[1:]))
    curve = reg.best_by_iteration("d", len(proposals))
    assert curve == sorted(curve) and curve[-1] == best


def test_registry_detects_tampering():
    reg = CheckpointRegistry()
    reg.seed("d", fresh(), 5.0)
    reg.propose("d", 1, fresh(), 6.0)
    reg.best_score["d"] = 4.0
    with pytest.raises(RegistryInvariantError):
        reg.check("d")


def test_registry_records():
    reg = CheckpointRegistry()
    reg.seed("d", fresh(), 5.0)
    reg.propose("d", 1, fresh(), 3.0)
    assert reg.to_records() == [
        {"domain": "d", "iteration": 0, "dev_bleu": 5.0, "accepted": True},
        {"domain": "d", "iteration": 1, "dev_bleu": 3.0, "accepted": False},
    ]


# --------------------------------------------------------------------------
# baselines


def test_baseline_configs():
    cfg = IddaConfig(transfer=TransferConfig(lam=0.4))
    assert baseline_transfer_config("ft", cfg, "out").lam == 0.0
    assert baseline_transfer_config("mft", cfg, "out").lam == 0.0
    assert baseline_transfer_config("kd", cfg, "out").lam == 0.4
    with pytest.raises(ValueError):
        run_baseline("bogus", IN, OUT, TINY, cfg)


def test_baselines_use_expected_sources_and_data(scripted):
    fake = scripted([1.0, 2.0, 3.0])
    init = initial_cache({"in": 5.0, "out": 5.0})
    single = run_baseline("single", IN, OUT, TINY, CFG, initial=init)
    assert single.params is init["in"].params and single.dev_bleu == 5.0
    run_baseline("ft", IN, OUT, TINY, CFG, initial=init)
    run_baseline("mft", IN, OUT, TINY, CFG, initial=init)
    run_baseline("kd", IN, OUT, TINY, CFG, initial=init)
    assert all(c["source"] is init["out"].params for c in fake.calls)
    assert fake.calls[2]["teacher"] is init["in"].params
    assert [c["cfg"].lam for c in fake.calls] == [0.0, 0.0, 0.4]


# --------------------------------------------------------------------------
# a small real run


def test_real_run_students_copy_their_sources():
    cfg = IddaConfig(
        K=2,
        initial=TrainConfig(max_epochs=1, dev_eval_every=100, token_budget=200, decode=DecodeConfig(beam_size=1)),
        transfer=TransferConfig(max_epochs=1, dev_eval_every=100, token_budget=200,
                                decode=DecodeConfig(beam_size=1)),
    )
    results, snapshots = {}, []

    def on_transfer(event, result):
        results[(event.iteration, event.direction)] = result.params

    r = idda_one_to_one(IN, OUT, TINY, cfg, on_transfer=on_transfer,
                        on_student_init=lambda d, k, t, p: snapshots.append((k, d, clone_params(p))))
    for k, direction, student in snapshots:
        if direction == "in->out":
            want = r.initial["in"].params if k == 1 else results[(k - 1, "out->in")]
        else:
            want = results[(k, "in->out")]
        assert student.equals(want)
    for tag in ("in", "out"):
        r.registry.check(tag)
        curve = r.registry.best_by_iteration(tag, 2)
        assert curve == sorted(curve)
