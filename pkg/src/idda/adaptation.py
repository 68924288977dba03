"""Iterative dual domain adaptation, its ablations, and the contrast baselines."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

from .corpus import Corpus, concat, oversample_mix
from .model import ModelConfig, ModelParams, init_model, save_params
from .seeding import derive_seed
from .tokenization import Vocabulary
from .training import LossSpec, StepLog
from .transfer import TrainConfig, TrainResult, TransferConfig, dev_evaluator, run_training, transfer_model

logger = logging.getLogger(__name__)

VARIANTS = ("full", "unidir", "fixtea")
BASELINES = ("single", "mix", "ft", "mft", "kd")


class RegistryInvariantError(AssertionError):
    pass


@dataclass(frozen=True)
class HistoryEntry:
    iteration: int
    score: float
    accepted: bool


class CheckpointRegistry:
    """Best-so-far model and dev score per domain, plus every proposal made."""

    def __init__(self):
        self.best: dict[str, ModelParams] = {}
        self.best_score: dict[str, float] = {}
        self.history: dict[str, list[HistoryEntry]] = {}

    def seed(self, domain: str, params: ModelParams, score: float) -> None:
        self.best[domain] = params
        self.best_score[domain] = score
        self.history[domain] = [HistoryEntry(0, score, True)]

    def propose(self, domain: str, iteration: int, params: ModelParams, score: float) -> bool:
        """Accept ``params`` iff its dev score is strictly above the incumbent's."""
        accepted = score > self.best_score[domain]
        self.history[domain].append(HistoryEntry(iteration, score, accepted))
        if accepted:
            self.best[domain] = params
            self.best_score[domain] = score
        self.check(domain)
        return accepted

    def accepted_scores(self, domain: str) -> list[float]:
        return [h.score for h in self.history[domain] if h.accepted]

    def best_by_iteration(self, domain: str, iterations: int) -> list[float]:
        """Registry-best dev score after each iteration 0..iterations."""
        out = []
        for k in range(iterations + 1):
            scores = [h.score for h in self.history[domain] if h.accepted and h.iteration <= k]
            out.append(max(scores))
        return out

    def check(self, domain: str) -> None:
        accepted = self.accepted_scores(domain)
        if any(b <= a for a, b in zip(accepted, accepted[1:])):
            raise RegistryInvariantError(f"accepted scores for {domain!r} regressed: {accepted}")
        if self.best_score[domain] != max(accepted):
            raise RegistryInvariantError(f"stored best for {domain!r} is not the accepted maximum")

    def to_records(self) -> list[dict]:
        return [{"domain": d, "iteration": h.iteration, "dev_bleu": h.score, "accepted": h.accepted}
                for d in self.history for h in self.history[d]]


@dataclass(frozen=True)
class DomainData:
    train: Corpus
    dev: Corpus

    @property
    def tag(self) -> str:
        return self.train.domain_tag


@dataclass(frozen=True)
class IddaConfig:
    K: int = 3
    initial: TrainConfig = field(default_factory=TrainConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)
    rng_seed: int = 0
    early_exit: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")

    def with_lambda(self, lam: float) -> "IddaConfig":
        return replace(self, transfer=replace(self.transfer, lam=lam))


@dataclass(frozen=True)
class TraceEvent:
    iteration: int
    direction: str  # "in->out" or "out->in"
    domain: str
    dev_bleu: float
    accepted: bool
    selected_step: int
    losses: tuple[float, ...]


@dataclass
class IddaResult:
    theta_in: ModelParams
    theta_out: dict[str, ModelParams]
    registry: CheckpointRegistry
    trace: list[TraceEvent]
    in_tag: str
    initial: dict[str, TrainResult]

    @property
    def in_dev_bleu(self) -> float:
        return self.registry.best_score[self.in_tag]

    def out_dev_bleu(self, tag: str) -> float:
        return self.registry.best_score[tag]


def train_initial(data: DomainData, model_config: ModelConfig, cfg: TrainConfig,
                  vocab: Vocabulary | None = None, log: StepLog | None = None) -> TrainResult:
    """Train from random init with the likelihood loss; best-on-dev checkpoint."""
    student = init_model(model_config, derive_seed(cfg.rng_seed, "init-params"))
    return run_training(student, data.train, LossSpec("nll"), cfg,
                        dev_evaluator(data.dev, cfg.decode, vocab), log)


def initial_config(cfg: IddaConfig, tag: str) -> TrainConfig:
    return cfg.initial.with_seed(derive_seed(cfg.rng_seed, "initial", tag))


def initial_models(domains: Sequence[DomainData], model_config: ModelConfig, cfg: IddaConfig,
                   vocab: Vocabulary | None = None, cache: dict | None = None) -> dict[str, TrainResult]:
    """θ^(0) for each domain, seeded by domain tag so runs can share them."""
    out = {}
    for d in domains:
        if cache is not None and d.tag in cache:
            out[d.tag] = cache[d.tag]
            continue
        out[d.tag] = train_initial(d, model_config, initial_config(cfg, d.tag), vocab,
                                   StepLog(domain=d.tag, iteration=0))
        if cache is not None:
            cache[d.tag] = out[d.tag]
    return out


def _transfer_seed(cfg: IddaConfig, k: int, direction: str, out_tag: str) -> int:
    return derive_seed(cfg.rng_seed, "transfer", k, direction, out_tag)


def run_idda(in_domain: DomainData, out_order: Sequence[DomainData], model_config: ModelConfig,
             cfg: IddaConfig, vocab: Vocabulary | None = None, variant: str = "full",
             initial: dict[str, TrainResult] | None = None,
             on_transfer: Callable[[TraceEvent, TrainResult], None] | None = None,
             on_student_init: Callable[[str, int, str, ModelParams], None] | None = None,
             make_log: Callable[[int, str, str], StepLog] | None = None) -> IddaResult:
    """Iterate dual transfers between the in-domain model and each out-domain model in order.

    Per iteration and out-domain: in->out transfer from the latest in-domain
    model (skipped by ``unidir``), then out->in transfer from the latest
    out-domain model.  Teachers are the registry's best models, or the
    initial models under ``fixtea``.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    if not out_order:
        raise ValueError("need at least one out-of-domain corpus")
    domains = [in_domain, *out_order]
    # a caller-supplied dict doubles as a cache, so several runs can share initial models
    initial = initial_models(domains, model_config, cfg, vocab, cache=initial if initial is not None else {})
    registry = CheckpointRegistry()
    for d in domains:
        registry.seed(d.tag, initial[d.tag].params, initial[d.tag].best_score)
    fixed_teacher = {d.tag: initial[d.tag].params for d in domains}
    latest = {d.tag: initial[d.tag].params for d in domains}
    trace: list[TraceEvent] = []

    def teacher(tag: str) -> ModelParams:
        return fixed_teacher[tag] if variant == "fixtea" else registry.best[tag]

    def step(k: int, direction: str, source_tag: str, target: DomainData, out_tag: str) -> bool:
        seed = _transfer_seed(cfg, k, direction, out_tag)
        tcfg = cfg.transfer.with_seed(seed)
        if make_log is not None:
            log = make_log(k, direction, target.tag)
        else:
            log = StepLog(iteration_k=k, direction=direction, domain=target.tag)
        hook = None
        if on_student_init is not None:
            hook = lambda p: on_student_init(direction, k, target.tag, p)  # noqa: E731
        result = transfer_model(latest[source_tag], target.train, teacher(target.tag), target.dev,
                                tcfg, vocab, log, hook)
        accepted = registry.propose(target.tag, k, result.params, result.best_score)
        latest[target.tag] = result.params
        event = TraceEvent(k, direction, target.tag, result.best_score, accepted, result.best_step,
                           tuple(result.losses))
        trace.append(event)
        logger.info("k=%d %s %s dev_bleu=%.2f accepted=%s", k, direction, target.tag,
                    result.best_score, accepted)
        if on_transfer is not None:
            on_transfer(event, result)
        return accepted

    for k in range(1, cfg.K + 1):
        any_accepted = False
        for out in out_order:
            if variant != "unidir":
                any_accepted |= step(k, "in->out", in_domain.tag, out, out.tag)
            any_accepted |= step(k, "out->in", out.tag, in_domain, out.tag)
        if cfg.early_exit and not any_accepted:
            logger.info("no registry accepted a candidate in iteration %d; stopping", k)
            break
    return IddaResult(registry.best[in_domain.tag], {d.tag: registry.best[d.tag] for d in out_order},
                      registry, trace, in_domain.tag, initial)


def idda_one_to_one(in_domain: DomainData, out_domain: DomainData, model_config: ModelConfig,
                    cfg: IddaConfig, vocab: Vocabulary | None = None, **kw) -> IddaResult:
    return run_idda(in_domain, [out_domain], model_config, cfg, vocab, **kw)


def idda_unidir(in_domain, out_domain, model_config, cfg, vocab=None, **kw) -> IddaResult:
    return run_idda(in_domain, [out_domain], model_config, cfg, vocab, variant="unidir", **kw)


def idda_fix_teacher(in_domain, out_domain, model_config, cfg, vocab=None, **kw) -> IddaResult:
    return run_idda(in_domain, [out_domain], model_config, cfg, vocab, variant="fixtea", **kw)


def mix_domains(domains: Sequence[DomainData], tag: str = "mix") -> DomainData:
    return DomainData(concat([d.train for d in domains], tag), concat([d.dev for d in domains], tag))


# --------------------------------------------------------------------------
# baselines


@dataclass(frozen=True)
class BaselineResult:
    kind: str
    params: ModelParams
    dev_bleu: float
    transfer_config: TransferConfig | None
    teacher_tag: str | None


def baseline_transfer_config(kind: str, cfg: IddaConfig, out_tag: str) -> TransferConfig:
    """Settings of the single transfer inside ft/mft/kd; seeded like IDDA's first out->in."""
    lam = {"ft": 0.0, "mft": 0.0, "kd": 0.4}[kind]
    return replace(cfg.transfer, lam=lam, rng_seed=_transfer_seed(cfg, 1, "out->in", out_tag))


def run_baseline(kind: str, in_domain: DomainData, out_domain: DomainData, model_config: ModelConfig,
                 cfg: IddaConfig, vocab: Vocabulary | None = None,
                 initial: dict[str, TrainResult] | None = None) -> BaselineResult:
    if kind not in BASELINES:
        raise ValueError(f"baseline must be one of {BASELINES}")
    if kind == "single":
        init = initial_models([in_domain], model_config, cfg, vocab, initial)
        r = init[in_domain.tag]
        return BaselineResult(kind, r.params, r.best_score, None, None)
    if kind == "mix":
        mixed = DomainData(concat([in_domain.train, out_domain.train], "mix"), in_domain.dev)
        sub = cfg.initial.with_seed(derive_seed(cfg.rng_seed, "initial", "mix"))
        r = train_initial(mixed, model_config, sub, vocab)
        return BaselineResult(kind, r.params, r.best_score, None, None)
    need = [out_domain, in_domain] if kind == "kd" else [out_domain]
    init = initial_models(need, model_config, cfg, vocab, initial)
    source = init[out_domain.tag].params
    tcfg = baseline_transfer_config(kind, cfg, out_domain.tag)
    if kind == "kd":
        teacher, teacher_tag = init[in_domain.tag].params, in_domain.tag
    else:
        # lambda is 0, so the teacher term carries zero weight
        teacher, teacher_tag = source, None
    train = oversample_mix(in_domain.train, out_domain.train) if kind == "mft" else in_domain.train
    r = transfer_model(source, train, teacher, in_domain.dev, tcfg, vocab)
    return BaselineResult(kind, r.params, r.best_score, tcfg, teacher_tag)


def save_registry_checkpoints(result: IddaResult, directory: str | Path) -> None:
    directory = Path(directory)
    for tag, params in [(result.in_tag, result.theta_in), *result.theta_out.items()]:
        save_params(params, directory / tag / "best.ckpt")
