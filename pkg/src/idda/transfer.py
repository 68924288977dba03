"""Knowledge transfer between domain models.

A transfer copies the source-domain model into a fresh student and trains
it on the target-domain corpus with the distillation loss, against the
frozen best-so-far model of the target domain as teacher.  The same
early-stopping loop also trains models from scratch.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

from .corpus import Corpus, make_batches
from .decoding import DecodeConfig, eval_model
from .model import ModelParams, clone_params
from .seeding import derive_seed
from .tokenization import Vocabulary
from .training import AdamState, LossSpec, ShapeMismatchError, StepLog, adam_step, backward

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 10
    patience: int = 3
    dev_eval_every: int = 50
    rng_seed: int = 0
    token_budget: int = 1000
    lr: float = 1e-3
    decode: DecodeConfig = field(default_factory=DecodeConfig)

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.dev_eval_every < 1:
            raise ValueError(f"dev_eval_every must be >= 1, got {self.dev_eval_every}")

    def with_seed(self, seed: int):
        return replace(self, rng_seed=seed)


@dataclass(frozen=True)
class TransferConfig(TrainConfig):
    lam: float = 0.4
    max_epochs: int = 4
    patience: int = 2

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")


@dataclass
class TrainResult:
    params: ModelParams
    best_score: float
    best_step: int
    evaluations: list[tuple[int, float]]
    steps: int
    log: StepLog

    @property
    def losses(self) -> list[float]:
        return self.log.losses()


class NoTrainingStepsError(RuntimeError):
    pass


def run_training(student: ModelParams, corpus: Corpus, spec: LossSpec, cfg: TrainConfig,
                 evaluate: Callable[[ModelParams], float], log: StepLog | None = None,
                 on_init: Callable[[ModelParams], None] | None = None) -> TrainResult:
    """Adam on ``corpus`` with dev-based early stopping; returns the best evaluated student.

    ``student`` is trained in place.  Evaluation happens every
    ``dev_eval_every`` steps and after the last step; training stops after
    ``patience`` evaluations without strict improvement.
    """
    if len(corpus) == 0:
        raise ValueError(f"corpus {corpus.domain_tag!r} is empty")
    log = log or StepLog()
    if on_init is not None:
        on_init(student)
    state = AdamState(lr=cfg.lr)
    step = 0
    evaluated_at = -1
    best: ModelParams | None = None
    best_score, best_step = float("-inf"), 0
    evaluations: list[tuple[int, float]] = []
    stale = 0

    def check_point() -> bool:
        nonlocal best, best_score, best_step, stale, evaluated_at
        score = evaluate(student)
        evaluated_at = step
        evaluations.append((step, score))
        log.write({"event": "eval", "step": step, "dev_bleu": score})
        if score > best_score or best is None:
            best, best_score, best_step, stale = clone_params(student), score, step, 0
        else:
            stale += 1
        return stale >= cfg.patience

    stop = False
    for epoch in range(cfg.max_epochs):
        batches = make_batches(corpus, cfg.token_budget, derive_seed(cfg.rng_seed, "epoch", epoch))
        for batch in batches:
            grads, breakdown = backward(student, batch, spec)
            adam_step(student, grads, state)
            step += 1
            log.step(step, breakdown)
            if step % cfg.dev_eval_every == 0 and check_point():
                stop = True
                break
        if stop:
            break
    if step == 0:
        raise NoTrainingStepsError("no optimizer step was taken")
    if evaluated_at != step:
        check_point()
    log.write({"event": "selected", "selected_checkpoint_step": best_step, "dev_bleu": best_score})
    return TrainResult(best, best_score, best_step, evaluations, step, log)


def dev_evaluator(dev: Corpus, decode: DecodeConfig, vocab: Vocabulary | None):
    if len(dev) == 0:
        raise ValueError(f"dev corpus {dev.domain_tag!r} is empty")
    return lambda params: eval_model(dev, params, decode, vocab)


def transfer_model(source: ModelParams, corpus: Corpus, teacher: ModelParams, dev: Corpus,
                   cfg: TransferConfig, vocab: Vocabulary | None = None, log: StepLog | None = None,
                   on_init: Callable[[ModelParams], None] | None = None) -> TrainResult:
    """Initialize a student from ``source`` and distill toward ``teacher`` on ``corpus``.

    ``teacher`` is never modified.  The returned model is the student
    checkpoint with the highest dev BLEU seen during this call.
    """
    if source.config != teacher.config:
        raise ShapeMismatchError(f"source config {source.config} differs from teacher config {teacher.config}")
    student = clone_params(source)
    return run_training(student, corpus, LossSpec("kd", teacher, cfg.lam), cfg,
                        dev_evaluator(dev, cfg.decode, vocab), log, on_init)
