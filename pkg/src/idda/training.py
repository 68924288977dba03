"""Likelihood and distillation losses, their gradients, and Adam."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import IO

import torch

from .model import DTYPE, ModelParams, log_probs

Gradients = dict  # name -> tensor, mirroring ModelParams.tensors


class DegenerateBatchError(ValueError):
    pass


class ShapeMismatchError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    nll_term: float
    kl_term: float
    token_count: int


@dataclass(frozen=True)
class LossSpec:
    """Which loss to differentiate: plain likelihood, or distillation against ``teacher``."""

    kind: str = "nll"
    teacher: ModelParams | None = None
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in ("nll", "kd"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "kd":
            if self.teacher is None:
                raise ValueError("kd loss needs a teacher")
            if not 0.0 <= self.lam <= 1.0:
                raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")


def nll() -> LossSpec:
    return LossSpec("nll")


def kd(teacher: ModelParams, lam: float) -> LossSpec:
    return LossSpec("kd", teacher, lam)


def _check_same_config(student: ModelParams, teacher: ModelParams) -> None:
    if student.config != teacher.config:
        raise ShapeMismatchError(f"student config {student.config} differs from teacher config {teacher.config}")


def _loss_tensors(params: ModelParams, batch, spec: LossSpec):
    mask = batch.output_mask
    ntok = int(mask.sum())
    if ntok == 0:
        raise DegenerateBatchError("batch has no target tokens to score")
    maskf = mask.to(DTYPE)
    student = log_probs(params, batch)
    gold = student.gather(-1, batch.decoder_output.unsqueeze(-1)).squeeze(-1)
    nll_term = -(gold * maskf).sum() / ntok
    if spec.kind == "nll":
        return nll_term, nll_term, torch.zeros((), dtype=DTYPE), ntok
    _check_same_config(params, spec.teacher)
    with torch.no_grad():
        teacher = log_probs(spec.teacher, batch)
    # KL(student || teacher), student first as in the distillation objective
    kl_pos = (student.exp() * (student - teacher)).sum(-1)
    kl_term = (kl_pos * maskf).sum() / ntok
    total = (1.0 - spec.lam) * nll_term + spec.lam * kl_term
    return total, nll_term, kl_term, ntok


def _breakdown(total, nll_term, kl_term, ntok) -> LossBreakdown:
    return LossBreakdown(float(total), float(nll_term), float(kl_term), ntok)


def loss(params: ModelParams, batch, spec: LossSpec) -> LossBreakdown:
    with torch.no_grad():
        return _breakdown(*_loss_tensors(params, batch, spec))


def nll_loss(params: ModelParams, batch) -> LossBreakdown:
    """Mean negative log-likelihood over non-pad target tokens."""
    return loss(params, batch, LossSpec("nll"))


def kd_loss(params: ModelParams, teacher: ModelParams, batch, lam: float) -> LossBreakdown:
    """``(1 - lam) * NLL + lam * KL(student || teacher)``, both token means."""
    _check_same_config(params, teacher)
    return loss(params, batch, LossSpec("kd", teacher, lam))


def backward(params: ModelParams, batch, spec: LossSpec) -> tuple[Gradients, LossBreakdown]:
    """Exact gradients of the loss in ``spec`` for every parameter tensor.

    The teacher only enters through detached log-probabilities, so nothing
    flows back into it.
    """
    names = list(params.tensors)
    leaves = {n: params.tensors[n].detach().requires_grad_(True) for n in names}
    live = ModelParams(params.config, leaves)
    total, nll_term, kl_term, ntok = _loss_tensors(live, batch, spec)
    if not torch.isfinite(total):
        raise NumericError(f"loss is not finite (nll={float(nll_term)}, kl={float(kl_term)})")
    grads = torch.autograd.grad(total, [leaves[n] for n in names], allow_unused=True)
    out: Gradients = {}
    for n, g in zip(names, grads):
        g = torch.zeros_like(params.tensors[n]) if g is None else g.detach()
        if not torch.isfinite(g).all():
            raise NumericError(f"non-finite gradient in tensor {n!r}")
        out[n] = g
    return out, _breakdown(total.detach(), nll_term.detach(), kl_term.detach(), ntok)


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ModelParams, grads: Gradients, state: AdamState) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update, applied in place to ``params`` and ``state``."""
    for n, g in grads.items():
        if n not in params.tensors or params.tensors[n].shape != g.shape:
            have = tuple(params.tensors[n].shape) if n in params.tensors else None
            raise ShapeMismatchError(f"gradient {n!r} has shape {tuple(g.shape)}, parameter has {have}")
    if set(grads) != set(params.tensors):
        raise ShapeMismatchError(f"gradients missing for {sorted(set(params.tensors) - set(grads))}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for n, g in grads.items():
        if n not in state.m:
            state.m[n] = torch.zeros_like(g)
            state.v[n] = torch.zeros_like(g)
        m, v = state.m[n], state.v[n]
        m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
        v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
        denom = (v / bc2).sqrt_().add_(state.eps)
        params.tensors[n].addcdiv_(m, denom, value=-state.lr / bc1)
    return params, state


class StepLog:
    """Line-delimited JSON training log, one record per optimizer step."""

    def __init__(self, stream: IO[str] | None = None, **context):
        self.stream = stream
        self.context = context
        self.records: list[dict] = []
        self._t0 = time.perf_counter()

    def write(self, record: dict) -> None:
        rec = {**self.context, **record}
        self.records.append(rec)
        if self.stream is not None:
            self.stream.write(json.dumps(rec, sort_keys=True) + "\n")

    def step(self, step: int, breakdown: LossBreakdown) -> None:
        self.write({
            "event": "step", "step": step, "loss_total": breakdown.total, "nll_term": breakdown.nll_term,
            "kl_term": breakdown.kl_term, "tokens": breakdown.token_count,
            "wall_time": round(time.perf_counter() - self._t0, 6),
        })

    def losses(self) -> list[float]:
        return [r["loss_total"] for r in self.records if r.get("event") == "step"]


def is_finite_params(params: ModelParams) -> bool:
    return all(bool(torch.isfinite(t).all()) for t in params.tensors.values())

