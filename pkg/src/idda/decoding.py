"""Beam search, greedy decoding and corpus BLEU."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .model import ModelParams, decoder_logits, encode_source
from .tokenization import BOS_ID, EOS_ID, PAD_ID, Vocabulary, decode


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    log_prob: float

    @property
    def score(self) -> float:
        """Length-normalized log-probability."""
        return self.log_prob / max(len(self.tokens), 1)

    def strip(self) -> tuple[int, ...]:
        return self.tokens[:-1] if self.tokens and self.tokens[-1] == EOS_ID else self.tokens


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 4
    # output length cap: max_len_a * source_length + max_len_b
    max_len_a: float = 1.5
    max_len_b: int = 5

    def max_len(self, source_length: int, max_positions: int) -> int:
        return max(1, min(int(self.max_len_a * source_length + self.max_len_b), max_positions))


def _encode_many(params: ModelParams, sources: Sequence[Sequence[int]]):
    width = max(len(s) for s in sources)
    src = torch.full((len(sources), width), PAD_ID, dtype=torch.long)
    for i, s in enumerate(sources):
        src[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
    src_len = torch.as_tensor([len(s) for s in sources], dtype=torch.long)
    return encode_source(params, src, src_len), src_len


def _next_log_probs(params, memory, src_len, rows: list[int], prefixes: list[tuple[int, ...]]) -> np.ndarray:
    """Next-token log-probs for each prefix; ``rows`` picks its source sentence."""
    idx = torch.as_tensor(rows, dtype=torch.long)
    prefix = torch.as_tensor([(BOS_ID,) + p for p in prefixes], dtype=torch.long)
    logits = decoder_logits(params, memory[idx], src_len[idx], prefix, last_only=True)[:, -1]
    lp = torch.log_softmax(logits, dim=-1).numpy().copy()
    # begin and pad markers are never generated
    lp[:, PAD_ID] = -np.inf
    lp[:, BOS_ID] = -np.inf
    return lp


def greedy_decode(params: ModelParams, source: Sequence[int], max_len: int) -> Hypothesis:
    with torch.no_grad():
        memory, src_len = _encode_many(params, [source])
        tokens: tuple[int, ...] = ()
        total = 0.0
        while len(tokens) < max_len:
            lp = _next_log_probs(params, memory, src_len, [0], [tokens])[0]
            tok = int(np.argmax(lp))
            total += float(lp[tok])
            tokens += (tok,)
            if tok == EOS_ID:
                break
    return Hypothesis(tokens, total)


class _Beam:
    """Search state for one source sentence."""

    def __init__(self, beam_size: int, max_len: int):
        self.beam_size = beam_size
        self.max_len = max_len
        self.live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
        self.finished: list[Hypothesis] = []
        self.done = False

    def advance(self, t: int, lp: np.ndarray) -> None:
        prefixes = [seq for seq, _ in self.live]
        n, V = lp.shape
        flat = (np.array([s for _, s in self.live])[:, None] + lp).ravel()
        lex_rank = np.empty(n, dtype=np.int64)
        lex_rank[sorted(range(n), key=lambda i: prefixes[i])] = np.arange(n)
        parent = np.repeat(np.arange(n), V)
        token = np.tile(np.arange(V), n)
        idx = np.nonzero(np.isfinite(flat))[0]
        if len(idx) > self.beam_size:
            # every candidate tied with the k-th best survives to the exact sort
            kth = np.partition(flat[idx], len(idx) - self.beam_size)[len(idx) - self.beam_size]
            idx = idx[flat[idx] >= kth]
        order = idx[np.lexsort((token[idx], lex_rank[parent[idx]], -flat[idx]))][: self.beam_size]
        self.live = []
        for i in order:
            seq = prefixes[parent[i]] + (int(token[i]),)
            if token[i] == EOS_ID or t >= self.max_len:
                self.finished.append(Hypothesis(seq, float(flat[i])))
            else:
                self.live.append((seq, float(flat[i])))
        if not self.live:
            self.done = True
        elif self.finished:
            # remaining log-probs are <= 0, so a live prefix can reach at most score / max_len
            best = max(h.score for h in self.finished)
            self.done = best > max(s for _, s in self.live) / self.max_len

    def best(self) -> Hypothesis:
        return min(self.finished, key=lambda h: (-h.score, h.tokens))


def beam_search_batch(params: ModelParams, sources: Sequence[Sequence[int]], beam_size: int,
                      max_lens: Sequence[int]) -> list[Hypothesis]:
    """Run independent beam searches for several sources, sharing decoder calls."""
    if beam_size < 1:
        raise ValueError(f"beam_size must be >= 1, got {beam_size}")
    if not sources:
        return []
    with torch.no_grad():
        memory, src_len = _encode_many(params, sources)
        beams = [_Beam(beam_size, max(1, m)) for m in max_lens]
        t = 0
        while True:
            active = [i for i, b in enumerate(beams) if not b.done]
            if not active:
                break
            t += 1
            rows, prefixes, spans = [], [], []
            for i in active:
                start = len(prefixes)
                for seq, _ in beams[i].live:
                    rows.append(i)
                    prefixes.append(seq)
                spans.append((i, start, len(prefixes)))
            lp = _next_log_probs(params, memory, src_len, rows, prefixes)
            for i, a, b in spans:
                beams[i].advance(t, lp[a:b])
    return [b.best() for b in beams]


def beam_search(params: ModelParams, source: Sequence[int], beam_size: int = 4, max_len: int = 50) -> Hypothesis:
    """Best completed hypothesis under length-normalized log-probability.

    Each step keeps the ``beam_size`` best extensions by cumulative
    log-probability (ties broken lexicographically on the tokens); selected
    extensions ending in the end marker are finished, and hypotheses that
    reach ``max_len`` tokens are finished as they stand.
    """
    return beam_search_batch(params, [source], beam_size, [max_len])[0]


# --------------------------------------------------------------------------
# BLEU


@dataclass(frozen=True)
class BleuScore:
    score: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    hyp_len: int
    ref_len: int

    def as_dict(self) -> dict:
        return {"bleu": self.score, "precisions": list(self.precisions),
                "brevity_penalty": self.brevity_penalty, "hyp_len": self.hyp_len, "ref_len": self.ref_len}


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses: Sequence[Sequence], references: Sequence[Sequence], max_n: int = 4) -> BleuScore:
    """Corpus BLEU with one reference per sentence and no smoothing."""
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise ValueError("cannot score an empty hypothesis list")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    precisions = tuple(m / t if t else 0.0 for m, t in zip(matches, totals))
    if hyp_len >= ref_len:
        bp = 1.0
    else:
        # empty output: the penalty is taken at length 1, the score is 0 anyway
        bp = math.exp(1.0 - ref_len / max(hyp_len, 1))
    if min(precisions) == 0.0:
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / max_n)
    return BleuScore(min(score, 100.0), precisions, bp, hyp_len, ref_len)


def _words(ids: Sequence[int], vocab: Vocabulary | None) -> list:
    if vocab is None:
        return [i for i in ids if i not in (PAD_ID, BOS_ID, EOS_ID)]
    return decode(ids, vocab)


def translate(params: ModelParams, sources: Sequence[Sequence[int]], cfg: DecodeConfig,
              chunk: int = 128) -> list[Hypothesis]:
    max_lens = [cfg.max_len(len(s), params.config.max_positions) for s in sources]
    out: list[Hypothesis] = []
    for lo in range(0, len(sources), chunk):
        out.extend(beam_search_batch(params, sources[lo:lo + chunk], cfg.beam_size, max_lens[lo:lo + chunk]))
    return out


def eval_model(dev, params: ModelParams, decode_cfg: DecodeConfig = DecodeConfig(),
               vocab: Vocabulary | None = None) -> float:
    """Decode every dev source and return corpus BLEU against the dev targets.

    With ``vocab`` the comparison is on detokenized words, otherwise on
    subword indices.
    """
    if len(dev) == 0:
        raise ValueError("dev corpus is empty")
    hyps = translate(params, dev.sources, decode_cfg)
    return bleu([_words(h.strip(), vocab) for h in hyps], [_words(t, vocab) for t in dev.targets]).score
