"""A small post-LN Transformer encoder-decoder written as pure functions over a
dict of named float64 tensors.

Keeping parameters as a plain mapping (rather than an ``nn.Module``) makes
cloning, checkpointing, distillation against a frozen copy and the
hand-rolled optimizer straightforward.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

DTYPE = torch.float64
FORMAT_VERSION = 1
MAGIC = b"IDDACKPT"


class ModelConfigError(ValueError):
    pass


class InputRangeError(IndexError):
    pass


class CheckpointError(OSError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int = 64
    hidden_dim: int = 128
    num_heads: int = 2
    num_layers: int = 1
    max_positions: int = 64

    def validate(self) -> None:
        for name, value in asdict(self).items():
            if not isinstance(value, int) or value < 1:
                raise ModelConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.embed_dim % self.num_heads:
            raise ModelConfigError(
                f"embed_dim={self.embed_dim} is not divisible by num_heads={self.num_heads}")


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Names and shapes of every tensor, in canonical order."""
    E, H, V, P = config.embed_dim, config.hidden_dim, config.vocab_size, config.max_positions
    shapes: dict[str, tuple[int, ...]] = {
        "src_embed": (V, E), "tgt_embed": (V, E), "src_pos": (P, E), "tgt_pos": (P, E),
    }

    def attn(prefix):
        for m in ("q", "k", "v", "o"):
            shapes[f"{prefix}.w{m}"] = (E, E)
            shapes[f"{prefix}.b{m}"] = (E,)

    def norm(prefix):
        shapes[f"{prefix}.gain"] = (E,)
        shapes[f"{prefix}.bias"] = (E,)

    def ffn(prefix):
        shapes[f"{prefix}.w1"] = (E, H)
        shapes[f"{prefix}.b1"] = (H,)
        shapes[f"{prefix}.w2"] = (H, E)
        shapes[f"{prefix}.b2"] = (E,)

    for layer in range(config.num_layers):
        p = f"enc{layer}"
        attn(f"{p}.self"); norm(f"{p}.ln1"); ffn(f"{p}.ffn"); norm(f"{p}.ln2")
    for layer in range(config.num_layers):
        p = f"dec{layer}"
        attn(f"{p}.self"); norm(f"{p}.ln1")
        attn(f"{p}.cross"); norm(f"{p}.ln2")
        ffn(f"{p}.ffn"); norm(f"{p}.ln3")
    shapes["out.w"] = (E, V)
    shapes["out.b"] = (V,)
    return shapes


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, torch.Tensor]

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.tensors[name]

    def num_parameters(self) -> int:
        return sum(t.numel() for t in self.tensors.values())

    def equals(self, other: "ModelParams") -> bool:
        return (self.config == other.config and self.tensors.keys() == other.tensors.keys()
                and all(torch.equal(self.tensors[k], other.tensors[k]) for k in self.tensors))


def init_model(config: ModelConfig, rng_seed: int = 0) -> ModelParams:
    config.validate()
    rng = np.random.default_rng(rng_seed)
    tensors = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gain":
            arr = np.ones(shape)
        elif len(shape) == 1:
            arr = np.zeros(shape)
        elif name.endswith(("embed", "pos")):
            arr = rng.normal(0.0, config.embed_dim ** -0.5, size=shape)
        else:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-bound, bound, size=shape)
        tensors[name] = torch.from_numpy(arr).to(DTYPE)
    return ModelParams(config, tensors)


def clone_params(params: ModelParams) -> ModelParams:
    return ModelParams(params.config, {k: v.detach().clone() for k, v in params.tensors.items()})


# --------------------------------------------------------------------------
# forward pass


def _layer_norm(x, p, prefix):
    return F.layer_norm(x, x.shape[-1:], p[f"{prefix}.gain"], p[f"{prefix}.bias"], eps=1e-5)


def _attention(query, keys, p, prefix, num_heads, mask):
    """Multi-head attention; ``mask`` is additive and broadcasts to (B, h, Tq, Tk)."""
    B, Tq, E = query.shape
    Tk = keys.shape[1]
    d = E // num_heads
    q = (query @ p[f"{prefix}.wq"] + p[f"{prefix}.bq"]).view(B, Tq, num_heads, d).transpose(1, 2)
    k = (keys @ p[f"{prefix}.wk"] + p[f"{prefix}.bk"]).view(B, Tk, num_heads, d).transpose(1, 2)
    v = (keys @ p[f"{prefix}.wv"] + p[f"{prefix}.bv"]).view(B, Tk, num_heads, d).transpose(1, 2)
    scores = q @ k.transpose(-1, -2) / math.sqrt(d) + mask
    ctx = torch.softmax(scores, dim=-1) @ v
    ctx = ctx.transpose(1, 2).reshape(B, Tq, E)
    return ctx @ p[f"{prefix}.wo"] + p[f"{prefix}.bo"]


def _ffn(x, p, prefix):
    return torch.relu(x @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"]) @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"]


def _key_mask(lengths: torch.Tensor, width: int) -> torch.Tensor:
    valid = torch.arange(width)[None, :] < lengths[:, None]
    mask = torch.zeros(valid.shape, dtype=DTYPE).masked_fill(~valid, float("-inf"))
    return mask[:, None, None, :]


def _check_indices(ids: torch.Tensor, config: ModelConfig, what: str) -> None:
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= config.vocab_size):
        raise InputRangeError(f"{what} contains an index outside [0, {config.vocab_size})")
    if ids.shape[1] > config.max_positions:
        raise InputRangeError(f"{what} length {ids.shape[1]} exceeds max_positions={config.max_positions}")


def encode_source(params: ModelParams, source: torch.Tensor, source_lengths: torch.Tensor) -> torch.Tensor:
    cfg = params.config
    _check_indices(source, cfg, "source")
    p = params.tensors
    S = source.shape[1]
    x = p["src_embed"][source] + p["src_pos"][:S]
    mask = _key_mask(source_lengths, S)
    for layer in range(cfg.num_layers):
        pre = f"enc{layer}"
        x = _layer_norm(x + _attention(x, x, p, f"{pre}.self", cfg.num_heads, mask), p, f"{pre}.ln1")
        x = _layer_norm(x + _ffn(x, p, f"{pre}.ffn"), p, f"{pre}.ln2")
    return x


def decoder_logits(params: ModelParams, memory: torch.Tensor, source_lengths: torch.Tensor,
                   prefix: torch.Tensor, last_only: bool = False) -> torch.Tensor:
    """Logits for every decoder position given the (teacher-forced) prefix.

    ``last_only`` projects just the final position, shape (batch, 1, vocab).
    """
    cfg = params.config
    _check_indices(prefix, cfg, "target")
    p = params.tensors
    T = prefix.shape[1]
    y = p["tgt_embed"][prefix] + p["tgt_pos"][:T]
    causal = torch.full((T, T), float("-inf"), dtype=DTYPE).triu(1)[None, None]
    mem_mask = _key_mask(source_lengths, memory.shape[1])
    for layer in range(cfg.num_layers):
        pre = f"dec{layer}"
        q, mask = y, causal
        if last_only and layer == cfg.num_layers - 1:
            # the final position attends to the whole prefix
            q, mask = y[:, -1:], causal[:, :, -1:]
        y = _layer_norm(q + _attention(q, y, p, f"{pre}.self", cfg.num_heads, mask), p, f"{pre}.ln1")
        y = _layer_norm(y + _attention(y, memory, p, f"{pre}.cross", cfg.num_heads, mem_mask), p, f"{pre}.ln2")
        y = _layer_norm(y + _ffn(y, p, f"{pre}.ffn"), p, f"{pre}.ln3")
    return y @ p["out.w"] + p["out.b"]


def log_probs(params: ModelParams, batch) -> torch.Tensor:
    """Teacher-forced log-distributions, shape (batch, target_len - 1, vocab)."""
    memory = encode_source(params, batch.source, batch.source_lengths)
    logits = decoder_logits(params, memory, batch.source_lengths, batch.decoder_input)
    return torch.log_softmax(logits, dim=-1)


def forward(params: ModelParams, batch) -> torch.Tensor:
    """Per-position probability vectors over the vocabulary."""
    with torch.no_grad():
        return log_probs(params, batch).exp()


# --------------------------------------------------------------------------
# checkpoints


def save_params(params: ModelParams, path: str | Path) -> None:
    """Write ``MAGIC | u32 header length | JSON header | float64 LE data``.

    The header holds ``format_version``, the model config and the ordered
    list of ``[name, shape]``; data follows in that order, row-major.
    """
    names = list(params.tensors)
    header = {
        "format_version": FORMAT_VERSION,
        "config": asdict(params.config),
        "tensors": [[n, list(params.tensors[n].shape)] for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(params.tensors[n].detach().contiguous().numpy().astype("<f8").tobytes())


def load_params(path: str | Path) -> ModelParams:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    try:
        (hlen,) = struct.unpack_from("<I", raw, len(MAGIC))
        start = len(MAGIC) + 4
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format_version {version}, expected {FORMAT_VERSION}")
    config = ModelConfig(**header["config"])
    offset = start + hlen
    tensors = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated data for tensor {name}")
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        tensors[name] = torch.from_numpy(arr.astype(np.float64))
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    expected = parameter_shapes(config)
    if {n: tuple(t.shape) for n, t in tensors.items()} != expected:
        raise CheckpointError(f"{path}: tensor shapes do not match the stored config")
    return ModelParams(config, tensors)
