"""Manifest-driven experiment setup shared by the CLI and the acceptance suite.

A manifest is a YAML mapping.  Keys (all optional except ``domains``)::

    seed: 0                 # run seed; init, batching and classifier sub-seeds derive from it
    corpus_seed: 11         # fixes synthetic corpora independently of the run seed
    rule_seed: 7            # shared transduction rule of synthetic domains
    model: {embed_dim, hidden_dim, num_heads, num_layers, max_positions}
    tokenizer: {num_merges, vocab_cap}
    corpus: {max_len, token_budget}
    initial: {max_epochs, patience, dev_eval_every, lr}
    transfer: {max_epochs, patience, dev_eval_every, lr, lambda}
    idda: {K, early_exit}
    decode: {beam_size, max_len_a, max_len_b}
    baselines: [single, mix, ft, mft, kd]
    domains:                # first entry with role "in" is the in-domain corpus
      - {tag, role: in|out, synth: {<SynthSpec keys>}, train_pairs, dev_pairs, test_pairs}
      - {tag, role: out, train: [src, tgt], dev: [src, tgt], test: [src, tgt]}

Relative file paths resolve against the manifest's directory.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .adaptation import DomainData, IddaConfig
from .corpus import Corpus, SynthSpec, filter_by_length, load_parallel, synth_domain_corpus
from .decoding import DecodeConfig
from .model import ModelConfig
from .seeding import derive_seed
from .tokenization import BpeTokenizer
from .transfer import TrainConfig, TransferConfig

BUNDLED = Path(__file__).parent / "manifests"


class ManifestError(ValueError):
    pass


@dataclass
class RawDomain:
    tag: str
    role: str
    train: Corpus
    dev: Corpus
    test: Corpus | None


@dataclass
class Task:
    manifest: dict
    tokenizer: BpeTokenizer
    model_config: ModelConfig
    idda_config: IddaConfig
    raw: dict[str, RawDomain]
    encoded: dict[str, DomainData]
    encoded_test: dict[str, Corpus]
    in_tag: str
    out_tags: list[str] = field(default_factory=list)

    @property
    def vocab(self):
        return self.tokenizer.vocab_

    @property
    def in_domain(self) -> DomainData:
        return self.encoded[self.in_tag]

    @property
    def out_domains(self) -> list[DomainData]:
        return [self.encoded[t] for t in self.out_tags]

    def with_seed(self, seed: int) -> "Task":
        t = copy.copy(self)
        t.idda_config = replace(self.idda_config, rng_seed=seed)
        return t


def load_manifest(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists() and (BUNDLED / path).exists():
        path = BUNDLED / path
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(data, dict) or "domains" not in data:
        raise ManifestError(f"{path}: manifest must be a mapping with a 'domains' list")
    data.setdefault("_base_dir", str(path.parent.resolve()))
    return data


def _synth(entry: dict, manifest: dict, role: str, count: int) -> Corpus:
    params = dict(entry.get("synth", {}))
    params.setdefault("rule_seed", manifest.get("rule_seed", 7))
    params.update(domain_tag=entry["tag"], num_pairs=count, role=role)
    seed = derive_seed(manifest.get("corpus_seed", 11), entry["tag"], role)
    return synth_domain_corpus(SynthSpec.from_mapping(params), seed)


def load_domains(manifest: dict) -> dict[str, RawDomain]:
    base = Path(manifest.get("_base_dir", "."))
    max_len = manifest.get("corpus", {}).get("max_len", 50)
    out: dict[str, RawDomain] = {}
    for entry in manifest["domains"]:
        tag, role = entry.get("tag"), entry.get("role", "out")
        if not tag or role not in ("in", "out"):
            raise ManifestError(f"domain entry needs a tag and role in/out: {entry}")
        splits = {}
        for split in ("train", "dev", "test"):
            if "synth" in entry:
                n = entry.get(f"{split}_pairs", 0)
                splits[split] = _synth(entry, manifest, split, n) if n else None
            elif split in entry:
                src, tgt = entry[split]
                splits[split] = load_parallel(base / src, base / tgt, tag, split)
            else:
                splits[split] = None
        if splits["train"] is None or splits["dev"] is None:
            raise ManifestError(f"domain {tag!r} needs train and dev data")
        splits["train"] = filter_by_length(splits["train"], max_len)
        out[tag] = RawDomain(tag, role, splits["train"], splits["dev"], splits["test"])
    return out


def configs(manifest: dict, vocab_size: int) -> tuple[ModelConfig, IddaConfig]:
    model = ModelConfig(vocab_size=vocab_size, **manifest.get("model", {}))
    decode = DecodeConfig(**manifest.get("decode", {}))
    budget = manifest.get("corpus", {}).get("token_budget", 1000)
    initial = TrainConfig(token_budget=budget, decode=decode, **manifest.get("initial", {}))
    tr = dict(manifest.get("transfer", {}))
    if "lambda" in tr:
        tr["lam"] = tr.pop("lambda")
    transfer = TransferConfig(token_budget=budget, decode=decode, **tr)
    idda = manifest.get("idda", {})
    cfg = IddaConfig(K=idda.get("K", 3), initial=initial, transfer=transfer,
                     rng_seed=manifest.get("seed", 0), early_exit=idda.get("early_exit", False))
    return model, cfg


def build_task(manifest: dict, tokenizer: BpeTokenizer | None = None) -> Task:
    raw = load_domains(manifest)
    ins = [d.tag for d in raw.values() if d.role == "in"]
    if len(ins) != 1:
        raise ManifestError(f"exactly one in-domain corpus required, found {ins}")
    outs = [d.tag for d in raw.values() if d.role == "out"]
    if tokenizer is None:
        # joint vocabulary over every training corpus, both sides
        sentences = [s for d in raw.values() for s in d.train.sentences()]
        tokenizer = BpeTokenizer(**manifest.get("tokenizer", {})).fit(sentences)
    encoded = {t: DomainData(d.train.encode(tokenizer), d.dev.encode(tokenizer)) for t, d in raw.items()}
    encoded_test = {t: d.test.encode(tokenizer) for t, d in raw.items() if d.test is not None}
    model, cfg = configs(manifest, tokenizer.vocab_size)
    return Task(manifest, tokenizer, model, cfg, raw, encoded, encoded_test, ins[0], outs)
