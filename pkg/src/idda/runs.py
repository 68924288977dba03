"""Run-directory orchestration behind the CLI: initial models, IDDA runs, baselines, decodes."""
from __future__ import annotations

import logging
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import yaml

from .adaptation import (
    BASELINES, DomainData, IddaResult, RegistryInvariantError, TraceEvent, initial_config, mix_domains,
    run_baseline, run_idda, train_initial,
)
from .decoding import translate
from .distance import describe, transfer_order
from .experiments import Task, build_task
from .model import ModelParams, load_params, save_params
from .reporting import RunDirError, read_json, write_json, write_jsonl, write_lines
from .seeding import derive_seed
from .tokenization import BpeTokenizer, decode
from .training import NumericError, StepLog
from .transfer import TrainResult

logger = logging.getLogger(__name__)

ORDERS = ("distance", "reverse", "manifest")


def open_run(manifest: dict, run_dir: str | Path, seed: int | None = None) -> Task:
    """Build the task for ``run_dir``, reusing its tokenizer if one was saved there.

    A run directory is tied to one seed; reopening it with another raises.
    """
    run_dir = Path(run_dir)
    run_json = run_dir / "run.json"
    if seed is None:
        seed = read_json(run_json)["seed"] if run_json.exists() else manifest.get("seed", 0)
    tok_dir = run_dir / "tokenizer"
    tokenizer = BpeTokenizer.load(tok_dir) if (tok_dir / "vocab.txt").exists() else None
    task = build_task(manifest, tokenizer).with_seed(seed)
    if run_json.exists():
        if read_json(run_json)["seed"] != seed:
            raise RunDirError(f"{run_dir} was created with seed {read_json(run_json)['seed']}, not {seed}")
        return task
    run_dir.mkdir(parents=True, exist_ok=True)
    task.tokenizer.save(tok_dir)
    echo = {k: v for k, v in manifest.items() if not k.startswith("_")}
    (run_dir / "manifest.yaml").write_text(yaml.safe_dump(echo, sort_keys=True), encoding="utf-8")
    for tag, raw in task.raw.items():
        write_lines(run_dir / "references" / f"{tag}.dev.ref", [" ".join(t) for t in raw.dev.targets])
        if raw.test is not None:
            write_lines(run_dir / "references" / f"{tag}.test.ref", [" ".join(t) for t in raw.test.targets])
    cfg = task.idda_config
    write_json(run_json, {
        "seed": seed,
        "corpus_seed": manifest.get("corpus_seed", 11),
        "rule_seed": manifest.get("rule_seed", 7),
        "in_domain": task.in_tag,
        "out_domains": task.out_tags,
        "vocab_size": task.tokenizer.vocab_size,
        "sub_seeds": {
            **{f"initial/{t}": derive_seed(seed, "initial", t) for t in task.raw},
            **{f"corpus/{t}/{s}": derive_seed(manifest.get("corpus_seed", 11), t, s)
               for t in task.raw for s in ("train", "dev", "test")},
            "classifier": derive_seed(seed, "adist"),
        },
        "config": {
            "model": vars(task.model_config),
            "K": cfg.K,
            "lambda": cfg.transfer.lam,
            "initial": {k: v for k, v in vars(cfg.initial).items() if k != "decode"},
            "transfer": {k: v for k, v in vars(cfg.transfer).items() if k != "decode"},
            "decode": vars(cfg.initial.decode),
        },
    })
    return task


class LogSink:
    """Streams each training's step log to logs/{name}.jsonl as it is produced."""

    def __init__(self, run_dir: Path):
        self.dir = Path(run_dir) / "logs"
        self.path: Path | None = None
        self._fh = None

    def open(self, name: str, **context) -> StepLog:
        self.close()
        self.dir.mkdir(parents=True, exist_ok=True)
        self.path = self.dir / f"{name}.jsonl"
        self._fh = self.path.open("w", encoding="utf-8", buffering=1)
        return StepLog(self._fh, **context)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def pointer(self) -> str:
        if self.path is None:
            return "no log written yet"
        self.close()
        n = len(self.path.read_text(encoding="utf-8").splitlines())
        return f"{self.path}:{n}"


def _pointing(sink: LogSink, exc: Exception) -> Exception:
    """Same error type, with the log file and line of the last record written."""
    return type(exc)(f"{exc} [last log record: {sink.pointer()}]")


def ensure_initial(task: Task, run_dir: str | Path, domains: Sequence[DomainData] | None = None
                   ) -> dict[str, TrainResult]:
    """θ^(0) per domain: loaded from checkpoints/{domain}/0.ckpt when present, else trained and saved."""
    run_dir = Path(run_dir)
    domains = list(domains) if domains is not None else [task.in_domain, *task.out_domains]
    index_path = run_dir / "initial.json"
    index = read_json(index_path) if index_path.exists() else {}
    out: dict[str, TrainResult] = {}
    for d in domains:
        ckpt = run_dir / "checkpoints" / d.tag / "0.ckpt"
        if d.tag in index and ckpt.exists():
            e = index[d.tag]
            out[d.tag] = TrainResult(load_params(ckpt), e["dev_bleu"], e["best_step"], [], e["steps"], StepLog())
            continue
        t0 = time.perf_counter()
        sink = LogSink(run_dir)
        try:
            r = train_initial(d, task.model_config, initial_config(task.idda_config, d.tag), task.vocab,
                              sink.open(f"initial-{d.tag}", domain=d.tag, iteration=0))
        except NumericError as exc:
            raise _pointing(sink, exc) from exc
        finally:
            sink.close()
        save_params(r.params, ckpt)
        index[d.tag] = {"dev_bleu": r.best_score, "best_step": r.best_step, "steps": r.steps,
                        "wall_time": time.perf_counter() - t0}
        write_json(index_path, index)
        out[d.tag] = r
    return out


def decode_into(task: Task, run_dir: Path, model_id: str, params_by_domain: dict[str, ModelParams],
                meta: dict) -> None:
    """Decode dev and test of every domain with its serving model and store the text."""
    mdir = run_dir / "models" / model_id
    cfg = task.idda_config.initial.decode
    for tag, params in params_by_domain.items():
        save_params(params, mdir / f"{tag}.ckpt")
        splits = {"dev": task.encoded[tag].dev, "test": task.encoded_test.get(tag)}
        for split, corpus in splits.items():
            if corpus is None:
                continue
            hyps = translate(params, corpus.sources, cfg)
            write_lines(mdir / f"{tag}.{split}.hyp", [" ".join(decode(h.tokens, task.vocab)) for h in hyps])
    write_json(mdir / "meta.json", {"model_id": model_id, "serving": {t: f"{t}.ckpt" for t in params_by_domain},
                                    **meta})


def resolve_order(task: Task, order: str, seed: int) -> tuple[list[DomainData], dict[str, dict]]:
    if order not in ORDERS:
        raise ValueError(f"order must be one of {ORDERS}")
    outs = task.out_domains
    if order == "manifest" or len(outs) == 1:
        return outs, {}
    descs = [describe(task.in_domain.train, o.train, rng_seed=derive_seed(seed, "adist")) for o in outs]
    ranked = [d.domain_tag for d in transfer_order(None, descs)]
    if order == "reverse":
        ranked = ranked[::-1]
    info = {d.domain_tag: {"a_distance": d.a_distance, "epsilon": d.epsilon} for d in descs}
    return [task.encoded[t] for t in ranked], info


def run_idda_into(task: Task, run_dir: str | Path, model_id: str = "idda", variant: str = "full",
                  lam: float | None = None, K: int | None = None, order: str = "distance",
                  mix: bool = False, main: bool | None = None) -> IddaResult:
    """Run IDDA (or an ablation) and store its registry, logs and decodes under ``run_dir``.

    The main run (``model_id == "idda"`` unless ``main`` says otherwise) also
    writes the top-level checkpoints/{domain}/{k}.ckpt and registry.log.
    """
    run_dir = Path(run_dir)
    cfg = task.idda_config
    if lam is not None:
        cfg = cfg.with_lambda(lam)
    if K is not None:
        cfg = replace(cfg, K=K)
    main = (model_id == "idda") if main is None else main
    t0 = time.perf_counter()
    initial = ensure_initial(task, run_dir)
    if mix:
        mixed = mix_domains(task.out_domains)
        outs, distances = [mixed], {}
        initial.update(ensure_initial(task, run_dir, [mixed]))
    else:
        outs, distances = resolve_order(task, order, cfg.rng_seed)

    sink = LogSink(run_dir)

    def make_log(k: int, direction: str, domain: str) -> StepLog:
        name = f"{model_id}-k{k}-{direction.replace('->', '2')}-{domain}"
        return sink.open(name, model_id=model_id, iteration_k=k, direction=direction, domain=domain)

    def on_transfer(event: TraceEvent, result: TrainResult) -> None:
        if main and event.accepted:
            save_params(result.params, run_dir / "checkpoints" / event.domain / f"{event.iteration}.ckpt")

    try:
        result = run_idda(task.in_domain, outs, task.model_config, cfg, task.vocab, variant=variant,
                          initial=initial, on_transfer=on_transfer, make_log=make_log)
    except (NumericError, RegistryInvariantError) as exc:
        raise _pointing(sink, exc) from exc
    finally:
        sink.close()
    records = result.registry.to_records()
    write_jsonl(run_dir / "models" / model_id / "registry.log", records)
    if main:
        write_jsonl(run_dir / "registry.log", records)
    serving = {task.in_tag: result.theta_in}
    for d in task.out_domains:
        # under the mixed variant every out-domain is served by the mixed model
        serving[d.tag] = result.theta_out[outs[0].tag] if mix else result.theta_out[d.tag]
    decode_into(task, run_dir, model_id, serving, {
        "kind": "idda", "variant": variant, "lambda": cfg.transfer.lam, "K": cfg.K, "mix": mix,
        "order": [o.tag for o in outs], "a_distance": distances,
        "dev_bleu": {t: result.registry.best_score[t] for t in result.registry.best_score},
        "wall_time": round(time.perf_counter() - t0, 3),
    })
    return result


def run_baseline_into(task: Task, run_dir: str | Path, kind: str, out_tag: str | None = None):
    """Train one contrast system and store its decodes as model ``kind``."""
    if kind not in BASELINES:
        raise ValueError(f"baseline must be one of {BASELINES}")
    run_dir = Path(run_dir)
    t0 = time.perf_counter()
    out_tag = out_tag or task.out_tags[0]
    if out_tag not in task.out_tags:
        raise ValueError(f"unknown out-domain {out_tag!r}; choose from {task.out_tags}")
    out = task.encoded[out_tag]
    initial = ensure_initial(task, run_dir)
    r = run_baseline(kind, task.in_domain, out, task.model_config, task.idda_config, task.vocab, initial)
    serving = {task.in_tag: r.params}
    for d in task.out_domains:
        # single/ft/kd leave the out-domain side at its initial model; mix and mft train on both
        serving[d.tag] = r.params if kind in ("mix", "mft") else initial[d.tag].params
    decode_into(task, run_dir, kind, serving, {
        "kind": kind, "out_domain": out_tag, "dev_bleu": {task.in_tag: r.dev_bleu},
        "lambda": r.transfer_config.lam if r.transfer_config else None,
        "wall_time": round(time.perf_counter() - t0, 3),
    })
    return r


def load_serving(run_dir: str | Path, model_id: str, domain: str) -> ModelParams:
    run_dir = Path(run_dir)
    meta = read_json(run_dir / "models" / model_id / "meta.json")
    if domain not in meta["serving"]:
        raise RunDirError(f"model {model_id!r} has no checkpoint for domain {domain!r}")
    return load_params(run_dir / "models" / model_id / meta["serving"][domain])
