"""Command-line entry point.

Every subcommand that writes into a run directory takes the directory's
lock first.  Errors print one line to stderr and exit with status 1; usage
errors exit with status 2.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .adaptation import BASELINES, VARIANTS, RegistryInvariantError
from .corpus import Corpus, save_parallel
from .decoding import DecodeConfig, bleu, translate
from .distance import describe, transfer_order
from .experiments import ManifestError, build_task, load_domains, load_manifest
from .model import load_params
from .reporting import RunLock, plot_metrics, read_lines, write_jsonl, write_lines, write_report
from .runs import ORDERS, ensure_initial, open_run, run_baseline_into, run_idda_into
from .seeding import derive_seed
from .tokenization import BpeTokenizer, decode
from .training import NumericError

log = logging.getLogger("idda")


def _manifest(args):
    return load_manifest(args.manifest)


def cmd_synth(args) -> int:
    domains = load_domains(_manifest(args))
    out = Path(args.out)
    for tag, d in domains.items():
        for split in ("train", "dev", "test"):
            corpus = getattr(d, split)
            if corpus is not None:
                save_parallel(corpus, out / f"{tag}.{split}.src", out / f"{tag}.{split}.tgt")
                print(f"{tag}.{split}: {len(corpus)} pairs")
    return 0


def cmd_tokenize(args) -> int:
    if args.manifest:
        task = build_task(_manifest(args))
        tok = task.tokenizer
    else:
        lines = [line for path in args.train for line in read_lines(Path(path))]
        tok = BpeTokenizer(num_merges=args.merges, vocab_cap=args.vocab_cap).fit(lines)
    tok.save(args.out)
    print(f"wrote {Path(args.out) / 'bpe.codes'} ({len(tok.bpe_.merges)} merges) and "
          f"{Path(args.out) / 'vocab.txt'} ({tok.vocab_size} tokens)")
    return 0


def _source_corpus(path: str, tag: str) -> Corpus:
    lines = read_lines(Path(path))
    return Corpus.from_pairs([(line.split(), line.split()) for line in lines], tag)


def cmd_adist(args) -> int:
    seed = args.seed
    if args.manifest:
        m = _manifest(args)
        seed = m.get("seed", 0) if seed is None else seed
        domains = load_domains(m)
        ins = [d for d in domains.values() if d.role == "in"]
        if len(ins) != 1:
            raise ManifestError("exactly one in-domain corpus required")
        in_corpus = ins[0].train
        outs = [d.train for d in domains.values() if d.role == "out"]
    else:
        if not args.corpus or len(args.corpus) < 2:
            raise ValueError("give --manifest, or --corpus IN OUT [OUT ...] with source-side text files")
        in_corpus = _source_corpus(args.corpus[0], Path(args.corpus[0]).stem)
        outs = [_source_corpus(p, Path(p).stem) for p in args.corpus[1:]]
    sub = derive_seed(seed or 0, "adist")
    descs = [describe(in_corpus, o, rng_seed=sub, cv_folds=args.cv_folds) for o in outs]
    result = {
        "in_domain": in_corpus.domain_tag,
        "distances": [{"domain": d.domain_tag, "epsilon": d.epsilon, "a_distance": d.a_distance} for d in descs],
        "order": [d.domain_tag for d in transfer_order(None, descs)],
    }
    print(json.dumps(result, indent=2))
    return 0


def cmd_train(args) -> int:
    with RunLock(args.run_dir):
        task = open_run(_manifest(args), args.run_dir, args.seed)
        tags = args.domain or [task.in_tag, *task.out_tags]
        unknown = [t for t in tags if t not in task.encoded]
        if unknown:
            raise ValueError(f"unknown domain(s) {unknown}; manifest has {sorted(task.encoded)}")
        res = ensure_initial(task, args.run_dir, [task.encoded[t] for t in tags])
        for t in tags:
            print(f"{t}: dev BLEU {res[t].best_score:.2f} -> {Path(args.run_dir) / 'checkpoints' / t / '0.ckpt'}")
    return 0


def cmd_idda(args) -> int:
    with RunLock(args.run_dir):
        task = open_run(_manifest(args), args.run_dir, args.seed)
        model_id = args.model_id or ("idda" if args.variant == "full" and not args.mix else
                                     f"idda_{'mix' if args.mix else args.variant}")
        r = run_idda_into(task, args.run_dir, model_id, args.variant, args.lam, args.k, args.order, args.mix)
        if args.compare_lambda0:
            run_idda_into(task, args.run_dir, model_id + "_lam0", args.variant, 0.0, args.k, args.order,
                          args.mix, main=False)
        print(f"{model_id}: in-domain dev BLEU {r.in_dev_bleu:.2f}")
        print(write_report(args.run_dir), end="")
    return 0


def cmd_baseline(args) -> int:
    with RunLock(args.run_dir):
        task = open_run(_manifest(args), args.run_dir, args.seed)
        for kind in args.kind:
            r = run_baseline_into(task, args.run_dir, kind, args.out_domain)
            print(f"{kind}: in-domain dev BLEU {r.dev_bleu:.2f}")
        print(write_report(args.run_dir), end="")
    return 0


def _load_model(args):
    return load_params(args.checkpoint), BpeTokenizer.load(args.tokenizer)


def cmd_translate(args) -> int:
    params, tok = _load_model(args)
    lines = read_lines(Path(args.input))
    cfg = DecodeConfig(beam_size=args.beam)
    hyps = translate(params, tok.transform(lines), cfg)
    out = [" ".join(decode(h.tokens, tok.vocab_)) for h in hyps]
    if args.output:
        write_lines(Path(args.output), out)
    else:
        sys.stdout.write("".join(line + "\n" for line in out))
    return 0


def cmd_evaluate(args) -> int:
    refs = [line.split() for line in read_lines(Path(args.ref))]
    if args.hyp:
        hyps = [line.split() for line in read_lines(Path(args.hyp))]
    else:
        if not (args.checkpoint and args.tokenizer and args.src):
            raise ValueError("give --hyp, or --checkpoint, --tokenizer and --src to decode first")
        params, tok = _load_model(args)
        decoded = translate(params, tok.transform(read_lines(Path(args.src))), DecodeConfig(beam_size=args.beam))
        hyps = [decode(h.tokens, tok.vocab_) for h in decoded]
    s = bleu(hyps, refs)
    record = {"dataset": args.dataset or Path(args.ref).name, "model_id": args.model_id or args.checkpoint or args.hyp,
              "bleu": s.score, "precisions": list(s.precisions), "brevity_penalty": s.brevity_penalty}
    print(json.dumps(record, indent=2))
    return 0


def cmd_report(args) -> int:
    with RunLock(args.run_dir):
        print(write_report(args.run_dir), end="")
    return 0


def cmd_plot(args) -> int:
    csv_path = args.csv or Path(args.run_dir[0]) / "metrics.csv"
    rows = plot_metrics(args.run_dir, csv_path, args.png)
    print(f"wrote {len(rows)} rows to {csv_path}" + (f" and {args.png}" if args.png else ""))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="idda", description="Iterative dual domain adaptation lab.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_manifest(sp, required=True):
        sp.add_argument("--manifest", required=required, help="YAML manifest (path or bundled name)")

    def with_run(sp):
        with_manifest(sp)
        sp.add_argument("--run-dir", required=True)
        sp.add_argument("--seed", type=int, default=None, help="run seed (default: manifest seed)")

    sp = sub.add_parser("synth", help="write the manifest's synthetic corpora as text files")
    with_manifest(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("tokenize", help="learn BPE merges and a vocabulary")
    with_manifest(sp, required=False)
    sp.add_argument("--train", nargs="*", default=[], help="text files, used when no manifest is given")
    sp.add_argument("--merges", type=int, default=1000)
    sp.add_argument("--vocab-cap", type=int, default=2000)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_tokenize)

    sp = sub.add_parser("adist", help="proxy A-distances to the in-domain corpus and the transfer order")
    with_manifest(sp, required=False)
    sp.add_argument("--corpus", nargs="*", help="IN OUT [OUT ...] source-side text files")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--cv-folds", type=int, default=0)
    sp.set_defaults(func=cmd_adist)

    sp = sub.add_parser("train", help="train initial models with the likelihood loss")
    with_run(sp)
    sp.add_argument("--domain", nargs="*", help="domain tags (default: all)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("idda", help="run iterative dual domain adaptation")
    with_run(sp)
    sp.add_argument("--k", type=int, default=None, help="iterations (default: manifest)")
    sp.add_argument("--lambda", dest="lam", type=float, default=None, help="distillation weight")
    sp.add_argument("--variant", choices=VARIANTS, default="full")
    sp.add_argument("--order", choices=ORDERS, default="distance")
    sp.add_argument("--mix", action="store_true", help="merge all out-domains into one")
    sp.add_argument("--model-id", default=None)
    sp.add_argument("--compare-lambda0", action="store_true", help="also run the same setting with lambda=0")
    sp.set_defaults(func=cmd_idda)

    sp = sub.add_parser("baseline", help="train contrast systems")
    with_run(sp)
    sp.add_argument("--kind", nargs="+", choices=BASELINES, required=True)
    sp.add_argument("--out-domain", default=None)
    sp.set_defaults(func=cmd_baseline)

    def with_model(sp, required=True):
        sp.add_argument("--checkpoint", required=required)
        sp.add_argument("--tokenizer", required=required, help="directory with bpe.codes and vocab.txt")
        sp.add_argument("--beam", type=int, default=4)

    sp = sub.add_parser("translate", help="decode a text file")
    with_model(sp)
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", default=None)
    sp.set_defaults(func=cmd_translate)

    sp = sub.add_parser("evaluate", help="corpus BLEU of a hypothesis file or a checkpoint")
    with_model(sp, required=False)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--hyp", default=None)
    sp.add_argument("--src", default=None)
    sp.add_argument("--dataset", default=None)
    sp.add_argument("--model-id", default=None)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("report", help="re-score stored decodes and write report.txt / report.json")
    sp.add_argument("--run-dir", required=True)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("plot", help="dev BLEU against iteration as CSV (and optionally PNG)")
    sp.add_argument("--run-dir", nargs="+", required=True)
    sp.add_argument("--csv", default=None)
    sp.add_argument("--png", default=None)
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (RegistryInvariantError, NumericError) as exc:
        where = getattr(args, "run_dir", None)
        _record_failure(where, args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _record_failure(run_dir, command: str, exc: Exception) -> None:
    if isinstance(run_dir, str):
        write_jsonl(Path(run_dir) / "errors.jsonl", [{"command": command, "error": type(exc).__name__,
                                                      "message": str(exc)}], append=True)


if __name__ == "__main__":
    sys.exit(main())
