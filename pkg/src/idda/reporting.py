"""Run directories, stored decodes, the results table and the BLEU-vs-k curves.

Run directory layout::

    run.json                     seeds, sub-seeds, config echo
    manifest.yaml                manifest as loaded
    tokenizer/                   bpe.codes, vocab.txt
    references/{domain}.{split}.ref
    checkpoints/{domain}/{k}.ckpt    accepted models of the main IDDA run (k=0 is the initial model)
    registry.log                 registry history of the main IDDA run, one JSON record per line
    logs/*.jsonl                 per-training step/eval logs
    models/{model_id}/meta.json  which checkpoint serves which domain, wall time
    models/{model_id}/{domain}.{split}.hyp   detokenized decodes, one line per sentence
    models/{model_id}/registry.log           IDDA variants only
    report.txt, report.json      written by ``report``
    metrics.csv                  written by ``plot``
"""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .decoding import bleu

MODEL_ORDER = ("single", "mix", "ft", "mft", "kd")
SPLITS = ("dev", "test")


class RunDirError(OSError):
    pass


class RunLock:
    """Exclusive ownership of a run directory, held through a lock file."""

    def __init__(self, run_dir: str | Path):
        self.path = Path(run_dir) / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunDirError(f"{self.path.parent} is locked by another process "
                              f"(remove {self.path} if that process is gone)") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise RunDirError(f"cannot read {path}: {exc}") from exc


def write_jsonl(path: Path, records: Iterable[dict], append: bool = False) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a" if append else "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path: Path) -> list[dict]:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise RunDirError(f"cannot read {path}: {exc}") from exc
    return [json.loads(line) for line in lines if line.strip()]


def write_lines(path: Path, lines: Sequence[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_lines(path: Path) -> list[str]:
    try:
        return path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise RunDirError(f"cannot read {path}: {exc}") from exc


# --------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class Cell:
    bleu: float
    precisions: tuple[float, ...]
    brevity_penalty: float


def _score_file(hyp_path: Path, ref_path: Path) -> Cell:
    hyps = [line.split() for line in read_lines(hyp_path)]
    refs = [line.split() for line in read_lines(ref_path)]
    s = bleu(hyps, refs)
    return Cell(s.score, s.precisions, s.brevity_penalty)


def model_ids(run_dir: Path) -> list[str]:
    found = sorted(p.name for p in (run_dir / "models").glob("*") if (p / "meta.json").exists())
    known = [m for m in MODEL_ORDER if m in found]
    return known + [m for m in found if m not in known]


def collect(run_dir: str | Path) -> dict:
    """Re-score every stored decode against the stored references."""
    run_dir = Path(run_dir)
    info = read_json(run_dir / "run.json")
    domains = [info["in_domain"], *info["out_domains"]]
    rows = []
    for mid in model_ids(run_dir):
        meta = read_json(run_dir / "models" / mid / "meta.json")
        cells = {}
        for dom in domains:
            for split in SPLITS:
                hyp = run_dir / "models" / mid / f"{dom}.{split}.hyp"
                ref = run_dir / "references" / f"{dom}.{split}.ref"
                if hyp.exists() and ref.exists():
                    cells[f"{dom}.{split}"] = _score_file(hyp, ref)
        rows.append((mid, meta, cells))
    return {"info": info, "domains": domains, "rows": rows}


def _fmt(x: float | None) -> str:
    return "-" if x is None else f"{x:.2f}"


def render_report(data: dict) -> tuple[str, dict]:
    info, domains, rows = data["info"], data["domains"], data["rows"]
    columns = [f"{d}.{s}" for d in domains for s in SPLITS]
    header = ["model_id", *columns]
    table = [header]
    for mid, _, cells in rows:
        table.append([mid, *(_fmt(cells[c].bleu) if c in cells else "-" for c in columns)])
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    out = io.StringIO()
    out.write(f"in-domain: {info['in_domain']}  out-domains: {', '.join(info['out_domains'])}\n")
    out.write(f"seed: {info['seed']}  corpus_seed: {info['corpus_seed']}  rule_seed: {info['rule_seed']}\n")
    for i, r in enumerate(table):
        out.write("  ".join(v.ljust(widths[j]) if j == 0 else v.rjust(widths[j]) for j, v in enumerate(r)).rstrip())
        out.write("\n")
        if i == 0:
            out.write("  ".join("-" * w for w in widths) + "\n")
    out.write("\nwall time (s): ")
    out.write(", ".join(f"{mid}={meta.get('wall_time', 0.0):.1f}" for mid, meta, _ in rows) + "\n")
    twin = {
        "in_domain": info["in_domain"],
        "out_domains": info["out_domains"],
        "seeds": {k: info[k] for k in ("seed", "corpus_seed", "rule_seed")},
        "sub_seeds": info.get("sub_seeds", {}),
        "config": info.get("config", {}),
        "rows": [
            {"model_id": mid, "wall_time": meta.get("wall_time"),
             "scores": {c: {"dataset": c, "model_id": mid, "bleu": cell.bleu, "precisions": list(cell.precisions),
                            "brevity_penalty": cell.brevity_penalty}
                        for c, cell in sorted(cells.items())}}
            for mid, meta, cells in rows
        ],
    }
    return out.getvalue(), twin


def write_report(run_dir: str | Path) -> str:
    run_dir = Path(run_dir)
    text, twin = render_report(collect(run_dir))
    (run_dir / "report.txt").write_text(text, encoding="utf-8")
    write_json(run_dir / "report.json", twin)
    return text


# --------------------------------------------------------------------------
# curves


def curve_rows(registry_records: list[dict], domain: str, K: int, model_id: str) -> list[tuple[int, str, float]]:
    """Registry-best series plus the raw candidate scores, for one domain.

    Raw rows are named ``{model_id}:raw`` and carry every proposal made at
    iteration k, accepted or not; k=0 is the initial model.
    """
    hist = [r for r in registry_records if r["domain"] == domain]
    if not hist:
        raise RunDirError(f"no registry records for domain {domain!r}")
    rows = []
    best = float("-inf")
    for k in range(K + 1):
        for r in hist:
            if r["iteration"] == k and r["accepted"]:
                best = max(best, r["dev_bleu"])
        rows.append((k, model_id, best))
    for r in hist:
        rows.append((r["iteration"], f"{model_id}:raw", r["dev_bleu"]))
    return rows


def plot_metrics(run_dirs: Sequence[str | Path], out_csv: str | Path | None = None,
                 png: str | Path | None = None) -> list[tuple[int, str, float]]:
    """In-domain dev BLEU against iteration k for every IDDA-type model found.

    Several run directories (e.g. one per seed) are emitted side by side with
    ``@{seed}`` appended to the model ids.  The CSV has the columns
    iteration, model_id, dev_bleu.
    """
    rows: list[tuple[int, str, float]] = []
    many = len(run_dirs) > 1
    for run_dir in map(Path, run_dirs):
        info = read_json(run_dir / "run.json")
        suffix = f"@{info['seed']}" if many else ""
        for mid in model_ids(run_dir):
            reg = run_dir / "models" / mid / "registry.log"
            if not reg.exists():
                continue
            meta = read_json(run_dir / "models" / mid / "meta.json")
            rows.extend(curve_rows(read_jsonl(reg), info["in_domain"], meta["K"], mid + suffix))
    if not rows:
        raise RunDirError(f"no IDDA registry logs found under {', '.join(map(str, run_dirs))}")
    if out_csv is not None:
        Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
        with open(out_csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "model_id", "dev_bleu"])
            for k, mid, v in rows:
                w.writerow([k, mid, f"{v:.6f}"])
    if png is not None:
        _plot_png(rows, Path(png))
    return rows


def read_curve_csv(path: str | Path) -> list[tuple[int, str, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [(int(r["iteration"]), r["model_id"], float(r["dev_bleu"])) for r in csv.DictReader(fh)]


def _plot_png(rows, path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for mid in dict.fromkeys(m for _, m, _ in rows):
        pts = [(k, v) for k, m, v in rows if m == mid]
        if mid.endswith(":raw"):
            ax.scatter(*zip(*pts), s=12, alpha=0.5, label=mid)
        else:
            ax.plot(*zip(*pts), marker="o", label=mid)
    ax.set_xlabel("iteration k")
    ax.set_ylabel("in-domain dev BLEU")
    ax.legend(fontsize=7)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
