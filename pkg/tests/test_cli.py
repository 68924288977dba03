import json

import pytest
import yaml

from idda.cli import main
from idda.reporting import read_curve_csv, read_jsonl, RunLock

TINY_MANIFEST = {
    "seed": 3,
    "corpus_seed": 5,
    "rule_seed": 7,
    "model": {"embed_dim": 8, "hidden_dim": 8, "num_heads": 2, "num_layers": 1, "max_positions": 24},
    "tokenizer": {"num_merges": 40, "vocab_cap": 200},
    "corpus": {"max_len": 20, "token_budget": 300},
    "initial": {"max_epochs": 1, "patience": 1, "dev_eval_every": 100, "lr": 0.01},
    "transfer": {"max_epochs": 1, "patience": 1, "dev_eval_every": 100, "lr": 0.01, "lambda": 0.4},
    "idda": {"K": 2},
    "decode": {"beam_size": 1},
    "domains": [
        {"tag": "talk", "role": "in", "train_pairs": 40, "dev_pairs": 12, "test_pairs": 12,
         "synth": {"vocab_size": 12, "overlap": 0.7, "domain_index": 0, "style_markers": ["@t"],
                   "min_len": 2, "max_len": 4}},
        {"tag": "wire", "role": "out", "train_pairs": 40, "dev_pairs": 12, "test_pairs": 12,
         "synth": {"vocab_size": 12, "overlap": 0.7, "domain_index": 1, "style_markers": ["@w"],
                   "min_len": 2, "max_len": 4}},
    ],
}


@pytest.fixture(scope="module")
def manifest_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("m") / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY_MANIFEST))
    return str(path)


@pytest.fixture(scope="module")
def finished_run(manifest_path, tmp_path_factory):
    run = tmp_path_factory.mktemp("run")
    assert main(["idda", "--manifest", manifest_path, "--run-dir", str(run), "--compare-lambda0"]) == 0
    assert main(["baseline", "--manifest", manifest_path, "--run-dir", str(run), "--kind", "single", "ft"]) == 0
    return run


def test_layout(finished_run):
    run = finished_run
    for rel in ("run.json", "manifest.yaml", "tokenizer/bpe.codes", "tokenizer/vocab.txt", "registry.log",
                "checkpoints/talk/0.ckpt", "checkpoints/wire/0.ckpt", "report.txt", "report.json",
                "references/talk.dev.ref", "models/idda/talk.dev.hyp", "models/idda/registry.log",
                "models/idda_lam0/registry.log", "models/single/meta.json", "logs/initial-talk.jsonl"):
        assert (run / rel).exists(), rel
    assert list((run / "logs").glob("idda-k1-in2out-wire.jsonl"))
    assert not (run / ".lock").exists()
    for rec in read_jsonl(run / "registry.log"):
        if rec["accepted"]:
            assert (run / "checkpoints" / rec["domain"] / f"{rec['iteration']}.ckpt").exists()


def test_report_rescores_stored_decodes(finished_run):
    report = json.loads((finished_run / "report.json").read_text())
    rows = {r["model_id"]: r for r in report["rows"]}
    assert list(rows) == ["single", "ft", "idda", "idda_lam0"]
    registry = read_jsonl(finished_run / "models" / "idda" / "registry.log")
    best_in = max(r["dev_bleu"] for r in registry if r["domain"] == "talk" and r["accepted"])
    assert rows["idda"]["scores"]["talk.dev"]["bleu"] == pytest.approx(best_in, abs=1e-9)
    initial = json.loads((finished_run / "initial.json").read_text())
    assert rows["single"]["scores"]["talk.dev"]["bleu"] == pytest.approx(initial["talk"]["dev_bleu"], abs=1e-9)


def test_report_byte_identical(finished_run, capsys):
    assert main(["report", "--run-dir", str(finished_run)]) == 0
    a = (finished_run / "report.txt").read_bytes(), (finished_run / "report.json").read_bytes()
    assert main(["report", "--run-dir", str(finished_run)]) == 0
    assert a == ((finished_run / "report.txt").read_bytes(), (finished_run / "report.json").read_bytes())
    lines = a[0].decode().splitlines()
    assert lines[2].split() == ["model_id", "talk.dev", "talk.test", "wire.dev", "wire.test"]


def test_plot_csv(finished_run, tmp_path):
    out = tmp_path / "m.csv"
    assert main(["plot", "--run-dir", str(finished_run), "--csv", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "iteration,model_id,dev_bleu"
    rows = read_curve_csv(out)
    for mid in ("idda", "idda_lam0"):
        best = [v for k, m, v in rows if m == mid]
        assert len(best) == 3 and best == sorted(best)
        raw = [(k, v) for k, m, v in rows if m == f"{mid}:raw"]
        registry = read_jsonl(finished_run / "models" / mid / "registry.log")
        assert raw == [(r["iteration"], r["dev_bleu"]) for r in registry if r["domain"] == "talk"]


def test_translate_and_evaluate(finished_run, tmp_path, capsys):
    src = tmp_path / "in.txt"
    src.write_text("a b\nc\n")
    out = tmp_path / "out.txt"
    ck = str(finished_run / "models" / "idda" / "talk.ckpt")
    tok = str(finished_run / "tokenizer")
    assert main(["translate", "--checkpoint", ck, "--tokenizer", tok, "--input", str(src),
                 "--output", str(out), "--beam", "2"]) == 0
    assert len(out.read_text().splitlines()) == 2
    hyp, ref = finished_run / "models" / "idda" / "talk.dev.hyp", finished_run / "references" / "talk.dev.ref"
    capsys.readouterr()
    assert main(["evaluate", "--hyp", str(hyp), "--ref", str(ref)]) == 0
    record = json.loads(capsys.readouterr().out)
    assert set(record) == {"dataset", "model_id", "bleu", "precisions", "brevity_penalty"}


def test_synth_tokenize_adist(manifest_path, tmp_path, capsys):
    assert main(["synth", "--manifest", manifest_path, "--out", str(tmp_path / "c")]) == 0
    assert len((tmp_path / "c" / "talk.train.src").read_text().splitlines()) == 40
    assert main(["tokenize", "--manifest", manifest_path, "--out", str(tmp_path / "tok")]) == 0
    assert (tmp_path / "tok" / "vocab.txt").exists()
    capsys.readouterr()
    assert main(["adist", "--corpus", str(tmp_path / "c" / "talk.train.src"),
                 str(tmp_path / "c" / "wire.train.src")]) == 0
    result = json.loads(capsys.readouterr().out)
    d = result["distances"][0]
    assert d["a_distance"] == pytest.approx(2 * (1 - 2 * d["epsilon"]))
    assert result["order"] == ["wire.train"]


def test_errors(tmp_path, manifest_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["idda", "--bogus"])
    assert exc.value.code == 2
    assert main(["idda", "--manifest", str(tmp_path / "none.yaml"), "--run-dir", str(tmp_path / "r")]) == 1
    assert "cannot read manifest" in capsys.readouterr().err
    assert main(["report", "--run-dir", str(tmp_path / "empty")]) == 1
    with RunLock(tmp_path / "busy"):
        assert main(["train", "--manifest", manifest_path, "--run-dir", str(tmp_path / "busy")]) == 1
    assert "locked" in capsys.readouterr().err
    assert main(["translate", "--checkpoint", str(tmp_path / "x.ckpt"), "--tokenizer", str(tmp_path),
                 "--input", str(tmp_path / "nope")]) == 1


def test_reopening_with_other_seed_rejected(finished_run, manifest_path):
    assert main(["train", "--manifest", manifest_path, "--run-dir", str(finished_run), "--seed", "99"]) == 1
