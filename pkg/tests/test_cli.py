"""CLI subcommands end to end on a small simulated corpus."""

import json
from pathlib import Path

import pytest

from verbatim_audit.cli import CONFIG_KEYS, EXIT_BAD_CONFIG, EXIT_OK, EXIT_RUN_FAILED, main
from verbatim_audit.groundtruth import read_labels
from verbatim_audit.pipeline import load_report


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    code = main([
        "simulate", "--out", str(out), "--size", "200", "--seed", "13",
        "--set", "simulate.exact_fraction=0.05",
        "--set", "simulate.template_fraction=0.04",
    ])
    assert code == EXIT_OK
    return out


def write_config(path: Path, corpus: Path, out_dir: Path, extra: str = "") -> Path:
    cfg = path / "audit.ini"
    cfg.write_text(
        f"""
[run]
out_dir = {out_dir}
seed = 7

[candidates]
captions = {corpus}/captions.jsonl
embeddings = {corpus}/embeddings.emb1
corpus_dir = {corpus}

[backend]
mode = sim
sim_dir = {corpus}

[attack]
mode = blackbox
n_pre = 40
{extra}
"""
    )
    return cfg


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def test_simulate_manifest_arithmetic(corpus):
    manifest = json.loads((corpus / "plants.json").read_text())
    assert len(manifest["exact"]) == 10  # 5% of 200
    assert len(manifest["template"]) == 8  # 4% of 200
    assert manifest["retrieval"] == []


def test_simulate_same_seed_byte_identical(corpus, tmp_path):
    again = tmp_path / "again"
    code = main([
        "simulate", "--out", str(again), "--size", "200", "--seed", "13",
        "--set", "simulate.exact_fraction=0.05",
        "--set", "simulate.template_fraction=0.04",
    ])
    assert code == EXIT_OK
    for rel in ["captions.jsonl", "embeddings.emb1", "plants.json", "images/000007.png"]:
        assert (again / rel).read_bytes() == (corpus / rel).read_bytes(), rel


def test_simulate_zero_fraction_empty_manifest(tmp_path):
    out = tmp_path / "none"
    code = main([
        "simulate", "--out", str(out), "--size", "60", "--seed", "5",
        "--set", "simulate.exact_fraction=0",
        "--set", "simulate.template_fraction=0",
    ])
    assert code == EXIT_OK
    manifest = json.loads((out / "plants.json").read_text())
    assert manifest["exact"] == [] and manifest["template"] == []


# ---------------------------------------------------------------------------
# attack
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def attack_run(corpus, tmp_path_factory):
    base = tmp_path_factory.mktemp("attack")
    out_dir = base / "run"
    cfg = write_config(base, corpus, out_dir)
    code = main(["attack", "--config", str(cfg)])
    assert code == EXIT_OK
    return out_dir


def test_attack_blackbox_report(attack_run, corpus):
    body = load_report(attack_run)
    manifest = json.loads((corpus / "plants.json").read_text())
    plants = set(manifest["exact"]) | set(manifest["template"])
    ranked = body["rankings"]["main"]
    assert set(ranked[: len(plants)]) >= plants  # plants occupy the top
    assert body["ledger"]["blackbox"]["generate_calls"] == 4 * len(ranked)
    assert body["efficiency_ratio"] == 2000.0


def test_attack_labels_match_manifest(attack_run, corpus):
    manifest = json.loads((corpus / "plants.json").read_text())
    labels = {l.caption_id: l for l in read_labels(attack_run / "labels.jsonl")}
    for cid in manifest["exact"]:
        if cid in labels:
            assert labels[cid].kind == "exact"
    for cid in manifest["template"]:
        if cid in labels:
            assert labels[cid].kind == "template"


def test_attack_whitebox_mode(corpus, tmp_path):
    out_dir = tmp_path / "wb"
    cfg = write_config(tmp_path, corpus, out_dir)
    code = main(["attack", "--config", str(cfg), "--mode", "whitebox", "--out", str(out_dir)])
    assert code == EXIT_OK
    body = load_report(out_dir)
    assert "blackbox" not in body["ledger"]
    assert (out_dir / "dcs_scores.jsonl").exists()


def test_attack_invalid_config_exits_3_without_outputs(corpus, tmp_path):
    out_dir = tmp_path / "bad"
    cfg = write_config(tmp_path, corpus, out_dir, extra="\n[thresholds]\nj = 0\n")
    code = main(["attack", "--config", str(cfg)])
    assert code == EXIT_BAD_CONFIG
    assert not out_dir.exists()


def test_attack_rerun_byte_identical(corpus, tmp_path, attack_run):
    out_dir = tmp_path / "rerun"
    cfg = write_config(tmp_path, corpus, out_dir)
    assert main(["attack", "--config", str(cfg)]) == EXIT_OK
    for rel in ["dcs_scores.jsonl", "ecs_scores.jsonl", "labels.jsonl"]:
        assert (out_dir / rel).read_bytes() == (attack_run / rel).read_bytes(), rel


# ---------------------------------------------------------------------------
# label / transfer
# ---------------------------------------------------------------------------


def test_label_from_run(corpus, attack_run, tmp_path):
    out_dir = tmp_path / "labels"
    cfg = write_config(tmp_path, corpus, out_dir)
    code = main([
        "label", "--config", str(cfg), "--from-run", str(attack_run), "--top", "12",
        "--out", str(out_dir),
    ])
    assert code == EXIT_OK
    labels = read_labels(out_dir / "labels.jsonl")
    assert len(labels) == 12


def test_label_empty_prompt_file(corpus, tmp_path):
    out_dir = tmp_path / "empty"
    cfg = write_config(tmp_path, corpus, out_dir)
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    code = main(["label", "--config", str(cfg), "--prompts", str(empty), "--out", str(out_dir)])
    assert code == EXIT_OK
    assert (out_dir / "labels.jsonl").read_text() == ""


def test_label_missing_corpus_images_error_records(corpus, attack_run, tmp_path):
    # Point corpus_dir somewhere without images: labeling continues and
    # emits per-caption error records instead of aborting.
    out_dir = tmp_path / "noimg"
    cfg = tmp_path / "noimg.ini"
    cfg.write_text(
        f"""
[run]
out_dir = {out_dir}
[candidates]
captions = {corpus}/captions.jsonl
embeddings = {corpus}/embeddings.emb1
corpus_dir = {tmp_path}
[backend]
mode = sim
sim_dir = {corpus}
"""
    )
    code = main(["label", "--config", str(cfg), "--from-run", str(attack_run), "--top", "6"])
    assert code == EXIT_OK
    labels = read_labels(out_dir / "labels.jsonl")
    assert len(labels) == 6
    assert any(l.reason and l.reason.startswith("error:") for l in labels)


def test_transfer_dedup_backend_table(corpus, attack_run, tmp_path):
    dedup_corpus = tmp_path / "dedup"
    assert main([
        "simulate", "--out", str(dedup_corpus), "--size", "200", "--seed", "13",
        "--set", "simulate.exact_fraction=0.05",
        "--set", "simulate.template_fraction=0.04",
        "--set", "simulate.dedup_exact=true",
    ]) == EXIT_OK
    out_dir = tmp_path / "transfer"
    cfg = write_config(tmp_path, corpus, out_dir)
    code = main([
        "transfer", "--config", str(cfg), "--from-run", str(attack_run),
        "--sim-dir", str(dedup_corpus), "--out", str(out_dir),
    ])
    assert code == EXIT_OK
    summary = json.loads((out_dir / "transfer.json").read_text())["summary"]
    assert summary["exact"] == 0
    assert summary["template"] > 0


def test_transfer_unreachable_backend_exits_2(corpus, attack_run, tmp_path):
    out_dir = tmp_path / "downstream"
    cfg = write_config(tmp_path, corpus, out_dir)
    code = main([
        "transfer", "--config", str(cfg), "--from-run", str(attack_run),
        "--backend-url", "http://127.0.0.1:9", "--out", str(out_dir),
        "--set", "backend.timeout_s=0.2", "--set", "backend.max_retries=0",
    ])
    assert code == EXIT_RUN_FAILED
    assert not (out_dir / "transfer.json").exists()  # no partial table


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def test_report_renders_plots_and_table(attack_run, tmp_path):
    out_dir = tmp_path / "plots"
    code = main(["report", str(attack_run), "--out", str(out_dir)])
    assert code == EXIT_OK
    for name in ["precision.png", "precision.svg", "duplication.png", "summary.txt"]:
        assert (out_dir / name).exists(), name
    table = (out_dir / "summary.txt").read_text()
    assert "exact" in table


def test_report_two_runs_overlay(attack_run, corpus, tmp_path):
    second = tmp_path / "second"
    cfg = write_config(tmp_path, corpus, second)
    assert main(["attack", "--config", str(cfg), "--set", "run.seed=8"]) == EXIT_OK
    out_dir = tmp_path / "overlay"
    code = main(["report", str(attack_run), str(second), "--out", str(out_dir)])
    assert code == EXIT_OK
    assert (out_dir / "precision.svg").exists()


def test_report_corrupt_run_exits_3(tmp_path):
    bad = tmp_path / "corrupt"
    bad.mkdir()
    (bad / "report.json").write_text("{broken")
    assert main(["report", str(bad)]) == EXIT_BAD_CONFIG


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def test_unknown_config_key_rejected(corpus, tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[run]\nbogus_key = 1\n")
    assert main(["attack", "--config", str(cfg)]) == EXIT_BAD_CONFIG


def test_unknown_set_key_rejected(corpus, tmp_path):
    out_dir = tmp_path / "x"
    cfg = write_config(tmp_path, corpus, out_dir)
    assert main(["attack", "--config", str(cfg), "--set", "run.nope=1"]) == EXIT_BAD_CONFIG


def test_help_lists_every_config_key(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    out = capsys.readouterr().out
    for key in CONFIG_KEYS:
        assert key in out, key
