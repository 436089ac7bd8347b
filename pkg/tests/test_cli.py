import json
import struct

import numpy as np
import pytest
from click.testing import CliRunner

from src.hashembed.cli import main
from src.hashembed.embedding import EmbeddingConfig, new_hash_embedding
from src.hashembed.model import new_classifier, save_model
from src.hashembed.text import Dataset, Sample, save_dataset
from tests.helpers import parse_pairs


def _docs(n, seed):
    rng = np.random.default_rng(seed)
    noise = [f"n{i}" for i in range(30)]
    samples = []
    for i in range(n):
        label = i % 2
        words = list(rng.choice(noise, size=8)) + ["good" if label == 0 else "bad"]
        samples.append(Sample(label, " ".join(words)))
    return Dataset(samples, 2)


@pytest.fixture
def data_dir(tmp_path):
    root = tmp_path / "toy"
    root.mkdir()
    save_dataset(_docs(120, 0), root / "train.csv")
    save_dataset(_docs(40, 1), root / "test.csv")
    (root / "classes.txt").write_text("positive\nnegative\n", encoding="utf-8")
    return root


def _invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def _train(data_dir, out, *extra):
    return _invoke(
        "train", "--data", data_dir, "--K", 1024, "--B", 64, "--k", 2, "--d", 4, "--ngrams", 1,
        "--max-epochs", 2, "--batch-size", 16, "--out", out, "--no-report", *extra,
    )


# ── params / collision-stats ─────────────────────────────────────────────────

def test_params_for_large_vocabulary():
    result = _invoke("params", "--K", 10_000_000, "--B", 1_000_000, "--k", 2, "--d", 20)
    assert result.exit_code == 0
    pairs = parse_pairs(result.stdout)
    assert pairs["hash_embedding"] == "40000000"
    assert pairs["standard_embedding"] == "200000000"
    assert pairs["ratio"] == "5"


def test_params_growth_and_ensemble():
    result = _invoke(
        "params", "--K", 10_000_000, "--B", 1_000_000, "--k", 2, "--d", 10,
        "--grow-to", 100_000_000, "--members", 3,
    )
    pairs = parse_pairs(result.stdout)
    assert pairs["hash_embedding_delta"] == "180000000"
    assert pairs["standard_embedding_delta"] == "900000000"
    assert pairs["ensemble_hash_embedding"] == str(3 * (10_000_000 + 2 * 10_000_000))


def test_collision_stats_saturated_table():
    result = _invoke("collision-stats", "--K", 1_000_000, "--vocab", 100_000_000)
    assert result.exit_code == 0
    assert parse_pairs(result.stdout)["p_col_exact"] == "1"


def test_collision_stats_combined_range():
    result = _invoke("collision-stats", "--B", 1_000_000, "--k", 2, "--vocab", 100_000_000, "--json")
    assert result.exit_code == 0
    record = json.loads(result.stdout.strip().splitlines()[-1])
    assert record["combined_p_col"] == pytest.approx(1e-4, rel=0.05)
    assert record["k"] == 2


def test_collision_stats_simulation():
    result = _invoke("collision-stats", "--K", 2, "--vocab", 2, "--simulate", "--trials", 10_000)
    pairs = parse_pairs(result.stdout)
    assert abs(float(pairs["monte_carlo_mean"]) - 1.0) <= 3 * float(pairs["monte_carlo_stderr"])


# ── exit codes ───────────────────────────────────────────────────────────────

def test_missing_required_option_is_a_usage_error():
    assert _invoke("collision-stats", "--K", 10).exit_code == 2


def test_out_of_range_option_is_a_usage_error():
    assert _invoke("params", "--K", 0, "--B", 1, "--d", 1).exit_code == 2


def test_missing_model_file_is_a_usage_error(tmp_path):
    assert _invoke("evaluate", "--model", tmp_path / "nope.hemb", "--test", tmp_path / "t.csv").exit_code == 2


def test_evaluate_needs_exactly_one_source(tmp_path, data_dir):
    model = tmp_path / "m.hemb"
    model.write_bytes(b"junk")
    assert _invoke("evaluate", "--model", model).exit_code == 2
    assert _invoke("evaluate", "--model", model, "--test", data_dir / "test.csv", "--data", data_dir).exit_code == 2


def test_corrupt_model_is_a_runtime_error(tmp_path, data_dir):
    model = tmp_path / "m.hemb"
    model.write_bytes(b"junk")
    result = _invoke("evaluate", "--model", model, "--test", data_dir / "test.csv")
    assert result.exit_code == 1


def test_model_with_corrupt_header_is_a_runtime_error(tmp_path, data_dir):
    model = tmp_path / "m.hemb"
    save_model(new_classifier(new_hash_embedding(EmbeddingConfig(K=16, B=8, k=2, d=3), 0), 2, seed=0), model)
    raw = model.read_bytes()
    model.write_bytes(raw[:8] + struct.pack("<Q", 0) + raw[16:])
    result = _invoke("evaluate", "--model", model, "--test", data_dir / "test.csv")
    assert result.exit_code == 1
    assert "invalid embedding header" in result.output


def test_unknown_dataset_is_a_runtime_error(tmp_path):
    assert _train(tmp_path / "missing", tmp_path / "run").exit_code == 1


def test_invalid_training_config_is_a_usage_error(tmp_path, data_dir):
    assert _train(data_dir, tmp_path / "run", "--val-fraction", 1.5).exit_code == 2


# ── train / evaluate / reproduce / inspect ───────────────────────────────────

def test_train_then_evaluate_then_reproduce(tmp_path, data_dir):
    out = tmp_path / "run"
    result = _train(data_dir, out)
    assert result.exit_code == 0, result.output
    for name in ("model.hemb", "manifest.json", "history.jsonl"):
        assert (out / name).exists()
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["metrics"]["epochs"] == 2
    assert len((out / "history.jsonl").read_text(encoding="utf-8").splitlines()) == 2

    result = _invoke("evaluate", "--model", out / "model.hemb", "--test", data_dir / "test.csv")
    assert result.exit_code == 0
    assert parse_pairs(result.stdout)["accuracy"] == f"{manifest['metrics']['test_accuracy']:.4f}"

    result = _invoke("reproduce", out / "manifest.json", "--out", tmp_path / "again")
    assert result.exit_code == 0, result.output
    assert parse_pairs(result.stdout)["reproduced"] == "true"


def test_hashed_models_cannot_be_inspected(tmp_path, data_dir):
    out = tmp_path / "run"
    assert _train(data_dir, out).exit_code == 0
    assert _invoke("inspect", "--model", out / "model.hemb").exit_code == 1


def test_dictionary_mode_writes_vocab_and_inspects(tmp_path, data_dir):
    out = tmp_path / "run"
    result = _train(data_dir, out, "--mode", "dict", "--vocab-size", 20, "--report")
    assert result.exit_code == 0, result.output
    assert (out / "vocab.tsv").exists()
    assert (out / "history.html").exists()

    result = _invoke("inspect", "--model", out / "model.hemb", "--n", 3, "--json")
    assert result.exit_code == 0
    records = [json.loads(line) for line in result.stdout.splitlines() if line.startswith("{")]
    assert len(records) == 6
    assert {r["order"] for r in records} == {"largest", "smallest"}

    result = _invoke("inspect", "--model", out / "model.hemb", "--vocab", out / "vocab.tsv", "--n", 2)
    assert result.exit_code == 0


@pytest.mark.parametrize("mode", ["trick", "standard"])
def test_special_case_modes_train(tmp_path, data_dir, mode):
    out = tmp_path / mode
    result = _train(data_dir, out, "--mode", mode, "--vocab-size", 50)
    assert result.exit_code == 0, result.output
    assert "parameters" in parse_pairs(result.stdout)


def test_ensemble_evaluation(tmp_path, data_dir):
    paths = []
    for seed in (1, 2):
        out = tmp_path / f"m{seed}"
        assert _train(data_dir, out, "--seed", seed).exit_code == 0
        paths.append(out / "model.hemb")
    result = _invoke(
        "evaluate", "--model", paths[0], "--model", paths[1], "--test", data_dir / "test.csv", "--json"
    )
    assert result.exit_code == 0
    record = json.loads(result.stdout.strip().splitlines()[-1])
    assert {"member_0_accuracy", "member_1_accuracy", "accuracy"} <= set(record)
