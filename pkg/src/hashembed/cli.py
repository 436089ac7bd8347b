# src/hashembed/cli.py
"""
Command-line surface.

    hashembed train            fit a classifier, write model + manifest + history
    hashembed reproduce        rerun a manifest and compare model digests
    hashembed evaluate         accuracy (and soft-voting ensembles) on a test file
    hashembed inspect          highest / lowest importance tokens of a dict-mode model
    hashembed collision-stats  closed-form and simulated collision numbers
    hashembed params           parameter accounting

Exit codes: 0 success, 1 runtime/IO failure, 2 usage error.
"""
from __future__ import annotations

import functools
import json
import logging
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
from pydantic import BaseModel, ValidationError
from rich.console import Console
from rich.table import Table

from . import config as settings
from .embedding import (
    EmbeddingConfig,
    HashEmbedding,
    as_hashing_trick,
    as_standard_embedding,
    new_hash_embedding,
    parameter_count,
)
from .errors import HashEmbError
from .hashing import DICTIONARY, HASHED, UNKNOWN_ID, collision_report
from .log import setup_logging
from .model import (
    ImportanceEntry,
    TrainConfig,
    confusion_counts,
    confusion_frame,
    ensemble_proba,
    evaluate as evaluate_model,
    file_digest,
    load_model,
    new_classifier,
    save_model,
    top_importance,
    train as train_model,
)
from .report import write_history_html
from .text import Vocabulary, build_vocab, load_dataset, load_vocab, resolve_dataset, save_vocab

log = logging.getLogger(__name__)
console = Console()

MODES = ("hashed", "dict", "trick", "standard")
UNKNOWN_TOKEN = "<unk>"


class RunManifest(BaseModel):
    command: str
    config: Dict[str, Any]
    seed: int
    embedding_seeds: List[int]
    datasets: Dict[str, str]
    duration_seconds: float
    metrics: Dict[str, float]
    model_digest: str
    created: str


def _guard(fn):
    """Map library failures onto click's exit codes."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            raise click.UsageError(str(exc)) from exc
        except (HashEmbError, OSError) as exc:
            raise click.ClickException(str(exc)) from exc
    return wrapper


def _echo_pairs(pairs: Dict[str, Any]) -> None:
    for key, value in pairs.items():
        if isinstance(value, float):
            value = f"{value:.10g}"
        click.echo(f"{key}={value}")


@click.group()
@click.option("--log-level", default=None, help="Logging level (default: $HASHEMB_LOG_LEVEL or INFO).")
def main(log_level: Optional[str]) -> None:
    """Hash embeddings for text classification."""
    setup_logging(log_level)


# ── train / reproduce ────────────────────────────────────────────────────────

def _build_embedding(opts: Dict[str, Any], vocab: Optional[Vocabulary]) -> HashEmbedding:
    mode, seed = opts["mode"], opts["seed"]
    if mode == "trick":
        return as_hashing_trick(opts["B"], opts["d"], seed)
    if mode == "standard":
        return as_standard_embedding([UNKNOWN_TOKEN] + vocab.tokens(), opts["d"], seed)
    config = EmbeddingConfig(
        K=len(vocab) + 1 if mode == "dict" else opts["K"],
        B=opts["B"],
        k=opts["k"],
        d=opts["d"],
        id_mode=DICTIONARY if mode == "dict" else HASHED,
        append_importance=opts["append_importance"],
        separate_importance_hash=opts["separate_importance_hash"],
    )
    return new_hash_embedding(config, seed, vocabulary=vocab.table if vocab else None)


def _run_train(opts: Dict[str, Any]) -> RunManifest:
    started = time.perf_counter()
    files = resolve_dataset(opts["data"], opts["data_root"], opts["classes"])
    train_set = load_dataset(files.train, files.num_classes, files.name)

    vocab = None
    if opts["mode"] in ("dict", "standard"):
        vocab = build_vocab(train_set.texts, opts["ngrams"], opts["vocab_size"])
    embedding = _build_embedding(opts, vocab)
    model = new_classifier(embedding, files.num_classes, opts["seed"], ngrams=opts["ngrams"])
    train_config = TrainConfig(
        patience=opts["patience"],
        val_fraction=opts["val_fraction"],
        batch_size=opts["batch_size"],
        max_epochs=opts["max_epochs"],
        seed=opts["seed"],
        snippets=opts["snippets"],
        alpha=opts["alpha"],
    )
    log.info(
        "%s embedding, %d trainable parameters", opts["mode"], parameter_count(embedding.config)
    )
    model, history = train_model(model, train_set, train_config)

    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / "model.hemb"
    save_model(model, model_path)
    with open(out / "history.jsonl", "w", encoding="utf-8") as fh:
        for record in history.records:
            fh.write(record.model_dump_json() + "\n")
    if vocab is not None:
        save_vocab(vocab, out / "vocab.tsv")
    if opts["report"]:
        write_history_html(history, out / "history.html")

    best = history.best
    metrics: Dict[str, float] = {
        "epochs": len(history.records),
        "best_epoch": history.best_epoch,
        "val_loss": best.val_loss,
        "val_acc": best.val_acc,
        "parameters": parameter_count(embedding.config),
    }
    datasets = {str(files.train): file_digest(files.train)}
    if files.test.exists():
        test_set = load_dataset(files.test, files.num_classes, files.name)
        metrics["test_accuracy"] = evaluate_model(model, test_set, threads=opts["threads"])
        datasets[str(files.test)] = file_digest(files.test)
    else:
        log.warning("no test file at %s, skipping test accuracy", files.test)

    manifest = RunManifest(
        command="train",
        config={k: str(v) if isinstance(v, Path) else v for k, v in opts.items()},
        seed=opts["seed"],
        embedding_seeds=[s.value for s in embedding.seeds],
        datasets=datasets,
        duration_seconds=round(time.perf_counter() - started, 3),
        metrics=metrics,
        model_digest=file_digest(model_path),
        created=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    (out / "manifest.json").write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    return manifest


def _report_run(manifest: RunManifest, out: Path) -> None:
    pairs: Dict[str, Any] = {"model": out / "model.hemb", "model_digest": manifest.model_digest}
    pairs.update(manifest.metrics)
    for key in ("test_accuracy", "val_acc"):
        if key in pairs:
            pairs[key] = f"{pairs[key]:.4f}"
    _echo_pairs(pairs)


@main.command()
@click.option("--data", required=True, help="Catalog name (e.g. ag_news) or a directory with train.csv/test.csv.")
@click.option("--data-root", default=settings.DATA_ROOT, show_default=True, help="Where catalog names resolve.")
@click.option("--classes", type=click.IntRange(min=2), default=None, help="Class count for non-catalog data.")
@click.option("--mode", type=click.Choice(MODES), default="hashed", show_default=True)
@click.option("--K", "K", type=click.IntRange(min=1), default=2**20, show_default=True, help="Importance rows (id range).")
@click.option("--B", "B", type=click.IntRange(min=1), default=2**16, show_default=True, help="Component vectors.")
@click.option("--k", "k", type=click.IntRange(min=1), default=2, show_default=True, help="Hash functions.")
@click.option("--d", "d", type=click.IntRange(min=1), default=20, show_default=True, help="Component dimension.")
@click.option("--ngrams", type=click.IntRange(min=1), default=2, show_default=True)
@click.option("--vocab-size", type=click.IntRange(min=1), default=1_000_000, show_default=True)
@click.option("--append-importance", is_flag=True, help="Concatenate importance rows to token vectors.")
@click.option("--separate-importance-hash", is_flag=True, help="Index importance rows with an independent hash.")
@click.option("--seed", type=click.IntRange(min=0), envvar="HASHEMB_SEED", default=settings.DEFAULT_SEED, show_default=True)
@click.option("--batch-size", type=click.IntRange(min=1), default=256, show_default=True)
@click.option("--max-epochs", type=click.IntRange(min=1), default=100, show_default=True)
@click.option("--patience", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--val-fraction", type=float, default=0.05, show_default=True)
@click.option("--alpha", type=float, default=0.001, show_default=True, help="Adam learning rate.")
@click.option("--snippets/--no-snippets", default=True, show_default=True, help="Train on random 4-100 token snippets.")
@click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True, help="Evaluation threads.")
@click.option("--out", type=click.Path(file_okay=False), default="runs/latest", show_default=True)
@click.option("--report/--no-report", default=True, show_default=True, help="Write history.html.")
@_guard
def train(**opts: Any) -> None:
    """Train a classifier and write model.hemb, manifest.json and history.jsonl."""
    manifest = _run_train(opts)
    _report_run(manifest, Path(opts["out"]))


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False), required=True)
@_guard
def reproduce(manifest_path: str, out: str) -> None:
    """Rerun the training recorded in MANIFEST_PATH and check the model digest."""
    recorded = RunManifest.model_validate_json(Path(manifest_path).read_text(encoding="utf-8"))
    opts = dict(recorded.config, out=out)
    manifest = _run_train(opts)
    _report_run(manifest, Path(out))
    same = manifest.model_digest == recorded.model_digest
    _echo_pairs({"reproduced": str(same).lower()})
    if not same:
        raise click.ClickException(
            f"model digest {manifest.model_digest} differs from recorded {recorded.model_digest}"
        )


# ── evaluate ─────────────────────────────────────────────────────────────────

@main.command()
@click.option("--model", "model_paths", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False), help="Model bundle; repeat for an ensemble.")
@click.option("--test", "test_path", type=click.Path(dir_okay=False), default=None, help="Zhang-format test CSV.")
@click.option("--data", default=None, help="Catalog name or directory; its test.csv is used.")
@click.option("--data-root", default=settings.DATA_ROOT, show_default=True)
@click.option("--classes", type=click.IntRange(min=2), default=None)
@click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="Also print a JSON record.")
@_guard
def evaluate(model_paths, test_path, data, data_root, classes, threads, as_json) -> None:
    """Accuracy and confusion counts; several --model flags add soft voting."""
    if (test_path is None) == (data is None):
        raise click.UsageError("give exactly one of --test or --data")
    models = [load_model(p) for p in model_paths]
    if data is not None:
        files = resolve_dataset(data, data_root, classes)
        test_path, classes = files.test, files.num_classes
    dataset = load_dataset(test_path, classes or models[0].num_classes)

    record: Dict[str, Any] = {"test": str(test_path)}
    if len(models) == 1:
        accuracy = evaluate_model(models[0], dataset, threads=threads)
        frame = confusion_counts(models[0], dataset)
    else:
        for i, (path, model) in enumerate(zip(model_paths, models)):
            record[f"member_{i}_accuracy"] = evaluate_model(model, dataset, threads=threads)
            log.info("member %d (%s): %.4f", i, path, record[f"member_{i}_accuracy"])
        probs = ensemble_proba(models, dataset)
        predicted = probs.argmax(axis=1)
        accuracy = float((predicted == dataset.labels).mean())
        frame = confusion_frame(dataset.labels, predicted, dataset.num_classes)
    record["accuracy"] = accuracy

    _echo_pairs({k: f"{v:.4f}" if isinstance(v, float) else v for k, v in record.items()})
    click.echo(frame.to_string())
    if as_json:
        record["confusion"] = frame.to_numpy().tolist()
        click.echo(json.dumps(record))


# ── inspect ──────────────────────────────────────────────────────────────────

def _importance_table(title: str, entries: List[ImportanceEntry]) -> Table:
    table = Table(title=title)
    table.add_column("rank", justify="right")
    table.add_column("token")
    table.add_column("importance")
    table.add_column("magnitude", justify="right")
    for rank, e in enumerate(entries, start=1):
        row = ", ".join(f"{v:+.4f}" for v in e.importance)
        table.add_row(str(rank), e.token, f"[{row}]", f"{e.magnitude:.4f}")
    return table


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--vocab", "vocab_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="vocab.tsv; defaults to the token table stored in the model.")
@click.option("--n", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--json", "as_json", is_flag=True)
@_guard
def inspect(model_path, vocab_path, n, as_json) -> None:
    """Tokens with the largest and smallest importance parameters."""
    model = load_model(model_path)
    if vocab_path is not None:
        vocab = load_vocab(vocab_path)
    else:
        table = {t: i for t, i in model.embedding.id_map.table.items() if i != UNKNOWN_ID}
        vocab = Vocabulary(table=table, max_size=max(len(table), 1))
    top = top_importance(model, vocab, n, "largest")
    bottom = top_importance(model, vocab, n, "smallest")
    console.print(_importance_table("Important tokens", top))
    console.print(_importance_table("Unimportant tokens", bottom))
    if as_json:
        for order, entries in (("largest", top), ("smallest", bottom)):
            for e in entries:
                click.echo(json.dumps({"order": order, "token": e.token,
                                       "importance": e.importance, "magnitude": e.magnitude}))


# ── analytics ────────────────────────────────────────────────────────────────

@main.command("collision-stats")
@click.option("--K", "K", type=click.IntRange(min=1), default=None, help="Hash range (defaults to --B).")
@click.option("--vocab", "vocab_size", type=click.IntRange(min=1), required=True, help="Vocabulary size |T|.")
@click.option("--B", "B", type=click.IntRange(min=1), default=None, help="Buckets per component hash.")
@click.option("--k", "k", type=click.IntRange(min=1), default=None, help="Number of component hashes.")
@click.option("--important", type=click.IntRange(min=1), default=None, help="Tokens that carry weight.")
@click.option("--simulate", is_flag=True, help="Add a Monte Carlo estimate.")
@click.option("--trials", type=click.IntRange(min=2), default=200, show_default=True)
@click.option("--seed", type=click.IntRange(min=0), envvar="HASHEMB_SEED", default=settings.DEFAULT_SEED)
@click.option("--json", "as_json", is_flag=True)
@_guard
def collision_stats(K, vocab_size, B, k, important, simulate, trials, seed, as_json) -> None:
    """Collision probability, expected collisions and the k-hash combined range."""
    if K is None and B is None:
        raise click.UsageError("give --K, --B or both")
    report = collision_report(
        K if K is not None else B,
        vocab_size,
        B=B,
        k=k,
        important=important,
        simulate=simulate,
        trials=trials,
        seed=seed,
    )
    record = report.as_dict()
    _echo_pairs(record)
    if as_json:
        click.echo(json.dumps(record))


@main.command()
@click.option("--K", "K", type=click.IntRange(min=1), required=True)
@click.option("--B", "B", type=click.IntRange(min=1), required=True)
@click.option("--k", "k", type=click.IntRange(min=1), default=2, show_default=True)
@click.option("--d", "d", type=click.IntRange(min=1), required=True)
@click.option("--grow-to", type=click.IntRange(min=1), default=None, help="Second K for a vocabulary-growth delta.")
@click.option("--members", type=click.IntRange(min=1), default=1, show_default=True, help="Ensemble size.")
@_guard
def params(K, B, k, d, grow_to, members) -> None:
    """Hash embedding (B*d + K*k) against standard embedding (K*d) parameter counts."""
    hashed = parameter_count(EmbeddingConfig(K=K, B=B, k=k, d=d))
    standard = K * d
    pairs: Dict[str, Any] = {
        "hash_embedding": hashed,
        "standard_embedding": standard,
        "ratio": standard / hashed,
    }
    if grow_to is not None:
        pairs["hash_embedding_delta"] = (grow_to - K) * k
        pairs["standard_embedding_delta"] = (grow_to - K) * d
    if members > 1:
        pairs["ensemble_hash_embedding"] = members * hashed
    _echo_pairs(pairs)

    table = Table(title="Embedding parameters")
    table.add_column("quantity")
    table.add_column("value", justify="right")
    for key, value in pairs.items():
        table.add_row(key, f"{value:,.2f}" if isinstance(value, float) else f"{value:,}")
    console.print(table)
