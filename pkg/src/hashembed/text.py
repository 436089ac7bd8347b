# src/hashembed/text.py
"""
Text side of the pipeline: tokenization, n-grams, snippet sampling,
Zhang-format CSV datasets and frequency vocabularies.
"""
from __future__ import annotations

import csv
import logging
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import pandas as pd

from .errors import DataValidationError, InputDomainError, ParseError

log = logging.getLogger(__name__)

T = TypeVar("T")

MIN_SNIPPET = 4
MAX_SNIPPET = 100
NGRAM_JOIN = "_"


# ── Tokens ───────────────────────────────────────────────────────────────────

class _StripTable(dict):
    """str.translate table deleting Unicode punctuation (P*) and symbols (S*)."""

    def __missing__(self, codepoint: int):
        keep = unicodedata.category(chr(codepoint))[0] not in "PS"
        value = codepoint if keep else None
        self[codepoint] = value
        return value


_STRIP = _StripTable()


def tokenize(text: str) -> List[str]:
    """Lowercased whitespace-separated words with punctuation and symbols removed."""
    return text.translate(_STRIP).lower().split()


def ngrams(words: Sequence[str], n_max: int) -> List[str]:
    """All unigrams in document order, then all bigrams, and so on up to n_max."""
    if n_max < 1:
        raise InputDomainError(f"n_max must be >= 1, got {n_max}")
    return [
        NGRAM_JOIN.join(words[i:i + n])
        for n in range(1, n_max + 1)
        for i in range(len(words) - n + 1)
    ]


def document_tokens(text: str, n_max: int) -> List[str]:
    return ngrams(tokenize(text), n_max)


def snippet_bounds(length: int, rng: np.random.Generator) -> Tuple[int, int]:
    """[start, stop) of a random run of 4..100 consecutive tokens (whole doc if <= 4)."""
    if length <= MIN_SNIPPET:
        return 0, length
    size = min(int(rng.integers(MIN_SNIPPET, MAX_SNIPPET + 1)), length)
    start = int(rng.integers(0, length - size + 1))
    return start, start + size


def sample_snippet(tokens: Sequence[T], rng: np.random.Generator) -> Sequence[T]:
    start, stop = snippet_bounds(len(tokens), rng)
    return tokens[start:stop]


# ── Datasets ─────────────────────────────────────────────────────────────────

@dataclass
class Sample:
    label: int
    text: str


@dataclass
class Dataset:
    samples: List[Sample]
    num_classes: int
    name: str = ""

    def __post_init__(self):
        if not self.samples:
            raise DataValidationError(f"dataset {self.name!r} is empty")
        if self.num_classes < 1:
            raise DataValidationError(f"num_classes must be positive, got {self.num_classes}")
        for i, s in enumerate(self.samples):
            if not 0 <= s.label < self.num_classes:
                raise DataValidationError(
                    f"sample {i} of {self.name!r} has label {s.label}, "
                    f"outside 0..{self.num_classes - 1}"
                )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @property
    def texts(self) -> List[str]:
        return [s.text for s in self.samples]

    def subset(self, indices: Iterable[int], name: str) -> "Dataset":
        return Dataset([self.samples[i] for i in indices], self.num_classes, name)


@dataclass(frozen=True)
class DatasetInfo:
    name: str
    num_classes: int
    train_size: int
    test_size: int
    task: str


# The seven benchmark sets distributed in the Zhang et al. CSV layout.
CATALOG: Dict[str, DatasetInfo] = {
    info.name: info
    for info in (
        DatasetInfo("ag_news", 4, 120_000, 7_600, "news categorization"),
        DatasetInfo("dbpedia", 14, 560_000, 70_000, "ontology classification"),
        DatasetInfo("yelp_review_polarity", 2, 560_000, 38_000, "sentiment analysis"),
        DatasetInfo("yelp_review_full", 5, 650_000, 50_000, "sentiment analysis"),
        DatasetInfo("yahoo_answers", 10, 1_400_000, 60_000, "topic classification"),
        DatasetInfo("amazon_review_full", 5, 3_000_000, 650_000, "sentiment analysis"),
        DatasetInfo("amazon_review_polarity", 2, 3_600_000, 400_000, "sentiment analysis"),
    )
}


@dataclass
class DatasetFiles:
    name: str
    train: Path
    test: Path
    num_classes: int


def resolve_dataset(
    name_or_dir: str, root: str, num_classes: Optional[int] = None
) -> DatasetFiles:
    """
    Find train.csv/test.csv for a catalog name (under `root`) or a directory.

    The class count comes from, in order: the explicit argument, the catalog,
    the directory's classes.txt.
    """
    info = CATALOG.get(name_or_dir)
    directory = Path(root) / name_or_dir if info else Path(name_or_dir)
    if num_classes is None and info is not None:
        num_classes = info.num_classes
    if num_classes is None:
        classes = directory / "classes.txt"
        if not classes.exists():
            raise DataValidationError(
                f"cannot tell the class count of {name_or_dir!r}: not in the catalog "
                f"and {classes} is missing"
            )
        num_classes = sum(1 for line in classes.read_text(encoding="utf-8").splitlines() if line.strip())
    return DatasetFiles(
        name=info.name if info else directory.name,
        train=directory / "train.csv",
        test=directory / "test.csv",
        num_classes=num_classes,
    )


_LINE_RX = re.compile(r"line (\d+)")


def load_dataset(path, num_classes: int, name: Optional[str] = None) -> Dataset:
    """
    Parse a Zhang-format CSV: "class","field",... with 1-based classes.

    Text fields are joined with a space; literal backslash-n sequences
    become spaces.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(
            path,
            header=None,
            dtype=str,
            keep_default_na=False,
            quotechar='"',
            doublequote=True,
        )
    except pd.errors.EmptyDataError as exc:
        raise ParseError(path, 1, "file is empty") from exc
    except pd.errors.ParserError as exc:
        m = _LINE_RX.search(str(exc))
        raise ParseError(path, int(m.group(1)) if m else 0, str(exc)) from exc

    if frame.shape[1] < 2:
        raise ParseError(path, 1, "expected a class field and at least one text field")
    short = frame.isna().any(axis=1).to_numpy()
    if short.any():
        line = int(np.flatnonzero(short)[0]) + 1
        raise ParseError(path, line, f"expected {frame.shape[1]} fields")

    raw_labels = frame[0].str.strip()
    labels = pd.to_numeric(raw_labels, errors="coerce")
    bad = labels.isna() | (labels != labels.round())
    if bad.any():
        line = int(np.flatnonzero(bad.to_numpy())[0]) + 1
        raise ParseError(path, line, f"class field {raw_labels.iloc[line - 1]!r} is not an integer")
    labels = labels.astype(np.int64) - 1
    out_of_range = (labels < 0) | (labels >= num_classes)
    if out_of_range.any():
        line = int(np.flatnonzero(out_of_range.to_numpy())[0]) + 1
        raise DataValidationError(
            f"{path}:{line}: class {labels.iloc[line - 1] + 1} outside 1..{num_classes}"
        )

    text = frame[1]
    for col in frame.columns[2:]:
        text = text + " " + frame[col]
    text = text.str.replace("\\n", " ", regex=False)

    samples = [Sample(int(lbl), t) for lbl, t in zip(labels, text)]
    dataset = Dataset(samples, num_classes, name or path.stem)
    log.info("loaded %d samples (%d classes) from %s", len(dataset), num_classes, path)
    return dataset


def save_dataset(dataset: Dataset, path) -> None:
    frame = pd.DataFrame(
        {"label": [s.label + 1 for s in dataset.samples], "text": dataset.texts}
    )
    frame.to_csv(path, header=False, index=False, quoting=csv.QUOTE_ALL)


def split_validation(dataset: Dataset, fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """
    Shuffle-split into (train, validation); validation gets round(n * fraction)
    samples, clamped so both sides are non-empty. File order is kept inside
    each side.
    """
    if not 0.0 < fraction < 1.0:
        raise InputDomainError(f"fraction must be in (0, 1), got {fraction}")
    n = len(dataset)
    if n < 2:
        raise InputDomainError("need at least two samples to split")
    n_val = min(max(int(round(n * fraction)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    return (
        dataset.subset(train_idx.tolist(), f"{dataset.name}/train"),
        dataset.subset(val_idx.tolist(), f"{dataset.name}/validation"),
    )


# ── Vocabulary ───────────────────────────────────────────────────────────────

@dataclass
class Vocabulary:
    """Token -> id table; ids are dense in 1..len, 0 is the unknown id."""
    table: Dict[str, int] = field(default_factory=dict)
    max_size: int = 1
    n_max: int = 1

    def __len__(self) -> int:
        return len(self.table)

    def tokens(self) -> List[str]:
        """Tokens in id order."""
        return [t for t, _ in sorted(self.table.items(), key=lambda item: item[1])]


def build_vocab(corpus: Iterable[str], n_max: int, max_size: int) -> Vocabulary:
    """
    Keep the max_size most frequent n-grams (n <= n_max) of `corpus`.

    Ties keep first-occurrence order.
    """
    if max_size < 1:
        raise InputDomainError(f"max_size must be >= 1, got {max_size}")
    counts: Counter = Counter()
    for text in corpus:
        counts.update(document_tokens(text, n_max))
    # sorted() is stable, so equal counts stay in first-seen order
    ranked = sorted(counts.items(), key=lambda item: item[1], reverse=True)[:max_size]
    table = {token: i + 1 for i, (token, _) in enumerate(ranked)}
    log.info("vocabulary: kept %d of %d distinct n-grams", len(table), len(counts))
    return Vocabulary(table=table, max_size=max_size, n_max=n_max)


def save_vocab(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for token in vocab.tokens():
            fh.write(f"{token}\t{vocab.table[token]}\n")


def load_vocab(path) -> Vocabulary:
    table: Dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            token, sep, idx = line.rpartition("\t")
            if not sep or not idx.isdigit():
                raise ParseError(path, lineno, "expected token<TAB>id")
            table[token] = int(idx)
    n_max = max((t.count(NGRAM_JOIN) + 1 for t in table), default=1)
    return Vocabulary(table=table, max_size=max(len(table), 1), n_max=n_max)
