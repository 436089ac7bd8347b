# src/hashembed/model.py
"""
Shallow bag-of-n-grams classifier on top of a hash embedding.

    probs = softmax(W @ sum_w e_w + bias)

plus the training loop (Adam, snippet sampling, early stopping on
validation loss), evaluation, soft-voting ensembles and importance
inspection.
"""
from __future__ import annotations

import hashlib
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, PositiveFloat, PositiveInt

from . import config as settings
from .embedding import (
    HashEmbedding,
    SparseGrad,
    TokenIndex,
    astype as embedding_astype,
    bag_backward,
    bag_forward,
    index_tokens,
    load_embedding,
    save_embedding,
)
from .errors import DataValidationError, FormatError, InputDomainError, UnsupportedModeError
from .hashing import DICTIONARY, token_to_id
from .optim import AdamState, adam_step
from .text import Dataset, Vocabulary, document_tokens, snippet_bounds, split_validation

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class TrainConfig(BaseModel):
    patience: PositiveInt = 10
    val_fraction: float = Field(default=0.05, gt=0.0, lt=1.0)
    batch_size: PositiveInt = 256
    max_epochs: PositiveInt = 100
    seed: int = Field(default=0, ge=0)
    snippets: bool = True
    alpha: PositiveFloat = 0.001
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    epsilon: PositiveFloat = 1e-8


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float


@dataclass
class TrainHistory:
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best(self) -> EpochRecord:
        return self.records[self.best_epoch - 1]


@dataclass
class LinearClassifier:
    """Hash embedding + one dense softmax layer; `ngrams` is the n-gram order the model reads."""
    embedding: HashEmbedding
    W: np.ndarray
    bias: np.ndarray
    ngrams: int = 1

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]


@dataclass
class Gradients:
    W: np.ndarray
    bias: np.ndarray
    embedding: SparseGrad

    def as_mapping(self) -> Dict[str, object]:
        grads: Dict[str, object] = {"W": self.W, "bias": self.bias, "E": self.embedding.e_rows}
        if len(self.embedding.p_rows.rows):
            grads["P"] = self.embedding.p_rows
        return grads


def new_classifier(
    embedding: HashEmbedding, num_classes: int, seed: int, ngrams: int = 1
) -> LinearClassifier:
    """W is Glorot-uniform, bias zero."""
    if num_classes < 2:
        raise InputDomainError(f"need at least 2 classes, got {num_classes}")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    e_dim = embedding.output_dim
    limit = math.sqrt(6.0 / (num_classes + e_dim))
    W = rng.uniform(-limit, limit, size=(num_classes, e_dim)).astype(embedding.dtype)
    bias = np.zeros(num_classes, dtype=embedding.dtype)
    return LinearClassifier(embedding=embedding, W=W, bias=bias, ngrams=ngrams)


def astype(model: LinearClassifier, dtype) -> LinearClassifier:
    return LinearClassifier(
        embedding=embedding_astype(model.embedding, dtype),
        W=model.W.astype(dtype),
        bias=model.bias.astype(dtype),
        ngrams=model.ngrams,
    )


def trainable_params(model: LinearClassifier) -> Dict[str, np.ndarray]:
    params = {"W": model.W, "bias": model.bias, "E": model.embedding.E}
    if model.embedding.config.trainable_importance:
        params["P"] = model.embedding.P
    return params


# ── Batches ──────────────────────────────────────────────────────────────────

@dataclass
class Batch:
    index: TokenIndex
    segments: np.ndarray
    labels: np.ndarray

    @property
    def size(self) -> int:
        return len(self.labels)


@dataclass
class EncodedDataset:
    """All documents' token lookups in one flat index; doc i spans offsets[i]:offsets[i+1]."""
    index: TokenIndex
    offsets: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __len__(self) -> int:
        return len(self.labels)

    def batch(self, docs: np.ndarray, rng: Optional[np.random.Generator] = None) -> Batch:
        """Gather documents; with `rng`, each one is cut down to a random snippet."""
        docs = np.asarray(docs, dtype=np.int64)
        starts = self.offsets[docs].copy()
        lengths = self.offsets[docs + 1] - starts
        if rng is not None:
            for j, length in enumerate(lengths):
                lo, hi = snippet_bounds(int(length), rng)
                starts[j] += lo
                lengths[j] = hi - lo
        segments = np.repeat(np.arange(len(docs)), lengths)
        first = np.cumsum(lengths) - lengths
        positions = np.arange(int(lengths.sum())) - np.repeat(first, lengths) + np.repeat(starts, lengths)
        return Batch(self.index.take(positions), segments, self.labels[docs])


def encode_tokens(
    embedding: HashEmbedding, documents: Sequence[Sequence[str]], labels: np.ndarray, num_classes: int
) -> EncodedDataset:
    """Index token documents, hashing each distinct token once."""
    codes: Dict[str, int] = {}
    flat: List[int] = []
    offsets = np.zeros(len(documents) + 1, dtype=np.int64)
    for i, tokens in enumerate(documents):
        flat.extend(codes.setdefault(t, len(codes)) for t in tokens)
        offsets[i + 1] = len(flat)
    unique = index_tokens(embedding, list(codes))
    log.debug("encoded %d documents, %d distinct tokens", len(documents), len(codes))
    return EncodedDataset(
        index=unique.take(np.asarray(flat, dtype=np.int64)),
        offsets=offsets,
        labels=np.asarray(labels, dtype=np.int64),
        num_classes=num_classes,
    )


def encode_dataset(model: LinearClassifier, dataset: Dataset) -> EncodedDataset:
    documents = [document_tokens(text, model.ngrams) for text in dataset.texts]
    return encode_tokens(model.embedding, documents, dataset.labels, dataset.num_classes)


# ── Forward / loss / backward ────────────────────────────────────────────────

def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def batch_logits(model: LinearClassifier, batch: Batch) -> Tuple[np.ndarray, np.ndarray]:
    bags = bag_forward(model.embedding, batch.index, batch.segments, batch.size)
    return bags, bags @ model.W.T + model.bias


def batch_probs(model: LinearClassifier, batch: Batch) -> np.ndarray:
    return softmax(batch_logits(model, batch)[1])


def _single(model: LinearClassifier, tokens: Sequence[str], label: int = 0) -> Batch:
    index = index_tokens(model.embedding, tokens)
    return Batch(index, np.zeros(len(index), dtype=np.int64), np.array([label], dtype=np.int64))


def forward(model: LinearClassifier, tokens: Sequence[str]) -> np.ndarray:
    """Class probabilities for one bag of (n-gram) tokens."""
    return batch_probs(model, _single(model, tokens))[0]


def predict(model: LinearClassifier, tokens: Sequence[str]) -> int:
    return int(np.argmax(forward(model, tokens)))


def cross_entropy(probs: np.ndarray, label: int) -> float:
    if not 0 <= label < len(probs):
        raise InputDomainError(f"label {label} outside 0..{len(probs) - 1}")
    return -math.log(max(float(probs[label]), PROB_FLOOR))


def batch_backward(model: LinearClassifier, batch: Batch) -> Tuple[float, Gradients]:
    """Mean cross-entropy over the batch and its gradients."""
    n = batch.size
    if np.any((batch.labels < 0) | (batch.labels >= model.num_classes)):
        raise InputDomainError(f"labels outside 0..{model.num_classes - 1}")
    bags, logits = batch_logits(model, batch)
    probs = softmax(logits)
    rows = np.arange(n)
    loss = float(-np.log(np.maximum(probs[rows, batch.labels], PROB_FLOOR)).mean())

    g = probs
    g[rows, batch.labels] -= 1.0
    g /= n
    grad_W = g.T @ bags
    grad_bias = g.sum(axis=0)
    upstream = g @ model.W
    sparse = bag_backward(model.embedding, batch.index, batch.segments, upstream)
    return loss, Gradients(W=grad_W, bias=grad_bias, embedding=sparse)


def backward(model: LinearClassifier, tokens: Sequence[str], label: int) -> Gradients:
    if not 0 <= label < model.num_classes:
        raise InputDomainError(f"label {label} outside 0..{model.num_classes - 1}")
    return batch_backward(model, _single(model, tokens, label))[1]


# ── Training ─────────────────────────────────────────────────────────────────

class EarlyStopping:
    """
    Tracks the lowest monitored value; `should_stop` once more than
    `patience` consecutive epochs have passed without improvement.
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, value: float) -> bool:
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.wait = 0
            return True
        self.wait += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.wait > self.patience


def _check_finite(model: LinearClassifier) -> None:
    for name, arr in (("E", model.embedding.E), ("P", model.embedding.P), ("W", model.W), ("bias", model.bias)):
        if not np.isfinite(arr).all():
            raise FloatingPointError(f"non-finite values in {name}")


def predict_proba(
    model: LinearClassifier, data: EncodedDataset, batch_size: int = 1024
) -> np.ndarray:
    out = np.empty((len(data), model.num_classes), dtype=np.float64)
    for start in range(0, len(data), batch_size):
        docs = np.arange(start, min(start + batch_size, len(data)))
        out[docs] = batch_probs(model, data.batch(docs))
    return out


def validation_metrics(model: LinearClassifier, data: EncodedDataset, batch_size: int = 1024) -> Tuple[float, float]:
    """(mean cross-entropy, accuracy) over whole documents."""
    probs = predict_proba(model, data, batch_size)
    rows = np.arange(len(data))
    loss = float(-np.log(np.maximum(probs[rows, data.labels], PROB_FLOOR)).mean())
    acc = float((probs.argmax(axis=1) == data.labels).mean())
    return loss, acc


def train(
    model: LinearClassifier, dataset: Dataset, config: TrainConfig
) -> Tuple[LinearClassifier, TrainHistory]:
    """
    Fit `model` in place with Adam on minibatches of fresh snippets.

    A `val_fraction` share of `dataset` is held out; after each epoch the
    validation loss drives early stopping and the parameters of the best
    epoch are restored before returning.
    """
    if dataset.num_classes != model.num_classes:
        raise DataValidationError(
            f"dataset has {dataset.num_classes} classes, model has {model.num_classes}"
        )
    train_set, val_set = split_validation(dataset, config.val_fraction, config.seed)
    enc_train = encode_dataset(model, train_set)
    enc_val = encode_dataset(model, val_set)
    log.info("training on %d samples, validating on %d", len(enc_train), len(enc_val))

    rng = np.random.default_rng(config.seed)
    state = AdamState(alpha=config.alpha, beta1=config.beta1, beta2=config.beta2, epsilon=config.epsilon)
    params = trainable_params(model)
    stopper = EarlyStopping(config.patience)
    history = TrainHistory()
    best = {name: arr.copy() for name, arr in params.items()}

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(enc_train))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            docs = order[start:start + config.batch_size]
            batch = enc_train.batch(docs, rng if config.snippets else None)
            loss, grads = batch_backward(model, batch)
            adam_step(state, params, grads.as_mapping())
            if settings.DEBUG:
                _check_finite(model)
            total += loss * len(docs)

        val_loss, val_acc = validation_metrics(model, enc_val)
        record = EpochRecord(
            epoch=epoch, train_loss=total / len(order), val_loss=val_loss, val_acc=val_acc
        )
        history.records.append(record)
        if stopper.update(epoch, val_loss):
            for name, arr in params.items():
                best[name][...] = arr
        log.info(
            "epoch %d  train_loss=%.4f  val_loss=%.4f  val_acc=%.4f  wait=%d",
            epoch, record.train_loss, val_loss, val_acc, stopper.wait,
        )
        if stopper.should_stop:
            log.info("early stop after epoch %d (best epoch %d)", epoch, stopper.best_epoch)
            break

    for name, arr in params.items():
        arr[...] = best[name]
    history.best_epoch = stopper.best_epoch
    return model, history


# ── Evaluation ───────────────────────────────────────────────────────────────

def _encoded(model: LinearClassifier, data: Union[Dataset, EncodedDataset]) -> EncodedDataset:
    if isinstance(data, EncodedDataset):
        return data
    if data.num_classes != model.num_classes:
        raise DataValidationError(
            f"dataset has {data.num_classes} classes, model has {model.num_classes}"
        )
    return encode_dataset(model, data)


def predictions(
    model: LinearClassifier, data: Union[Dataset, EncodedDataset], threads: int = 1
) -> np.ndarray:
    """Argmax class per document (ties go to the lowest index); `threads` shards the set."""
    enc = _encoded(model, data)
    if threads <= 1 or len(enc) < 2 * threads:
        return predict_proba(model, enc).argmax(axis=1)
    shards = np.array_split(np.arange(len(enc)), threads)

    def run(docs: np.ndarray) -> np.ndarray:
        return batch_probs(model, enc.batch(docs)).argmax(axis=1)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.concatenate(list(pool.map(run, shards)))


def evaluate(
    model: LinearClassifier, data: Union[Dataset, EncodedDataset], threads: int = 1
) -> float:
    enc = _encoded(model, data)
    return float((predictions(model, enc, threads) == enc.labels).mean())


def confusion_counts(model: LinearClassifier, data: Union[Dataset, EncodedDataset]) -> pd.DataFrame:
    enc = _encoded(model, data)
    return confusion_frame(enc.labels, predictions(model, enc), model.num_classes)


def confusion_frame(labels: np.ndarray, predicted: np.ndarray, num_classes: int) -> pd.DataFrame:
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, predicted), 1)
    classes = pd.Index(range(1, num_classes + 1))
    return pd.DataFrame(
        counts,
        index=classes.rename("true"),
        columns=classes.rename("predicted"),
    )


# ── Ensembles ────────────────────────────────────────────────────────────────

def _check_members(models: Sequence[LinearClassifier]) -> int:
    if not models:
        raise InputDomainError("an ensemble needs at least one model")
    classes = {m.num_classes for m in models}
    if len(classes) != 1:
        raise InputDomainError(f"ensemble members disagree on class count: {sorted(classes)}")
    return classes.pop()


def ensemble_predict(models: Sequence[LinearClassifier], tokens: Sequence[str]) -> np.ndarray:
    """Soft voting: mean of member probabilities, summed in member order."""
    _check_members(models)
    total = 0
    for model in models:
        total = total + forward(model, tokens)
    return total / len(models)


def ensemble_proba(models: Sequence[LinearClassifier], dataset: Dataset) -> np.ndarray:
    _check_members(models)
    total = 0
    for model in models:
        total = total + predict_proba(model, _encoded(model, dataset))
    return total / len(models)


def ensemble_evaluate(models: Sequence[LinearClassifier], dataset: Dataset) -> float:
    probs = ensemble_proba(models, dataset)
    return float((probs.argmax(axis=1) == dataset.labels).mean())


# ── Importance inspection ────────────────────────────────────────────────────

@dataclass
class ImportanceEntry:
    token: str
    importance: List[float]
    magnitude: float


def top_importance(
    model: LinearClassifier,
    vocab: Vocabulary,
    n: int,
    order: Literal["largest", "smallest"] = "largest",
) -> List[ImportanceEntry]:
    """
    Rank enrolled tokens by max_i |P[id, i]|; ties keep id order.
    """
    emb = model.embedding
    if emb.config.id_mode != DICTIONARY:
        raise UnsupportedModeError("importance rows cannot be traced back to tokens in hashed id mode")
    if order not in ("largest", "smallest"):
        raise InputDomainError(f"order must be 'largest' or 'smallest', got {order!r}")
    tokens = vocab.tokens()
    if not tokens:
        return []
    ids = np.array([token_to_id(emb.importance_id_map, t) for t in tokens], dtype=np.int64)
    rows = emb.P[ids].astype(np.float64)
    magnitude = np.abs(rows).max(axis=1)
    key = -magnitude if order == "largest" else magnitude
    ranked = np.argsort(key, kind="stable")[:n]
    return [ImportanceEntry(tokens[i], rows[i].tolist(), float(magnitude[i])) for i in ranked]


# ── Model bundle ─────────────────────────────────────────────────────────────

def save_model(model: LinearClassifier, path) -> None:
    """Embedding block, then (classes, e_dim, ngrams) as u64 and W, bias as f32."""
    with open(path, "wb") as fh:
        save_embedding(model.embedding, fh)
        fh.write(struct.pack("<3Q", model.num_classes, model.W.shape[1], model.ngrams))
        fh.write(np.ascontiguousarray(model.W, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(model.bias, dtype="<f4").tobytes())


def load_model(path) -> LinearClassifier:
    with open(path, "rb") as fh:
        embedding = load_embedding(fh)
        header = fh.read(24)
        if len(header) != 24:
            raise FormatError(f"{path}: missing classifier header")
        classes, e_dim, ngrams = struct.unpack("<3Q", header)
        if e_dim != embedding.output_dim:
            raise FormatError(f"{path}: classifier width {e_dim} != embedding width {embedding.output_dim}")
        size = 4 * classes * (e_dim + 1)
        raw = fh.read(size)
        if len(raw) != size:
            raise FormatError(f"{path}: truncated classifier weights")
    values = np.frombuffer(raw, dtype="<f4").astype(np.float32)
    W = values[: classes * e_dim].reshape(classes, e_dim).copy()
    bias = values[classes * e_dim:].copy()
    return LinearClassifier(embedding=embedding, W=W, bias=bias, ngrams=ngrams)


def file_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
