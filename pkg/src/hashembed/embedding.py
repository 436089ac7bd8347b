# src/hashembed/embedding.py
"""
Hash embeddings: a shared pool E of B component vectors and an importance
table P with one row of k weights per id.

A token w is embedded as

    e_w = sum_i P[id(w), i] * E[bucket_i(id(w))]

optionally followed by the importance row itself. The standard embedding
and the hashing trick are both special cases (see `as_standard_embedding`
and `as_hashing_trick`).
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from typing import BinaryIO, Dict, List, Literal, Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, ValidationError, model_validator

from .errors import FormatError, InputDomainError, ResourceError, UnsupportedModeError
from .hashing import (
    DICTIONARY,
    HASHED,
    MASK64,
    UNKNOWN_ID,
    BucketMapper,
    HashSeed,
    TokenIdMap,
    buckets_for_ids,
    derive_seeds,
    ids_for_tokens,
)

log = logging.getLogger(__name__)

MAGIC = b"HEMB"
FORMAT_VERSION = 1


class EmbeddingConfig(BaseModel):
    """Shape and wiring of a hash embedding."""
    model_config = ConfigDict(frozen=True)

    K: PositiveInt
    B: PositiveInt
    k: PositiveInt
    d: PositiveInt
    id_mode: Literal["dictionary", "hashed"] = HASHED
    append_importance: bool = False
    separate_importance_hash: bool = False
    # both special cases pin P to ones
    trainable_importance: bool = True
    identity_buckets: bool = False
    hash_unknown: bool = False
    seed: int = Field(default=0, ge=0, le=MASK64)

    @model_validator(mode="after")
    def _identity_fits(self) -> "EmbeddingConfig":
        if self.identity_buckets and (self.k != 1 or self.B < self.K):
            raise ValueError("identity_buckets requires k == 1 and B >= K")
        return self

    @property
    def output_dim(self) -> int:
        return self.d + self.k if self.append_importance else self.d


@dataclass
class RowGrad:
    """Coalesced row-sparse values: `values[j]` belongs to row `rows[j]` (rows unique, sorted)."""
    rows: np.ndarray
    values: np.ndarray

    @staticmethod
    def empty(width: int, dtype=np.float64) -> "RowGrad":
        return RowGrad(np.empty(0, dtype=np.int64), np.empty((0, width), dtype=dtype))

    def scaled(self, factor: float) -> "RowGrad":
        return RowGrad(self.rows, self.values * factor)


@dataclass
class SparseGrad:
    """Gradient (or update) touching only some rows of E and P."""
    e_rows: RowGrad
    p_rows: RowGrad

    def scaled(self, factor: float) -> "SparseGrad":
        return SparseGrad(self.e_rows.scaled(factor), self.p_rows.scaled(factor))


@dataclass
class TokenIndex:
    """Precomputed lookups for a token sequence: P rows (n,) and E rows (n, k)."""
    rows: np.ndarray
    buckets: np.ndarray

    def __len__(self) -> int:
        return len(self.rows)

    def take(self, positions: np.ndarray) -> "TokenIndex":
        return TokenIndex(self.rows[positions], self.buckets[positions])


@dataclass
class HashEmbedding:
    config: EmbeddingConfig
    E: np.ndarray
    P: np.ndarray
    seeds: List[HashSeed]
    mapper: BucketMapper
    id_map: TokenIdMap
    importance_id_map: TokenIdMap

    @property
    def output_dim(self) -> int:
        return self.config.output_dim

    @property
    def dtype(self):
        return self.E.dtype


# ── Construction ─────────────────────────────────────────────────────────────

def parameter_count(config: EmbeddingConfig) -> int:
    """Trainable parameters: B*d + K*k, or B*d when P is pinned."""
    count = config.B * config.d
    if config.trainable_importance:
        count += config.K * config.k
    return count


def _assemble(
    config: EmbeddingConfig,
    seeds: List[HashSeed],
    E: np.ndarray,
    P: np.ndarray,
    table: Mapping[str, int],
) -> HashEmbedding:
    k = config.k
    id_map = TokenIdMap(
        mode=config.id_mode,
        K=config.K,
        seed=seeds[k],
        table=dict(table),
        hash_unknown=config.hash_unknown,
    )
    if config.separate_importance_hash:
        importance_id_map = TokenIdMap(mode=HASHED, K=config.K, seed=seeds[k + 1])
    else:
        importance_id_map = id_map
    mapper = BucketMapper(
        seeds=list(seeds[:k]),
        B=config.B,
        K=config.K,
        identity=config.identity_buckets,
    )
    return HashEmbedding(
        config=config,
        E=E,
        P=P,
        seeds=list(seeds),
        mapper=mapper,
        id_map=id_map,
        importance_id_map=importance_id_map,
    )


def _reserves_unknown_row(config: EmbeddingConfig) -> bool:
    return (
        config.id_mode == DICTIONARY
        and config.trainable_importance
        and not config.hash_unknown
        and not config.separate_importance_hash
    )


def new_hash_embedding(
    config: EmbeddingConfig,
    init_seed: int,
    vocabulary: Optional[Mapping[str, int]] = None,
    dtype=np.float32,
) -> HashEmbedding:
    """
    Build a hash embedding with k+2 seeds derived from `init_seed`.

    E is drawn i.i.d. uniform on (-1/d, 1/d); P starts at 1 so that step 0
    behaves like an unweighted multi-hash embedding. In dictionary mode the
    reserved unknown row starts at 0, unless unknown tokens are hashed or
    importance is looked up through its own hash.

    Args:
        config: shape and wiring; its seed field is replaced by `init_seed`
        init_seed: base seed for hash functions and parameter init
        vocabulary: token -> id table, dictionary id mode only
        dtype: parameter dtype (float32 for storage, float64 for gradient checks)
    """
    config = config.model_copy(update={"seed": init_seed})
    if config.id_mode == HASHED and vocabulary:
        raise InputDomainError("a vocabulary only applies to dictionary id mode")
    seeds = derive_seeds(init_seed, config.k + 2)
    rng = np.random.default_rng(np.random.SeedSequence(init_seed, spawn_key=(1,)))
    d = config.d
    try:
        E = rng.uniform(-1.0 / d, 1.0 / d, size=(config.B, d)).astype(dtype)
        P = np.ones((config.K, config.k), dtype=dtype)
    except MemoryError as exc:
        itemsize = np.dtype(dtype).itemsize
        raise ResourceError((config.B * d + config.K * config.k) * itemsize) from exc
    if _reserves_unknown_row(config):
        P[UNKNOWN_ID] = 0
    log.debug(
        "hash embedding K=%d B=%d k=%d d=%d (%d trainable parameters)",
        config.K, config.B, config.k, d, parameter_count(config),
    )
    return _assemble(config, seeds, E, P, vocabulary or {})


def as_hashing_trick(B: int, d: int, seed: int) -> HashEmbedding:
    """k=1, fixed unit importance, token hashed straight to one of B buckets."""
    config = EmbeddingConfig(
        K=B, B=B, k=1, d=d,
        id_mode=HASHED,
        trainable_importance=False,
        identity_buckets=True,
    )
    return new_hash_embedding(config, seed)


def as_standard_embedding(vocab: Sequence[str], d: int, init_seed: int) -> HashEmbedding:
    """
    One dedicated row per vocabulary entry, in list order.

    Args:
        vocab: tokens in row order. Row 0 doubles as the row every
            unenrolled token reads, so put an unknown placeholder such as
            "<unk>" first unless the first word should absorb them.
        d: embedding dimension
        init_seed: seed for E
    """
    table: Dict[str, int] = {}
    for i, token in enumerate(vocab):
        if token in table:
            raise InputDomainError(f"duplicate vocabulary token {token!r}")
        table[token] = i
    if not table:
        raise InputDomainError("standard embedding needs a non-empty vocabulary")
    n = len(table)
    config = EmbeddingConfig(
        K=n, B=n, k=1, d=d,
        id_mode=DICTIONARY,
        trainable_importance=False,
        identity_buckets=True,
    )
    return new_hash_embedding(config, init_seed, vocabulary=table)


def astype(emb: HashEmbedding, dtype) -> HashEmbedding:
    """Copy of `emb` with parameters cast to `dtype` (hash wiring shared)."""
    return HashEmbedding(
        config=emb.config,
        E=emb.E.astype(dtype),
        P=emb.P.astype(dtype),
        seeds=list(emb.seeds),
        mapper=emb.mapper,
        id_map=emb.id_map,
        importance_id_map=emb.importance_id_map,
    )


# ── Forward / backward ───────────────────────────────────────────────────────

def index_tokens(emb: HashEmbedding, tokens: Sequence[str]) -> TokenIndex:
    ids = ids_for_tokens(emb.id_map, tokens)
    buckets = buckets_for_ids(emb.mapper, ids)
    if emb.importance_id_map is emb.id_map:
        rows = ids
    else:
        rows = ids_for_tokens(emb.importance_id_map, tokens)
    return TokenIndex(rows=rows, buckets=buckets.reshape(len(ids), emb.config.k))


def bag_forward(
    emb: HashEmbedding, index: TokenIndex, segments: np.ndarray, num_bags: int
) -> np.ndarray:
    """Sum token embeddings into `num_bags` bags; token j goes to bag segments[j]."""
    weights = emb.P[index.rows]
    comps = emb.E[index.buckets]
    vecs = np.einsum("nk,nkd->nd", weights, comps)
    if emb.config.append_importance:
        vecs = np.concatenate([vecs, weights], axis=1)
    out = np.zeros((num_bags, emb.output_dim), dtype=emb.dtype)
    np.add.at(out, segments, vecs)
    return out


def _coalesce(rows: np.ndarray, values: np.ndarray) -> RowGrad:
    uniq, inverse = np.unique(rows, return_inverse=True)
    acc = np.zeros((len(uniq), values.shape[1]), dtype=values.dtype)
    np.add.at(acc, inverse.reshape(-1), values)
    return RowGrad(uniq, acc)


def bag_backward(
    emb: HashEmbedding, index: TokenIndex, segments: np.ndarray, upstream: np.ndarray
) -> SparseGrad:
    """
    Gradients of sum_b <upstream[b], bag_forward(...)[b]> with respect to E and P.

    Repeated tokens accumulate.
    """
    cfg = emb.config
    g = upstream[segments]
    g_e = g[:, : cfg.d]
    weights = emb.P[index.rows]
    comps = emb.E[index.buckets]

    e_vals = weights[:, :, None] * g_e[:, None, :]
    e_rows = _coalesce(index.buckets.reshape(-1), e_vals.reshape(-1, cfg.d))

    if not cfg.trainable_importance:
        return SparseGrad(e_rows, RowGrad.empty(cfg.k, dtype=e_vals.dtype))
    p_vals = np.einsum("nkd,nd->nk", comps, g_e)
    if cfg.append_importance:
        p_vals = p_vals + g[:, cfg.d:]
    return SparseGrad(e_rows, _coalesce(index.rows, p_vals))


def embed_token(emb: HashEmbedding, token: str) -> np.ndarray:
    return embed_bag(emb, [token])


def embed_bag(emb: HashEmbedding, tokens: Sequence[str]) -> np.ndarray:
    index = index_tokens(emb, tokens)
    segments = np.zeros(len(index), dtype=np.int64)
    return bag_forward(emb, index, segments, 1)[0]


def backward_bag(
    emb: HashEmbedding, tokens: Sequence[str], upstream_grad: np.ndarray
) -> SparseGrad:
    upstream_grad = np.asarray(upstream_grad)
    if upstream_grad.shape != (emb.output_dim,):
        raise InputDomainError(
            f"upstream gradient has shape {upstream_grad.shape}, expected ({emb.output_dim},)"
        )
    index = index_tokens(emb, tokens)
    segments = np.zeros(len(index), dtype=np.int64)
    return bag_backward(emb, index, segments, upstream_grad.reshape(1, -1))


def apply_sparse_update(emb: HashEmbedding, update: SparseGrad) -> None:
    """Add row deltas in place; rows not named in `update` are left untouched."""
    cfg = emb.config
    for name, part, limit in (("E", update.e_rows, cfg.B), ("P", update.p_rows, cfg.K)):
        if len(part.rows) and (part.rows.min() < 0 or part.rows.max() >= limit):
            raise InputDomainError(f"{name} update rows outside 0..{limit - 1}")
    if len(update.p_rows.rows) and not cfg.trainable_importance:
        raise UnsupportedModeError("importance parameters are fixed for this embedding")
    if len(update.e_rows.rows):
        np.add.at(emb.E, update.e_rows.rows, update.e_rows.values.astype(emb.E.dtype))
    if len(update.p_rows.rows):
        np.add.at(emb.P, update.p_rows.rows, update.p_rows.values.astype(emb.P.dtype))


# ── Serialization ────────────────────────────────────────────────────────────
#
# "HEMB" | version u32 | K B k d seed u64 | 6 flag bytes | k+2 seeds u64
# | P f32 row-major | E f32 row-major | dictionary: count u64, (len u64, utf-8, id u64)*

_FLAGS = (
    "append_importance",
    "separate_importance_hash",
    "trainable_importance",
    "identity_buckets",
    "hash_unknown",
)


def save_embedding(emb: HashEmbedding, fh: BinaryIO) -> None:
    cfg = emb.config
    fh.write(struct.pack("<4sI", MAGIC, FORMAT_VERSION))
    fh.write(struct.pack("<5Q", cfg.K, cfg.B, cfg.k, cfg.d, cfg.seed))
    flags = [1 if cfg.id_mode == HASHED else 0] + [int(getattr(cfg, f)) for f in _FLAGS]
    fh.write(struct.pack("<6B", *flags))
    fh.write(struct.pack(f"<{len(emb.seeds)}Q", *(s.value for s in emb.seeds)))
    fh.write(np.ascontiguousarray(emb.P, dtype="<f4").tobytes())
    fh.write(np.ascontiguousarray(emb.E, dtype="<f4").tobytes())
    if cfg.id_mode == DICTIONARY:
        table = sorted(emb.id_map.table.items(), key=lambda item: item[1])
        fh.write(struct.pack("<Q", len(table)))
        for token, idx in table:
            raw = token.encode("utf-8")
            fh.write(struct.pack("<Q", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<Q", idx))


def _read(fh: BinaryIO, size: int) -> bytes:
    data = fh.read(size)
    if len(data) != size:
        raise FormatError(f"truncated embedding data: wanted {size} bytes, got {len(data)}")
    return data


def _read_matrix(fh: BinaryIO, rows: int, cols: int) -> np.ndarray:
    raw = _read(fh, rows * cols * 4)
    return np.frombuffer(raw, dtype="<f4").reshape(rows, cols).astype(np.float32)


def load_embedding(fh: BinaryIO) -> HashEmbedding:
    magic, version = struct.unpack("<4sI", _read(fh, 8))
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(
            f"unsupported embedding format version {version}, expected {FORMAT_VERSION}"
        )
    K, B, k, d, seed = struct.unpack("<5Q", _read(fh, 40))
    flags = struct.unpack("<6B", _read(fh, 6))
    options = {name: bool(v) for name, v in zip(_FLAGS, flags[1:])}
    try:
        config = EmbeddingConfig(
            K=K, B=B, k=k, d=d, seed=seed,
            id_mode=HASHED if flags[0] else DICTIONARY,
            **options,
        )
    except ValidationError as exc:
        raise FormatError(f"invalid embedding header: {exc.error_count()} bad field(s)") from exc
    seeds = [HashSeed(v) for v in struct.unpack(f"<{k + 2}Q", _read(fh, 8 * (k + 2)))]
    P = _read_matrix(fh, K, k)
    E = _read_matrix(fh, B, d)
    table: Dict[str, int] = {}
    if config.id_mode == DICTIONARY:
        (count,) = struct.unpack("<Q", _read(fh, 8))
        for _ in range(count):
            (length,) = struct.unpack("<Q", _read(fh, 8))
            try:
                token = _read(fh, length).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise FormatError(f"token table entry is not valid UTF-8: {exc.reason}") from exc
            (idx,) = struct.unpack("<Q", _read(fh, 8))
            table[token] = idx
    return _assemble(config, seeds, E, P, table)
