# src/hashembed/hashing.py
"""
Seeded hash family, the two-layer token -> id -> bucket mapping, and
collision analytics (closed form and Monte Carlo).

All indices are 0-based: ids live in {0..K-1}, buckets in {0..B-1}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import xxhash

from .errors import InputDomainError

MASK64 = 0xFFFFFFFFFFFFFFFF

DICTIONARY = "dictionary"
HASHED = "hashed"
UNKNOWN_ID = 0


@dataclass(frozen=True)
class HashSeed:
    """A 64-bit unsigned seed selecting one member of the hash family."""
    value: int

    def __post_init__(self):
        if not 0 <= self.value <= MASK64:
            raise InputDomainError(f"seed {self.value} is not a 64-bit unsigned integer")


def seeded_hash(seed: HashSeed, data: bytes) -> int:
    """xxHash64 of `data` under `seed`; stable across platforms and runs."""
    return xxhash.xxh64_intdigest(data, seed=seed.value)


def derive_seeds(base: int, count: int) -> List[HashSeed]:
    """Deterministically expand one base seed into `count` distinct seeds."""
    seq = np.random.SeedSequence(base & MASK64)
    words = 2 * count
    while True:
        state = [int(x) for x in seq.generate_state(words, dtype=np.uint64)]
        out: List[int] = []
        for value in state:
            if value not in out:
                out.append(value)
            if len(out) == count:
                return [HashSeed(v) for v in out]
        words *= 2


# ── Layer 1: token -> id ─────────────────────────────────────────────────────

@dataclass
class TokenIdMap:
    """
    Token to id function.

    mode: "dictionary" (enumerated table) or "hashed" (seeded hash mod K)
    K: id range; outputs are always in {0..K-1}
    table: token -> id, dictionary mode only (id 0 is reserved for unknowns)
    hash_unknown: dictionary mode sends unenrolled tokens through the hash
        instead of the reserved id
    """
    mode: str
    K: int
    seed: HashSeed
    table: Dict[str, int] = field(default_factory=dict)
    hash_unknown: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise InputDomainError(f"K must be positive, got {self.K}")
        if self.mode not in (DICTIONARY, HASHED):
            raise InputDomainError(f"unknown id mode {self.mode!r}")
        for token, idx in self.table.items():
            if not 0 <= idx < self.K:
                raise InputDomainError(f"id {idx} for {token!r} outside 0..{self.K - 1}")


def token_to_id(id_map: TokenIdMap, token: str) -> int:
    if id_map.mode == DICTIONARY:
        idx = id_map.table.get(token)
        if idx is not None:
            return idx
        if not id_map.hash_unknown:
            return UNKNOWN_ID
    return seeded_hash(id_map.seed, token.encode("utf-8")) % id_map.K


def ids_for_tokens(id_map: TokenIdMap, tokens: Iterable[str]) -> np.ndarray:
    return np.fromiter((token_to_id(id_map, t) for t in tokens), dtype=np.int64)


# ── Layer 2: id -> bucket ────────────────────────────────────────────────────

@dataclass
class BucketMapper:
    """
    The k id-to-bucket functions, one independently seeded hash each.

    With `identity` set the single function is id -> id (needs B >= K), which
    is how the standard-embedding and hashing-trick special cases are wired.
    """
    seeds: List[HashSeed]
    B: int
    K: int
    identity: bool = False

    def __post_init__(self):
        if self.B < 1 or self.K < 1:
            raise InputDomainError(f"B and K must be positive, got B={self.B} K={self.K}")
        if not self.seeds:
            raise InputDomainError("at least one bucket seed is required")
        if len({s.value for s in self.seeds}) != len(self.seeds):
            raise InputDomainError("bucket seeds must be distinct")
        if self.identity and (len(self.seeds) != 1 or self.B < self.K):
            raise InputDomainError("identity mapping needs k=1 and B >= K")

    @property
    def k(self) -> int:
        return len(self.seeds)


def _id_bytes(idx: int) -> bytes:
    return idx.to_bytes(8, "little")


def buckets_for_id(mapper: BucketMapper, idx: int) -> List[int]:
    if not 0 <= idx < mapper.K:
        raise InputDomainError(f"id {idx} outside 0..{mapper.K - 1}")
    if mapper.identity:
        return [idx]
    data = _id_bytes(idx)
    return [seeded_hash(seed, data) % mapper.B for seed in mapper.seeds]


def buckets_for_ids(mapper: BucketMapper, ids: np.ndarray) -> np.ndarray:
    """(n,) ids -> (n, k) buckets; each distinct id is hashed once."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= mapper.K):
        raise InputDomainError(f"ids outside 0..{mapper.K - 1}")
    if mapper.identity:
        return ids.reshape(-1, 1).copy()
    uniq, inverse = np.unique(ids, return_inverse=True)
    table = np.array(
        [buckets_for_id(mapper, int(i)) for i in uniq], dtype=np.int64
    ).reshape(len(uniq), mapper.k)
    return table[inverse.reshape(-1)]


# ── Collision analytics ──────────────────────────────────────────────────────

@dataclass
class CollisionReport:
    K: int
    vocab_size: int
    p_col_exact: float
    p_col_approx: float
    expected_tokens_in_collision: float
    monte_carlo_estimate: Optional[Tuple[float, float]] = None
    B: Optional[int] = None
    k: Optional[int] = None
    combined_p_col: Optional[float] = None
    important: Optional[int] = None
    important_expected_collisions: Optional[float] = None

    def as_dict(self) -> dict:
        out = {
            "K": self.K,
            "vocab_size": self.vocab_size,
            "p_col_exact": self.p_col_exact,
            "p_col_approx": self.p_col_approx,
            "expected_tokens_in_collision": self.expected_tokens_in_collision,
        }
        if self.combined_p_col is not None:
            out.update(B=self.B, k=self.k, combined_p_col=self.combined_p_col)
        if self.important_expected_collisions is not None:
            out.update(
                important=self.important,
                important_expected_collisions=self.important_expected_collisions,
            )
        if self.monte_carlo_estimate is not None:
            mean, se = self.monte_carlo_estimate
            out.update(monte_carlo_mean=mean, monte_carlo_stderr=se)
        return out


def _check_positive(**values: int) -> None:
    for name, value in values.items():
        if value < 1:
            raise InputDomainError(f"{name} must be >= 1, got {value}")


def collision_probability(K: int, vocab_size: int) -> float:
    """Probability that a given token shares its slot with any of the other vocab_size-1 tokens."""
    _check_positive(K=K, vocab_size=vocab_size)
    if vocab_size == 1:
        return 0.0
    if K == 1:
        return 1.0
    # (1 - 1/K)^(n-1) == exp((n-1) * log1p(-1/K))
    return -math.expm1((vocab_size - 1) * math.log1p(-1.0 / K))


def collision_probability_approx(K: int, vocab_size: int) -> float:
    _check_positive(K=K)
    return -math.expm1(-vocab_size / K)


def expected_collisions(K: int, vocab_size: int) -> float:
    return vocab_size * collision_probability(K, vocab_size)


def combined_collision_probability(B: int, k: int, vocab_size: int) -> float:
    """k independent bucket hashes behave like one hash with B**k slots."""
    _check_positive(B=B, k=k)
    if vocab_size <= 0:
        return 0.0
    # vocab / B^k in log space; B^k overflows floats long before it matters
    ratio = math.exp(math.log(vocab_size) - k * math.log(B))
    return -math.expm1(-ratio)


def important_collisions(B: int, important: int) -> float:
    """Expected important tokens in collision when only `important` tokens carry weight."""
    return expected_collisions(B, important)


def simulate_collisions(
    K: int, vocab_size: int, trials: int, seed: int
) -> Tuple[float, float]:
    """
    Monte Carlo estimate of the number of tokens in collision.

    Each trial throws vocab_size tokens uniformly into K slots and counts the
    tokens whose slot holds at least one other token.

    Returns (mean, standard error of the mean).
    """
    _check_positive(K=K, vocab_size=vocab_size)
    if trials < 2:
        raise InputDomainError(f"trials must be >= 2, got {trials}")
    rng = np.random.default_rng(seed)
    counts = np.empty(trials, dtype=np.float64)
    for t in range(trials):
        slots = rng.integers(0, K, size=vocab_size)
        _, sizes = np.unique(slots, return_counts=True)
        counts[t] = sizes[sizes >= 2].sum()
    mean = float(counts.mean())
    stderr = float(counts.std(ddof=1) / math.sqrt(trials))
    return mean, stderr


def collision_report(
    K: int,
    vocab_size: int,
    B: Optional[int] = None,
    k: Optional[int] = None,
    important: Optional[int] = None,
    simulate: bool = False,
    trials: int = 200,
    seed: int = 0,
) -> CollisionReport:
    report = CollisionReport(
        K=K,
        vocab_size=vocab_size,
        p_col_exact=collision_probability(K, vocab_size),
        p_col_approx=collision_probability_approx(K, vocab_size),
        expected_tokens_in_collision=expected_collisions(K, vocab_size),
    )
    if B is not None:
        report.B = B
        report.k = k if k is not None else 1
        report.combined_p_col = combined_collision_probability(B, report.k, vocab_size)
    if important is not None:
        report.important = important
        report.important_expected_collisions = important_collisions(B if B is not None else K, important)
    if simulate:
        report.monte_carlo_estimate = simulate_collisions(K, vocab_size, trials, seed)
    return report

