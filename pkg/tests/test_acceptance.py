"""
End-to-end claims: parameter savings, special-case equivalence, implicit
pruning through importance weights, and (slow, data-dependent) desk-scale
accuracy on AG News.
"""
import math
import os
from pathlib import Path

import numpy as np
import pytest

from src.hashembed.embedding import (
    EmbeddingConfig,
    as_hashing_trick,
    as_standard_embedding,
    embed_token,
    new_hash_embedding,
    parameter_count,
)
from src.hashembed.hashing import seeded_hash
from src.hashembed.model import (
    TrainConfig,
    ensemble_evaluate,
    evaluate,
    new_classifier,
    top_importance,
    train,
)
from src.hashembed.text import Dataset, Sample, build_vocab, load_dataset

DATA_ROOT = Path(os.getenv("HASHEMB_DATA_ROOT", "data"))
AG_NEWS = DATA_ROOT / "ag_news"
needs_ag_news = pytest.mark.skipif(
    not (AG_NEWS / "train.csv").exists(), reason="AG News not downloaded"
)


def test_parameter_savings_at_fasttext_scale():
    hashed = parameter_count(EmbeddingConfig(K=10 ** 7, B=10 ** 6, k=2, d=20))
    standard = parameter_count(
        EmbeddingConfig(K=10 ** 7, B=10 ** 7, k=1, d=20, trainable_importance=False, identity_buckets=True)
    )
    assert hashed == 40_000_000
    assert standard == 200_000_000
    assert standard / hashed == 5


def test_hashing_trick_equivalence_over_many_tokens(rng):
    emb = as_hashing_trick(B=4096, d=8, seed=21)
    for value in rng.integers(0, 2 ** 62, size=10_000):
        token = f"tok{value}"
        row = seeded_hash(emb.id_map.seed, token.encode("utf-8")) % 4096
        assert np.array_equal(embed_token(emb, token), emb.E[row])


def test_standard_embedding_equivalence_over_vocabulary():
    vocab = ["<unk>"] + [f"word{i}" for i in range(2000)]
    emb = as_standard_embedding(vocab, d=6, init_seed=8)
    for row, token in enumerate(vocab):
        assert np.array_equal(embed_token(emb, token), emb.E[row])
    assert parameter_count(emb.config) == len(vocab) * 6


def _pruning_dataset(seed):
    """Ten signal tokens decide the label; ten thousand noise tokens are shared by both classes."""
    rng = np.random.default_rng(seed)
    signal = [f"sig{i}" for i in range(10)]
    noise = [f"noise{i}" for i in range(10_000)]
    samples = []
    for i in range(5000):
        label = i % 2
        words = list(rng.choice(noise, size=20))
        marker = signal[int(rng.integers(0, 5)) + 5 * label]
        words.insert(int(rng.integers(0, 21)), marker)
        samples.append(Sample(label, " ".join(words)))
    return Dataset(samples, 2, "pruning"), signal


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_importance_weights_single_out_signal_tokens(seed):
    dataset, signal = _pruning_dataset(seed)
    vocab = build_vocab(dataset.texts, n_max=1, max_size=20_000)
    emb = new_hash_embedding(
        EmbeddingConfig(K=len(vocab) + 1, B=1000, k=2, d=8, id_mode="dictionary"),
        seed,
        vocabulary=vocab.table,
    )
    model = new_classifier(emb, 2, seed=seed)
    config = TrainConfig(batch_size=32, max_epochs=5, patience=5, alpha=0.01, snippets=False, seed=seed)
    model, _ = train(model, dataset, config)

    top = top_importance(model, vocab, math.ceil(0.01 * len(vocab)))
    assert set(signal) <= {e.token for e in top}


# ── Desk-scale AG News (needs data/ag_news/{train,test}.csv) ─────────────────

def _ag_news():
    return load_dataset(AG_NEWS / "train.csv", 4), load_dataset(AG_NEWS / "test.csv", 4)


def _bigram_model(seed, B=2 ** 16):
    emb = new_hash_embedding(EmbeddingConfig(K=2 ** 20, B=B, k=2, d=20), seed)
    return new_classifier(emb, 4, seed=seed, ngrams=2)


@pytest.mark.slow
@needs_ag_news
def test_ag_news_bigram_hash_embedding():
    train_set, test_set = _ag_news()
    model, _ = train(_bigram_model(7), train_set, TrainConfig(seed=7))
    assert evaluate(model, test_set) >= 0.89


@pytest.mark.slow
@needs_ag_news
def test_hash_embedding_keeps_up_with_a_larger_hashing_trick():
    train_set, test_set = _ag_news()
    hashed, _ = train(_bigram_model(3), train_set, TrainConfig(seed=3))

    trick_emb = as_hashing_trick(B=2 ** 19, d=20, seed=3)
    assert parameter_count(hashed.embedding.config) * 3 <= parameter_count(trick_emb.config)
    trick = new_classifier(trick_emb, 4, seed=3, ngrams=2)
    trick, _ = train(trick, train_set, TrainConfig(seed=3))
    assert evaluate(hashed, test_set) >= evaluate(trick, test_set) - 0.005


@pytest.mark.slow
@needs_ag_news
def test_ensemble_beats_the_median_member_on_ag_news():
    train_set, test_set = _ag_news()
    members = []
    for seed, B in ((11, 2 ** 14), (12, 2 ** 15), (13, 2 ** 16)):
        model, _ = train(_bigram_model(seed, B=B), train_set, TrainConfig(seed=seed))
        members.append(model)
    median = float(np.median([evaluate(m, test_set) for m in members]))
    assert ensemble_evaluate(members, test_set) >= median
