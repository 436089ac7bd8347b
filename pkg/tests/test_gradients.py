"""Analytic gradients against central finite differences in float64."""
import numpy as np
import pytest

from src.hashembed.embedding import EmbeddingConfig, backward_bag, embed_bag, new_hash_embedding
from src.hashembed.model import (
    EncodedDataset,
    backward,
    batch_backward,
    cross_entropy,
    encode_tokens,
    forward,
    new_classifier,
)
from tests.helpers import dense, numeric_grad

WORDS = [f"w{i}" for i in range(12)]


def _instance(rng, append, separate=False):
    cfg = EmbeddingConfig(
        K=int(rng.integers(2, 17)),
        B=int(rng.integers(1, 9)),
        k=int(rng.integers(1, 4)),
        d=int(rng.integers(1, 5)),
        append_importance=append,
        separate_importance_hash=separate,
    )
    emb = new_hash_embedding(cfg, int(rng.integers(0, 2 ** 32)), dtype=np.float64)
    emb.P[...] = rng.normal(size=emb.P.shape)
    tokens = list(rng.choice(WORDS, size=int(rng.integers(1, 7))))
    return emb, tokens


@pytest.mark.parametrize("separate", [False, True])
@pytest.mark.parametrize("append", [False, True])
def test_embedding_gradients_match_finite_differences(rng, append, separate):
    for _ in range(12):
        emb, tokens = _instance(rng, append, separate)
        c = rng.normal(size=emb.output_dim)

        def loss():
            return float(embed_bag(emb, tokens) @ c)

        grad = backward_bag(emb, tokens, c)
        cfg = emb.config
        np.testing.assert_allclose(
            dense(grad.e_rows, cfg.B, cfg.d), numeric_grad(loss, emb.E, 1e-6), rtol=1e-5, atol=1e-7
        )
        np.testing.assert_allclose(
            dense(grad.p_rows, cfg.K, cfg.k), numeric_grad(loss, emb.P, 1e-6), rtol=1e-5, atol=1e-7
        )


@pytest.mark.parametrize("separate", [False, True])
@pytest.mark.parametrize("append", [False, True])
def test_classifier_gradients_match_finite_differences(rng, append, separate):
    for _ in range(12):
        emb, tokens = _instance(rng, append, separate)
        model = new_classifier(emb, int(rng.integers(2, 5)), seed=int(rng.integers(0, 1000)))
        model.bias[...] = rng.normal(size=model.bias.shape)
        label = int(rng.integers(0, model.num_classes))

        def loss():
            return cross_entropy(forward(model, tokens), label)

        grads = backward(model, tokens, label)
        cfg = emb.config
        h = 1e-5
        np.testing.assert_allclose(grads.W, numeric_grad(loss, model.W, h), rtol=1e-4, atol=1e-7)
        np.testing.assert_allclose(grads.bias, numeric_grad(loss, model.bias, h), rtol=1e-4, atol=1e-7)
        np.testing.assert_allclose(
            dense(grads.embedding.e_rows, cfg.B, cfg.d), numeric_grad(loss, emb.E, h), rtol=1e-4, atol=1e-7
        )
        np.testing.assert_allclose(
            dense(grads.embedding.p_rows, cfg.K, cfg.k), numeric_grad(loss, emb.P, h), rtol=1e-4, atol=1e-7
        )


def test_batch_gradient_is_the_mean_of_sample_gradients(rng):
    emb, _ = _instance(rng, append=True)
    model = new_classifier(emb, 3, seed=1)
    docs = [list(rng.choice(WORDS, size=int(rng.integers(1, 6)))) for _ in range(8)]
    labels = rng.integers(0, 3, size=8)
    data: EncodedDataset = encode_tokens(emb, docs, labels, 3)
    _, batch_grads = batch_backward(model, data.batch(np.arange(8)))

    cfg = emb.config
    singles = [backward(model, doc, int(y)) for doc, y in zip(docs, labels)]
    np.testing.assert_allclose(batch_grads.W, np.mean([g.W for g in singles], axis=0), rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(batch_grads.bias, np.mean([g.bias for g in singles], axis=0), rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(
        dense(batch_grads.embedding.e_rows, cfg.B, cfg.d),
        np.mean([dense(g.embedding.e_rows, cfg.B, cfg.d) for g in singles], axis=0),
        rtol=1e-10,
        atol=1e-14,
    )
    np.testing.assert_allclose(
        dense(batch_grads.embedding.p_rows, cfg.K, cfg.k),
        np.mean([dense(g.embedding.p_rows, cfg.K, cfg.k) for g in singles], axis=0),
        rtol=1e-10,
        atol=1e-14,
    )
