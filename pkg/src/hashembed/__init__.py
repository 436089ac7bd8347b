"""Hash embeddings, a bag-of-n-grams classifier and collision analytics."""

__version__ = "0.1.0"
