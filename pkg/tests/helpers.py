import math

import numpy as np


def chi2_critical_999(df: int) -> float:
    """Upper 99.9% point of chi-square(df), Wilson-Hilferty approximation."""
    z = 3.090232
    a = 2.0 / (9.0 * df)
    return df * (1.0 - a + z * math.sqrt(a)) ** 3


def chi_square(values, cells: int) -> float:
    observed = np.bincount(np.asarray(values, dtype=np.int64), minlength=cells)
    expected = len(values) / cells
    return float(((observed - expected) ** 2 / expected).sum())


def dense(part, n_rows: int, width: int) -> np.ndarray:
    """Scatter a RowGrad into a dense (n_rows, width) array."""
    out = np.zeros((n_rows, width))
    out[part.rows] = part.values
    return out


def numeric_grad(loss, arr: np.ndarray, h: float) -> np.ndarray:
    """Central differences of loss() with respect to every entry of arr (modified in place, restored)."""
    out = np.zeros(arr.shape)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + h
        up = loss()
        arr[idx] = old - h
        down = loss()
        arr[idx] = old
        out[idx] = (up - down) / (2 * h)
    return out


def parse_pairs(text: str) -> dict:
    pairs = {}
    for line in text.splitlines():
        key, sep, value = line.partition("=")
        if sep and key and " " not in key:
            pairs[key] = value
    return pairs
