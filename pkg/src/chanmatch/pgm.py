"""Plain (P2) PGM writing and feature normalization for dumps."""

from pathlib import Path

import numpy as np


def normalize_unit(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Scale an array to [0, 1]; constant input maps to mid gray (0.5).

    Returns (normalized, original_min, original_max).
    """
    x = np.asarray(values, dtype=np.float64)
    vmin = float(x.min())
    vmax = float(x.max())
    if vmax == vmin:
        return np.full_like(x, 0.5), vmin, vmax
    return (x - vmin) / (vmax - vmin), vmin, vmax


def write_pgm(path, unit_values: np.ndarray, maxval: int = 255) -> None:
    """Write a 2-D array of [0, 1] values as a plain-text P2 PGM."""
    x = np.asarray(unit_values, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"PGM image must be 2-D, got shape {x.shape}")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError("PGM values must already be normalized to [0, 1]")
    pixels = np.rint(x * maxval).astype(int)
    h, w = x.shape
    lines = [f"P2", f"{w} {h}", str(maxval)]
    lines += [" ".join(str(v) for v in row) for row in pixels]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path) -> np.ndarray:
    """Read a plain P2 PGM back into an integer array (test helper)."""
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0]
        tokens += line.split()
    if tokens[0] != "P2":
        raise ValueError(f"not a plain PGM: magic {tokens[0]!r}")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pixels = np.array([int(t) for t in tokens[4:]], dtype=int)
    if pixels.size != w * h or pixels.max(initial=0) > maxval:
        raise ValueError("malformed PGM payload")
    return pixels.reshape(h, w)
