"""Parameter-free reducers that collapse teacher features to student shape.

Every reducer maps a (C_T, N) teacher feature map to (C_S, N) using a solved
matching and nothing else: sparse selection (SM), per-position random pick
(RD), per-position largest-magnitude pick (AMP), and the plain max / average
pooling ablations (MP, AvgP).
"""

from enum import Enum

import numpy as np

from .matching import Matching, SparseMatching


class ReducerKind(str, Enum):
    SM = "sm"
    RD = "rd"
    AMP = "amp"
    MP = "mp"
    AVGP = "avgp"


def _owned(features: np.ndarray, matching: Matching) -> np.ndarray:
    """(C_S, alpha, N) stack of each student's owned teacher rows."""
    t = np.asarray(features, dtype=np.float64)
    if t.ndim != 2:
        raise ValueError(f"teacher features must be 2-D, got shape {t.shape}")
    if t.shape[0] != matching.c_t:
        raise ValueError(f"teacher has {t.shape[0]} channels, matching expects {matching.c_t}")
    return t[matching.groups()]


def reduce_sm(features: np.ndarray, matching: SparseMatching) -> np.ndarray:
    """Select the matched teacher row for each student channel."""
    t = np.asarray(features, dtype=np.float64)
    if t.ndim != 2:
        raise ValueError(f"teacher features must be 2-D, got shape {t.shape}")
    if np.any(matching.pairs >= t.shape[0]):
        raise ValueError("matching refers to teacher channels beyond the feature map")
    return t[matching.pairs]


def reduce_rd(features: np.ndarray, matching: Matching, rng: np.random.Generator) -> np.ndarray:
    """Pick one owned teacher value uniformly at random per (channel, position).

    Draws are independent across student channels and spatial positions and
    are fully determined by the supplied generator state.
    """
    owned = _owned(features, matching)
    c_s, alpha, n = owned.shape
    pick = rng.integers(0, alpha, size=(c_s, n))
    return np.take_along_axis(owned, pick[:, None, :], axis=1)[:, 0, :]


def amp(values) -> float:
    """Signed value of largest magnitude; ties go to the smallest index."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or len(x) == 0:
        raise ValueError("amp expects a non-empty vector")
    return float(x[np.argmax(np.abs(x))])


def reduce_amp(features: np.ndarray, matching: Matching) -> np.ndarray:
    """Per-position signed value of largest magnitude over owned teacher channels."""
    owned = _owned(features, matching)
    # argmax returns the first maximum; groups are ascending, so ties go to
    # the smallest teacher channel index.
    idx = np.argmax(np.abs(owned), axis=1)
    return np.take_along_axis(owned, idx[:, None, :], axis=1)[:, 0, :]


def reduce_mp(features: np.ndarray, matching: Matching) -> np.ndarray:
    """Per-position signed maximum over owned teacher channels."""
    return _owned(features, matching).max(axis=1)


def reduce_avgp(features: np.ndarray, matching: Matching) -> np.ndarray:
    """Per-position arithmetic mean over owned teacher channels."""
    return _owned(features, matching).mean(axis=1)


def reduce(
    features: np.ndarray,
    kind: ReducerKind,
    matching: Matching | SparseMatching,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Dispatch to the reducer for `kind`. RD requires `rng`."""
    kind = ReducerKind(kind)
    if kind is ReducerKind.SM:
        if not isinstance(matching, SparseMatching):
            raise TypeError("SM reduction needs a SparseMatching")
        return reduce_sm(features, matching)
    if not isinstance(matching, Matching):
        raise TypeError(f"{kind.value} reduction needs a balanced Matching")
    if kind is ReducerKind.RD:
        if rng is None:
            raise ValueError("RD reduction needs a random generator")
        return reduce_rd(features, matching, rng)
    if kind is ReducerKind.AMP:
        return reduce_amp(features, matching)
    if kind is ReducerKind.MP:
        return reduce_mp(features, matching)
    return reduce_avgp(features, matching)
