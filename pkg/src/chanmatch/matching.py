"""Channel-pair cost matrices and balanced / sparse channel matchings.

Feature maps are C x N matrices (C channels, N spatial positions). The cost
of pairing student channel i with teacher channel j is the squared Euclidean
distance between the two channel rows, accumulated over samples. A balanced
matching assigns every teacher channel to exactly one student channel and
every student channel exactly alpha = floor(C_T / C_S) teachers; a sparse
matching picks one distinct teacher channel per student.
"""

from dataclasses import dataclass, field

import numpy as np

from . import lap

# Owner value for teacher channels dropped when C_T is not divisible by C_S.
SHAVED = -1


def _as_feature(x, name: str) -> np.ndarray:
    f = np.asarray(x, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError(f"{name} must be a 2-D (channels x positions) array, got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError(f"{name} contains non-finite values")
    return f


@dataclass
class CostMatrix:
    """Accumulated per-channel-pair distances, shape (C_S, C_T)."""

    values: np.ndarray
    sample_count: int = 1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"cost matrix must be 2-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("cost matrix entries must be finite and non-negative")

    @property
    def c_s(self) -> int:
        return self.values.shape[0]

    @property
    def c_t(self) -> int:
        return self.values.shape[1]


@dataclass
class Matching:
    """Balanced many-to-one teacher -> student assignment.

    owner[j] is the student channel owning teacher channel j, or SHAVED for
    the C_T - alpha*C_S teacher channels dropped in the non-divisible case.
    """

    owner: np.ndarray
    alpha: int
    c_s: int

    def __post_init__(self):
        self.owner = np.asarray(self.owner, dtype=np.intp)
        if self.owner.ndim != 1:
            raise ValueError("owner must be a 1-D array over teacher channels")
        if self.alpha < 1 or self.c_s < 1:
            raise ValueError("alpha and c_s must be positive")
        counts = np.bincount(self.owner[self.owner != SHAVED], minlength=self.c_s)
        if len(counts) > self.c_s or np.any(counts != self.alpha):
            raise ValueError(f"matching is not balanced: owner counts {counts}, alpha={self.alpha}")
        n_shaved = int(np.sum(self.owner == SHAVED))
        if n_shaved != self.c_t - self.alpha * self.c_s:
            raise ValueError("shaved channel count does not match C_T - alpha*C_S")

    @property
    def c_t(self) -> int:
        return len(self.owner)

    def groups(self) -> np.ndarray:
        """(C_S, alpha) array: row i lists the teacher channels owned by student i, ascending."""
        out = np.empty((self.c_s, self.alpha), dtype=np.intp)
        for i in range(self.c_s):
            out[i] = np.flatnonzero(self.owner == i)
        return out


@dataclass
class SparseMatching:
    """One distinct teacher channel per student channel."""

    pairs: np.ndarray
    c_t: int = field(default=0)

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.intp)
        if self.pairs.ndim != 1 or len(self.pairs) < 1:
            raise ValueError("pairs must be a non-empty 1-D array")
        if len(np.unique(self.pairs)) != len(self.pairs):
            raise ValueError("pairs must be distinct teacher channels")
        if self.c_t == 0:
            self.c_t = int(self.pairs.max()) + 1
        if self.c_t < len(self.pairs) or np.any(self.pairs >= self.c_t) or np.any(self.pairs < 0):
            raise ValueError("pairs out of range")

    @property
    def c_s(self) -> int:
        return len(self.pairs)

    def as_owner_view(self) -> Matching:
        """View as a balanced matching with alpha=1, unmatched teachers shaved."""
        owner = np.full(self.c_t, SHAVED, dtype=np.intp)
        owner[self.pairs] = np.arange(self.c_s)
        return Matching(owner=owner, alpha=1, c_s=self.c_s)


def channel_distance(student, teacher) -> CostMatrix:
    """Pairwise squared distances d[i, j] = sum_k (student[i, k] - teacher[j, k])^2."""
    s = _as_feature(student, "student features")
    t = _as_feature(teacher, "teacher features")
    if s.shape[1] != t.shape[1]:
        raise ValueError(f"spatial size mismatch: student N={s.shape[1]}, teacher N={t.shape[1]}")
    d = ((s[:, None, :] - t[None, :, :]) ** 2).sum(axis=2)
    return CostMatrix(values=d, sample_count=1)


def accumulate_cost(acc: CostMatrix, batch: CostMatrix) -> CostMatrix:
    """Element-wise sum of two cost matrices; sample counts add."""
    if acc.values.shape != batch.values.shape:
        raise ValueError(f"cost shape mismatch: {acc.values.shape} vs {batch.values.shape}")
    return CostMatrix(values=acc.values + batch.values, sample_count=acc.sample_count + batch.sample_count)


def solve_balanced(cost: CostMatrix) -> Matching:
    """Minimize the summed pair distance over balanced many-to-one matchings.

    Stacks alpha copies of the (C_S, C_T) cost matrix into a square problem,
    padding with rows of lap.BIG when C_T is not divisible by C_S, and solves
    it exactly. Teacher channels caught by padding rows are shaved. Row block
    r of the stacked matrix corresponds to student channel r mod C_S.
    """
    d = cost.values
    c_s, c_t = d.shape
    if c_t < c_s:
        raise ValueError(f"need C_T >= C_S, got C_S={c_s}, C_T={c_t}")
    alpha = c_t // c_s
    n_pad = c_t - alpha * c_s
    blocks = [d] * alpha
    if n_pad:
        blocks.append(np.full((n_pad, c_t), lap.BIG))
    assign, _ = lap.solve(np.vstack(blocks))
    owner = np.full(c_t, SHAVED, dtype=np.intp)
    for r in range(alpha * c_s):
        owner[assign[r]] = r % c_s
    return Matching(owner=owner, alpha=alpha, c_s=c_s)


def solve_sparse(cost: CostMatrix) -> SparseMatching:
    """Minimize the summed pair distance over injective student -> teacher maps.

    Pads the cost matrix with C_T - C_S rows of lap.BIG to make it square;
    the assignments of the real rows form the optimal one-to-one matching.
    """
    d = cost.values
    c_s, c_t = d.shape
    if c_t < c_s:
        raise ValueError(f"need C_T >= C_S, got C_S={c_s}, C_T={c_t}")
    if c_t > c_s:
        d = np.vstack([d, np.full((c_t - c_s, c_t), lap.BIG)])
    assign, _ = lap.solve(d)
    return SparseMatching(pairs=assign[:c_s].copy(), c_t=c_t)


def matching_cost(cost: CostMatrix, matching: Matching) -> float:
    """Summed pair distance of a balanced matching, shaved channels excluded."""
    kept = np.flatnonzero(matching.owner != SHAVED)
    return float(cost.values[matching.owner[kept], kept].sum())


def sparse_matching_cost(cost: CostMatrix, matching: SparseMatching) -> float:
    """Summed pair distance of a sparse matching."""
    return float(cost.values[np.arange(matching.c_s), matching.pairs].sum())


def format_matching(matching: Matching) -> str:
    """Serialize a matching: header plus one `teacher -> student` line per channel."""
    lines = [f"# C_S={matching.c_s} C_T={matching.c_t} alpha={matching.alpha}"]
    lines += [f"{j} -> {int(i)}" for j, i in enumerate(matching.owner)]
    return "\n".join(lines) + "\n"


def parse_matching(text: str) -> Matching:
    """Inverse of format_matching."""
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    header = lines[0]
    if not header.startswith("#"):
        raise ValueError("matching text must start with a header line")
    fields = dict(part.split("=") for part in header.lstrip("# ").split())
    c_s, c_t, alpha = int(fields["C_S"]), int(fields["C_T"]), int(fields["alpha"])
    owner = np.full(c_t, SHAVED, dtype=np.intp)
    for ln in lines[1:]:
        left, right = ln.split("->")
        owner[int(left)] = int(right)
    return Matching(owner=owner, alpha=alpha, c_s=c_s)
