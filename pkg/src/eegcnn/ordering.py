"""Electrode arrangements for the CNN input.

Five strategies are supported:

``given``
    canonical electrode order (identity permutation)
``random``
    ``n_repeats`` seeded random permutations, each evaluated separately
``physical3d``
    a 4x5 scalp grid stacked over time (3D input)
``max_adjacent_pcc`` / ``min_adjacent_pcc``
    the Hamiltonian path over electrodes maximising / minimising the sum of
    absolute Pearson correlation between neighbouring rows
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import ELECTRODES, N_ELECTRODES, Recording

STRATEGIES = ("given", "random", "physical3d", "max_adjacent_pcc", "min_adjacent_pcc")

GRID: tuple[tuple[str | None, ...], ...] = (
    (None, "Fp1", None, "Fp2", None),
    ("F7", "F3", "Fz", "F4", "F8"),
    ("T3", "C3", None, "C4", "T4"),
    (None, None, "Pz", None, None),
)
GRID_SHAPE = (len(GRID), len(GRID[0]))

# exact DP cost grows as 2^n * n^2
MAX_DP_NODES = 20


class OrderingError(ValueError):
    pass


def pcc(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise OrderingError("pcc: need two equal-length series of at least 2 samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        raise OrderingError("pcc: zero-variance series, correlation undefined")
    return float(dx @ dy) / (sx * sy)


def correlation_from_array(x: np.ndarray) -> np.ndarray:
    """Pearson correlation between the rows of ``x`` (n_channels, t)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2:
        raise OrderingError("correlation: need at least 2 samples per channel")
    d = x - x.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.einsum("ij,ij->i", d, d))
    zero = norms == 0
    if zero.any():
        name = ELECTRODES[int(np.argmax(zero))] if x.shape[0] == N_ELECTRODES else int(np.argmax(zero))
        raise OrderingError(f"correlation: channel {name} has zero variance")
    m = (d @ d.T) / np.outer(norms, norms)
    m = np.clip(m, -1.0, 1.0)
    upper = np.triu(m, 1)
    m = upper + upper.T
    np.fill_diagonal(m, 1.0)
    return m


def correlation_matrix(recs) -> np.ndarray:
    """12x12 PCC over the per-channel concatenation of ``recs``."""
    recs = list(recs)
    if not recs:
        raise OrderingError("correlation_matrix: no recordings")
    data = [r.data if isinstance(r, Recording) else np.asarray(r) for r in recs]
    return correlation_from_array(np.concatenate(data, axis=1))


def check_correlation(m: np.ndarray) -> None:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise OrderingError("correlation matrix must be square")
    if not np.array_equal(m, m.T):
        raise OrderingError("correlation matrix must be symmetric")
    if not np.all(np.diag(m) == 1.0):
        raise OrderingError("correlation matrix must have unit diagonal")
    if np.any(np.abs(m) > 1.0):
        raise OrderingError("correlation entries must lie in [-1, 1]")


def path_weight(m: np.ndarray, path) -> float:
    """Sum of |m| over consecutive pairs of ``path`` (indices), exactly rounded."""
    w = np.abs(np.asarray(m, dtype=np.float64))
    return math.fsum(float(w[a, b]) for a, b in zip(path, path[1:]))


def _as_exact_ints(w: np.ndarray) -> list[list[int]]:
    # floats are dyadic rationals: scale to a common power-of-two denominator
    ratios = [[float(v).as_integer_ratio() for v in row] for row in w]
    denom = max(d for row in ratios for _, d in row)
    return [[n * (denom // d) for n, d in row] for row in ratios]


def best_path_indices(m: np.ndarray, objective: str = "maximize", labels=None) -> list[int]:
    """Exact optimal Hamiltonian path over |m| by subset DP.

    Among equally weighted optima the path whose label sequence is
    lexicographically smallest is returned (so it starts at the smaller of its
    two endpoints). Weights are compared as exact rationals.
    """
    if objective not in ("maximize", "minimize"):
        raise OrderingError(f"objective must be 'maximize' or 'minimize', got {objective!r}")
    w = np.abs(np.asarray(m, dtype=np.float64))
    n = w.shape[0]
    if n > MAX_DP_NODES:
        raise OrderingError(f"exact path search supports at most {MAX_DP_NODES} nodes")
    if n == 1:
        return [0]
    labels = list(labels) if labels is not None else [str(i) for i in range(n)]
    rank = {lab: r for r, lab in enumerate(sorted(labels))}
    key = [rank[lab] for lab in labels]
    iw = _as_exact_ints(w)
    if objective == "minimize":
        iw = [[-v for v in row] for row in iw]

    full = (1 << n) - 1
    # best[mask][last] = (weight, key-sequence, index path)
    best: list[dict[int, tuple[int, tuple, tuple]]] = [dict() for _ in range(1 << n)]
    for i in range(n):
        best[1 << i][i] = (0, (key[i],), (i,))
    for mask in range(1, full + 1):
        states = best[mask]
        if not states:
            continue
        for last, (wt, ks, path) in states.items():
            row = iw[last]
            for nxt in range(n):
                bit = 1 << nxt
                if mask & bit:
                    continue
                cand = (wt + row[nxt], ks + (key[nxt],), path + (nxt,))
                target = best[mask | bit]
                cur = target.get(nxt)
                if cur is None or cand[0] > cur[0] or (cand[0] == cur[0] and cand[1] < cur[1]):
                    target[nxt] = cand
        if mask != full:
            best[mask] = {}  # free memory; only successors are needed
    finals = best[full].values()
    top = max(f[0] for f in finals)
    return list(min((f for f in finals if f[0] == top), key=lambda f: f[1])[2])


def order_by_adjacent_pcc(m: np.ndarray, objective: str = "maximize", labels=ELECTRODES) -> list[str]:
    labels = list(labels)
    if len(labels) != np.asarray(m).shape[0]:
        raise OrderingError("labels do not match correlation matrix size")
    return [labels[i] for i in best_path_indices(m, objective, labels)]


# ---------------------------------------------------------------------------
# layouts


@dataclass(frozen=True)
class OrderingStrategy:
    kind: str = "given"
    n_repeats: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise OrderingError(f"ordering.kind: unknown strategy {self.kind!r}")
        if self.n_repeats < 1:
            raise OrderingError("ordering.n_repeats: must be >= 1")

    @property
    def is_3d(self) -> bool:
        return self.kind == "physical3d"

    @property
    def needs_correlation(self) -> bool:
        return self.kind in ("max_adjacent_pcc", "min_adjacent_pcc")


@dataclass(frozen=True)
class Layout:
    """Either a row order of the 12 electrodes (2D) or the scalp grid (3D)."""

    order: tuple[str, ...] | None = None
    repeat: int | None = None

    @property
    def is_3d(self) -> bool:
        return self.order is None

    @property
    def rows(self) -> list[int]:
        return [ELECTRODES.index(e) for e in self.order]

    def describe(self):
        if self.is_3d:
            return [[c or "" for c in row] for row in GRID]
        return list(self.order)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Map canonical (12, L) data (or a batch (N, 12, L)) onto this layout."""
        if self.is_3d:
            return to_grid(x)
        return np.take(x, self.rows, axis=-2)


def to_grid(x: np.ndarray) -> np.ndarray:
    """Place rows of (..., 12, L) into a zero-filled (..., 4, 5, L) grid."""
    lead = x.shape[:-2]
    out = np.zeros(lead + GRID_SHAPE + (x.shape[-1],), dtype=x.dtype)
    for r, row in enumerate(GRID):
        for c, name in enumerate(row):
            if name is not None:
                out[..., r, c, :] = x[..., ELECTRODES.index(name), :]
    return out


def random_orders(n_repeats: int, seed: int) -> list[tuple[str, ...]]:
    rng = np.random.default_rng(seed)
    return [tuple(ELECTRODES[i] for i in rng.permutation(N_ELECTRODES)) for _ in range(n_repeats)]


def resolve_layouts(strategy: OrderingStrategy, corr: np.ndarray | None = None) -> list[Layout]:
    """Layouts for one strategy: ``n_repeats`` for random, otherwise one.

    Correlation strategies need ``corr`` computed on training data.
    """
    kind = strategy.kind
    if kind == "given":
        return [Layout(ELECTRODES)]
    if kind == "random":
        return [Layout(o, repeat=i) for i, o in enumerate(random_orders(strategy.n_repeats, strategy.seed))]
    if kind == "physical3d":
        return [Layout(None)]
    if corr is None:
        raise OrderingError(f"ordering {kind!r} needs a training correlation matrix")
    objective = "maximize" if kind == "max_adjacent_pcc" else "minimize"
    return [Layout(tuple(order_by_adjacent_pcc(corr, objective)))]


def arrange(windows, layout: Layout) -> np.ndarray:
    """Stack window data (each (12, L), canonical order) into a layout batch."""
    data = np.stack([w.data if hasattr(w, "data") else np.asarray(w) for w in windows])
    return layout.apply(data)
