"""Kernels, Gram matrices and mean-embedding statistics.

Every quantity is a kernel sum; feature maps are never materialized.
Sample sets are treated as uniform empirical distributions, while a
``DiscreteDistribution`` gives exact population values (its self inner
products need no diagonal correction, so its "unbiased" norm equals the
plain weighted sum).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.spatial.distance import cdist

from ._parallel import pmap, row_blocks
from .core import DiscreteDistribution, SampleSet

BLOCK_ROWS = 256
NORM_FLOOR = 1e-15

Distribution = Union[SampleSet, DiscreteDistribution]


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus parameters.

    Families: ``rbf`` (gamma), ``laplacian`` (gamma), ``poly`` (gamma, c,
    degree), ``cosine``, ``delta`` and ``tensor`` (a base kernel multiplied
    over coordinate blocks; singleton blocks when ``blocks`` is None).
    """

    family: str
    gamma: float = 1.0
    c: float = 1.0
    degree: int = 2
    base: "KernelSpec | None" = None
    blocks: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        fam = self.family.lower()
        aliases = {"polynomial": "poly", "deltadiscrete": "delta", "tensorpower": "tensor"}
        fam = aliases.get(fam, fam)
        if fam not in ("rbf", "laplacian", "poly", "cosine", "delta", "tensor"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        object.__setattr__(self, "family", fam)
        if fam in ("rbf", "laplacian", "poly") and not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if fam == "poly":
            if not self.c > 0:
                raise ValueError("c must be > 0")
            if int(self.degree) != self.degree or self.degree < 1:
                raise ValueError("degree must be a positive integer")
            object.__setattr__(self, "degree", int(self.degree))
        if fam == "tensor":
            if self.base is None:
                raise ValueError("tensor kernel needs a base kernel")
            if self.blocks is not None:
                blocks = tuple(tuple(int(i) for i in b) for b in self.blocks)
                flat = [i for b in blocks for i in b]
                if any(len(b) == 0 for b in blocks) or len(set(flat)) != len(flat):
                    raise ValueError("tensor blocks must be disjoint and nonempty")
                object.__setattr__(self, "blocks", blocks)

    def __str__(self) -> str:
        if self.family in ("rbf", "laplacian"):
            return f"{self.family}:gamma={self.gamma:g}"
        if self.family == "poly":
            return f"poly:gamma={self.gamma:g},c={self.c:g},degree={self.degree}"
        if self.family == "tensor":
            head = "tensor:"
            if self.blocks is not None:
                head += "blocks=" + "|".join("+".join(map(str, b)) for b in self.blocks) + ","
            return head + f"base={self.base}"
        return self.family


def parse_kernel(text: str) -> KernelSpec:
    """Parse ``rbf:gamma=0.5``, ``poly:gamma=1,c=1,degree=2``, ``tensor:base=rbf:gamma=1``.

    For ``tensor`` the ``base=`` entry must come last; optional
    ``blocks=0+1|2+3`` (0-based coordinates) may precede it.
    """
    text = text.strip()
    fam, _, rest = text.partition(":")
    fam = fam.strip().lower()
    kw: dict = {}
    if fam in ("tensor", "tensorpower"):
        head, sep, base = rest.partition("base=")
        if not sep:
            raise ValueError(f"tensor kernel needs base=...: {text!r}")
        for item in filter(None, (s.strip() for s in head.split(","))):
            key, _, val = item.partition("=")
            if key != "blocks":
                raise ValueError(f"unknown tensor parameter {key!r}")
            kw["blocks"] = tuple(tuple(int(i) for i in b.split("+")) for b in val.split("|"))
        return KernelSpec("tensor", base=parse_kernel(base), **kw)
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, val = item.partition("=")
        if not eq or key not in ("gamma", "c", "degree"):
            raise ValueError(f"bad kernel parameter {item!r} in {text!r}")
        try:
            kw[key] = float(val)
        except ValueError:
            raise ValueError(f"bad kernel parameter {item!r} in {text!r}") from None
    return KernelSpec(fam, **kw)


# --------------------------------------------------------------------------- evaluation

def _kernel_block(k: KernelSpec, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    f = k.family
    if f == "rbf":
        return np.exp(-k.gamma * cdist(X, Y, "sqeuclidean"))
    if f == "laplacian":
        return np.exp(-k.gamma * cdist(X, Y, "cityblock"))
    if f == "poly":
        return (k.gamma * (X @ Y.T) + k.c) ** k.degree
    if f == "cosine":
        nx = np.linalg.norm(X, axis=1)
        ny = np.linalg.norm(Y, axis=1)
        if np.any(nx == 0) or np.any(ny == 0):
            raise ValueError("cosine kernel is undefined for a zero vector")
        return np.clip((X @ Y.T) / np.outer(nx, ny), -1.0, 1.0)
    if f == "delta":
        # compare integer codes of the distinct rows instead of whole rows
        _, codes = np.unique(np.vstack([X, Y]), axis=0, return_inverse=True)
        codes = codes.ravel()
        return (codes[:X.shape[0], None] == codes[None, X.shape[0]:]).astype(np.float64)
    blocks = k.blocks if k.blocks is not None else tuple((i,) for i in range(X.shape[1]))
    if max(i for b in blocks for i in b) >= X.shape[1]:
        raise ValueError("tensor blocks reference coordinates beyond the data dimension")
    out = np.ones((X.shape[0], Y.shape[0]))
    for b in blocks:
        out *= _kernel_block(k.base, X[:, list(b)], Y[:, list(b)])
    return out


def _as_points(x) -> np.ndarray:
    if isinstance(x, SampleSet):
        return x.points
    if isinstance(x, DiscreteDistribution):
        return x.atoms
    a = np.asarray(x, dtype=np.float64)
    return a[None, :] if a.ndim == 1 else a


def eval(k: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    return float(_kernel_block(k, x[None, :], y[None, :])[0, 0])


def gram(k: KernelSpec, X, Y=None) -> np.ndarray:
    """Dense Gram matrix, computed in row blocks."""
    A = _as_points(X)
    B = A if Y is None else _as_points(Y)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    parts = pmap(lambda s: _kernel_block(k, A[s], B), row_blocks(A.shape[0], BLOCK_ROWS))
    return np.vstack(parts)


def _weights(S) -> tuple[np.ndarray, np.ndarray, bool]:
    if isinstance(S, DiscreteDistribution):
        return S.atoms, S.probs, True
    P = _as_points(S)
    return P, np.full(P.shape[0], 1.0 / P.shape[0]), False


def weighted_sum(k: KernelSpec, X, Y, wx: np.ndarray, wy: np.ndarray, drop_diagonal: bool = False) -> float:
    """``sum_ij wx_i wy_j k(x_i, y_j)`` without holding the full Gram matrix.

    ``drop_diagonal`` (only for X is Y) skips the ``i == j`` terms.
    Block partials are summed in block order, independent of threading.
    """
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")

    def part(s: slice) -> float:
        K = _kernel_block(k, X[s], Y)
        if drop_diagonal:
            idx = np.arange(s.start, s.stop)
            K[idx - s.start, idx] = 0.0
        return float(wx[s] @ K @ wy)

    return float(np.sum(pmap(part, row_blocks(X.shape[0], BLOCK_ROWS))))


def sqnorm_biased(k: KernelSpec, X) -> float:
    P, w, _ = _weights(X)
    return weighted_sum(k, P, P, w, w)


def sqnorm_unbiased(k: KernelSpec, X) -> float:
    P, w, exact = _weights(X)
    if exact:
        return weighted_sum(k, P, P, w, w)
    n = P.shape[0]
    if n < 2:
        raise ValueError("unbiased squared norm needs at least 2 samples")
    ones = np.ones(n)
    return weighted_sum(k, P, P, ones, ones, drop_diagonal=True) / (n * (n - 1))


def cross_inner(k: KernelSpec, X, Y) -> float:
    A, wa, _ = _weights(X)
    B, wb, _ = _weights(Y)
    return weighted_sum(k, A, B, wa, wb)


@dataclass(frozen=True)
class EmbeddingStats:
    sqnorm_unbiased: float | None
    sqnorm_biased: float
    cross_inner: float

    @property
    def negative_unbiased(self) -> bool:
        return self.sqnorm_unbiased is not None and self.sqnorm_unbiased < 0

    def to_dict(self) -> dict:
        return {"sqnorm_unbiased": self.sqnorm_unbiased, "sqnorm_biased": self.sqnorm_biased,
                "cross_inner": self.cross_inner, "negative_unbiased": self.negative_unbiased}


def embedding_stats(k: KernelSpec, X, Y, unbiased: bool = True) -> EmbeddingStats:
    """Squared-norm estimates of X's embedding and its inner product with Y (a set or one point)."""
    return EmbeddingStats(sqnorm_unbiased(k, X) if unbiased else None, sqnorm_biased(k, X), cross_inner(k, X, Y))


def kernel_score(k: KernelSpec, X, y) -> float:
    """Score of the distribution represented by X on observed point ``y``."""
    return sqnorm_unbiased(k, X) - 2.0 * cross_inner(k, X, y)


def expected_kernel_score(k: KernelSpec, X, targets) -> float:
    """Kernel score averaged over a target sample (or exact target distribution)."""
    return sqnorm_unbiased(k, X) - 2.0 * cross_inner(k, X, targets)


def kernel_entropy(k: KernelSpec, X) -> float:
    return -sqnorm_unbiased(k, X)


def mmd2(k: KernelSpec, X, Y, mode: str = "unbiased") -> float:
    if mode == "biased":
        return sqnorm_biased(k, X) + sqnorm_biased(k, Y) - 2.0 * cross_inner(k, X, Y)
    if mode == "unbiased":
        return sqnorm_unbiased(k, X) + sqnorm_unbiased(k, Y) - 2.0 * cross_inner(k, X, Y)
    raise ValueError(f"mode must be 'biased' or 'unbiased', got {mode!r}")


def _norm(k: KernelSpec, X, what: str) -> float:
    sq = sqnorm_biased(k, X)
    if sq <= NORM_FLOOR:
        raise ValueError(f"embedding norm of {what} vanishes ({sq:.3g})")
    return float(np.sqrt(sq))


def cosine_similarity(k: KernelSpec, X, Y) -> float:
    """Cosine of the angle between the two mean embeddings (V-statistic norms)."""
    c = cross_inner(k, X, Y) / (_norm(k, X, "X") * _norm(k, Y, "Y"))
    return float(np.clip(c, -1.0, 1.0))


def eks(k: KernelSpec, X, Y) -> float:
    """Expected kernel spherical score of prediction X under target Y: ``-<mu_X, mu_Y> / ||mu_X||``."""
    return -cross_inner(k, X, Y) / _norm(k, X, "X")
