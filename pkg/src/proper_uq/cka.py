"""HSIC / CKA, CKA-driven clustering of coordinates and the per-cluster
factorization of mean-embedding cosine similarity and EKS.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from ._parallel import pmap
from .core import DiscreteDistribution, SampleSet
from .kernels import KernelSpec, cosine_similarity, eks, gram

DEGENERATE = 1e-15


def _points(x) -> np.ndarray:
    if isinstance(x, SampleSet):
        return x.points
    a = np.asarray(x, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


def _centered_gram(k: KernelSpec, X: np.ndarray) -> np.ndarray:
    K = gram(k, X)
    return K - K.mean(axis=0, keepdims=True) - K.mean(axis=1, keepdims=True) + K.mean()


def _hsic_centered(Kc: np.ndarray, Lc: np.ndarray) -> float:
    n = Kc.shape[0]
    return float(np.sum(Kc * Lc) / n**2)


def hsic(kx: KernelSpec, ky: KernelSpec, X, Y) -> float:
    """Biased HSIC: ``trace(H K H L) / n^2`` for paired observations."""
    X, Y = _points(X), _points(Y)
    if X.shape[0] != Y.shape[0]:
        raise ValueError("X and Y must be paired (same number of rows)")
    if X.shape[0] < 2:
        raise ValueError("HSIC needs at least 2 paired observations")
    return _hsic_centered(_centered_gram(kx, X), _centered_gram(ky, Y))


def _cka_from(hxy: float, hxx: float, hyy: float) -> float:
    if hxx <= DEGENERATE or hyy <= DEGENERATE:
        raise ValueError("degenerate variable: HSIC of a variable with itself vanishes")
    return float(np.clip(hxy / np.sqrt(hxx * hyy), 0.0, 1.0))


def cka(kx: KernelSpec, ky: KernelSpec, X, Y) -> float:
    X, Y = _points(X), _points(Y)
    if X.shape[0] != Y.shape[0]:
        raise ValueError("X and Y must be paired (same number of rows)")
    if X.shape[0] < 2:
        raise ValueError("CKA needs at least 2 paired observations")
    Kc, Lc = _centered_gram(kx, X), _centered_gram(ky, Y)
    return _cka_from(_hsic_centered(Kc, Lc), _hsic_centered(Kc, Kc), _hsic_centered(Lc, Lc))


@dataclass(frozen=True)
class CkaMatrix:
    values: np.ndarray
    constant: tuple[int, ...] = ()

    @property
    def d(self) -> int:
        return self.values.shape[0]


def cka_matrix(samples, k: KernelSpec) -> CkaMatrix:
    """Pairwise CKA between the coordinates of ``samples`` (n observations x d coordinates).

    Constant coordinates get zero off-diagonal similarity and are listed in
    ``constant``.
    """
    X = _points(samples)
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least 2 observations")
    grams = pmap(lambda j: _centered_gram(k, X[:, [j]]), range(d))
    self_h = np.array([_hsic_centered(G, G) for G in grams])
    constant = tuple(int(j) for j in np.flatnonzero(self_h <= DEGENERATE))
    C = np.eye(d)
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d) if i not in constant and j not in constant]
    vals = pmap(lambda ij: _cka_from(_hsic_centered(grams[ij[0]], grams[ij[1]]), self_h[ij[0]], self_h[ij[1]]),
                pairs)
    for (i, j), v in zip(pairs, vals):
        C[i, j] = C[j, i] = v
    C.setflags(write=False)
    return CkaMatrix(C, constant)


@dataclass(frozen=True)
class DimensionPartition:
    clusters: tuple[tuple[int, ...], ...]
    tau: float

    def __post_init__(self):
        flat = sorted(i for c in self.clusters for i in c)
        if flat != list(range(len(flat))) or any(len(c) == 0 for c in self.clusters):
            raise ValueError("clusters must be nonempty and exactly cover 0..d-1")

    @property
    def d(self) -> int:
        return sum(len(c) for c in self.clusters)


def cluster_dimensions(matrix, tau: float) -> DimensionPartition:
    """Average-linkage clustering on dissimilarity ``1 - CKA``, cut at ``1 - tau``.

    Clusters are listed by their smallest coordinate, members ascending.
    """
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    C = np.asarray(matrix.values if isinstance(matrix, CkaMatrix) else matrix, dtype=np.float64)
    d = C.shape[0]
    if d == 1:
        return DimensionPartition(((0,),), tau)
    D = np.clip(1.0 - 0.5 * (C + C.T), 0.0, None)
    np.fill_diagonal(D, 0.0)
    labels = fcluster(linkage(squareform(D, checks=False), method="average"), t=1.0 - tau, criterion="distance")
    groups: dict = {}
    for i, lab in enumerate(labels):
        groups.setdefault(lab, []).append(i)
    clusters = sorted((tuple(g) for g in groups.values()), key=lambda g: g[0])
    return DimensionPartition(tuple(clusters), tau)


def _restrict(x, coords: Sequence[int]):
    coords = list(coords)
    if isinstance(x, DiscreteDistribution):
        merged: dict = {}
        for a, w in zip(x.atoms, x.probs):
            key = tuple(a[coords])
            merged[key] = merged.get(key, 0.0) + w
        return DiscreteDistribution(np.array(list(merged)), np.array(list(merged.values())))
    return SampleSet(_points(x)[:, coords])


def _dim(x) -> int:
    return x.atoms.shape[1] if isinstance(x, DiscreteDistribution) else _points(x).shape[1]


@dataclass(frozen=True)
class DisentangleReport:
    mode: str
    partition: DimensionPartition
    factors: list
    product: float
    full: float
    counts: dict = field(default_factory=dict)

    @property
    def residual(self) -> float:
        return abs(self.product - self.full)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "tau": self.partition.tau,
                "clusters": [[i + 1 for i in c] for c in self.partition.clusters],
                "factors": self.factors, "product": self.product, "full": self.full,
                "residual": self.residual, "counts": self.counts}


def disentangled_cosine(k_base: KernelSpec, partition: DimensionPartition, X, Y, mode: str = "cosine"
                        ) -> DisentangleReport:
    """Per-cluster cosine (or EKS) under the tensor kernel, their product and the full-space value.

    Signed EKS values are negative, so the EKS product is ``-prod(-EKS_I)``,
    which equals the full EKS whenever the embeddings factorize.
    """
    if mode not in ("cosine", "eks"):
        raise ValueError("mode must be 'cosine' or 'eks'")
    if _dim(X) != _dim(Y) or _dim(X) != partition.d:
        raise ValueError("X, Y and the partition must share the dimension")
    fn = cosine_similarity if mode == "cosine" else eks
    tensor = KernelSpec("tensor", base=k_base)
    factors = []
    for c, coords in enumerate(partition.clusters):
        try:
            factors.append(fn(tensor, _restrict(X, coords), _restrict(Y, coords)))
        except ValueError as e:
            raise ValueError(f"cluster {c + 1} {[i + 1 for i in coords]}: {e}") from None
    if mode == "cosine":
        product = float(np.prod(factors))
    else:
        product = -float(np.prod([-f for f in factors]))
    full = fn(tensor, X, Y)
    counts = {"n_x": _size(X), "n_y": _size(Y), "cluster_sizes": [len(c) for c in partition.clusters]}
    return DisentangleReport(mode, partition, [float(f) for f in factors], product, float(full), counts)


def _size(x) -> int:
    return len(x.probs) if isinstance(x, DiscreteDistribution) else _points(x).shape[0]
