"""Bias-variance(-covariance) decompositions of the kernel score over ensembles
of sample-based predictions, evaluated purely through Gram sums.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ._parallel import pmap
from .core import DecompositionReport, EnsembleGrid, SampleSet
from .kernels import KernelSpec, _kernel_block, _weights, cross_inner, sqnorm_biased, sqnorm_unbiased

MODES = ("plugin", "unbiased")


def inner_matrix(k: KernelSpec, dists: Sequence) -> np.ndarray:
    """``A[i, j] = <mu_i, mu_j>`` for empirical (or exact) distributions, V-statistics."""
    parts = [_weights(d) for d in dists]
    if len({p[0].shape[1] for p in parts}) != 1:
        raise ValueError("all sample sets must share one dimension")
    pts = np.vstack([p[0] for p in parts])
    w = np.concatenate([p[1] for p in parts])
    offsets = np.cumsum([0] + [p[0].shape[0] for p in parts[:-1]])

    def row(i: int) -> np.ndarray:
        P, wi, _ = parts[i]
        r = (wi @ _kernel_block(k, P, pts)) * w
        return np.add.reduceat(r, offsets)

    A = np.array(pmap(row, range(len(parts))))
    return 0.5 * (A + A.T)


def _self_norms(k: KernelSpec, dists: Sequence, mode: str, A: np.ndarray) -> np.ndarray:
    if mode == "plugin":
        return np.diag(A).copy()
    return np.array([sqnorm_unbiased(k, d) for d in dists])


def _check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"estimator mode must be one of {MODES}, got {mode!r}")
    return mode


def ks_bvd_sets(k: KernelSpec, members: Sequence, targets, mode: str = "plugin") -> DecompositionReport:
    """Kernel-score decomposition for m member distributions against a target sample.

    In plugin mode all norms are V-statistics and the identity
    ``bias + variance + noise == total`` is exact. Unbiased mode swaps the
    within-set squared norms (members and targets) for U-statistics.
    """
    _check_mode(mode)
    if len(members) < 1:
        raise ValueError("need at least one member")
    A = inner_matrix(k, members)
    t = np.array([cross_inner(k, X, targets) for X in members])
    self_n = _self_norms(k, members, mode, A)
    A = A.copy()
    np.fill_diagonal(A, self_n)
    tt = sqnorm_biased(k, targets) if mode == "plugin" else sqnorm_unbiased(k, targets)
    mean_all = A.mean()
    bias = mean_all - 2.0 * t.mean() + tt
    variance = self_n.mean() - mean_all
    total = float(np.mean(self_n - 2.0 * t))
    counts = {"m": len(members), "R": 1, "n_target": _size(targets)}
    return DecompositionReport(float(bias), float(variance), float(-tt), total, estimator_mode=mode, counts=counts)


def ks_bvd(k: KernelSpec, ensemble: EnsembleGrid, targets, mode: str = "plugin") -> DecompositionReport:
    if ensemble.R != 1:
        raise ValueError(f"ks_bvd expects one replicate per member, got R={ensemble.R}; use ks_bvc")
    return ks_bvd_sets(k, [row[0] for row in ensemble.members], targets, mode)


def ks_bvc_sets(k: KernelSpec, grid: Sequence[Sequence], targets, mode: str = "plugin") -> DecompositionReport:
    """Bias-variance-covariance split for the mean of m correlated members.

    ``grid[k][r]`` is member k's prediction in replicate r. The member
    expectation is the replicate mean; the scored predictor in replicate r is
    the equal-weight mixture of the m members.
    """
    _check_mode(mode)
    m = len(grid)
    R = len(grid[0]) if m else 0
    if m < 1 or any(len(row) != R for row in grid):
        raise ValueError("grid must be rectangular with at least one member")
    if R < 2:
        raise ValueError("ks_bvc needs R >= 2 replicates to estimate member variance")
    flat = [d for row in grid for d in row]
    A = inner_matrix(k, flat)
    self_n = _self_norms(k, flat, mode, A)
    A = A.copy()
    np.fill_diagonal(A, self_n)
    A4 = A.reshape(m, R, m, R)
    t = np.array([cross_inner(k, X, targets) for X in flat]).reshape(m, R)
    tt = sqnorm_biased(k, targets) if mode == "plugin" else sqnorm_unbiased(k, targets)

    same_rep = np.einsum("krlr->klr", A4).mean(axis=2)  # mean_r <v_kr, v_lr>
    bar = A4.mean(axis=(1, 3))  # <vbar_k, vbar_l>
    centered = same_rep - bar
    avg_var = float(np.mean(np.diag(centered)))
    avg_cov = float((centered.sum() - np.trace(centered)) / (m * (m - 1))) if m > 1 else 0.0

    bias = A.mean() - 2.0 * t.mean() + tt
    variance = avg_var / m
    covariance = (1.0 - 1.0 / m) * avg_cov
    mix_sq = np.einsum("krlr->r", A4) / m**2  # ||mu_r||^2 of the replicate mixture
    total = float(np.mean(mix_sq - 2.0 * t.mean(axis=0)))
    counts = {"m": m, "R": R, "n_target": _size(targets)}
    return DecompositionReport(float(bias), float(variance), float(-tt), total, covariance=float(covariance),
                               estimator_mode=mode, counts=counts,
                               extra={"avg_var": avg_var, "avg_cov": avg_cov})


def ks_bvc(k: KernelSpec, ensemble: EnsembleGrid, targets, mode: str = "plugin") -> DecompositionReport:
    return ks_bvc_sets(k, ensemble.members, targets, mode)


def _size(d) -> int:
    return d.n if isinstance(d, SampleSet) else len(_weights(d)[1])


def uncertainty_profile(k: KernelSpec, ensembles: Sequence[EnsembleGrid], targets: Sequence | None = None,
                        ids: Sequence[str] | None = None) -> list[dict]:
    """Per-instance kernel entropy of the pooled samples and the plugin member variance.

    Each member's replicates are pooled into one prediction. With per-instance
    targets the plugin expected kernel score of the pooled prediction is added.
    """
    ids = list(ids) if ids is not None else [str(i + 1) for i in range(len(ensembles))]
    out = []
    for i, grid in enumerate(ensembles):
        members = [SampleSet(np.vstack([s.points for s in row])) for row in grid.members]
        pooled = grid.pooled()
        A = inner_matrix(k, members)
        row = {
            "id": ids[i],
            "kernel_entropy": -sqnorm_unbiased(k, pooled) if pooled.n > 1 else -sqnorm_biased(k, pooled),
            "ks_variance": float(np.mean(np.diag(A)) - A.mean()),
        }
        if targets is not None:
            row["kernel_score"] = sqnorm_biased(k, pooled) - 2.0 * cross_inner(k, pooled, targets[i])
        out.append(row)
    return out
