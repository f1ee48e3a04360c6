"""Bregman divergences, convex conjugates, Bregman Information and the
dual-space bias-variance decomposition of classification scores.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import expit, log_expit, logsumexp

from .core import DecompositionReport, SimplexVector, make_rng
from .scores import ScoreKind, divergence, entropy, expected_score

LOG_BOUNDARY = 1e-12


# --------------------------------------------------------------------------- 1-D generators

@dataclass(frozen=True)
class Generator1D:
    """Strictly convex scalar function with its derivative and convex conjugate."""

    name: str
    g: Callable[[float], float]
    grad: Callable[[float], float]
    conj: Callable[[float], float]
    conj_grad: Callable[[float], float]
    lo: float = -np.inf
    hi: float = np.inf

    def check(self, x: float) -> float:
        x = float(x)
        if not self.lo < x < self.hi:
            raise ValueError(f"{x!r} outside the open domain ({self.lo}, {self.hi}) of {self.name}")
        return x

    def with_affine(self, a: float, b: float) -> "Generator1D":
        """``g(x) + a*x + b``; its conjugate is ``g*(s - a) - b``."""
        return Generator1D(
            f"{self.name}+affine({a},{b})",
            lambda x: self.g(x) + a * x + b,
            lambda x: self.grad(x) + a,
            lambda s: self.conj(s - a) - b,
            lambda s: self.conj_grad(s - a),
            self.lo,
            self.hi,
        )


def _neg_binary_entropy(x):
    return x * np.log(x) + (1.0 - x) * np.log1p(-x)


NEG_BINARY_ENTROPY = Generator1D(
    "neg_binary_entropy",
    _neg_binary_entropy,
    lambda x: np.log(x) - np.log1p(-x),
    lambda s: -log_expit(-s),  # softplus, stable for large |s|
    expit,
    0.0,
    1.0,
)

SQUARE = Generator1D(
    "square",
    lambda x: x * x,
    lambda x: 2.0 * x,
    lambda s: 0.25 * s * s,
    lambda s: 0.5 * s,
)

GENERATORS = {g.name: g for g in (NEG_BINARY_ENTROPY, SQUARE)}


def _breg(f, df, x, y) -> float:
    return float(f(y) - f(x) - df(x) * (y - x))


def bregman_1d(gen: Generator1D, x: float, y: float) -> float:
    """``g(y) - g(x) - g'(x)(y - x)``."""
    x, y = gen.check(x), gen.check(y)
    return _breg(gen.g, gen.grad, x, y)


def dual_flip_check(gen: Generator1D, x: float, y: float) -> dict:
    """Compare ``D_g(x, y)`` with ``D_{g*}(g'(y), g'(x))``."""
    lhs = bregman_1d(gen, x, y)
    rhs = _breg(gen.conj, gen.conj_grad, gen.grad(y), gen.grad(x))
    return {"lhs": lhs, "rhs": rhs, "gap": abs(lhs - rhs)}


def integral_representation_check(gen: Generator1D, x: float, y: float) -> float:
    """Gap between ``D_g(x, y)`` and its gradient-only form ``int_x^y g' - g'(x)(y - x)``."""
    x, y = gen.check(x), gen.check(y)
    area, _ = integrate.quad(gen.grad, x, y, epsabs=1e-13, epsrel=1e-13, limit=200)
    return abs(bregman_1d(gen, x, y) - (area - gen.grad(x) * (y - x)))


# --------------------------------------------------------------------------- dual coordinates

@dataclass(frozen=True)
class DualVector:
    """Dual coordinates of a prediction: gauged log-probabilities (Log) or the probabilities (Brier)."""

    coords: np.ndarray
    kind: ScoreKind


def _supported(kind) -> ScoreKind:
    kind = ScoreKind.parse(kind)
    if kind is ScoreKind.SPHERICAL:
        raise ValueError("the spherical score has no dual-space decomposition here; use brier or log")
    return kind


def _probs(p) -> np.ndarray:
    return p.probs if isinstance(p, SimplexVector) else np.asarray(p, dtype=np.float64)


def _dual_coords(kind: ScoreKind, P: np.ndarray) -> np.ndarray:
    if kind is ScoreKind.LOG:
        if np.any(P < LOG_BOUNDARY):
            raise ValueError(f"log kind requires every probability >= {LOG_BOUNDARY:g}")
        L = np.log(P)
        return L - L.mean(axis=-1, keepdims=True)
    return P.copy()


def to_dual(kind, p) -> DualVector:
    kind = _supported(kind)
    return DualVector(_dual_coords(kind, _probs(p)), kind)


def from_dual(dual: DualVector) -> SimplexVector:
    if dual.kind is ScoreKind.LOG:
        t = dual.coords - logsumexp(dual.coords)
        return SimplexVector(np.exp(t))
    return SimplexVector(dual.coords)


def conjugate(kind, coords: np.ndarray) -> np.ndarray:
    """Convex conjugate of the negative entropy, evaluated row-wise on dual coordinates."""
    kind = _supported(kind)
    coords = np.asarray(coords, dtype=np.float64)
    if kind is ScoreKind.LOG:
        return logsumexp(coords, axis=-1)
    return np.sum(coords * coords, axis=-1)


def bregman_information(kind, members: Sequence, weights=None) -> float:
    """Jensen gap ``E[G*(S(P))] - G*(E[S(P)])`` over an (optionally weighted) ensemble."""
    kind = _supported(kind)
    P = np.atleast_2d(np.array([_probs(p) for p in members], dtype=np.float64))
    w = np.full(P.shape[0], 1.0 / P.shape[0]) if weights is None else np.asarray(weights, float) / np.sum(weights)
    D = _dual_coords(kind, P)
    return float(w @ conjugate(kind, D) - conjugate(kind, w @ D))


def bvd_classification(kind, members: Sequence, q) -> DecompositionReport:
    """Bias-variance-noise split of the mean expected score of an ensemble.

    bias is the divergence from the dual-space mean prediction to ``q``,
    variance is the Bregman Information of the members and noise is the
    entropy of ``q``.
    """
    kind = _supported(kind)
    P = np.atleast_2d(np.array([_probs(p) for p in members], dtype=np.float64))
    q = _probs(q)
    if P.shape[1] != q.shape[0]:
        raise ValueError("members and target must share the number of classes")
    if kind is ScoreKind.LOG and np.any(q < LOG_BOUNDARY):
        raise ValueError(f"log kind requires every target probability >= {LOG_BOUNDARY:g}")
    center = from_dual(DualVector(_dual_coords(kind, P).mean(axis=0), kind))
    bias = divergence(kind, center, q)
    variance = bregman_information(kind, P)
    noise = entropy(kind, q)
    total = float(np.mean([expected_score(kind, p, q) for p in P]))
    return DecompositionReport(bias, variance, noise, total, counts={"m": P.shape[0], "d": P.shape[1]},
                               extra={"kind": kind.value, "dual_mean_prediction": center.probs.tolist()})


def bernoulli_bvd(p: float, n: int, trials: int, seed: int) -> dict:
    """Squared-error decomposition of the Bernoulli mean estimator ``p_hat = mean of n draws``."""
    if not 0 < p < 1 or n < 1 or trials < 1:
        raise ValueError("need 0 < p < 1, n >= 1 and trials >= 1")
    rng = make_rng(seed)
    phat = rng.binomial(n, p, size=trials) / n
    return {
        "empirical_variance": float(np.var(phat, ddof=1)) if trials > 1 else 0.0,
        "theoretical_variance": p * (1 - p) / n,
        "bias": 0.0,
        "empirical_bias": float(phat.mean() - p),
        "noise": p * (1 - p),
        "trials": trials,
    }
