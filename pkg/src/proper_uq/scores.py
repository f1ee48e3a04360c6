"""Classification proper scores with their entropies and divergences.

Conventions: natural logarithm, 0-based class indices, lower score is better.
Log-score quantities that diverge are returned as ``inf`` rather than raised;
callers that need finite values smooth their inputs explicitly.
"""

from __future__ import annotations

import enum

import numpy as np

from .core import LabeledPredictionSet, SimplexVector


class ScoreKind(enum.Enum):
    BRIER = "brier"
    LOG = "log"
    SPHERICAL = "spherical"

    @classmethod
    def parse(cls, value) -> "ScoreKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown score kind {value!r}; choose from brier, log, spherical") from None


def _vec(p) -> np.ndarray:
    if isinstance(p, SimplexVector):
        return p.probs
    return np.asarray(p, dtype=np.float64)


def _check_label(y, d: int) -> int:
    if int(y) != y or not 0 <= int(y) < d:
        raise ValueError(f"class index {y!r} outside 0..{d - 1}")
    return int(y)


def score(kind, p, y) -> float:
    """Score of predicted distribution ``p`` on observed class ``y`` (0-based)."""
    kind = ScoreKind.parse(kind)
    p = _vec(p)
    y = _check_label(y, p.shape[0])
    if kind is ScoreKind.BRIER:
        return float(np.dot(p, p) - 2.0 * p[y])
    if kind is ScoreKind.LOG:
        return float("inf") if p[y] == 0 else float(-np.log(p[y]))
    return float(-p[y] / np.linalg.norm(p))


def score_matrix(kind, probs) -> np.ndarray:
    """``out[i, y] = score(kind, probs[i], y)`` for every class."""
    kind = ScoreKind.parse(kind)
    P = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if kind is ScoreKind.BRIER:
        return np.sum(P * P, axis=1, keepdims=True) - 2.0 * P
    if kind is ScoreKind.LOG:
        with np.errstate(divide="ignore"):
            return -np.log(P)
    return -P / np.linalg.norm(P, axis=1, keepdims=True)


def scores(kind, probs, labels) -> np.ndarray:
    """Per-instance scores for arrays of predictions and 0-based labels."""
    P = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64)
    return score_matrix(kind, P)[np.arange(P.shape[0]), y]


def entropy(kind, p) -> float:
    """Entropy of ``p``: the minimal expected score ``E_{Y~p} S(p, Y)``.

    Shannon entropy for Log, ``-sum p_i^2`` for Brier and ``-||p||`` for
    Spherical; concave in ``p`` in every case.
    """
    kind = ScoreKind.parse(kind)
    p = _vec(p)
    if kind is ScoreKind.BRIER:
        return float(-np.dot(p, p))
    if kind is ScoreKind.LOG:
        nz = p[p > 0]
        return float(-np.sum(nz * np.log(nz)))
    return float(-np.linalg.norm(p))


def entropies(kind, probs) -> np.ndarray:
    kind = ScoreKind.parse(kind)
    P = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if kind is ScoreKind.BRIER:
        return -np.sum(P * P, axis=1)
    if kind is ScoreKind.LOG:
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(P > 0, P * np.log(np.where(P > 0, P, 1.0)), 0.0)
        return -t.sum(axis=1)
    return -np.linalg.norm(P, axis=1)


def divergences(kind, p, q) -> np.ndarray:
    """Row-wise divergence ``D(p_i, q_i)`` between prediction ``p`` and truth ``q``.

    Brier gives the squared distance, Log gives ``KL(q || p)`` and Spherical
    gives ``(1 - cos(p, q)) * ||q||``.
    """
    kind = ScoreKind.parse(kind)
    P = np.atleast_2d(np.asarray(p, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    if kind is ScoreKind.BRIER:
        diff = P - Q
        return np.sum(diff * diff, axis=1)
    if kind is ScoreKind.LOG:
        P, Q = np.broadcast_arrays(P, Q)
        pos = Q > 0
        with np.errstate(divide="ignore"):
            terms = np.where(pos, Q * (np.log(np.where(pos, Q, 1.0)) - np.log(np.where(pos, P, 1.0))), 0.0)
        out = terms.sum(axis=1)
        out[np.any(pos & (P == 0), axis=1)] = np.inf
        return np.maximum(out, 0.0)
    pn = np.linalg.norm(P, axis=1)
    qn = np.linalg.norm(Q, axis=1)
    cos = np.clip(np.sum(P * Q, axis=1) / (pn * qn), -1.0, 1.0)
    return (1.0 - cos) * qn


def divergence(kind, p, q) -> float:
    return float(divergences(kind, _vec(p), _vec(q))[0])


def expected_score(kind, p, q) -> float:
    """``E_{Y~q} S(p, Y)``, evaluated as ``divergence(p, q) + entropy(q)``."""
    return divergence(kind, p, q) + entropy(kind, q)


def expected_score_bruteforce(kind, p, q) -> float:
    """Direct outcome sum ``sum_y q_y S(p, y)``; skips outcomes with ``q_y = 0``."""
    q = _vec(q)
    return float(sum(q[y] * score(kind, p, y) for y in range(q.shape[0]) if q[y] > 0))


def empirical_risk(kind, data: LabeledPredictionSet) -> float:
    return float(np.mean(per_instance_scores(kind, data)))


def per_instance_scores(kind, data: LabeledPredictionSet) -> np.ndarray:
    return scores(kind, data.probs, data.labels)
