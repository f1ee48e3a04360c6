"""Calibration estimation functions, their pairwise risk and a
train/validation/test selection pipeline.

Every estimation function is factorized through a conditional-mean model
``c_hat``: ``h(p, p') = <p - c_hat(p), p' - c_hat(p')>``. Its diagonal mean
estimates the squared canonical calibration error, and it is scored against
the unbiased pair target ``<f_i - e_{y_i}, f_j - e_{y_j}>``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from ._parallel import pmap
from .calibration import BinningScheme, kd_conditionals, temperature_scale
from .core import LabeledPredictionSet
from .kernels import KernelSpec, gram


@dataclass(frozen=True)
class HSpec:
    """Unfitted calibration estimation function.

    kind: ``binned`` (bins), ``kde`` (h), ``krr`` (lam, gamma), ``oracle``
    (conditional handle) or ``zero`` (``c_hat(p) = p``, i.e. h == 0).
    """

    kind: str
    bins: BinningScheme | None = None
    h: float | None = None
    lam: float | None = None
    gamma: float = 5.0
    conditional: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("binned", "kde", "krr", "oracle", "zero"):
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        need = {"binned": self.bins, "kde": self.h, "krr": self.lam, "oracle": self.conditional}
        if self.kind in need and need[self.kind] is None:
            raise ValueError(f"{self.kind} estimator is missing its hyperparameter")
        if self.kind == "kde" and not self.h > 0:
            raise ValueError("kde bandwidth must be > 0")
        if self.kind == "krr" and not (self.lam > 0 and self.gamma > 0):
            raise ValueError("krr needs lambda > 0 and gamma > 0")

    @property
    def name(self) -> str:
        if self.kind == "binned":
            return f"binned({self.bins})"
        if self.kind == "kde":
            return f"kde(h={self.h:g})"
        if self.kind == "krr":
            return f"krr(lambda={self.lam:g},gamma={self.gamma:g})"
        return self.kind

    @property
    def complexity(self) -> float:
        """Smaller is simpler: fewer bins, larger bandwidth, larger ridge penalty."""
        if self.kind == "binned":
            return float(self.bins.M)
        if self.kind == "kde":
            return 1.0 / self.h
        if self.kind == "krr":
            return 1.0 / self.lam
        return 0.0

    def hyperparams(self) -> dict:
        return {"binned": {"bins": str(self.bins)}, "kde": {"h": self.h},
                "krr": {"lambda": self.lam, "gamma": self.gamma}}.get(self.kind, {})


def parse_hspec(obj: dict) -> HSpec:
    """Build an ``HSpec`` from a JSON object such as ``{"kind": "kde", "h": 0.05}``.

    ``{"kind": "oracle", "ts_alpha": a}`` uses the exact conditional of a
    temperature-miscalibrated synthetic model (``a = 1`` means calibrated).
    """
    kind = obj.get("kind")
    if kind == "binned":
        return HSpec("binned", bins=BinningScheme.parse(str(obj.get("bins", "uniform:10"))))
    if kind == "kde":
        return HSpec("kde", h=float(obj["h"]))
    if kind == "krr":
        return HSpec("krr", lam=float(obj["lambda"]), gamma=float(obj.get("gamma", 5.0)))
    if kind == "oracle":
        a = float(obj.get("ts_alpha", 1.0))
        cond = (lambda P: np.array(P, dtype=float)) if a == 1 else (lambda P: temperature_scale(P, 1.0 / a))
        return HSpec("oracle", conditional=cond)
    if kind == "zero":
        return HSpec("zero")
    raise ValueError(f"unknown candidate {obj!r}")


@dataclass(frozen=True)
class CalibrationEstimationFunction:
    spec: HSpec
    c_hat: Callable[[np.ndarray], np.ndarray]
    train_provenance: frozenset = frozenset()

    @property
    def name(self) -> str:
        return self.spec.name

    def residuals(self, P) -> np.ndarray:
        """``p - c_hat(p)`` row-wise."""
        P = np.atleast_2d(np.asarray(P, dtype=np.float64))
        return P - self.c_hat(P)

    def __call__(self, P, P2=None) -> np.ndarray:
        """Matrix ``h(P[i], P2[j])``."""
        Z = self.residuals(P)
        Z2 = Z if P2 is None else self.residuals(P2)
        return Z @ Z2.T

    def diagonal(self, P) -> np.ndarray:
        Z = self.residuals(P)
        return np.sum(Z * Z, axis=1)


def _fit_binned(spec: HSpec, train: LabeledPredictionSet):
    conf = train.probs.max(axis=1)
    scheme = spec.bins
    edges = scheme.edges(conf)
    idx = _bin_index(scheme, edges, conf)
    Y = train.onehot()
    shift = np.zeros((scheme.M, train.d))  # per bin: label frequency - mean prediction
    for b in range(scheme.M):
        mask = idx == b
        if mask.any():
            shift[b] = Y[mask].mean(axis=0) - train.probs[mask].mean(axis=0)

    def c_hat(P):
        return P + shift[_bin_index(scheme, edges, P.max(axis=1))]

    return c_hat


def _bin_index(scheme: BinningScheme, edges: np.ndarray, v: np.ndarray) -> np.ndarray:
    if scheme.mode == "uniform":
        return scheme.assign(v)
    return np.searchsorted(edges, v, side="left")


def _fit_krr(spec: HSpec, train: LabeledPredictionSet):
    k = KernelSpec("rbf", gamma=spec.gamma)
    Y = train.onehot()
    ybar = Y.mean(axis=0)
    K = gram(k, train.probs)
    try:
        coef = scipy.linalg.solve(K + spec.lam * np.eye(train.n), Y - ybar, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise ValueError(f"kernel ridge system is singular for lambda={spec.lam:g}: {e}") from None
    if not np.all(np.isfinite(coef)):
        raise ValueError(f"kernel ridge system is singular for lambda={spec.lam:g}")
    X = train.probs

    def c_hat(P):
        C = ybar + gram(k, P, X) @ coef
        C = np.clip(C, 0.0, None)
        s = C.sum(axis=1, keepdims=True)
        return np.where(s > 0, C / np.where(s > 0, s, 1.0), 1.0 / C.shape[1])

    return c_hat


def fit(spec: HSpec, train: LabeledPredictionSet) -> CalibrationEstimationFunction:
    if spec.kind == "binned":
        c_hat = _fit_binned(spec, train)
    elif spec.kind == "kde":
        def c_hat(P, _h=spec.h):
            return kd_conditionals(train, P, _h)[0]
    elif spec.kind == "krr":
        c_hat = _fit_krr(spec, train)
    elif spec.kind == "oracle":
        cond = spec.conditional

        def c_hat(P):
            return np.atleast_2d(np.asarray(cond(P), dtype=np.float64))
    else:
        def c_hat(P):
            return np.array(P, dtype=np.float64)
    return CalibrationEstimationFunction(spec, c_hat, frozenset(train.provenance()))


def empirical_ce_risk(h: CalibrationEstimationFunction, data: LabeledPredictionSet) -> float:
    """Mean over ordered pairs ``i != j`` of ``(<r_i, r_j> - h(f_i, f_j))^2`` with ``r = f - e_y``.

    Uses ``sum_ij (R R^T - Z Z^T)_ij^2 = ||R^T R||^2 + ||Z^T Z||^2 - 2 ||R^T Z||^2``
    (all d x d), then removes the diagonal, so the cost is O(n d^2).
    """
    n = data.n
    if n < 2:
        raise ValueError("risk needs at least 2 instances")
    if h.train_provenance & data.provenance():
        raise ValueError("evaluation data overlaps the estimator's training data")
    R = data.probs - data.onehot()
    Z = h.residuals(data.probs)
    full = np.sum((R.T @ R) ** 2) + np.sum((Z.T @ Z) ** 2) - 2.0 * np.sum((R.T @ Z) ** 2)
    diag = np.sum((np.sum(R * R, axis=1) - np.sum(Z * Z, axis=1)) ** 2)
    return float((full - diag) / (n * (n - 1)))


def empirical_ce_risk_bruteforce(h: CalibrationEstimationFunction, data: LabeledPredictionSet) -> float:
    """Double loop over all ordered pairs; the reference for ``empirical_ce_risk``."""
    F, Y = data.probs, data.onehot()
    H = h(F)
    total = 0.0
    for i in range(data.n):
        for j in range(data.n):
            if i != j:
                total += (float(np.dot(F[i] - Y[i], F[j] - Y[j])) - H[i, j]) ** 2
    return total / (data.n * (data.n - 1))


@dataclass(frozen=True)
class RiskReport:
    candidates: list
    chosen: str
    test_ce: float

    def to_dict(self) -> dict:
        return {"chosen": self.chosen, "test_ce": self.test_ce, "candidates": self.candidates}


def _check_disjoint(splits: Sequence[LabeledPredictionSet]) -> None:
    names = ("train", "val", "test")
    prov = [s.provenance() for s in splits]
    for a in range(3):
        for b in range(a + 1, 3):
            common = prov[a] & prov[b]
            if common:
                raise ValueError(f"{names[a]} and {names[b]} splits overlap in {len(common)} rows")


def pipeline(candidates: Sequence[HSpec], train: LabeledPredictionSet, val: LabeledPredictionSet,
             test: LabeledPredictionSet) -> RiskReport:
    """Fit on train, select by validation risk, report the winner's test CE (L2 scale)."""
    if not candidates:
        raise ValueError("need at least one candidate")
    _check_disjoint((train, val, test))

    def evaluate(spec: HSpec) -> dict:
        h = fit(spec, train)
        return {
            "name": spec.name,
            "kind": spec.kind,
            "hyperparams": spec.hyperparams(),
            "complexity": spec.complexity,
            "train_risk": float(empirical_ce_risk(h, _relabel(train))) if train.n > 1 else None,
            "val_risk": empirical_ce_risk(h, val),
            "test_risk": empirical_ce_risk(h, test),
            "test_ce": float(np.sqrt(np.mean(h.diagonal(test.probs)))),
        }

    rows = pmap(evaluate, candidates)
    best = min(rows, key=lambda r: (r["val_risk"], r["complexity"], r["name"]))
    return RiskReport(rows, best["name"], best["test_ce"])


def _relabel(data: LabeledPredictionSet) -> LabeledPredictionSet:
    # in-sample risk is reported for diagnostics, so bypass the overlap guard
    return LabeledPredictionSet(data.probs, data.labels, source=data.source + "#in-sample", row_ids=data.row_ids)
