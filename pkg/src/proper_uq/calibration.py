"""Calibration-error estimators, sharpness and temperature scaling.

Estimators work on ``LabeledPredictionSet``. The conditional label law given
a prediction is estimated with a Dirichlet-kernel density ratio evaluated in
log space.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from ._parallel import pmap, row_blocks
from .core import LabeledPredictionSet, SimplexVector
from .scores import ScoreKind, divergences, empirical_risk, entropies

Y_CLAMP = 1e-10
LOG_SMOOTHING = 1e-6
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


# --------------------------------------------------------------------------- binning

@dataclass(frozen=True)
class BinningScheme:
    """``uniform`` (equal-width) or ``mass`` (equal-mass) partition of [0, 1] into M bins."""

    mode: str
    M: int

    def __post_init__(self):
        mode = {"uniformwidth": "uniform", "equalmass": "mass"}.get(self.mode.lower(), self.mode.lower())
        if mode not in ("uniform", "mass"):
            raise ValueError(f"binning mode must be uniform or mass, got {self.mode!r}")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError("number of bins must be a positive integer")
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "M", int(self.M))

    @classmethod
    def parse(cls, text: str) -> "BinningScheme":
        mode, _, m = text.partition(":")
        try:
            return cls(mode, int(m))
        except ValueError as e:
            raise ValueError(f"bad binning spec {text!r}; expected e.g. uniform:10 or mass:10 ({e})") from None

    def __str__(self) -> str:
        return f"{self.mode}:{self.M}"

    def edges(self, values: np.ndarray) -> np.ndarray:
        """Upper edges of bins 0..M-2; the last bin is closed at 1."""
        if self.mode == "uniform":
            return np.arange(1, self.M) / self.M
        v = np.sort(np.asarray(values, dtype=np.float64))
        n = v.shape[0]
        return np.array([v[math.ceil(j * n / self.M) - 1] for j in range(1, self.M)])

    def assign(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        if self.mode == "uniform":
            return np.minimum(np.floor(v * self.M).astype(np.int64), self.M - 1)
        # bin = number of edges strictly below v, so ties stay in the lower bin
        return np.searchsorted(self.edges(v), v, side="left").astype(np.int64)


@dataclass(frozen=True)
class CalibrationReport:
    estimator: str
    value: float
    p: float | None = None
    bins: str | None = None
    bandwidth: float | None = None
    n: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"estimator": self.estimator, "value": self.value, "p": self.p, "bins": self.bins,
               "bandwidth": self.bandwidth, "n": self.n}
        out.update(self.extra)
        return out


def _confidence(data: LabeledPredictionSet) -> tuple[np.ndarray, np.ndarray]:
    conf = data.probs.max(axis=1)
    correct = (np.argmax(data.probs, axis=1) == data.labels).astype(np.float64)
    return conf, correct


def reliability(data: LabeledPredictionSet, scheme: BinningScheme) -> list[dict]:
    """Per-bin count, accuracy and mean confidence of the top-label prediction."""
    conf, correct = _confidence(data)
    idx = scheme.assign(conf)
    edges = scheme.edges(conf)
    lo = np.concatenate([[0.0], edges])
    hi = np.concatenate([edges, [1.0]])
    rows = []
    for b in range(scheme.M):
        mask = idx == b
        cnt = int(mask.sum())
        rows.append({"bin_lo": float(lo[b]), "bin_hi": float(hi[b]), "count": cnt,
                     "acc": float(correct[mask].mean()) if cnt else None,
                     "conf": float(conf[mask].mean()) if cnt else None})
    return rows


def tce_binned(p_exp: float, data: LabeledPredictionSet, scheme: BinningScheme) -> CalibrationReport:
    """Binned top-label calibration error ``(sum_m |B_m|/n |acc - conf|^p)^(1/p)``."""
    if p_exp < 1:
        raise ValueError("exponent p must be >= 1")
    total = 0.0
    for row in reliability(data, scheme):
        if row["count"]:
            total += row["count"] / data.n * abs(row["acc"] - row["conf"]) ** p_exp
    return CalibrationReport("tce", float(total ** (1.0 / p_exp)), p=p_exp, bins=str(scheme), n=data.n)


# --------------------------------------------------------------------------- Dirichlet KDE

def _check_h(h: float) -> float:
    h = float(h)
    if not h > 0:
        raise ValueError("bandwidth h must be > 0")
    return h


def dirichlet_kernel(x, y, h: float) -> float:
    """Density at ``y`` of the Dirichlet distribution with parameters ``x/h + 1``."""
    h = _check_h(h)
    x = np.asarray(x.probs if isinstance(x, SimplexVector) else x, dtype=np.float64)
    y = np.asarray(y.probs if isinstance(y, SimplexVector) else y, dtype=np.float64)
    alpha = x / h + 1.0
    logk = gammaln(alpha.sum()) - gammaln(alpha).sum() + np.dot(alpha - 1.0, np.log(np.maximum(y, Y_CLAMP)))
    return float(np.exp(logk))


def _conditional_block(Q: np.ndarray, logF: np.ndarray, onehot: np.ndarray, h: float,
                       skip: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    # only the query-dependent cross term varies across data points, so the
    # normalizing constant of each query's kernel cancels in the ratio
    L = (Q / h) @ logF.T
    if skip is not None:
        L[np.arange(L.shape[0]), skip] = -np.inf
    top = L.max(axis=1, keepdims=True)
    bad = ~np.isfinite(top[:, 0])
    W = np.exp(L - np.where(np.isfinite(top), top, 0.0))
    W[bad] = 0.0
    C = W @ onehot
    den = C.sum(axis=1, keepdims=True)
    d = onehot.shape[1]
    C = np.where(bad[:, None], 1.0 / d, C / np.where(den > 0, den, 1.0))
    return C, bad


def kd_conditionals(data: LabeledPredictionSet, queries=None, h: float = 0.05,
                    leave_one_out: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Kernel density-ratio estimates of ``P(Y | f = query)`` for many queries.

    Returns the ``(n_queries, d)`` conditionals and a boolean array flagging
    queries whose kernel weights all vanished (these fall back to uniform).
    ``leave_one_out`` requires queries to be the data's own predictions and
    drops each point's own term.
    """
    h = _check_h(h)
    Q = data.probs if queries is None else np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if leave_one_out and queries is not None:
        raise ValueError("leave_one_out only applies when querying the data's own predictions")
    logF = np.log(np.maximum(data.probs, Y_CLAMP))
    onehot = data.onehot()

    def run(s: slice):
        skip = np.arange(s.start, s.stop) if leave_one_out else None
        return _conditional_block(Q[s], logF, onehot, h, skip)

    parts = pmap(run, row_blocks(Q.shape[0], 256))
    return np.vstack([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def kd_conditional(data: LabeledPredictionSet, query, h: float) -> SimplexVector:
    q = query.probs if isinstance(query, SimplexVector) else query
    C, bad = kd_conditionals(data, [q], h)
    if bad[0]:
        warnings.warn("all kernel weights vanished; returning the uniform distribution", RuntimeWarning)
    return SimplexVector(C[0])


def _flags(bad: np.ndarray) -> dict:
    return {"uniform_fallbacks": int(bad.sum())}


def cce_kde(p_exp: float, data: LabeledPredictionSet, h: float, leave_one_out: bool = False) -> CalibrationReport:
    """Canonical calibration error ``((1/n) sum ||f_i - c_hat(f_i)||_p^p)^(1/p)``."""
    if p_exp < 1:
        raise ValueError("exponent p must be >= 1")
    if data.n < 2:
        raise ValueError("need at least 2 instances")
    C, bad = kd_conditionals(data, h=h, leave_one_out=leave_one_out)
    val = np.mean(np.sum(np.abs(data.probs - C) ** p_exp, axis=1)) ** (1.0 / p_exp)
    return CalibrationReport("cce", float(val), p=p_exp, bandwidth=h, n=data.n,
                             extra={"leave_one_out": leave_one_out, **_flags(bad)})


def _smooth(kind: ScoreKind, C: np.ndarray) -> np.ndarray:
    if kind is ScoreKind.LOG:
        return (C + LOG_SMOOTHING) / (1.0 + C.shape[1] * LOG_SMOOTHING)
    return C


def proper_ce(kind, data: LabeledPredictionSet, h: float, leave_one_out: bool = False) -> CalibrationReport:
    """Mean divergence between each prediction and its estimated conditional label law."""
    kind = ScoreKind.parse(kind)
    if data.n < 2:
        raise ValueError("need at least 2 instances")
    C, bad = kd_conditionals(data, h=h, leave_one_out=leave_one_out)
    val = float(np.mean(divergences(kind, data.probs, _smooth(kind, C))))
    return CalibrationReport("proper", val, bandwidth=h, n=data.n,
                             extra={"kind": kind.value, "leave_one_out": leave_one_out, **_flags(bad)})


def sharpness(kind, data: LabeledPredictionSet, h: float, leave_one_out: bool = False) -> float:
    """Mean divergence between the marginal label frequency and the estimated conditionals."""
    kind = ScoreKind.parse(kind)
    if data.n < 2:
        raise ValueError("need at least 2 instances")
    C, _ = kd_conditionals(data, h=h, leave_one_out=leave_one_out)
    marginal = data.onehot().mean(axis=0)
    return float(np.mean(divergences(kind, marginal[None, :], _smooth(kind, C))))


# --------------------------------------------------------------------------- temperature scaling

def temperature_scale(p, alpha: float):
    """Normalized coordinatewise power ``p_i^alpha / sum_j p_j^alpha``.

    Accepts one vector (returns a ``SimplexVector``) or an ``(n, d)`` array.
    Zero entries stay zero for every alpha.
    """
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    single = isinstance(p, SimplexVector) or np.ndim(p) == 1
    P = np.atleast_2d(np.asarray(p.probs if isinstance(p, SimplexVector) else p, dtype=np.float64))
    if alpha == 1:
        out = P.copy()
    else:
        with np.errstate(divide="ignore"):
            L = alpha * np.log(P)
        L -= L.max(axis=1, keepdims=True)
        E = np.exp(L)
        out = E / E.sum(axis=1, keepdims=True)
    return SimplexVector(out[0]) if single else out


def _golden_min(f, lo: float, hi: float, tol: float) -> tuple[float, float]:
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def fit_temperature(kind, data: LabeledPredictionSet, tol: float = 1e-4) -> dict:
    """Alpha minimizing the empirical risk of the temperature-scaled predictions.

    Golden-section search over ``log10(alpha)`` in [-3, 3]; if the search
    does not beat the unscaled risk, alpha = 1 is returned.
    """
    kind = ScoreKind.parse(kind)
    if data.n < 2:
        raise ValueError("need at least 2 instances")

    def risk(t: float) -> float:
        return empirical_risk(kind, data.with_probs(temperature_scale(data.probs, 10.0**t)))

    before = empirical_risk(kind, data)
    t, after = _golden_min(risk, -3.0, 3.0, tol)
    alpha = 10.0**t
    if not after < before:
        alpha, after = 1.0, before
    return {"kind": kind.value, "alpha": float(alpha), "risk_before": float(before), "risk_after": float(after)}


# --------------------------------------------------------------------------- identity checks

def improvement_check(kind, bundle, alpha: float) -> dict:
    """Compare the score change from temperature scaling with the calibration-error change.

    ``bundle`` must expose ``data`` and ``conditional(probs)`` returning the
    exact conditional label law for each prediction. Temperature scaling is
    injective, so the conditional given the rescaled prediction equals the
    conditional given the original one.
    """
    kind = ScoreKind.parse(kind)
    data = bundle.data
    scaled = data.with_probs(temperature_scale(data.probs, alpha))
    C = bundle.conditional(data.probs)
    risk_delta = empirical_risk(kind, scaled) - empirical_risk(kind, data)
    ce_delta = float(np.mean(divergences(kind, scaled.probs, C)) - np.mean(divergences(kind, data.probs, C)))
    return {"kind": kind.value, "alpha": alpha, "risk_delta": float(risk_delta), "ce_delta": ce_delta,
            "gap": float(abs(risk_delta - ce_delta))}


def aleatoric_inequality_check(kind, data: LabeledPredictionSet, levels: int = 10, slack: float = 0.02
                               ) -> list[dict]:
    """Per entropy-level bin: mean predicted entropy vs entropy of the bin's label frequencies.

    Bins are quantiles of the predicted entropy (equal-mass, ties to the
    lower bin); ``holds`` is ``predicted <= conditional + slack``.
    """
    kind = ScoreKind.parse(kind)
    H = entropies(kind, data.probs)
    if np.ptp(H) == 0:
        idx = np.zeros(data.n, dtype=np.int64)
    else:
        v = np.sort(H)
        edges = np.array([v[math.ceil(j * data.n / levels) - 1] for j in range(1, levels)])
        idx = np.searchsorted(edges, H, side="left")
    onehot = data.onehot()
    out = []
    for b in np.unique(idx):
        mask = idx == b
        freq = onehot[mask].mean(axis=0)
        pred = float(H[mask].mean())
        cond = float(entropies(kind, freq[None, :])[0])
        out.append({"level": int(b), "count": int(mask.sum()), "predicted_entropy": pred,
                    "conditional_entropy_estimate": cond, "holds": pred <= cond + slack})
    return out
