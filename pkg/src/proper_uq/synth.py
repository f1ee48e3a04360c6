"""Synthetic data with exact ground truth.

Two families live here: calibrated/miscalibrated classification bundles with
a closed-form conditional label law, and small discrete worlds on which
kernel quantities are evaluated exactly by enumeration. The enumeration code
deliberately avoids the kernels module: atoms are compared directly, which
is what the delta kernel reduces to.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .calibration import temperature_scale
from .core import DiscreteDistribution, LabeledPredictionSet, SampleSet, make_rng

MAX_ATOMS = 8


@dataclass(frozen=True)
class CalibratedBundle:
    """Predictions and labels plus the exact conditional label law ``c(f)``."""

    data: LabeledPredictionSet
    scenario: str
    dirichlet_alpha: float
    ts_alpha: float
    seed: int

    def conditional(self, probs) -> np.ndarray:
        """Exact ``P(Y | f = probs)``: identity when calibrated, inverse temperature otherwise."""
        P = np.atleast_2d(np.asarray(probs, dtype=np.float64))
        return P.copy() if self.ts_alpha == 1 else temperature_scale(P, 1.0 / self.ts_alpha)

    def squared_ce(self) -> float:
        """Monte-Carlo (over the prediction law) value of ``E ||f - c(f)||^2``."""
        diff = self.data.probs - self.conditional(self.data.probs)
        return float(np.mean(np.sum(diff * diff, axis=1)))


def _draw(d: int, n: int, alpha: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if d < 2 or n < 1 or not alpha > 0:
        raise ValueError("need d >= 2, n >= 1 and a positive Dirichlet concentration")
    rng = make_rng(seed)
    P = rng.dirichlet(np.full(d, float(alpha)), size=n)
    u = rng.random(n)
    y = np.minimum((np.cumsum(P, axis=1) < u[:, None]).sum(axis=1), d - 1)
    return P, y


def gen_calibrated(d: int, n: int, alpha: float, seed: int) -> CalibratedBundle:
    """``P ~ Dir(alpha * 1)``, ``Y ~ Cat(P)`` and prediction ``f = P``."""
    P, y = _draw(d, n, alpha, seed)
    return CalibratedBundle(LabeledPredictionSet(P, y, source=f"synth:calibrated:{seed}"),
                            "calibrated", float(alpha), 1.0, int(seed))


def gen_miscalibrated(d: int, n: int, alpha: float, ts_alpha: float, seed: int) -> CalibratedBundle:
    """As ``gen_calibrated`` but predicting ``TS_{ts_alpha}(P)``; same random stream."""
    if not ts_alpha > 0:
        raise ValueError("ts_alpha must be > 0")
    P, y = _draw(d, n, alpha, seed)
    f = P if ts_alpha == 1 else temperature_scale(P, ts_alpha)
    scenario = "calibrated" if ts_alpha == 1 else "miscalibrated"
    return CalibratedBundle(LabeledPredictionSet(f, y, source=f"synth:{scenario}:{seed}"),
                            scenario, float(alpha), float(ts_alpha), int(seed))


def grid_squared_ce(ts_alpha: float, points: int = 101) -> float:
    """Exact ``E ||f - c(f)||^2`` for d = 2 when ``P_1`` is uniform on an equispaced grid."""
    g = np.linspace(0.0, 1.0, points)
    P = np.column_stack([g, 1.0 - g])
    f = temperature_scale(P, ts_alpha)
    return float(np.mean(np.sum((f - P) ** 2, axis=1)))


# --------------------------------------------------------------------------- discrete worlds

@dataclass(frozen=True)
class DiscretePmfWorld:
    """Distinct atoms in R^q with exact pmfs for ensemble members and a target.

    ``blocks`` optionally records a coordinate partition under which every pmf
    factorizes (see ``product_world``).
    """

    atoms: np.ndarray
    members: tuple[np.ndarray, ...]
    target: np.ndarray
    blocks: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=np.float64))
        if atoms.ndim == 2 and atoms.shape[0] == 1 and np.ndim(self.atoms) == 1:
            atoms = atoms.T
        if atoms.shape[0] > MAX_ATOMS:
            raise ValueError(f"enumeration budget exceeded: {atoms.shape[0]} atoms > {MAX_ATOMS}")
        pmfs = [np.asarray(p, dtype=np.float64) for p in self.members] + [np.asarray(self.target, dtype=np.float64)]
        for p in pmfs:
            if p.shape != (atoms.shape[0],) or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
                raise ValueError("every pmf must have one nonnegative weight per atom and sum to 1")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "members", tuple(pmfs[:-1]))
        object.__setattr__(self, "target", pmfs[-1])

    def distribution(self, pmf) -> DiscreteDistribution:
        return DiscreteDistribution(self.atoms, pmf)

    def sample(self, pmf, n: int, rng: np.random.Generator) -> SampleSet:
        return self.distribution(pmf).sample(n, rng)


def product_world(block_atoms: Sequence[np.ndarray], member_blocks: Sequence[Sequence[np.ndarray]],
                  target_blocks: Sequence[np.ndarray]) -> DiscretePmfWorld:
    """World whose pmfs are products of per-block pmfs over per-block atoms.

    ``block_atoms[b]`` is an (a_b, q_b) array; ``member_blocks[k][b]`` and
    ``target_blocks[b]`` are pmfs over those atoms.
    """
    block_atoms = [np.atleast_2d(np.asarray(a, dtype=np.float64).reshape(len(a), -1)) for a in block_atoms]
    widths = [a.shape[1] for a in block_atoms]
    starts = np.cumsum([0] + widths[:-1])
    blocks = tuple(tuple(range(s, s + w)) for s, w in zip(starts, widths))
    combos = list(itertools.product(*[range(a.shape[0]) for a in block_atoms]))
    atoms = np.array([np.concatenate([block_atoms[b][i] for b, i in enumerate(c)]) for c in combos])

    def joint(pmfs):
        return np.array([np.prod([pmfs[b][i] for b, i in enumerate(c)]) for c in combos])

    return DiscretePmfWorld(atoms, tuple(joint(m) for m in member_blocks), joint(target_blocks), blocks)


def _same(a: np.ndarray, b: np.ndarray) -> float:
    return 1.0 if np.array_equal(a, b) else 0.0


def _pair_sum(atoms: np.ndarray, p: np.ndarray, q: np.ndarray) -> float:
    return sum(p[i] * q[j] * _same(atoms[i], atoms[j])
               for i in range(len(p)) for j in range(len(q)))


def _marginal(world: DiscretePmfWorld, pmf: np.ndarray, coords) -> tuple[np.ndarray, np.ndarray]:
    keys: dict = {}
    for a, w in zip(world.atoms, pmf):
        key = tuple(a[list(coords)])
        keys[key] = keys.get(key, 0.0) + w
    return np.array(list(keys)), np.array(list(keys.values()))


def enumerate_expected(world: DiscretePmfWorld, quantity: str) -> dict:
    """Exact population values under the delta kernel by explicit pair sums.

    quantity: ``kernel_score`` (member 0 scored on the target law), ``mmd2``
    (member 0 vs target), ``cosine``, ``eks``, ``bvd_fields`` (all members) or
    ``eks_product`` (needs ``world.blocks``).
    """
    A, q = world.atoms, world.target
    p = world.members[0]
    if quantity == "kernel_score":
        return {"kernel_score": _pair_sum(A, p, p) - 2 * _pair_sum(A, p, q)}
    if quantity == "mmd2":
        return {"mmd2": _pair_sum(A, p, p) + _pair_sum(A, q, q) - 2 * _pair_sum(A, p, q)}
    if quantity in ("cosine", "eks"):
        pq, pp, qq = _pair_sum(A, p, q), _pair_sum(A, p, p), _pair_sum(A, q, q)
        return {"cosine": pq / np.sqrt(pp * qq), "eks": -pq / np.sqrt(pp)}
    if quantity == "bvd_fields":
        m = len(world.members)
        mean = sum(world.members) / m
        qq = _pair_sum(A, q, q)
        bias = _pair_sum(A, mean, mean) - 2 * _pair_sum(A, mean, q) + qq
        var = sum(_pair_sum(A, pk - mean, pk - mean) for pk in world.members) / m
        total = sum(_pair_sum(A, pk, pk) - 2 * _pair_sum(A, pk, q) for pk in world.members) / m
        return {"bias": bias, "variance": var, "noise": -qq, "total": total}
    if quantity == "eks_product":
        if world.blocks is None:
            raise ValueError("eks_product needs a world with a block partition")
        full = enumerate_expected(world, "eks")
        factors, cosines = [], []
        for b in world.blocks:
            atoms_p, wp = _marginal(world, p, b)
            atoms_q, wq = _marginal(world, q, b)
            pq = sum(wp[i] * wq[j] * _same(atoms_p[i], atoms_q[j]) for i in range(len(wp)) for j in range(len(wq)))
            pp = _pair_sum(atoms_p, wp, wp)
            qq = _pair_sum(atoms_q, wq, wq)
            factors.append(-pq / np.sqrt(pp))
            cosines.append(pq / np.sqrt(pp * qq))
        return {"eks_full": full["eks"], "eks_factors": factors,
                "eks_product": -float(np.prod([-f for f in factors])),
                "cosine_full": full["cosine"], "cosine_factors": cosines,
                "cosine_product": float(np.prod(cosines))}
    raise ValueError(f"unknown quantity {quantity!r}")


# --------------------------------------------------------------------------- sample generators

def gen_block_gaussian(n: int, block_sizes: Sequence[int], within: float, seed: int,
                       between: float = 0.0, copula: bool = False) -> np.ndarray:
    """Gaussian coordinates, equicorrelated ``within`` each block and ``between`` blocks.

    With ``copula=True`` each coordinate is mapped through the normal CDF,
    giving uniform marginals coupled by a Gaussian copula.
    """
    q = int(sum(block_sizes))
    C = np.full((q, q), float(between))
    s = 0
    for b in block_sizes:
        C[s:s + b, s:s + b] = within
        s += b
    np.fill_diagonal(C, 1.0)
    if np.linalg.eigvalsh(C).min() <= 0:
        raise ValueError("within/between correlations do not form a valid correlation matrix")
    Z = make_rng(seed).multivariate_normal(np.zeros(q), C, size=n, method="cholesky")
    return norm.cdf(Z) if copula else Z


def gen_gaussian_shift(instances: int, members: int, samples: int, seed: int,
                       spreads: Sequence[float] | None = None, targets: int = 16
                       ) -> tuple[list[list[np.ndarray]], list[np.ndarray], np.ndarray]:
    """Per-instance Gaussian ensembles in 1-D with instance-specific spread.

    Member k of instance i samples ``N(mu_ik, s_i^2)`` with a member offset
    ``mu_ik ~ N(0, (s_i/4)^2)``; targets are drawn from ``N(0, s_i^2)``.
    Returns member sample arrays, target arrays and the spreads.
    """
    rng = make_rng(seed)
    s = np.asarray(spreads, dtype=float) if spreads is not None else rng.uniform(0.1, 2.0, size=instances)
    ens, tgt = [], []
    for i in range(instances):
        mu = rng.normal(0.0, s[i] / 4, size=members)
        ens.append([rng.normal(mu[k], s[i], size=(samples, 1)) for k in range(members)])
        tgt.append(rng.normal(0.0, s[i], size=(targets, 1)))
    return ens, tgt, s
