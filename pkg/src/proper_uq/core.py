"""Value types, dataset containers, seeding and file I/O shared by every module.

Class labels are 1-based in files and 0-based everywhere inside the library.
All arrays held by the containers are float64 (labels int64) and read-only.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SIMPLEX_TOL = 1e-9


class DataError(ValueError):
    """Raised for malformed input files or container invariant violations."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def check_simplex(probs, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Validate rows of ``probs`` as probability vectors and renormalize them.

    Works on a single vector or an ``(n, d)`` array. Rows must be nonnegative
    and sum to one within ``tol``; accepted rows are divided by their sum
    unless they already sum to one up to rounding, which keeps the operation
    idempotent.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim not in (1, 2) or p.shape[-1] < 2:
        raise DataError(f"expected probability vectors with d >= 2, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise DataError("probability vectors must be finite")
    if np.any(p < 0):
        raise DataError("probability vectors must be nonnegative")
    mass = p.sum(axis=-1)
    bad = np.abs(mass - 1.0) > tol
    if np.any(bad):
        i = int(np.flatnonzero(np.atleast_1d(bad))[0])
        raise DataError(f"probability vector {i} has mass {np.atleast_1d(mass)[i]!r}")
    mass = np.where(np.abs(mass - 1.0) <= 8 * np.finfo(np.float64).eps, 1.0, mass)
    return p / mass[..., None]


@dataclass(frozen=True)
class SimplexVector:
    """A single point of the probability simplex."""

    probs: np.ndarray

    def __post_init__(self):
        p = check_simplex(self.probs)
        if p.ndim != 1:
            raise DataError("SimplexVector holds exactly one probability vector")
        object.__setattr__(self, "probs", _frozen(p))

    @property
    def d(self) -> int:
        return self.probs.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    def __len__(self):
        return self.d


@dataclass(frozen=True)
class LabeledPredictionSet:
    """Predicted probability vectors paired with 0-based class labels.

    ``source`` and ``row_ids`` record provenance so that estimator pipelines
    can prove their train/validation/test splits are disjoint.
    """

    probs: np.ndarray
    labels: np.ndarray
    source: str = "memory"
    row_ids: np.ndarray | None = None

    def __post_init__(self):
        p = check_simplex(self.probs)
        if p.ndim != 2:
            raise DataError("predictions must be an (n, d) array")
        y = np.asarray(self.labels)
        if y.ndim != 1 or y.shape[0] != p.shape[0]:
            raise DataError(f"need one label per prediction, got {y.shape} for {p.shape[0]} rows")
        if p.shape[0] < 1:
            raise DataError("a prediction set needs at least one row")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise DataError("labels must be integers")
        y = y.astype(np.int64)
        if np.any(y < 0) or np.any(y >= p.shape[1]):
            raise DataError(f"labels must lie in 0..{p.shape[1] - 1}")
        y = y.copy()
        y.setflags(write=False)
        ids = np.arange(p.shape[0]) if self.row_ids is None else np.asarray(self.row_ids, dtype=np.int64)
        if ids.shape != y.shape:
            raise DataError("row_ids must match the number of rows")
        ids = ids.copy()
        ids.setflags(write=False)
        object.__setattr__(self, "probs", _frozen(p))
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "row_ids", ids)

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def d(self) -> int:
        return self.probs.shape[1]

    def onehot(self) -> np.ndarray:
        return np.eye(self.d)[self.labels]

    def subset(self, idx) -> "LabeledPredictionSet":
        idx = np.asarray(idx)
        return LabeledPredictionSet(self.probs[idx], self.labels[idx], self.source, self.row_ids[idx])

    def with_probs(self, probs) -> "LabeledPredictionSet":
        """Same labels and provenance, new predictions (e.g. after recalibration)."""
        return LabeledPredictionSet(probs, self.labels, self.source, self.row_ids)

    def provenance(self) -> set[tuple[str, int]]:
        return {(self.source, int(r)) for r in self.row_ids}


@dataclass(frozen=True)
class SampleSet:
    """``n`` i.i.d. points in R^q representing an implicit predicted distribution."""

    points: np.ndarray
    id: str | None = None

    def __post_init__(self):
        x = np.asarray(self.points, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1:
            raise DataError(f"a sample set needs shape (n >= 1, q), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DataError("sample points must be finite")
        object.__setattr__(self, "points", _frozen(x))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def q(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n


@dataclass(frozen=True)
class DiscreteDistribution:
    """Exact distribution on finitely many distinct atoms in R^q.

    Kernel statistics on this type are exact population values instead of
    sample estimates; atoms must therefore be pairwise distinct.
    """

    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.atoms, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        w = np.asarray(self.probs, dtype=np.float64)
        if w.ndim != 1 or w.shape[0] != x.shape[0]:
            raise DataError("need one probability per atom")
        if np.any(w < 0) or abs(w.sum() - 1.0) > SIMPLEX_TOL:
            raise DataError(f"atom probabilities must form a pmf (mass {w.sum()!r})")
        if len({tuple(r) for r in x}) != x.shape[0]:
            raise DataError("atoms must be distinct")
        object.__setattr__(self, "atoms", _frozen(x))
        object.__setattr__(self, "probs", _frozen(w / w.sum()))

    @property
    def q(self) -> int:
        return self.atoms.shape[1]

    def sample(self, n: int, rng: np.random.Generator) -> SampleSet:
        idx = rng.choice(self.atoms.shape[0], size=n, p=self.probs)
        return SampleSet(self.atoms[idx])


@dataclass(frozen=True)
class EnsembleGrid:
    """``m`` members by ``R`` replicates of sample sets sharing one dimension."""

    members: tuple[tuple[SampleSet, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(r) for r in self.members)
        if len(rows) < 1:
            raise DataError("an ensemble needs at least one member")
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise DataError(f"ragged ensemble grid: member rows have lengths {sorted(widths)}")
        if 0 in widths:
            raise DataError("an ensemble needs at least one replicate")
        qs = {s.q for r in rows for s in r}
        if len(qs) != 1:
            raise DataError(f"dimension mismatch across sample sets: {sorted(qs)}")
        object.__setattr__(self, "members", rows)

    @property
    def m(self) -> int:
        return len(self.members)

    @property
    def R(self) -> int:
        return len(self.members[0])

    @property
    def q(self) -> int:
        return self.members[0][0].q

    def pooled(self) -> SampleSet:
        return SampleSet(np.vstack([s.points for r in self.members for s in r]))


# --------------------------------------------------------------------------- seeds

def make_rng(seed: int) -> np.random.Generator:
    """Generator fully determined by a 64-bit unsigned seed."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return np.random.Generator(np.random.PCG64(seed))


def child_rng(seed: int, counter: int) -> np.random.Generator:
    """Independent stream number ``counter`` derived from a root seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(counter),))))


# --------------------------------------------------------------------------- I/O

def _fmt(x: float) -> str:
    # repr round-trips float64 exactly
    return repr(float(x))


def _read_rows(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [(reader.line_num, r) for r in reader if r and any(c.strip() for c in r)]
    return header, rows


def _parse_floats(row: list[str], lineno: int) -> list[float]:
    try:
        return [float(c) for c in row]
    except ValueError:
        raise DataError(f"row {lineno}: malformed value in {row!r}") from None


def load_predictions(path) -> LabeledPredictionSet:
    """Read a ``p1,...,pd,label`` CSV (1-based labels)."""
    header, rows = _read_rows(path)
    d = len(header) - 1
    if d < 2 or header[-1] != "label" or header[:-1] != [f"p{i + 1}" for i in range(d)]:
        raise DataError(f"{path}: header must be p1,...,pd,label, got {','.join(header)}")
    if not rows:
        raise DataError(f"{path}: no data rows")
    probs = np.empty((len(rows), d))
    labels = np.empty(len(rows), dtype=np.int64)
    for k, (lineno, row) in enumerate(rows):
        if len(row) != d + 1:
            raise DataError(f"row {lineno}: expected {d + 1} fields, got {len(row)}")
        vals = _parse_floats(row[:-1], lineno)
        try:
            lab = int(row[-1])
        except ValueError:
            raise DataError(f"row {lineno}: malformed label {row[-1]!r}") from None
        if not 1 <= lab <= d:
            raise DataError(f"row {lineno}: label {lab} outside 1..{d}")
        if any(v < 0 or not np.isfinite(v) for v in vals):
            raise DataError(f"row {lineno}: probabilities must be finite and nonnegative")
        mass = sum(vals)
        if abs(mass - 1.0) > SIMPLEX_TOL:
            raise DataError(f"row {lineno}: mass {mass:.12g}")
        probs[k] = vals
        labels[k] = lab - 1
    return LabeledPredictionSet(probs, labels, source=_source_id(path))


def predictions_csv(data: LabeledPredictionSet) -> str:
    lines = [",".join([f"p{i + 1}" for i in range(data.d)] + ["label"])]
    for p, y in zip(data.probs, data.labels):
        lines.append(",".join([_fmt(v) for v in p] + [str(int(y) + 1)]))
    return "\n".join(lines) + "\n"


def save_predictions(data: LabeledPredictionSet, path) -> None:
    Path(path).write_text(predictions_csv(data), encoding="utf-8")


def load_members(path) -> np.ndarray:
    """Read ensemble-member probability vectors from a ``p1..pd[,label]`` CSV."""
    header, rows = _read_rows(path)
    cols = [h for h in header if h != "label"]
    if len(cols) < 2 or cols != [f"p{i + 1}" for i in range(len(cols))]:
        raise DataError(f"{path}: header must be p1,...,pd")
    out = []
    for lineno, row in rows:
        if len(row) != len(header):
            raise DataError(f"row {lineno}: expected {len(header)} fields, got {len(row)}")
        vals = _parse_floats([c for c, h in zip(row, header) if h != "label"], lineno)
        if abs(sum(vals) - 1.0) > SIMPLEX_TOL or min(vals) < 0:
            raise DataError(f"row {lineno}: mass {sum(vals):.12g}")
        out.append(vals)
    if not out:
        raise DataError(f"{path}: no data rows")
    return check_simplex(np.array(out))


def load_sample_set(path) -> SampleSet:
    """Read an ``x1,...,xq`` CSV."""
    header, rows = _read_rows(path)
    q = len(header)
    if q < 1 or header != [f"x{i + 1}" for i in range(q)]:
        raise DataError(f"{path}: header must be x1,...,xq, got {','.join(header)}")
    pts = []
    for lineno, row in rows:
        if len(row) != q:
            raise DataError(f"row {lineno}: expected {q} fields, got {len(row)}")
        pts.append(_parse_floats(row, lineno))
    if not pts:
        raise DataError(f"{path}: no data rows")
    return SampleSet(np.array(pts), id=Path(path).stem)


def save_sample_set(samples: SampleSet, path) -> None:
    lines = [",".join(f"x{i + 1}" for i in range(samples.q))]
    lines += [",".join(_fmt(v) for v in row) for row in samples.points]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_ensemble(manifest) -> EnsembleGrid:
    """Read ``{"members": [[path, ...], ...]}``; paths are relative to the manifest."""
    manifest = Path(manifest)
    spec = json.loads(manifest.read_text(encoding="utf-8"))
    return _ensemble_from_spec(spec, manifest.parent)


def _ensemble_from_spec(spec: dict, base: Path) -> EnsembleGrid:
    grid = spec.get("members") if isinstance(spec, dict) else None
    if not isinstance(grid, list) or not all(isinstance(r, list) for r in grid):
        raise DataError('ensemble manifest must look like {"members": [[path, ...], ...]}')
    lengths = {len(r) for r in grid}
    if len(lengths) > 1:
        raise DataError(f"ragged ensemble grid: member rows have lengths {sorted(lengths)}")
    return EnsembleGrid(tuple(tuple(load_sample_set(base / p) for p in row) for row in grid))


def save_ensemble(grid: EnsembleGrid, directory, name: str = "ensemble") -> Path:
    """Write every sample set plus a manifest into ``directory``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, row in enumerate(grid.members):
        names = []
        for r, s in enumerate(row):
            fname = f"{name}_m{k + 1}r{r + 1}.csv"
            save_sample_set(s, directory / fname)
            names.append(fname)
        rows.append(names)
    path = directory / f"{name}.json"
    path.write_text(json.dumps({"members": rows}, indent=1), encoding="utf-8")
    return path


def _source_id(path) -> str:
    return os.path.abspath(os.fspath(path))


def split_dataset(data: LabeledPredictionSet, fractions: Sequence[float], rng: np.random.Generator
                  ) -> list[LabeledPredictionSet]:
    """Random disjoint split keeping provenance of the parent set."""
    fr = np.asarray(fractions, dtype=float)
    if np.any(fr <= 0) or abs(fr.sum() - 1) > 1e-12:
        raise ValueError("fractions must be positive and sum to 1")
    perm = rng.permutation(data.n)
    cuts = np.round(np.cumsum(fr)[:-1] * data.n).astype(int)
    return [data.subset(np.sort(part)) for part in np.split(perm, cuts)]


def concat_samples(sets: Iterable[SampleSet]) -> SampleSet:
    return SampleSet(np.vstack([s.points for s in sets]))


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


@dataclass(frozen=True)
class DecompositionReport:
    """Bias/variance[/covariance]/noise components of an expected score.

    ``covariance`` holds the already weighted covariance term so that
    ``bias + variance + covariance + noise == total`` whenever the identity
    is exact; ``extra`` carries unweighted averages and diagnostics.
    """

    bias: float
    variance: float
    noise: float
    total: float
    covariance: float | None = None
    estimator_mode: str = "plugin"
    counts: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def residual(self) -> float:
        return self.bias + self.variance + (self.covariance or 0.0) + self.noise - self.total

    def to_dict(self) -> dict:
        out = {"bias": self.bias, "variance": self.variance}
        if self.covariance is not None:
            out["covariance"] = self.covariance
        out.update(noise=self.noise, total=self.total, identity_residual=self.residual,
                   estimator_mode=self.estimator_mode, counts=dict(self.counts))
        out.update(self.extra)
        return out
