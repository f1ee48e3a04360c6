"""Command-line entry point: ``proper-uq <subcommand> [flags]``.

Exit codes: 0 success, 1 computation or input error, 2 usage error.
JSON reports carry a ``manifest`` describing the run; floats are rounded to
12 significant digits and infinities are emitted as ``null`` with a flag.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._parallel import set_threads
from .core import (
    DataError,
    csv_text,
    load_ensemble,
    load_members,
    load_predictions,
    load_sample_set,
    predictions_csv,
    save_predictions,
)

SIG_DIGITS = 12


def _round(x: float) -> float:
    return float(f"{x:.{SIG_DIGITS}g}")


def _clean(obj, path: str, flags: list):
    if isinstance(obj, dict):
        return {k: _clean(v, f"{path}.{k}" if path else k, flags) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v, f"{path}[{i}]", flags) for i, v in enumerate(obj)]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            flags.append({"field": path, "value": "inf" if x > 0 else ("-inf" if x < 0 else "nan")})
            return None
        return _round(x)
    return obj


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _fmt_csv(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(_round(float(x))) if math.isfinite(x) else str(float(x))
    return str(x)


class _Run:
    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.inputs: dict = {}
        self.start = time.perf_counter()

    def track(self, path):
        self.inputs[str(path)] = _digest(path)
        return path

    def manifest(self) -> dict:
        flags = {k: v for k, v in vars(self.args).items() if k not in ("func", "threads", "command")}
        return {
            "subcommand": self.args.command,
            "flags": flags,
            "seed": getattr(self.args, "seed", None),
            "version": __version__,
            "inputs": self.inputs,
            "wall_time_s": time.perf_counter() - self.start,
        }

    def emit_json(self, report: dict) -> None:
        flags: list = []
        body = _clean(report, "", flags)
        if flags:
            body["nonfinite"] = flags
        body["manifest"] = _clean(self.manifest(), "manifest", [])
        self._write(json.dumps(body, indent=2, allow_nan=False) + "\n")

    def emit_csv(self, header, rows) -> None:
        self._write(csv_text(header, ([_fmt_csv(v) for v in r] for r in rows)))

    def _write(self, text: str) -> None:
        out = getattr(self.args, "out", None)
        if out:
            Path(out).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)


# --------------------------------------------------------------------------- subcommands

def _cmd_score(run: _Run) -> None:
    from .scores import per_instance_scores
    a = run.args
    data = load_predictions(run.track(a.data))
    s = per_instance_scores(a.kind, data)
    run.emit_json({"kind": a.kind, "n": data.n, "risk": float(np.mean(s)), "per_instance": s.tolist()})


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise DataError(f"cannot parse probability vector {text!r}") from None


def _cmd_bvd(run: _Run) -> None:
    from .bregman import bvd_classification
    from .core import check_simplex
    a = run.args
    members = load_members(run.track(a.members))
    q = check_simplex(_parse_vector(a.target))
    run.emit_json(bvd_classification(a.kind, members, q).to_dict())


def _cmd_ks_decompose(run: _Run) -> None:
    from .kernel_decomposition import ks_bvc, ks_bvd
    from .kernels import parse_kernel
    a = run.args
    k = parse_kernel(a.kernel)
    grid = load_ensemble(run.track(a.ensemble))
    targets = load_sample_set(run.track(a.targets))
    fn = ks_bvd if a.mode == "bvd" else ks_bvc
    report = fn(k, grid, targets, a.estimator).to_dict()
    report["kernel"] = str(k)
    run.emit_json(report)


def _cmd_ks_uncertainty(run: _Run) -> None:
    from .kernel_decomposition import uncertainty_profile
    from .kernels import parse_kernel
    a = run.args
    k = parse_kernel(a.kernel)
    grids = [load_ensemble(run.track(p)) for p in a.ensemble]
    ids = [Path(p).stem for p in a.ensemble]
    rows = uncertainty_profile(k, grids, ids=ids)
    run.emit_csv(["id", "entropy", "variance"], [(r["id"], r["kernel_entropy"], r["ks_variance"]) for r in rows])


def _cmd_calibrate(run: _Run) -> None:
    from .calibration import BinningScheme, cce_kde, proper_ce, sharpness, tce_binned
    a = run.args
    data = load_predictions(run.track(a.data))
    if a.estimator == "tce":
        if a.bins is None:
            raise DataError("--bins is required for the tce estimator")
        report = tce_binned(a.p, data, BinningScheme.parse(a.bins)).to_dict()
    else:
        if a.bandwidth is None:
            raise DataError(f"--bandwidth is required for the {a.estimator} estimator")
        if a.estimator == "cce":
            report = cce_kde(a.p, data, a.bandwidth, a.leave_one_out).to_dict()
        else:
            report = proper_ce(a.kind, data, a.bandwidth, a.leave_one_out).to_dict()
            report["sharpness"] = sharpness(a.kind, data, a.bandwidth, a.leave_one_out)
    run.emit_json(report)


def _cmd_recalibrate(run: _Run) -> None:
    from .calibration import fit_temperature, temperature_scale
    a = run.args
    data = load_predictions(run.track(a.data))
    if not a.fit_temperature and a.alpha is None:
        raise DataError("give --fit-temperature or a fixed --alpha")
    if a.fit_temperature:
        report = fit_temperature(a.kind, data)
    else:
        from .scores import empirical_risk
        scaled = data.with_probs(temperature_scale(data.probs, a.alpha))
        report = {"kind": a.kind, "alpha": a.alpha, "risk_before": empirical_risk(a.kind, data),
                  "risk_after": empirical_risk(a.kind, scaled)}
    if a.apply_out:
        save_predictions(data.with_probs(temperature_scale(data.probs, report["alpha"])), a.apply_out)
        report["written"] = a.apply_out
    run.emit_json(report)


def _cmd_reliability(run: _Run) -> None:
    from .calibration import BinningScheme, reliability
    a = run.args
    data = load_predictions(run.track(a.data))
    rows = reliability(data, BinningScheme.parse(a.bins))
    run.emit_csv(["bin_lo", "bin_hi", "count", "acc", "conf"],
                 [(r["bin_lo"], r["bin_hi"], r["count"], r["acc"], r["conf"]) for r in rows])


def _cmd_optimize_ce(run: _Run) -> None:
    from .estimator_risk import parse_hspec, pipeline
    a = run.args
    train = load_predictions(run.track(a.train))
    val = load_predictions(run.track(a.val))
    test = load_predictions(run.track(a.test))
    cands = json.loads(Path(run.track(a.candidates)).read_text(encoding="utf-8"))
    if not isinstance(cands, list):
        raise DataError("candidates file must hold a JSON list")
    run.emit_json(pipeline([parse_hspec(c) for c in cands], train, val, test).to_dict())


def _cmd_cka_matrix(run: _Run) -> None:
    from .cka import cka_matrix
    from .kernels import parse_kernel
    a = run.args
    X = load_sample_set(run.track(a.samples))
    M = cka_matrix(X, parse_kernel(a.kernel))
    header = [f"x{j + 1}" for j in range(M.d)]
    run.emit_csv(header, M.values.tolist())


def _cmd_disentangle(run: _Run) -> None:
    from .cka import cka_matrix, cluster_dimensions, disentangled_cosine
    from .kernels import parse_kernel
    a = run.args
    k = parse_kernel(a.kernel)
    base = k.base if k.family == "tensor" else k
    gen = load_sample_set(run.track(a.gen))
    ref = load_sample_set(run.track(a.ref))
    M = cka_matrix(ref, base)
    part = cluster_dimensions(M, a.tau)
    report = disentangled_cosine(base, part, gen, ref, a.mode).to_dict()
    report["constant_coordinates"] = [i + 1 for i in M.constant]
    report["kernel"] = str(base)
    run.emit_json(report)


def _cmd_synth(run: _Run) -> None:
    from .synth import gen_calibrated, gen_miscalibrated
    a = run.args
    if a.scenario == "calibrated":
        if a.ts_alpha is not None and a.ts_alpha != 1:
            raise DataError("--ts-alpha only applies to the miscalibrated scenario")
        bundle = gen_calibrated(a.d, a.n, a.alpha, a.seed)
    else:
        if a.ts_alpha is None:
            raise DataError("--ts-alpha is required for the miscalibrated scenario")
        bundle = gen_miscalibrated(a.d, a.n, a.alpha, a.ts_alpha, a.seed)
    if a.out:
        save_predictions(bundle.data, a.out)
        report = {"scenario": bundle.scenario, "n": bundle.data.n, "d": bundle.data.d,
                  "dirichlet_alpha": bundle.dirichlet_alpha, "ts_alpha": bundle.ts_alpha,
                  "squared_ce_exact_conditional": bundle.squared_ce(), "written": a.out,
                  "sha256": _digest(a.out)}
        flags: list = []
        body = _clean(report, "", flags)
        body["manifest"] = _clean(run.manifest(), "manifest", [])
        sys.stdout.write(json.dumps(body, indent=2, allow_nan=False) + "\n")
    else:
        sys.stdout.write(predictions_csv(bundle.data))


# --------------------------------------------------------------------------- parser

def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=None,
                        help="worker threads (default: PROPER_UQ_THREADS or all cores)")
    common.add_argument("--out", default=None, help="write the report here instead of stdout")

    p = argparse.ArgumentParser(prog="proper-uq", description="Proper-score uncertainty quantification toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        sp.set_defaults(func=func)
        return sp

    s = add("score", _cmd_score, "empirical risk of predictions under a proper score")
    s.add_argument("--kind", required=True, choices=["brier", "log", "spherical"])
    s.add_argument("--data", required=True)

    s = add("bvd", _cmd_bvd, "bias-variance-noise decomposition of an ensemble's expected score")
    s.add_argument("--kind", required=True, choices=["brier", "log"])
    s.add_argument("--members", required=True, help="CSV p1..pd, one member per row")
    s.add_argument("--target", required=True, help='target distribution, e.g. "0.7,0.3"')

    s = add("ks-decompose", _cmd_ks_decompose, "kernel-score bias-variance(-covariance) decomposition")
    s.add_argument("--kernel", required=True)
    s.add_argument("--ensemble", required=True, help="ensemble manifest JSON")
    s.add_argument("--targets", required=True, help="target samples CSV x1..xq")
    s.add_argument("--mode", choices=["bvd", "bvc"], default="bvd")
    s.add_argument("--estimator", choices=["plugin", "unbiased"], default="plugin")

    s = add("ks-uncertainty", _cmd_ks_uncertainty, "per-instance kernel entropy and variance (CSV)")
    s.add_argument("--kernel", required=True)
    s.add_argument("--ensemble", required=True, nargs="+", help="one ensemble manifest per instance")

    s = add("calibrate", _cmd_calibrate, "calibration-error estimate")
    s.add_argument("--data", required=True)
    s.add_argument("--estimator", required=True, choices=["tce", "cce", "proper"])
    s.add_argument("--kind", choices=["brier", "log", "spherical"], default="brier")
    s.add_argument("--p", type=float, default=2.0)
    s.add_argument("--bins", default=None, help="uniform:M or mass:M (tce)")
    s.add_argument("--bandwidth", type=float, default=None, help="Dirichlet kernel bandwidth (cce, proper)")
    s.add_argument("--leave-one-out", action="store_true")

    s = add("recalibrate", _cmd_recalibrate, "temperature scaling")
    s.add_argument("--data", required=True)
    s.add_argument("--kind", choices=["brier", "log", "spherical"], default="log")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--fit-temperature", action="store_true")
    g.add_argument("--alpha", type=float, default=None)
    s.add_argument("--apply-out", default=None, help="also write the rescaled predictions CSV")

    s = add("reliability", _cmd_reliability, "reliability-diagram table (CSV)")
    s.add_argument("--data", required=True)
    s.add_argument("--bins", required=True)

    s = add("optimize-ce", _cmd_optimize_ce, "select a calibration estimator by validation risk")
    s.add_argument("--train", required=True)
    s.add_argument("--val", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--candidates", required=True)

    s = add("cka-matrix", _cmd_cka_matrix, "coordinate-wise CKA matrix (CSV)")
    s.add_argument("--samples", required=True)
    s.add_argument("--kernel", required=True)

    s = add("disentangle", _cmd_disentangle, "per-cluster factorization of cosine similarity or EKS")
    s.add_argument("--gen", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--kernel", required=True)
    s.add_argument("--tau", required=True, type=float)
    s.add_argument("--mode", choices=["cosine", "eks"], default="cosine")

    s = add("synth", _cmd_synth, "synthetic predictions with known conditionals")
    s.add_argument("--scenario", required=True, choices=["calibrated", "miscalibrated"])
    s.add_argument("--d", required=True, type=int)
    s.add_argument("--n", required=True, type=int)
    s.add_argument("--alpha", type=float, default=1.0, help="Dirichlet concentration")
    s.add_argument("--ts-alpha", type=float, default=None)
    s.add_argument("--seed", required=True, type=int)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    set_threads(args.threads)
    try:
        args.func(_Run(args))
    except (DataError, ValueError, OSError, json.JSONDecodeError, np.linalg.LinAlgError) as e:
        print(f"proper-uq {args.command}: error: {e}", file=sys.stderr)
        return 1
    finally:
        set_threads(None)
    return 0


if __name__ == "__main__":
    sys.exit(main())
