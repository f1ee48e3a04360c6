"""Acceptance criteria AC1-AC13.

Run under pytest (a summary section lists one PASS/FAIL line per criterion)
or directly with ``python3 tests/test_acceptance.py``.
"""

import contextlib
import io
import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from proper_uq import kernels as K
from proper_uq.bregman import NEG_BINARY_ENTROPY, bernoulli_bvd, bvd_classification, dual_flip_check
from proper_uq.calibration import (
    BinningScheme,
    aleatoric_inequality_check,
    cce_kde,
    improvement_check,
    proper_ce,
)
from proper_uq.cka import DimensionPartition, cka, cka_matrix, cluster_dimensions, disentangled_cosine
from proper_uq.cli import main as cli_main
from proper_uq.core import (
    DiscreteDistribution,
    EnsembleGrid,
    LabeledPredictionSet,
    SampleSet,
    make_rng,
    save_ensemble,
    save_predictions,
    save_sample_set,
    split_dataset,
)
from proper_uq.estimator_risk import (
    HSpec,
    empirical_ce_risk,
    empirical_ce_risk_bruteforce,
    fit,
    parse_hspec,
    pipeline,
)
from proper_uq.kernel_decomposition import ks_bvc_sets, ks_bvd_sets
from proper_uq.scores import ScoreKind, divergence, entropy, expected_score, expected_score_bruteforce, score
from proper_uq.synth import (
    enumerate_expected,
    gen_block_gaussian,
    gen_calibrated,
    gen_miscalibrated,
    product_world,
)

DELTA = K.parse_kernel("delta")
RBF1 = K.parse_kernel("rbf:gamma=1")


def _interior(rng, d):
    p = rng.dirichlet(np.ones(d))
    p = np.maximum(p, 1e-6)
    return p / p.sum()


# --------------------------------------------------------------------------- criteria

def ac1():
    """Propriety and the expected-score identity for all three scores."""
    rng = make_rng(1)
    worst_gap, violations = 0.0, 0
    for kind in ScoreKind:
        for _ in range(1000):
            d = int(rng.integers(2, 7))
            p, q = _interior(rng, d), _interior(rng, d)
            # direct outcome sums, independent of the divergence/entropy closed forms
            es = expected_score_bruteforce(kind, p, q)
            violations += es < expected_score_bruteforce(kind, q, q)
            # entropy here is E_q S(q, Y), so the identity reads D + entropy
            worst_gap = max(worst_gap, abs(es - (divergence(kind, p, q) + entropy(kind, q))),
                            abs(es - expected_score(kind, p, q)))
    ok = violations == 0 and worst_gap < 1e-12
    return ok, f"propriety violations={violations}, max identity gap={worst_gap:.2e} (tol 1e-12)"


def ac2():
    """Delta-kernel scores on exact pmfs reduce to Brier and spherical forms."""
    rng = make_rng(2)
    worst = 0.0
    for _ in range(200):
        d = int(rng.integers(2, 8))
        atoms = np.arange(float(d))[:, None]
        p, q = rng.dirichlet(np.ones(d)), rng.dirichlet(np.ones(d))
        P, Q = DiscreteDistribution(atoms, p), DiscreteDistribution(atoms, q)
        y = int(rng.integers(d))
        gaps = [
            K.kernel_score(DELTA, P, atoms[y]) - score("brier", p, y),
            K.expected_kernel_score(DELTA, P, Q) - expected_score("brier", p, q),
            K.cosine_similarity(DELTA, P, Q) - p @ q / (np.linalg.norm(p) * np.linalg.norm(q)),
            K.eks(DELTA, P, Q) - expected_score("spherical", p, q),
        ]
        worst = max(worst, max(abs(g) for g in gaps))
    return worst < 1e-12, f"max gap={worst:.2e} over 200 pmf pairs (tol 1e-12)"


def ac3():
    """Decomposition identities on 200 random instances per estimator."""
    rng = make_rng(3)
    worst = {"brier": 0.0, "log": 0.0, "ks_bvd": 0.0, "ks_bvc": 0.0}
    for _ in range(200):
        d = int(rng.integers(2, 6))
        P = rng.dirichlet(np.ones(d), size=int(rng.integers(1, 6))) * 0.99 + 0.01 / d
        q = rng.dirichlet(np.ones(d)) * 0.99 + 0.01 / d
        for kind in ("brier", "log"):
            worst[kind] = max(worst[kind], abs(bvd_classification(kind, P, q).residual))
        k = K.KernelSpec("rbf", gamma=float(rng.uniform(0.1, 2.0)))
        m, R, q_dim = int(rng.integers(1, 5)), int(rng.integers(2, 5)), int(rng.integers(1, 4))
        T = rng.normal(size=(int(rng.integers(2, 12)), q_dim))
        members = [rng.normal(rng.normal(), 1.0, size=(int(rng.integers(1, 12)), q_dim)) for _ in range(m)]
        worst["ks_bvd"] = max(worst["ks_bvd"], abs(ks_bvd_sets(k, members, T).residual))
        grid = [[rng.normal(size=(int(rng.integers(1, 8)), q_dim)) for _ in range(R)] for _ in range(m)]
        worst["ks_bvc"] = max(worst["ks_bvc"], abs(ks_bvc_sets(k, grid, T).residual))
    ok = all(v < 1e-10 for v in worst.values())
    return ok, "max residuals " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items()) + " (tol 1e-10)"


def ac4():
    """Bernoulli mean estimator variance against p(1-p)/n."""
    r = bernoulli_bvd(0.3, 20, 10000, seed=2024)
    rel = abs(r["empirical_variance"] - 0.0105) / 0.0105
    return rel < 0.05, f"empirical variance={r['empirical_variance']:.5f}, relative error={rel:.3f} (tol 0.05)"


def ac5():
    """Dual flip for the negative binary entropy / softplus pair."""
    grid = np.linspace(0.02, 0.98, 50)
    worst = max(dual_flip_check(NEG_BINARY_ENTROPY, x, y)["gap"] for x in grid for y in grid)
    return worst < 1e-10, f"max gap={worst:.2e} on a 50x50 grid (tol 1e-10)"


def ac6():
    """Unbiased MMD under equal distributions and the exact delta-kernel MMD."""
    rng = make_rng(6)
    atoms = np.array([[0.0], [0.5], [1.5], [3.0]])
    law = DiscreteDistribution(atoms, [0.1, 0.4, 0.3, 0.2])
    draws = np.array([K.mmd2(RBF1, law.sample(8, rng), law.sample(8, rng)) for _ in range(10000)])
    se = draws.std(ddof=1) / np.sqrt(draws.size)
    z = abs(draws.mean()) / se
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(2, 9))
        p, q = rng.dirichlet(np.ones(d)), rng.dirichlet(np.ones(d))
        at = np.arange(float(d))[:, None]
        exact = float(np.sum((p - q) ** 2))
        worst = max(worst, abs(K.mmd2(DELTA, DiscreteDistribution(at, p), DiscreteDistribution(at, q)) - exact))
    ok = z < 3 and worst < 1e-12
    return ok, f"resampling mean={draws.mean():.2e} ({z:.2f} SE, tol 3); delta-kernel max gap={worst:.1e} (tol 1e-12)"


AC7_ALPHA = 0.5


def ac7():
    """KDE calibration-error estimates shrink with n on calibrated data."""
    medians = []
    kl = []
    for n in (500, 2000, 8000):
        vals = []
        for seed in range(20):
            data = gen_calibrated(3, n, AC7_ALPHA, seed).data
            vals.append(cce_kde(2, data, 0.05).value)
            if n == 8000:
                kl.append(proper_ce("log", data, 0.05).value)
        medians.append(float(np.median(vals)))
    decreasing = medians[0] > medians[1] > medians[2]
    ok = decreasing and medians[2] < 0.05 and np.median(kl) < 0.05
    return ok, (f"Dirichlet({AC7_ALPHA}) cce medians={[round(m, 4) for m in medians]} (strictly decreasing, "
                f"last < 0.05); KL proper_ce median at n=8000={np.median(kl):.4f} (tol 0.05)")


def ac8():
    """Risk change from temperature scaling equals the calibration-error change."""
    bundle = gen_miscalibrated(2, 20000, 1.0, 2.0, seed=8)
    r = improvement_check("brier", bundle, 0.5)
    return r["gap"] < 0.02, f"risk_delta={r['risk_delta']:.5f}, ce_delta={r['ce_delta']:.5f}, gap={r['gap']:.5f}"


def ac9():
    """Predicted entropy never exceeds the conditional entropy per level bin."""
    data = gen_calibrated(3, 20000, 1.0, seed=9).data
    parts = []
    ok = True
    for kind, name in (("log", "Shannon"), ("brier", "Gini")):
        rows = aleatoric_inequality_check(kind, data, levels=10, slack=0.02)
        held = sum(r["holds"] for r in rows)
        worst = max(r["predicted_entropy"] - r["conditional_entropy_estimate"] for r in rows)
        ok &= held == len(rows)
        parts.append(f"{name} {held}/{len(rows)} bins (max excess {worst:+.4f})")
    return ok, ", ".join(parts) + " with slack 0.02"


AC10_SPLIT = [1 / 6, 2 / 3, 1 / 6]


def ac10():
    """Oracle estimator wins validation risk; trace-trick risk matches the double loop."""
    cands = [parse_hspec({"kind": "oracle"}), HSpec("binned", bins=BinningScheme("uniform", 10))] + [
        HSpec("kde", h=h) for h in (0.02, 0.05, 0.1)]
    wins = 0
    for s in range(50):
        data = gen_calibrated(3, 6000, 1.0, 100 + s).data
        train, val, test = split_dataset(data, AC10_SPLIT, make_rng(s))
        wins += pipeline(cands, train, val, test).chosen == "oracle"
    fixture = LabeledPredictionSet([[0.7, 0.2, 0.1], [0.1, 0.6, 0.3], [0.3, 0.3, 0.4], [0.5, 0.1, 0.4]],
                                   [0, 2, 2, 1], source="fixture4")
    train = gen_calibrated(3, 50, 1.0, 10).data
    gap = max(abs(empirical_ce_risk(h, fixture) - empirical_ce_risk_bruteforce(h, fixture))
              for h in (fit(c, train) for c in cands + [HSpec("krr", lam=0.1)]))
    ok = wins >= 45 and gap < 1e-12
    return ok, f"oracle won {wins}/50 (need 45); 4-instance risk gap={gap:.1e} (tol 1e-12)"


def ac11():
    """CKA equals squared Pearson for linear kernels and is small for independent pairs."""
    lin = K.parse_kernel("poly:gamma=1,c=1,degree=1")
    rng = make_rng(11)
    worst = 0.0
    for _ in range(50):
        x = rng.normal(size=200)
        y = rng.normal() * x + rng.normal(size=200)
        worst = max(worst, abs(cka(lin, lin, x, y) - np.corrcoef(x, y)[0, 1] ** 2))
    vals = []
    for s in range(20):
        r = make_rng(1100 + s)
        vals.append(cka(RBF1, RBF1, r.normal(size=2000), r.normal(size=2000)))
    med = float(np.median(vals))
    return worst < 1e-10 and med < 0.02, f"Pearson gap={worst:.1e} (tol 1e-10); independent median={med:.4f} (tol 0.02)"


def ac12():
    """Exact factorization, copula residual, and planted two-block recovery."""
    rng = make_rng(12)
    exact = 0.0
    for _ in range(20):
        blocks = [np.array([[0.0], [1.0]]), np.array([[0.0, 0.0], [1.0, 2.0]]), np.array([[0.0], [3.0]])]
        member = [rng.dirichlet(np.ones(2)) for _ in blocks]
        target = [rng.dirichlet(np.ones(2)) for _ in blocks]
        w = product_world(blocks, [member], target)
        part = DimensionPartition(w.blocks, 0.3)
        P, Q = w.distribution(w.members[0]), w.distribution(w.target)
        oracle = enumerate_expected(w, "eks_product")
        exact = max(exact, abs(oracle["eks_product"] - oracle["eks_full"]),
                    disentangled_cosine(DELTA, part, P, Q, "cosine").residual,
                    disentangled_cosine(DELTA, part, P, Q, "eks").residual)
    rbf5 = K.parse_kernel("rbf:gamma=5")
    halves = DimensionPartition(((0, 1), (2, 3)), 0.3)
    residuals = []
    recovered = 0
    for s in range(5):
        X = gen_block_gaussian(2000, [2, 2], 0.9, s, between=0.9, copula=True)
        Y = gen_block_gaussian(2000, [2, 2], 0.9, 1000 + s, copula=True)
        residuals.append(disentangled_cosine(rbf5, halves, X, Y, "cosine").residual)
        planted = gen_block_gaussian(2000, [2, 2], 0.8, 2000 + s, copula=True)
        recovered += cluster_dimensions(cka_matrix(planted, RBF1), 0.3).clusters == ((0, 1), (2, 3))
    ok = exact < 1e-10 and min(residuals) > 0.05 and recovered == 5
    return ok, (f"exact residual={exact:.1e} (tol 1e-10); copula residual min={min(residuals):.3f} (need > 0.05); "
                f"planted blocks recovered {recovered}/5")


def _cli(argv):
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf), contextlib.redirect_stderr(io.StringIO()):
        code = cli_main(argv)
    return code, buf.getvalue()


def _drop_wall_time(text):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        return text
    obj.get("manifest", {}).pop("wall_time_s", None)
    return json.dumps(obj, sort_keys=True)


def ac13():
    """Every subcommand reproduces its report across reruns and thread counts."""
    with tempfile.TemporaryDirectory() as tmp:
        t = Path(tmp)
        rng = make_rng(13)
        save_predictions(gen_miscalibrated(3, 600, 1.0, 2.0, 13).data, t / "pred.csv")
        (t / "members.csv").write_text("p1,p2,p3\n0.2,0.5,0.3\n0.6,0.1,0.3\n0.3,0.3,0.4\n")
        g1 = EnsembleGrid(tuple((SampleSet(rng.normal(size=(300, 2))),) for _ in range(3)))
        g3 = EnsembleGrid(tuple(tuple(SampleSet(rng.normal(size=(100, 2))) for _ in range(4)) for _ in range(3)))
        e1, e3 = save_ensemble(g1, t / "g1", "a"), save_ensemble(g3, t / "g3", "b")
        save_sample_set(SampleSet(rng.normal(size=(300, 2))), t / "targets.csv")
        data = gen_calibrated(3, 1500, 1.0, 14).data
        for name, part in zip(("train", "val", "test"), split_dataset(data, [1 / 3] * 3, make_rng(14))):
            save_predictions(part, t / f"{name}.csv")
        (t / "cands.json").write_text(json.dumps([{"kind": "oracle"}, {"kind": "kde", "h": 0.05},
                                                  {"kind": "binned", "bins": "mass:10"}, {"kind": "krr", "lambda": 1}]))
        save_sample_set(SampleSet(gen_block_gaussian(600, [2, 2], 0.8, 15, copula=True)), t / "gen.csv")
        save_sample_set(SampleSet(gen_block_gaussian(600, [2, 2], 0.8, 16, copula=True)), t / "ref.csv")
        p = str(t / "pred.csv")
        commands = {
            "score": ["score", "--kind", "log", "--data", p],
            "bvd": ["bvd", "--kind", "log", "--members", str(t / "members.csv"), "--target", "0.3,0.3,0.4"],
            "ks-decompose": ["ks-decompose", "--kernel", "rbf:gamma=1", "--ensemble", str(e3), "--targets",
                             str(t / "targets.csv"), "--mode", "bvc"],
            "ks-uncertainty": ["ks-uncertainty", "--kernel", "rbf:gamma=1", "--ensemble", str(e1), str(e3)],
            "calibrate": ["calibrate", "--data", p, "--estimator", "proper", "--kind", "log", "--bandwidth", "0.05"],
            "recalibrate": ["recalibrate", "--data", p, "--fit-temperature", "--kind", "log"],
            "reliability": ["reliability", "--data", p, "--bins", "mass:10"],
            "optimize-ce": ["optimize-ce", "--train", str(t / "train.csv"), "--val", str(t / "val.csv"),
                            "--test", str(t / "test.csv"), "--candidates", str(t / "cands.json")],
            "cka-matrix": ["cka-matrix", "--samples", str(t / "ref.csv"), "--kernel", "rbf:gamma=1"],
            "disentangle": ["disentangle", "--gen", str(t / "gen.csv"), "--ref", str(t / "ref.csv"), "--kernel",
                            "rbf:gamma=1", "--tau", "0.3"],
            "synth": ["synth", "--scenario", "miscalibrated", "--d", "3", "--n", "500", "--ts-alpha", "2",
                      "--seed", "21"],
        }
        differing = []
        for name, argv in commands.items():
            outs = set()
            for threads in ("1", "1", "2", "4", "7"):
                code, text = _cli(argv + ["--threads", threads])
                if code != 0:
                    return False, f"{name} exited with {code}"
                outs.add(_drop_wall_time(text))
            if len(outs) != 1:
                differing.append(name)
    ok = not differing
    return ok, f"{len(commands) - len(differing)}/{len(commands)} subcommands identical across reruns and " \
               f"--threads 1,2,4,7" + (f"; differing: {differing}" if differing else "")


CRITERIA = [ac1, ac2, ac3, ac4, ac5, ac6, ac7, ac8, ac9, ac10, ac11, ac12, ac13]


def _line(i, ok, detail):
    return f"AC{i} {'PASS' if ok else 'FAIL'}: {detail}"


# --------------------------------------------------------------------------- pytest entry points

def _check(i, acceptance_log):
    ok, detail = CRITERIA[i - 1]()
    line = _line(i, ok, detail)
    acceptance_log.append(line)
    print(line)
    assert ok, line


def test_ac1_propriety_identity(acceptance_log):
    _check(1, acceptance_log)


def test_ac2_delta_kernel_reductions(acceptance_log):
    _check(2, acceptance_log)


def test_ac3_decomposition_identities(acceptance_log):
    _check(3, acceptance_log)


def test_ac4_bernoulli(acceptance_log):
    _check(4, acceptance_log)


def test_ac5_dual_flip(acceptance_log):
    _check(5, acceptance_log)


def test_ac6_mmd(acceptance_log):
    _check(6, acceptance_log)


def test_ac7_calibration_consistency(acceptance_log):
    _check(7, acceptance_log)


def test_ac8_improvement_identity(acceptance_log):
    _check(8, acceptance_log)


def test_ac9_aleatoric_inequality(acceptance_log):
    _check(9, acceptance_log)


def test_ac10_risk_pipeline(acceptance_log):
    _check(10, acceptance_log)


def test_ac11_cka(acceptance_log):
    _check(11, acceptance_log)


def test_ac12_disentanglement(acceptance_log):
    _check(12, acceptance_log)


def test_ac13_determinism(acceptance_log):
    _check(13, acceptance_log)


if __name__ == "__main__":
    failed = 0
    for i, fn in enumerate(CRITERIA, start=1):
        ok, detail = fn()
        failed += not ok
        print(_line(i, ok, detail), flush=True)
    sys.exit(1 if failed else 0)
