import itertools
import math

import numpy as np
import pytest

from proper_uq.bregman import (
    NEG_BINARY_ENTROPY,
    SQUARE,
    DualVector,
    bernoulli_bvd,
    bregman_1d,
    bregman_information,
    bvd_classification,
    dual_flip_check,
    from_dual,
    integral_representation_check,
    to_dual,
)
from proper_uq.scores import ScoreKind, expected_score_bruteforce


def binary_kl(a, b):
    return a * math.log(a / b) + (1 - a) * math.log((1 - a) / (1 - b))


def test_square_generator_is_squared_distance():
    rng = np.random.default_rng(1)
    for x, y in rng.normal(size=(20, 2)):
        assert bregman_1d(SQUARE, x, y) == pytest.approx((y - x) ** 2, abs=1e-12)


def test_zero_on_diagonal():
    for g in (SQUARE, NEG_BINARY_ENTROPY):
        assert bregman_1d(g, 0.4, 0.4) == 0.0


def test_neg_binary_entropy_is_binary_kl():
    assert bregman_1d(NEG_BINARY_ENTROPY, 0.7, 0.2) == pytest.approx(binary_kl(0.2, 0.7), abs=1e-14)


def test_out_of_domain():
    with pytest.raises(ValueError):
        bregman_1d(NEG_BINARY_ENTROPY, 0.0, 0.5)
    with pytest.raises(ValueError):
        bregman_1d(NEG_BINARY_ENTROPY, 0.5, 1.2)


def test_dual_flip_examples():
    assert dual_flip_check(NEG_BINARY_ENTROPY, 0.3, 0.3)["gap"] < 1e-12
    assert dual_flip_check(NEG_BINARY_ENTROPY, 0.7, 0.2)["gap"] < 1e-10
    rng = np.random.default_rng(2)
    for x, y in rng.normal(size=(10, 2)):
        assert dual_flip_check(SQUARE, x, y)["gap"] < 1e-12


def test_dual_flip_grid():
    grid = np.linspace(0.05, 0.95, 50)
    for x, y in itertools.product(grid, grid):
        assert dual_flip_check(NEG_BINARY_ENTROPY, x, y)["gap"] < 1e-10


@pytest.mark.parametrize("x,y", [(0.2, 0.7), (0.7, 0.2), (0.05, 0.9)])
def test_integral_representation(x, y):
    assert integral_representation_check(NEG_BINARY_ENTROPY, x, y) < 1e-8


def test_integral_representation_square():
    assert integral_representation_check(SQUARE, -1.3, 2.2) < 1e-12


def test_affine_shift_invariance():
    rng = np.random.default_rng(3)
    for g in (SQUARE, NEG_BINARY_ENTROPY):
        shifted = g.with_affine(1.7, -0.4)
        for x, y in rng.uniform(0.05, 0.95, size=(20, 2)):
            assert bregman_1d(shifted, x, y) == pytest.approx(bregman_1d(g, x, y), abs=1e-12)
            assert dual_flip_check(shifted, x, y)["gap"] < 1e-10


def test_dual_coordinates():
    np.testing.assert_allclose(to_dual("log", np.full(4, 0.25)).coords, 0.0, atol=1e-15)
    p = [0.1, 0.3, 0.6]
    np.testing.assert_array_equal(to_dual("brier", p).coords, p)
    assert abs(to_dual("log", p).coords.sum()) < 1e-12
    with pytest.raises(ValueError):
        to_dual("log", [1.0, 0.0])
    with pytest.raises(ValueError):
        to_dual("spherical", p)


def test_log_round_trip():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        p = rng.dirichlet(np.ones(5)) * 0.98 + 0.004
        back = from_dual(to_dual("log", p)).probs
        worst = max(worst, np.abs(back - p).max())
    assert worst < 1e-12


def test_round_trip_dual_vector_type():
    d = to_dual("brier", [0.25, 0.75])
    assert isinstance(d, DualVector) and d.kind is ScoreKind.BRIER


def test_bregman_information_examples():
    assert bregman_information("brier", [[0.2, 0.8]] * 3) == pytest.approx(0.0, abs=1e-15)
    assert bregman_information("log", [[0.2, 0.8]] * 3) == pytest.approx(0.0, abs=1e-15)
    assert bregman_information("brier", [[1, 0], [0, 1]]) == pytest.approx(0.5, abs=1e-15)
    oracle = -math.log(math.sqrt(0.5 * 0.8) + math.sqrt(0.5 * 0.2))
    assert bregman_information("log", [[0.5, 0.5], [0.8, 0.2]]) == pytest.approx(oracle, abs=1e-14)


def test_log_bregman_information_closed_form():
    rng = np.random.default_rng(5)
    for _ in range(50):
        P = rng.dirichlet(np.ones(4), size=rng.integers(1, 6)) * 0.99 + 0.0025
        gm = np.exp(np.log(P).mean(axis=0))
        assert bregman_information("log", P) == pytest.approx(-math.log(gm.sum()), abs=1e-12)


def test_bregman_information_nonnegative():
    rng = np.random.default_rng(6)
    for kind in ("brier", "log"):
        for _ in range(200):
            P = rng.dirichlet(np.ones(3), size=rng.integers(1, 8)) * 0.99 + 0.0033
            assert bregman_information(kind, P) >= -1e-12


def test_brier_lemma_by_enumeration():
    # E||x - Y||^2 = ||x - EY||^2 + BI(Y) for a discrete Y with explicit weights
    ys = np.array([[0.1, 0.9], [0.5, 0.5], [0.7, 0.3]])
    w = np.array([0.2, 0.5, 0.3])
    x = np.array([0.4, 0.6])
    lhs = sum(wi * np.sum((x - yi) ** 2) for wi, yi in zip(w, ys))
    ey = w @ ys
    rhs = np.sum((x - ey) ** 2) + bregman_information("brier", ys, weights=w)
    assert lhs == pytest.approx(rhs, abs=1e-15)


def test_bvd_trivial():
    r = bvd_classification("brier", [[0.3, 0.7]], [0.3, 0.7])
    assert r.bias == pytest.approx(0, abs=1e-15) and r.variance == pytest.approx(0, abs=1e-15)
    assert r.total == pytest.approx(r.noise, abs=1e-15)


def test_bvd_brier_is_classical_mse():
    members = np.array([[0.2, 0.8], [0.6, 0.4], [0.5, 0.5]])
    q = np.array([0.7, 0.3])
    r = bvd_classification("brier", members, q)
    mean = members.mean(axis=0)
    assert r.bias == pytest.approx(np.sum((mean - q) ** 2), abs=1e-15)
    assert r.variance == pytest.approx(np.mean(np.sum((members - mean) ** 2, axis=1)), abs=1e-15)
    assert r.noise == pytest.approx(-np.sum(q**2), abs=1e-15)
    brute = np.mean([expected_score_bruteforce("brier", p, q) for p in members])
    assert r.total == pytest.approx(brute, abs=1e-14)


def test_bvd_log_example():
    r = bvd_classification("log", [[0.5, 0.5], [0.8, 0.2]], [0.7, 0.3])
    assert abs(r.residual) < 1e-10
    brute = np.mean([expected_score_bruteforce("log", p, [0.7, 0.3]) for p in ([0.5, 0.5], [0.8, 0.2])])
    assert r.total == pytest.approx(brute, abs=1e-14)


def test_bvd_identity_many():
    rng = np.random.default_rng(7)
    for kind in ("brier", "log"):
        for _ in range(500):
            d = rng.integers(2, 6)
            P = rng.dirichlet(np.ones(d), size=rng.integers(1, 6)) * 0.99 + 0.01 / d
            q = rng.dirichlet(np.ones(d)) * 0.99 + 0.01 / d
            assert abs(bvd_classification(kind, P, q).residual) < 1e-10


def test_bvd_rejects_spherical_and_boundary():
    with pytest.raises(ValueError):
        bvd_classification("spherical", [[0.5, 0.5]], [0.5, 0.5])
    with pytest.raises(ValueError):
        bvd_classification("log", [[1.0, 0.0]], [0.5, 0.5])
    with pytest.raises(ValueError):
        bvd_classification("log", [[0.5, 0.5]], [1.0, 0.0])


def test_bernoulli():
    r = bernoulli_bvd(0.5, 1, 10, seed=0)
    assert r["theoretical_variance"] == 0.25
    assert bernoulli_bvd(1e-9, 5, 2, seed=0)["noise"] < 1e-8
    r = bernoulli_bvd(0.3, 20, 10000, seed=2024)
    assert r["theoretical_variance"] == pytest.approx(0.0105, abs=1e-15)
    assert abs(r["empirical_variance"] - 0.0105) / 0.0105 < 0.05
    assert r == bernoulli_bvd(0.3, 20, 10000, seed=2024)
    with pytest.raises(ValueError):
        bernoulli_bvd(1.0, 5, 10, seed=0)
