import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from arma_fpe.arma_core import ArmaParams, NoiseSpec, ParamSpace, filter_bank, simulate, validate_params
from arma_fpe.fisher_diag import (
    EmptyGridError,
    GridSpec,
    fisher_matrix,
    grid_sup_inverse_eig,
    information_from_gradients,
    min_eig_subadditivity_check,
)

ETA0 = ArmaParams([0.5], [0.3])


def test_ar1_information_is_mean_lagged_square():
    y = simulate(ArmaParams([0.6]), 250, NoiseSpec(), 1).y
    summ = fisher_matrix(ArmaParams([0.6]), y)
    lagged = np.concatenate([[0.0], y[:-1]])
    expected = float(np.sum(lagged**2) / y.size)
    assert summ.matrix.shape == (1, 1)
    assert summ.matrix[0, 0] == pytest.approx(expected, rel=1e-13)
    assert summ.lambda_min == summ.lambda_max == summ.matrix[0, 0]


def test_filter_route_gives_same_matrix():
    n = 500
    s = simulate(ETA0, n, NoiseSpec(), 6)
    for eta in (ArmaParams([0.45], [0.35]), ArmaParams([0.55], [0.2]), ETA0):
        direct = fisher_matrix(eta, s.y).matrix
        bank = filter_bank(eta, ETA0, n)
        via_filter = information_from_gradients(bank.gradients(s.eps))
        assert np.max(np.abs(direct - via_filter)) < 1e-8


@pytest.mark.parametrize("c", [0.01, 3.0, -7.5])
def test_pure_ar_information_scales_quadratically(c):
    eta = ArmaParams([0.4, -0.3])
    y = simulate(eta, 200, NoiseSpec(), 2).y
    a = fisher_matrix(eta, y)
    b = fisher_matrix(eta, c * y)
    np.testing.assert_allclose(b.matrix, c * c * a.matrix, rtol=1e-12)
    assert b.lambda_min == pytest.approx(c * c * a.lambda_min, rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.floats(-0.8, 0.8), st.floats(-0.8, 0.8), st.integers(0, 2**31))
def test_information_symmetric_psd(a, b, seed):
    eta = ArmaParams([a], [b])
    assume(validate_params(eta, ParamSpace.default(eta.order)).valid)
    y = np.random.default_rng(seed).standard_normal(80)
    summ = fisher_matrix(eta, y)
    np.testing.assert_array_equal(summ.matrix, summ.matrix.T)
    assert summ.lambda_min >= -1e-10
    assert summ.lambda_min <= summ.lambda_max


# -- subadditivity ------------------------------------------------------------

def test_subadditivity_identity_has_zero_slack():
    holds, slack = min_eig_subadditivity_check(np.eye(3), np.eye(3))
    assert holds and slack == pytest.approx(0.0, abs=1e-15)


def test_subadditivity_complementary_diagonals():
    holds, slack = min_eig_subadditivity_check(np.diag([1.0, 0.0]), np.diag([0.0, 1.0]))
    assert holds and slack == pytest.approx(1.0, abs=1e-15)


def test_subadditivity_random_pairs():
    rng = np.random.default_rng(2024)
    worst = np.inf
    for _ in range(1000):
        d = int(rng.integers(1, 7))
        a = rng.uniform(-1, 1, (d, d))
        b = rng.uniform(-1, 1, (d, d))
        holds, slack = min_eig_subadditivity_check(0.5 * (a + a.T), 0.5 * (b + b.T))
        assert holds
        worst = min(worst, slack)
    assert worst >= -1e-12


def test_subadditivity_rejects_asymmetric():
    with pytest.raises(ValueError):
        min_eig_subadditivity_check(np.array([[1.0, 2.0], [0.0, 1.0]]), np.eye(2))


def test_subadditivity_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        min_eig_subadditivity_check(np.eye(2), np.eye(3))


# -- grid suprema -------------------------------------------------------------

def test_singleton_grid_is_center_value():
    y = simulate(ETA0, 200, NoiseSpec(), 3).y
    res = grid_sup_inverse_eig(y, GridSpec(ETA0, 0.1, 1), 2.0)
    lam = fisher_matrix(ETA0, y).lambda_min
    assert res.n_points == 1
    assert res.value == lam**-2.0
    assert res.argmax == ETA0


def test_grid_points_are_equispaced_and_include_center():
    pts = GridSpec(ETA0, 0.1, 5).points()
    vecs = np.array([p.vector() for p in pts])
    # (0.4, 0.4) shares a root between the polynomials and is dropped
    assert len(pts) == 24
    assert not any(np.allclose(v, [0.4, 0.4]) for v in vecs)
    assert any(np.array_equal(v, ETA0.vector()) for v in vecs)
    np.testing.assert_allclose(np.unique(vecs[:, 0]), [0.4, 0.45, 0.5, 0.55, 0.6], atol=1e-15)


def test_refining_grid_never_decreases():
    y = simulate(ETA0, 200, NoiseSpec(), 4).y
    coarse = grid_sup_inverse_eig(y, GridSpec(ETA0, 0.1, 3), 2.0)
    fine = grid_sup_inverse_eig(y, GridSpec(ETA0, 0.1, 5), 2.0)
    assert set(map(lambda p: tuple(p.vector()), GridSpec(ETA0, 0.1, 3).points())) <= set(
        map(lambda p: tuple(p.vector()), GridSpec(ETA0, 0.1, 5).points())
    )
    assert fine.value >= coarse.value


def test_monotone_in_q_when_eigenvalue_below_one():
    y = simulate(ETA0, 150, NoiseSpec(), 5).y
    grid = GridSpec(ETA0, 0.1, 5)
    vals = [grid_sup_inverse_eig(y, grid, q) for q in (1.0, 2.0, 4.0)]
    if vals[0].lambda_min < 1.0:
        assert vals[0].value <= vals[1].value <= vals[2].value
    else:
        assert vals[0].value >= vals[1].value >= vals[2].value


def test_invalid_points_are_dropped():
    # radius 0.3 around (0.5, 0.3) reaches alpha = beta lines and the common-root exclusion
    grid = GridSpec(ETA0, 0.3, 7)
    pts = grid.points()
    space = ParamSpace.default(ETA0.order)
    assert 0 < len(pts) < 49
    assert all(validate_params(p, space).valid for p in pts)


def test_empty_grid_raises():
    # every node sits on the common-root diagonal
    with pytest.raises(EmptyGridError):
        grid_sup_inverse_eig(np.ones(10), GridSpec(ArmaParams([0.5], [0.5]), 0.1, 1), 2.0)


def test_zero_series_gives_infinite_sentinel():
    res = grid_sup_inverse_eig(np.zeros(20), GridSpec(ETA0, 0.1, 3), 2.0)
    assert res.degenerate and res.value == np.inf and res.lambda_min <= 0.0


def test_q_below_one_rejected():
    with pytest.raises(ValueError):
        grid_sup_inverse_eig(np.ones(10), GridSpec(ETA0), 0.5)


@pytest.mark.parametrize("kwargs", [{"radius": 0.0}, {"points_per_axis": 4}, {"points_per_axis": 0}])
def test_grid_spec_validation(kwargs):
    with pytest.raises(ValueError):
        GridSpec(ETA0, **kwargs)
