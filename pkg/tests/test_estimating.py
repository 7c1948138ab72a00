import numpy as np
import pytest

from ebsc.config import LambdaGrid
from ebsc.dr_basis import build_basis, default_eta
from ebsc.estimating import (
    scaling_factor,
    score_point,
    select_order,
    smooth_rho,
    solve_lambda,
    solve_q,
    t_lambda,
    t_lambda_exact,
    update_rho,
)
from ebsc.exceptions import DataValidationError
from ebsc.noise_model import SpectralModel, parse_noise, simulate_noise, true_spectral
from ebsc.simulation import make_function
from ebsc.smoother import SmootherSpec, log_marginal, penalty_weights


@pytest.fixture
def coefs(noisy_signal):
    return build_basis(noisy_signal.size, 2).coefficients(noisy_signal)


def test_scaling_factor():
    assert scaling_factor(1e-4, 2, 100) == pytest.approx(1e-4 ** -0.25 + 100 * 1e-4**0.25)


def test_solve_lambda_finds_a_bracketed_root(coefs):
    n = coefs.size
    grid = LambdaGrid().values(n, 2)
    flat = np.ones(n)

    root = solve_lambda(2, flat, coefs, grid)

    assert root.bracketed
    assert grid[0] < root.value < grid[-1]
    scale = max(abs(t_lambda(lam, 2, flat, coefs)) for lam in grid)
    assert abs(root.score) < 1e-4 * scale


def test_solve_lambda_without_sign_change_returns_closest_grid_point(coefs):
    n = coefs.size
    flat = np.ones(n)
    root = solve_lambda(2, flat, coefs, LambdaGrid().values(n, 2))
    grid = root.value * np.array([1e2, 1e3])

    fallback = solve_lambda(2, flat, coefs, grid)

    assert not fallback.bracketed
    assert fallback.value in grid


def test_exact_equation_matches_diagonal_form_for_white_noise(noisy_signal, coefs):
    n = noisy_signal.size
    basis = build_basis(n, 2)

    for lam in (1e-8, 1e-6, 1e-3):
        exact = t_lambda_exact(lam, 2, np.eye(n), noisy_signal, basis)
        assert exact == pytest.approx(t_lambda(lam, 2, np.ones(n), coefs), rel=1e-8)


def test_update_rho_leaves_null_space_undefined(coefs):
    raw = update_rho(1e-6, 2, np.ones(coefs.size), coefs)

    assert np.isnan(raw[:2]).all()
    assert np.all(raw[2:] >= 0)


def test_update_rho_keeps_roots_of_the_spectral_equation_fixed():
    n, lam, level = 200, 1e-6, 2.0
    eta = default_eta(n, 2)
    penalty = penalty_weights(lam, eta)
    coefs = np.zeros(n)
    coefs[2:] = np.sqrt(level + 1.0 / penalty[2:])

    raw = update_rho(lam, 2, np.full(n, level), coefs, eta)

    np.testing.assert_allclose(raw[2:], level, rtol=1e-10)


def test_update_rho_preserves_the_shape_of_a_peaked_spectrum():
    n, lam = 200, 1e-6
    eta = default_eta(n, 2)
    penalty = penalty_weights(lam, eta)
    target = np.ones(n)
    target[60:70] = 8.0
    coefs = np.zeros(n)
    coefs[2:] = np.sqrt(target[2:] + 1.0 / penalty[2:])

    raw = update_rho(lam, 2, np.ones(n), coefs, eta)
    for _ in range(30):
        raw = update_rho(lam, 2, np.nan_to_num(raw, nan=1.0), coefs, eta)

    np.testing.assert_allclose(raw[20:], target[20:], rtol=1e-3)
    assert np.argmax(raw[2:]) + 2 in range(60, 70)


def test_smooth_rho_of_constant_values_is_flat():
    n = 120
    raw = np.full(n, 3.0)
    raw[:2] = np.nan

    model = smooth_rho(raw, 2, build_basis(n, 2))

    np.testing.assert_allclose(model.rho, 1.0, atol=1e-8)


def test_smooth_rho_rejects_mostly_missing_values():
    raw = np.full(100, np.nan)
    raw[:10] = 1.0

    with pytest.raises(DataValidationError):
        smooth_rho(raw, 2, build_basis(100, 2))


def test_smooth_rho_returns_normalized_model(coefs):
    raw = update_rho(1e-6, 2, np.ones(coefs.size), coefs)

    model = smooth_rho(raw, 2, build_basis(coefs.size, 2), delta=0.05)

    assert model.rho.sum() == pytest.approx(coefs.size, rel=1e-8)
    assert model.rho.min() >= 0.05 * (1 - 1e-9)


@pytest.mark.parametrize(
    "scores, expected, flags",
    [
        ({1: 1.0, 2: 0.5, 3: -0.2, 4: -1.0}, 3, []),
        ({1: 1.0, 2: 0.1, 3: -0.2, 4: -1.0}, 2, []),
        ({1: -1.0, 2: -0.5, 3: -0.2}, 3, []),
        ({1: 2.0, 2: 1.0, 3: 0.5}, 1, ["q-all-positive"]),
        ({1: 1.0, 2: 0.0, 3: -1.0}, 2, []),
    ],
)
def test_select_order(scores, expected, flags):
    assert select_order(scores) == (expected, flags)


def test_solve_q_reports_scores_for_every_order(noisy_signal):
    n = noisy_signal.size
    flat = SpectralModel.flat(n)
    results = {}
    for q in (1, 2, 3):
        coefs = build_basis(n, q).coefficients(noisy_signal)
        root = solve_lambda(q, flat, coefs, LambdaGrid().values(n, q))
        results[q] = (root.value, flat, coefs)

    choice = solve_q(results)

    assert set(choice.scores) == {1, 2, 3}
    assert choice.q_hat in (1, 2, 3)


def test_score_point_bundles_both_equations(coefs):
    flat = SpectralModel.flat(coefs.size)

    point = score_point(1e-6, 2, flat, coefs)

    assert point.t_lambda == pytest.approx(t_lambda(1e-6, 2, flat, coefs))
    assert point.sigma2hat > 0


@pytest.mark.parametrize("lam", [1e-8, 1e-6, 1e-4])
def test_t_lambda_is_the_scaled_derivative_of_the_log_marginal(noisy_signal, coefs, lam):
    n = noisy_signal.size
    basis = build_basis(n, 2)
    spectral = true_spectral(parse_noise("ar1:0.5"), n)
    step = 1e-4

    def log_likelihood(log_lam):
        return log_marginal(SmootherSpec(float(np.exp(log_lam)), 2, spectral), noisy_signal, basis)

    numeric = (log_likelihood(np.log(lam) + step) - log_likelihood(np.log(lam) - step)) / (2 * step)
    point = score_point(lam, 2, spectral, coefs)
    analytic = -scaling_factor(lam, 2, n) * point.t_lambda / (2 * point.sigma2hat)

    assert numeric == pytest.approx(analytic, rel=1e-4, abs=1e-6)


def test_root_of_t_lambda_maximizes_the_log_marginal(noisy_signal, coefs):
    n = noisy_signal.size
    basis = build_basis(n, 2)
    spectral = SpectralModel.flat(n)
    root = solve_lambda(2, spectral, coefs, LambdaGrid().values(n, 2)).value

    def log_likelihood(lam):
        return log_marginal(SmootherSpec(lam, 2, spectral), noisy_signal, basis)

    assert log_likelihood(root) >= log_likelihood(root * 1.1)
    assert log_likelihood(root) >= log_likelihood(root / 1.1)


@pytest.mark.parametrize("factor", [0.5, 2.0])
def test_lambda_root_is_scale_equivariant(factor):
    n = 500
    y = make_function("f1", n) + simulate_noise(parse_noise("iid", sigma=1.0), n, seed=3)
    coefs = build_basis(n, 2).coefficients(y)
    grid = LambdaGrid().values(n, 2)
    flat = np.ones(n)

    reference = solve_lambda(2, flat, coefs, grid)
    scaled = solve_lambda(2, flat, factor * coefs, grid)

    assert reference.bracketed and scaled.bracketed
    assert scaled.value == pytest.approx(reference.value, rel=0.01)
