import numpy as np
import pytest

from ebsc.config import FitConfig
from ebsc.dr_basis import build_basis
from ebsc.estimating import expected_root
from ebsc.exceptions import DataValidationError, ScenarioError
from ebsc.noise_model import SpectralModel, parse_noise, true_spectral
from ebsc.simulation import (
    STANDARD_NOISES,
    TABLE_REFERENCE,
    coverage_study,
    derivative_norm_sq,
    kappa,
    make_function,
    oracle_lambda,
    replication_seed,
    run_scenario,
    run_table,
)

SMALL_FIT = FitConfig(q_set=[1, 2], max_iter=10)


@pytest.mark.parametrize("function_id", ["f1", "f2", "f3"])
def test_signals_have_unit_standard_deviation(function_id):
    values = make_function(function_id, 200)

    assert np.std(values, ddof=1) == pytest.approx(1.0, abs=1e-8)
    assert not values.flags.writeable


def test_f3_is_a_scaled_sine():
    x = np.linspace(0.0, 1.0, 300)
    raw = 2 * np.sin(4 * np.pi * x)

    np.testing.assert_allclose(make_function("f3", 300), raw / np.std(raw, ddof=1), atol=1e-12)


def test_series_truncation_is_negligible():
    short = make_function("f1", 200)
    long = make_function("f1", 200, terms=400)

    assert np.max(np.abs(short - long)) < 2e-4


def test_unknown_signal_is_rejected():
    with pytest.raises(ScenarioError):
        make_function("f4", 100)


def test_replication_seeds_are_reproducible_and_distinct():
    seeds = [replication_seed(7, r) for r in range(50)]

    assert seeds == [replication_seed(7, r) for r in range(50)]
    assert len(set(seeds)) == 50
    assert replication_seed(8, 0) != replication_seed(7, 0)


def test_standard_noises_cover_the_reference_table():
    assert len(STANDARD_NOISES) == 9
    assert [noise.label for noise in STANDARD_NOISES] == list(TABLE_REFERENCE)


def test_kappa_matches_discrete_trace_for_white_noise():
    q, lam, n = 2, 1e-6, 4000
    penalty = lam * (np.pi * (np.arange(q + 1, n + 1) - (q + 1) / 2)) ** (2 * q)
    discrete = lam ** (1 / (2 * q)) * np.sum(1.0 / (1.0 + penalty) ** 2)

    assert kappa(0, 2, 0, 0, None, None, q, lam, n) == pytest.approx(discrete, rel=1e-3)


def test_kappa_bounds_for_bounded_spectra():
    delta = 0.05
    spectral = true_spectral(parse_noise("ar1:0.5"), 500, delta)
    reference = kappa(0, 2, 0, 0, None, None, 2, 1e-6, 500)

    value = kappa(0, 2, 0, 0, spectral, spectral, 2, 1e-6, 500)

    assert delta**2 * reference <= value <= reference / delta**2


def test_kappa_decreases_in_l():
    assert kappa(0, 1, 0, 0, 1.0, 1.0, 3, 1e-8, 500) >= kappa(0, 2, 0, 0, 1.0, 1.0, 3, 1e-8, 500)


def test_kappa_rejects_invalid_arguments():
    with pytest.raises(DataValidationError):
        kappa(0, 0, 0, 0, None, None, 2, 1e-6, 500)
    with pytest.raises(DataValidationError):
        kappa(0, 2, 0, 0, None, None, 2, -1.0, 500)


def test_oracle_lambda_power_law():
    q = 3
    ratio = oracle_lambda(2.0, 0.1, 0.5, 2000, q) / oracle_lambda(2.0, 0.1, 0.5, 1000, q)

    assert ratio == pytest.approx(2 ** (-2 * q / (2 * q + 1)))
    assert oracle_lambda(2.0, 0.0, 0.5, 1000, q) == 0.0
    with pytest.raises(DataValidationError):
        oracle_lambda(0.0, 0.1, 0.5, 1000, q)


def test_derivative_norm_of_the_sine_signal():
    scale = np.std(2 * np.sin(4 * np.pi * np.linspace(0.0, 1.0, 200)), ddof=1)

    assert derivative_norm_sq("f3", 2, 200) == pytest.approx(2 * (4 * np.pi) ** 4 / scale**2)


def test_fixed_order_scenario_is_reproducible():
    noise = parse_noise("ar1:0.5")
    first = run_scenario("f3", noise, n=80, M=3, q_mode="fixed", seed=3, fit_config=SMALL_FIT)
    second = run_scenario("f3", noise, n=80, M=3, q_mode="fixed", seed=3, fit_config=SMALL_FIT)

    assert first.q_recovery is None
    assert len(first.records) == 3
    assert first.A_f >= 0 and first.A_R >= 0
    assert first.A_f == second.A_f
    assert first.to_dict()["noise"] == "AR1(0.5)"
    assert set(first.distributions()) == {"A_f", "A_R", "q_hat", "lambda_hat", "spectral_error"}


def test_adaptive_scenario_reports_recovery_rate():
    result = run_scenario("f1", parse_noise("iid"), n=80, M=2, q_mode="adaptive", fit_config=SMALL_FIT)

    assert 0.0 <= result.q_recovery <= 1.0
    assert set(result.records["q_hat"]) <= {1, 2}


def test_invalid_mode_is_rejected():
    with pytest.raises(ScenarioError):
        run_scenario("f1", parse_noise("iid"), n=80, M=1, q_mode="sometimes")


def test_table_lists_every_noise():
    table, results = run_table(
        "f3", n=60, M=1, fit_config=SMALL_FIT, noises=STANDARD_NOISES[:2]
    )

    assert list(table["noise"]) == ["iid", "AR1(-0.9)"]
    assert table.loc[0, "reference_A_f_1e3"] == TABLE_REFERENCE["iid"]["f3"][0]
    assert len(results) == 2


@pytest.mark.slow
def test_worker_processes_do_not_change_results():
    noise = parse_noise("ma1:0.5")
    serial = run_scenario("f3", noise, n=80, M=4, seed=1, fit_config=SMALL_FIT)
    parallel = run_scenario("f3", noise, n=80, M=4, seed=1, workers=2, fit_config=SMALL_FIT)

    assert serial.records.equals(parallel.records)


@pytest.mark.slow
def test_expected_root_tracks_the_oracle():
    n, q, sigma2 = 1000, 2, 0.33**2
    basis = build_basis(n, q)
    signal = make_function("f3", n)
    flat = SpectralModel.flat(n)

    root = expected_root(q, basis.coefficients(signal), sigma2, flat, np.geomspace(1e-14, 1.0, 201))
    constant = kappa(0, 2, 0, 0, None, None, q, root.value, n)
    oracle = oracle_lambda(derivative_norm_sq("f3", q, n), sigma2, constant, n, q)

    assert root.bracketed
    assert 0.5 <= root.value / oracle <= 2.0


@pytest.mark.slow
def test_desk_scale_white_noise_error_matches_reference():
    result = run_scenario("f1", parse_noise("iid"), n=500, M=50, q_mode="fixed", seed=7, workers=4)

    assert 2.2e-3 <= result.A_f <= 4.2e-3
    assert result.A_R <= 5e-4


@pytest.mark.slow
def test_desk_scale_gp_noise_matches_reference():
    result = run_scenario("f1", parse_noise("gp"), n=500, M=50, q_mode="fixed", seed=7, workers=4)

    assert 0.5 * 2.192e-3 <= result.A_f <= 1.5 * 2.192e-3
    assert 0.7e-3 <= result.A_R <= 3.0e-3


@pytest.mark.slow
def test_order_recovery_under_white_noise():
    result = run_scenario("f1", parse_noise("iid"), n=500, M=50, q_mode="adaptive", seed=7, workers=4)

    assert result.q_recovery >= 0.7


@pytest.mark.slow
def test_order_recovery_under_arma_noise():
    result = run_scenario(
        "f1", parse_noise("arma22"), n=500, M=50, q_mode="adaptive", seed=7, workers=4
    )

    assert result.q_recovery >= 0.6


@pytest.mark.slow
def test_error_rate_in_sample_size():
    small = run_scenario("f1", parse_noise("iid"), n=250, M=30, seed=5, workers=4)
    large = run_scenario("f1", parse_noise("iid"), n=1000, M=30, seed=5, workers=4)

    assert 2.5 <= small.A_f / large.A_f <= 4.5


@pytest.mark.slow
def test_spectral_error_decreases_with_n():
    noise = parse_noise("ar1:0.5")
    errors = [
        run_scenario("f1", noise, n=n, M=20, q_mode="adaptive", seed=2, workers=4).spectral_error
        for n in (250, 500, 1000)
    ]

    assert errors[0] > errors[1] > errors[2]


@pytest.mark.slow
def test_calibrated_coverage():
    result = coverage_study("f1", parse_noise("iid"), n=250, M=100, num_draws=5000, seed=3, workers=4)

    assert result.calibrated_L >= 1.0
    assert np.mean(result.ratios <= result.calibrated_L) >= 0.9
