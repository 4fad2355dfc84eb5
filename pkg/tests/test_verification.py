import pytest

from src.verification import (
    check_chebyshev, check_energy_integral, check_expected_number, check_quadratic_identity, check_rq_bound,
    run_verification_suite,
)


def _clean(result):
    return result["cases"] > 0 and result["violations"] == 0


def test_energy_integral():
    result = check_energy_integral(graphs=10, signals=3, seed=1)
    assert result["cases"] == 30
    assert _clean(result)


def test_rq_bound():
    assert _clean(check_rq_bound(trials=50, seed=2))


def test_quadratic_identity():
    result = check_quadratic_identity(trials=50, seed=3)
    assert _clean(result)
    assert result["max_error"] <= 1e-10


def test_chebyshev():
    assert _clean(check_chebyshev(trials=8, seed=4))


def test_expected_number():
    result = check_expected_number(max_n=500)
    assert result["cases"] == 4 * 499
    assert _clean(result)


def test_small_suite():
    report = run_verification_suite(trials=20, seed=7, graphs=5, signals=2, chebyshev_trials=4, max_n=100)
    assert report["passed"] is True
    assert report["seed"] == 7
    assert {"energy_integral", "rq_bound", "quadratic_identity", "chebyshev", "expected_number"} <= set(report)


@pytest.mark.slow
def test_default_suite():
    assert run_verification_suite(trials=1000, seed=0)["passed"]
