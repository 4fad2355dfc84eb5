"""
Monte-Carlo checks of the spectral identities and bounds the model relies on.

Every check returns {cases, violations, max_error}; the suite bundles them
into one report for the `verify` command.
"""

import logging
import sys

import numpy as np
import scipy.sparse as sp
from tqdm import tqdm

from src.dataset import er_graph
from src.graph_linalg import build_laplacian, eigendecompose_sym, rayleigh_quotient, spectral_norm
from src.spectral_analysis import accumulated_energy_integral, verify_perturbation_bounds
from src.training import expected_number
from src.utils import make_rng
from src.wavelet import apply_chebyshev_filter, chebyshev_coefficients, exact_filter_oracle, wavelet_scales

# Tolerances of each check
TOLERANCES = {
    "energy_integral": 1e-8,
    "rq_bound": 1e-10,
    "quadratic_identity": 1e-10,
    "chebyshev": 1e-6,
    "chebyshev_monotone": 1e-12,
    "expected_number": 1e-9,
}

CHEBYSHEV_ORDERS = (6, 12, 24)
ETA_BETAS = (0.0, 0.5, 0.9, 0.999)


def _progress(iterable, desc):
    return tqdm(iterable, desc=desc, disable=not sys.stderr.isatty())


def _summary(errors, violations):
    errors = np.asarray(errors, dtype=np.float64)
    return {
        "cases": int(errors.size),
        "violations": int(violations),
        "max_error": float(errors.max(initial=0.0)),
    }


def _random_graph(rng, min_nodes, max_nodes):
    n = int(rng.integers(min_nodes, max_nodes + 1))
    return er_graph(n, float(rng.uniform(0.2, 0.8)), 1, rng)


def check_energy_integral(graphs=100, signals=5, max_nodes=12, seed=0):
    """Accumulated high-frequency energy equals the Rayleigh Quotient."""
    rng = make_rng(seed, "energy-integral")
    errors = []
    for _ in _progress(range(graphs), "Energy integral"):
        laplacian = build_laplacian(_random_graph(rng, 2, max_nodes), "regular")
        decomp = eigendecompose_sym(laplacian)
        for _ in range(signals):
            x = rng.standard_normal(decomp.dim)
            errors.append(abs(accumulated_energy_integral(decomp, x) - float(rayleigh_quotient(laplacian, x))))
    return _summary(errors, np.sum(np.asarray(errors) > TOLERANCES["energy_integral"]))


def check_rq_bound(trials=1000, num_nodes=8, delta_norm=0.1, seed=0):
    """|RQ(x, L + Δ) - RQ(x, L)| <= ||Δ||_2 for random symmetric Δ."""
    rng = make_rng(seed, "rq-bound")
    slack, violations = [], 0
    for _ in _progress(range(trials), "RQ bound"):
        laplacian = build_laplacian(er_graph(num_nodes, 0.4, 1, rng), "regular")
        raw = rng.standard_normal((num_nodes, num_nodes))
        delta = 0.5 * (raw + raw.T)
        delta *= delta_norm / spectral_norm(delta)
        report = verify_perturbation_bounds(laplacian, rng.standard_normal(num_nodes), sp.csr_matrix(delta),
                                            np.zeros(num_nodes), TOLERANCES["rq_bound"])
        slack.append(max(report.rq_change - report.delta_norm, 0.0))
        violations += not report.bound_holds
    return _summary(slack, violations)


def check_quadratic_identity(trials=1000, num_nodes=8, seed=0):
    """(x+δ)ᵀL(x+δ) - xᵀLx = 2xᵀLδ + δᵀLδ for unit x."""
    rng = make_rng(seed, "quadratic-identity")
    residuals = []
    zero = sp.csr_matrix((num_nodes, num_nodes))
    for _ in _progress(range(trials), "Quadratic identity"):
        laplacian = build_laplacian(er_graph(num_nodes, 0.4, 1, rng), "regular")
        x = rng.standard_normal(num_nodes)
        x /= np.linalg.norm(x)
        delta = 0.1 * rng.standard_normal(num_nodes)
        residuals.append(verify_perturbation_bounds(laplacian, x, zero, delta).identity_residual)
    return _summary(residuals, np.sum(np.asarray(residuals) > TOLERANCES["quadratic_identity"]))


def check_chebyshev(trials=50, max_nodes=16, kernel_id="band_pass", orders=CHEBYSHEV_ORDERS, seed=0):
    """
    Chebyshev filters against the dense oracle.

    A trial fails if the error at the highest order exceeds the tolerance or
    the error grows with the order.
    """
    rng = make_rng(seed, "chebyshev")
    errors, violations = [], 0
    for trial in _progress(range(trials), "Chebyshev"):
        laplacian = build_laplacian(_random_graph(rng, 2, max_nodes), "normalized")
        decomp = eigendecompose_sym(laplacian)
        top = float(decomp.eigenvalues[-1])
        scale = wavelet_scales(len(orders) + 1, top)[trial % (len(orders) + 1)]
        signal = rng.standard_normal((decomp.dim, 3))
        exact = exact_filter_oracle(decomp, signal, kernel_id, scale)
        per_order = [
            float(np.max(np.abs(
                apply_chebyshev_filter(laplacian, signal, chebyshev_coefficients(kernel_id, scale, k, top), top) - exact
            )))
            for k in orders
        ]
        monotone = all(b <= a + TOLERANCES["chebyshev_monotone"] for a, b in zip(per_order, per_order[1:]))
        violations += per_order[-1] > TOLERANCES["chebyshev"] or not monotone
        errors.append(per_order[-1])
    return _summary(errors, violations)


def check_expected_number(max_n=10 ** 4, betas=ETA_BETAS):
    """Closed-form effective number against η(k) = 1 + β η(k-1)."""
    errors, violations = [], 0
    for beta in betas:
        recurrence = 1.0
        violations += expected_number(1, beta) != 1.0
        for k in range(2, max_n + 1):
            recurrence = 1.0 + beta * recurrence
            errors.append(abs(expected_number(k, beta) - recurrence) / recurrence)
    errors = np.asarray(errors)
    return _summary(errors, violations + int(np.sum(errors > TOLERANCES["expected_number"])))


def run_verification_suite(trials=1000, seed=0, graphs=100, signals=5, chebyshev_trials=50, max_n=10 ** 4):
    """
    Run every check and report per-check counts plus an overall verdict.

    Args:
        trials (int): Monte-Carlo trials of the two perturbation checks
        seed (int): Root seed

    Returns:
        dict: One {cases, violations, max_error} entry per check and `passed`
    """
    report = {
        "energy_integral": check_energy_integral(graphs, signals, seed=seed),
        "rq_bound": check_rq_bound(trials, seed=seed),
        "quadratic_identity": check_quadratic_identity(trials, seed=seed),
        "chebyshev": check_chebyshev(chebyshev_trials, seed=seed),
        "expected_number": check_expected_number(max_n),
    }
    for name, result in report.items():
        logging.info(f"{name}: {result['violations']} violations in {result['cases']} cases, "
                     f"max error {result['max_error']:.3e}")
    report["passed"] = all(result["violations"] == 0 for result in report.values())
    report["seed"] = seed
    return report
