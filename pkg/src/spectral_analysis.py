"""
Spectral-energy analysis of graph signals and Rayleigh Quotient distributions.
"""

import logging
from dataclasses import dataclass
from itertools import combinations

import numpy as np
import scipy.sparse as sp
from joblib import Parallel, delayed

from src.config.model_config import ANALYSIS_PARAMS
from src.dataset import ANOMALOUS, NORMAL
from src.errors import ConfigError, ContractError, ShapeError
from src.graph_linalg import build_laplacian, is_symmetric, rayleigh_quotient, spectral_norm
from src.utils import make_rng


@dataclass(frozen=True, eq=False)
class EnergyProfile:
    """Fourier coefficients of a signal and the share of energy at each eigenvalue."""

    eigenvalues: np.ndarray
    coefficients: np.ndarray
    energies: np.ndarray

    def high_frequency_energy(self, t):
        """E(t) = 1 - Σ_{λ_j <= t} energy_j, vectorised over t."""
        t = np.asarray(t, dtype=np.float64)
        below = self.eigenvalues[None, :] <= t.reshape(-1, 1)
        result = 1.0 - below.astype(np.float64) @ self.energies
        return result.reshape(t.shape)

    def tail_energies(self):
        """E evaluated at each eigenvalue from the right-hand tail (no cancellation)."""
        return np.concatenate([np.cumsum(self.energies[::-1])[::-1][1:], [0.0]])


def energy_profile(decomp, x):
    """
    Spectral energy of a signal: x̂ = Uᵀx and energy_k = x̂_k² / Σ x̂_i².

    Raises:
        ShapeError: If x has the wrong length
        ContractError: If x is the zero signal
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (decomp.dim,):
        raise ShapeError(f"Signal of shape {x.shape} does not match dimension {decomp.dim}")
    if not np.any(x):
        raise ContractError("Energy profile of the zero signal is undefined")
    coefficients = decomp.eigenvectors.T @ x
    power = coefficients ** 2
    return EnergyProfile(decomp.eigenvalues, coefficients, power / power.sum())


def accumulated_energy_integral(decomp, x):
    """
    ∫_0^{λ_n} E(t) dt for the piecewise-constant high-frequency energy.

    The segment [0, λ_1) contributes λ_1 (E = 1 there), then each
    [λ_k, λ_{k+1}) contributes E(λ_k)(λ_{k+1} - λ_k). The result equals
    the Rayleigh Quotient xᵀLx / xᵀx.
    """
    profile = energy_profile(decomp, x)
    eigenvalues = profile.eigenvalues
    tail = profile.tail_energies()
    return float(eigenvalues[0] + np.sum(tail[:-1] * np.diff(eigenvalues)))


@dataclass(frozen=True, eq=False)
class RQHistogram:
    """Normalized per-class frequencies of Rayleigh Quotient values over shared bins."""

    bin_edges: np.ndarray
    freq_normal: np.ndarray
    freq_anomalous: np.ndarray
    sample_counts: tuple

    def total_variation(self):
        return total_variation(self.freq_normal, self.freq_anomalous)

    def to_json(self):
        return {
            "bin_edges": self.bin_edges.tolist(),
            "freq_normal": self.freq_normal.tolist(),
            "freq_anomalous": self.freq_anomalous.tolist(),
            "counts": {"normal": self.sample_counts[0], "anomalous": self.sample_counts[1]},
            "total_variation": self.total_variation(),
        }


def total_variation(p, q):
    """½ Σ |p - q| between two frequency vectors."""
    return float(0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum())


def graph_rq_values(graph):
    """Rayleigh Quotients of the raw feature columns under the regular Laplacian."""
    return np.atleast_1d(rayleigh_quotient(build_laplacian(graph, "regular"), graph.features))


def rq_values(graphs, n_jobs=ANALYSIS_PARAMS["n_jobs"]):
    """Per-graph RQ vectors, computed in parallel and returned in input order."""
    if n_jobs == 1:
        return [graph_rq_values(g) for g in graphs]
    return Parallel(n_jobs=n_jobs)(delayed(graph_rq_values)(g) for g in graphs)


def histogram_edges(values, bins):
    """`bins` equal-width bins spanning [min, max]; a constant sample gets unit-width bins."""
    low, high = float(np.min(values)), float(np.max(values))
    if high <= low:
        return low + np.arange(bins + 1, dtype=np.float64)
    return np.linspace(low, high, bins + 1)


def normalized_histogram(values, edges):
    """Frequencies of `values` in the bins; the maximum lands in the last bin."""
    bins = len(edges) - 1
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return np.zeros(bins)
    width = edges[1] - edges[0]
    index = np.clip(np.floor((values - edges[0]) / width).astype(np.int64), 0, bins - 1)
    counts = np.bincount(index, minlength=bins).astype(np.float64)
    return counts / counts.sum()


def rq_histogram(graphs, bins=ANALYSIS_PARAMS["bins"], n_jobs=ANALYSIS_PARAMS["n_jobs"]):
    """
    Class-conditional histograms of Rayleigh Quotient values.

    Every feature column of every graph contributes one value (raw one-hot
    features, regular Laplacian). Bins cover the pooled [min, max].

    Args:
        graphs (list of GraphRecord): Both classes mixed
        bins (int): Number of equal-width bins

    Returns:
        RQHistogram
    """
    graphs = list(graphs)
    if not graphs:
        raise ConfigError("RQ histogram needs at least one graph")
    if bins < 1:
        raise ConfigError(f"bins must be positive, got {bins}")
    per_graph = rq_values(graphs, n_jobs)
    labels = np.array([g.label for g in graphs])
    pooled = np.concatenate(per_graph)
    edges = histogram_edges(pooled, bins)

    def class_values(label):
        chosen = [v for v, lab in zip(per_graph, labels) if lab == label]
        return np.concatenate(chosen) if chosen else np.zeros(0)

    histogram = RQHistogram(
        bin_edges=edges,
        freq_normal=normalized_histogram(class_values(NORMAL), edges),
        freq_anomalous=normalized_histogram(class_values(ANOMALOUS), edges),
        sample_counts=(int(np.sum(labels == NORMAL)), int(np.sum(labels == ANOMALOUS))),
    )
    logging.info(f"RQ histogram over {len(graphs)} graphs, total variation {histogram.total_variation():.4f}")
    return histogram


@dataclass(frozen=True)
class DistanceRatios:
    """Per-bin inter/intra class distances of subsample histograms.

    Ratios are None where the intra-class distance is zero.
    """

    bin_edges: list
    inter: list
    intra_anomalous: list
    intra_normal: list
    ratio_anomalous: list
    ratio_normal: list
    pair_counts: dict

    def to_json(self):
        return {
            "bin_edges": self.bin_edges,
            "d_i": self.inter,
            "d_a": self.intra_anomalous,
            "d_n": self.intra_normal,
            "d_i/d_a": self.ratio_anomalous,
            "d_i/d_n": self.ratio_normal,
            "pair_counts": self.pair_counts,
        }


def _safe_ratio(numerator, denominator):
    return [float(a / b) if b > 0 else None for a, b in zip(numerator, denominator)]


def distance_ratios(class_a_graphs, class_n_graphs, subsamples=ANALYSIS_PARAMS["subsamples"], seed=0,
                    bins=ANALYSIS_PARAMS["bins"], n_jobs=ANALYSIS_PARAMS["n_jobs"]):
    """
    Inter-class over intra-class distances of subsample RQ histograms.

    Each class is shuffled and cut into `subsamples` parts; every part gets
    a normalized histogram on the shared global bins. For an unordered
    index pair {i, j}, the within-class distance is |h_i - h_j| and the
    cross-class distance is ½(|a_i - n_j| + |a_j - n_i|); all are
    averaged over the C(S, 2) index pairs, per bin.

    Returns:
        DistanceRatios

    Raises:
        ConfigError: If subsamples < 2 or a class has fewer graphs than parts
    """
    if subsamples < 2:
        raise ConfigError(f"subsamples must be at least 2, got {subsamples}")
    class_a_graphs, class_n_graphs = list(class_a_graphs), list(class_n_graphs)
    for name, graphs in (("anomalous", class_a_graphs), ("normal", class_n_graphs)):
        if len(graphs) < subsamples:
            raise ConfigError(f"{len(graphs)} {name} graphs cannot fill {subsamples} subsamples")

    values_a = rq_values(class_a_graphs, n_jobs)
    values_n = rq_values(class_n_graphs, n_jobs)
    edges = histogram_edges(np.concatenate(values_a + values_n), bins)

    def part_histograms(values, key):
        order = make_rng(seed, "distance-ratio", key).permutation(len(values))
        return [
            normalized_histogram(np.concatenate([values[k] for k in part]), edges)
            for part in np.array_split(order, subsamples)
        ]

    hist_a = part_histograms(values_a, "anomalous")
    hist_n = part_histograms(values_n, "normal")
    pairs = list(combinations(range(subsamples), 2))
    inter = np.mean([0.5 * (np.abs(hist_a[i] - hist_n[j]) + np.abs(hist_a[j] - hist_n[i])) for i, j in pairs], axis=0)
    intra_a = np.mean([np.abs(hist_a[i] - hist_a[j]) for i, j in pairs], axis=0)
    intra_n = np.mean([np.abs(hist_n[i] - hist_n[j]) for i, j in pairs], axis=0)

    return DistanceRatios(
        bin_edges=edges.tolist(),
        inter=inter.tolist(),
        intra_anomalous=intra_a.tolist(),
        intra_normal=intra_n.tolist(),
        ratio_anomalous=_safe_ratio(inter, intra_a),
        ratio_normal=_safe_ratio(inter, intra_n),
        pair_counts={"cross": len(pairs), "within_anomalous": len(pairs), "within_normal": len(pairs)},
    )


@dataclass(frozen=True)
class PerturbationReport:
    """Outcome of checking the two Rayleigh Quotient perturbation bounds."""

    rq_change: float
    delta_norm: float
    bound_holds: bool
    quadratic_change: float
    first_order_term: float
    second_order_term: float
    identity_residual: float

    def to_json(self):
        return dict(self.__dict__)


def verify_perturbation_bounds(laplacian, x, delta_matrix, delta_signal, tolerance=1e-10):
    """
    Check both perturbation results for one (L, x, Δ, δ).

    (a) |RQ(x, L + Δ) - RQ(x, L)| <= ||Δ||_2, with ||Δ||_2 from the oracle.
    (b) (x+δ)ᵀL(x+δ) - xᵀLx = 2xᵀLδ + δᵀLδ exactly; the first-order term
        is the bound for small δ when x has unit norm.

    Raises:
        ContractError: If Δ is not symmetric
        ShapeError: If the dimensions differ
    """
    x = np.asarray(x, dtype=np.float64)
    delta_signal = np.asarray(delta_signal, dtype=np.float64)
    n = laplacian.shape[0]
    if delta_matrix.shape != (n, n) or x.shape != (n,) or delta_signal.shape != (n,):
        raise ShapeError("L, Δ, x and δ must share one dimension")
    dense_delta = delta_matrix.toarray() if sp.issparse(delta_matrix) else np.asarray(delta_matrix)
    scale = max(1.0, float(np.max(np.abs(dense_delta), initial=0.0)))
    if not is_symmetric(delta_matrix, atol=1e-12 * scale):
        raise ContractError("Perturbation Δ must be symmetric")

    perturbed = laplacian + delta_matrix
    if not sp.issparse(perturbed):
        perturbed = np.asarray(perturbed)
    rq_change = abs(float(rayleigh_quotient(perturbed, x) - rayleigh_quotient(laplacian, x)))
    delta_norm = spectral_norm(delta_matrix)

    lx = laplacian @ x
    shifted = x + delta_signal
    quadratic_change = float(shifted @ (laplacian @ shifted) - x @ lx)
    first_order = float(2.0 * lx @ delta_signal)
    second_order = float(delta_signal @ (laplacian @ delta_signal))
    return PerturbationReport(
        rq_change=rq_change,
        delta_norm=delta_norm,
        bound_holds=rq_change <= delta_norm + tolerance,
        quadratic_change=quadratic_change,
        first_order_term=first_order,
        second_order_term=second_order,
        identity_residual=abs(quadratic_change - first_order - second_order),
    )
