"""
Chebyshev-approximated graph wavelets.

A wavelet applies U g(τλ) Uᵀ to node signals. Instead of diagonalising the
Laplacian, g is expanded in shifted Chebyshev polynomials on [0, λ_max] and
the polynomial is applied with the three-term recurrence, one sparse
product per order.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from src.config.model_config import TRAIN_PARAMS, WAVELET_PARAMS
from src.errors import ConfigError, ShapeError

# Kernel functions g(t), t >= 0
KERNELS = {
    "band_pass": lambda t: t * np.exp(1.0 - t),   # peak g(1) = 1, g(0) = 0
    "low_pass": lambda t: np.exp(-t),
    "linear": lambda t: np.asarray(t, dtype=np.float64) * 1.0,
    "constant": lambda t: np.ones_like(np.asarray(t, dtype=np.float64)),
}


def get_kernel(kernel_id):
    """Look up a kernel function by id.

    Raises:
        ConfigError: If the id is unknown
    """
    try:
        return KERNELS[kernel_id]
    except KeyError:
        raise ConfigError(f"Unknown kernel {kernel_id!r}; expected one of {sorted(KERNELS)}")


def min_quad_points(order):
    return max(64, 4 * order)


def chebyshev_coefficients(kernel_id, scale, order, lambda_max, quad_points=None):
    """
    Chebyshev coefficients of λ -> g(scale * λ) on [0, lambda_max].

    c_k = (2/π) ∫_0^π cos(kθ) g(scale * lambda_max * (cos θ + 1) / 2) dθ,
    integrated with the composite midpoint rule. The caller halves c_0.

    Args:
        kernel_id (str): Key of KERNELS
        scale (float): τ > 0
        order (int): Highest polynomial order
        lambda_max (float): Upper end of the spectrum
        quad_points (int, optional): Midpoint nodes, at least max(64, 4 * order)

    Returns:
        np.ndarray: order + 1 coefficients
    """
    kernel = get_kernel(kernel_id)
    if order < 0:
        raise ConfigError(f"Chebyshev order must be non-negative, got {order}")
    if scale <= 0:
        raise ConfigError(f"Wavelet scale must be positive, got {scale}")
    if lambda_max <= 0:
        raise ConfigError(f"lambda_max must be positive, got {lambda_max}")
    quad_points = quad_points or min_quad_points(order)
    if quad_points < min_quad_points(order):
        raise ConfigError(f"quad_points={quad_points} is below {min_quad_points(order)} for order {order}")

    theta = np.pi * (np.arange(quad_points) + 0.5) / quad_points
    samples = kernel(scale * lambda_max * (np.cos(theta) + 1.0) / 2.0)
    basis = np.cos(np.outer(np.arange(order + 1), theta))
    return (2.0 / quad_points) * (basis @ samples)


def _check_operands(laplacian, signal, lambda_max):
    if signal.shape[0] != laplacian.shape[0]:
        raise ShapeError(f"Signal has {signal.shape[0]} rows, Laplacian has dimension {laplacian.shape[0]}")
    if lambda_max <= 0:
        raise ConfigError(f"lambda_max must be positive, got {lambda_max}")


def chebyshev_filter_bank(laplacian, signal, coefficient_list, lambda_max):
    """
    Apply several Chebyshev filters sharing one recurrence.

    T̄_0 X = X, T̄_1 X = (2/λ_max)(L - (λ_max/2) I) X,
    T̄_k X = (4/λ_max)(L - (λ_max/2) I) T̄_{k-1} X - T̄_{k-2} X.

    Returns:
        list of np.ndarray: ½c_0 X + Σ_k c_k T̄_k X for every coefficient vector
    """
    signal = np.asarray(signal, dtype=np.float64)
    _check_operands(laplacian, signal, lambda_max)
    if any(len(c) < 1 for c in coefficient_list):
        raise ConfigError("Every filter needs at least one coefficient")
    max_order = max(len(c) for c in coefficient_list) - 1
    outputs = [0.5 * c[0] * signal for c in coefficient_list]
    if max_order == 0:
        return outputs

    def shifted(y):
        return (2.0 / lambda_max) * (laplacian @ y) - y

    t_prev, t_cur = signal, shifted(signal)
    for k in range(1, max_order + 1):
        if k > 1:
            t_prev, t_cur = t_cur, 2.0 * shifted(t_cur) - t_prev
        for out, c in zip(outputs, coefficient_list):
            if k < len(c):
                out += c[k] * t_cur
    return outputs


def apply_chebyshev_filter(laplacian, signal, coeffs, lambda_max):
    """
    Apply f(L) = ½c_0 I + Σ_k c_k T̄_k(L) to a signal without forming f(L).

    Args:
        laplacian: Sparse n×n Laplacian with spectrum in [0, lambda_max]
        signal (np.ndarray): n or n×d signal
        coeffs (np.ndarray): Chebyshev coefficients c_0..c_K
        lambda_max (float): Spectral upper bound used by the shift

    Returns:
        np.ndarray: Filtered signal, same shape as `signal`
    """
    return chebyshev_filter_bank(laplacian, signal, [np.asarray(coeffs, dtype=np.float64)], lambda_max)[0]


def chebyshev_filter_bank_adjoint(laplacian, adjoints, coefficient_list, lambda_max):
    """
    Vector-Jacobian product of the horizontally concatenated filter bank.

    Every f_i(L) is symmetric, so the adjoint of X -> [f_1(L)X, ..., f_q(L)X]
    maps [G_1, ..., G_q] to Σ_i f_i(L) G_i. The blocks share one recurrence
    run on the stacked adjoint.
    """
    q = len(coefficient_list)
    width = adjoints.shape[1] // q
    blocks = chebyshev_filter_bank(laplacian, adjoints, coefficient_list, lambda_max)
    return sum(block[:, i * width:(i + 1) * width] for i, block in enumerate(blocks))


@dataclass(frozen=True, eq=False)
class WaveletBank:
    """q wavelets with dyadic scales; wavelet i (1-based) uses Chebyshev order i*K."""

    q: int
    K: int
    lambda_max: float
    scales: tuple
    coefficients: tuple
    kernel_id: str = WAVELET_PARAMS["kernel_id"]
    quad_points: int = WAVELET_PARAMS["quad_points"]

    def __post_init__(self):
        if len(self.scales) != self.q or len(self.coefficients) != self.q:
            raise ConfigError(f"Bank with q={self.q} needs q scales and q coefficient vectors")
        if any(b <= a for a, b in zip(self.scales, self.scales[1:])):
            raise ConfigError(f"Wavelet scales must be strictly increasing, got {self.scales}")
        coefficients = []
        for i, c in enumerate(self.coefficients, start=1):
            c = np.array(c, dtype=np.float64)
            if len(c) != i * self.K + 1:
                raise ConfigError(f"Wavelet {i} needs {i * self.K + 1} coefficients, got {len(c)}")
            if not np.all(np.isfinite(c)):
                raise ConfigError(f"Wavelet {i} has non-finite coefficients")
            c.flags.writeable = False
            coefficients.append(c)
        object.__setattr__(self, "coefficients", tuple(coefficients))
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))

    @property
    def orders(self):
        return tuple(i * self.K for i in range(1, self.q + 1))

    def for_lambda_max(self, lambda_max, decimals=WAVELET_PARAMS["cache_decimals"]):
        """Bank rebuilt for a graph's λ_max, rounded up to `decimals` places and cached."""
        factor = 10 ** decimals
        rounded = max(math.ceil(lambda_max * factor - 1e-9), 1) / factor
        return _cached_bank(self.q, self.K, self.kernel_id, self.quad_points, rounded)

    def to_json(self):
        return {
            "q": self.q,
            "K": self.K,
            "lambda_max": self.lambda_max,
            "kernel_id": self.kernel_id,
            "quad_points": self.quad_points,
            "scales": list(self.scales),
            "coefficients": [c.tolist() for c in self.coefficients],
        }

    @classmethod
    def from_json(cls, data):
        return cls(
            q=int(data["q"]),
            K=int(data["K"]),
            lambda_max=float(data["lambda_max"]),
            scales=tuple(data["scales"]),
            coefficients=tuple(np.asarray(c) for c in data["coefficients"]),
            kernel_id=data["kernel_id"],
            quad_points=int(data.get("quad_points", WAVELET_PARAMS["quad_points"])),
        )


def wavelet_scales(q, lambda_max):
    """τ_i = 2^(i-2) * (2 / λ_max): kernel peaks at λ_max, λ_max/2, λ_max/4, ..."""
    return tuple(2.0 ** (i - 2) * (2.0 / lambda_max) for i in range(1, q + 1))


def build_wavelet_bank(q=TRAIN_PARAMS["q"], K=TRAIN_PARAMS["K"], lambda_max=WAVELET_PARAMS["lambda_max"],
                       kernel_id=WAVELET_PARAMS["kernel_id"], quad_points=WAVELET_PARAMS["quad_points"]):
    """
    Build a wavelet bank and precompute its coefficients.

    Raises:
        ConfigError: For q < 1, K < 1, lambda_max <= 0 or an unknown kernel
    """
    if q < 1 or K < 1:
        raise ConfigError(f"Wavelet bank needs q >= 1 and K >= 1, got q={q}, K={K}")
    if lambda_max <= 0:
        raise ConfigError(f"lambda_max must be positive, got {lambda_max}")
    get_kernel(kernel_id)
    scales = wavelet_scales(q, lambda_max)
    coefficients = tuple(
        chebyshev_coefficients(kernel_id, tau, i * K, lambda_max,
                               max(quad_points, min_quad_points(i * K)))
        for i, tau in enumerate(scales, start=1)
    )
    return WaveletBank(q, K, float(lambda_max), scales, coefficients, kernel_id, quad_points)


@lru_cache(maxsize=1024)
def _cached_bank(q, K, kernel_id, quad_points, lambda_max):
    return build_wavelet_bank(q, K, lambda_max, kernel_id, quad_points)


def wavelet_features(laplacian, signal, bank):
    """
    Concatenate the q wavelet responses: [f_1(L)X | f_2(L)X | ... | f_q(L)X].

    Args:
        laplacian: Normalized Laplacian (n×n)
        signal (np.ndarray): n×d node signal
        bank (WaveletBank): Coefficients and λ_max to use

    Returns:
        np.ndarray: n×(q·d)
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim == 1:
        signal = signal[:, None]
    blocks = chebyshev_filter_bank(laplacian, signal, bank.coefficients, bank.lambda_max)
    return np.hstack(blocks)


def exact_filter_oracle(decomp, signal, kernel_id, scale):
    """
    Dense ground truth U g(scale * Λ) Uᵀ X.

    Args:
        decomp (SpectralDecomposition): Decomposition of the same normalized Laplacian
        signal (np.ndarray): n or n×d signal
        kernel_id (str): Key of KERNELS
        scale (float): τ

    Returns:
        np.ndarray: Same shape as `signal`
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape[0] != decomp.dim:
        raise ShapeError(f"Signal has {signal.shape[0]} rows, decomposition has dimension {decomp.dim}")
    kernel = get_kernel(kernel_id)
    u = decomp.eigenvectors
    response = kernel(scale * decomp.eigenvalues)
    spectral = u.T @ signal
    if signal.ndim == 1:
        return u @ (response * spectral)
    return u @ (response[:, None] * spectral)
