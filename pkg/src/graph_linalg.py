"""
Graph matrices: Laplacians, the Jacobi eigendecomposition oracle,
extreme-eigenvalue estimation and Rayleigh Quotients.

Sparse matrices are `scipy.sparse.csr_matrix` instances holding the full
symmetric pattern.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from src.config.model_config import LAMBDA_MAX_PARAMS, ORACLE_PARAMS, RQ_EPS
from src.errors import ConfigError, ContractError, NumericalError, OracleCapacityError, ShapeError

LAPLACIAN_MODES = ("regular", "normalized")

SparseSymMatrix = sp.csr_matrix


@dataclass(frozen=True)
class SpectralDecomposition:
    """Ascending eigenvalues and column-orthonormal eigenvectors: M = U diag(λ) Uᵀ."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self):
        return len(self.eigenvalues)

    def reconstruct(self):
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.T


def adjacency_matrix(graph):
    """Symmetric CSR adjacency of a GraphRecord."""
    n = graph.node_count
    if graph.edge_count == 0:
        return sp.csr_matrix((n, n))
    rows = np.concatenate([graph.edges[:, 0], graph.edges[:, 1]])
    cols = np.concatenate([graph.edges[:, 1], graph.edges[:, 0]])
    data = np.ones(len(rows))
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def build_laplacian(graph, mode="regular"):
    """
    Build the regular (D - A) or normalized (I - D^-1/2 A D^-1/2) Laplacian.

    Isolated nodes use D^-1/2 = 0, so their normalized diagonal entry stays 1.

    Args:
        graph (GraphRecord): Input graph
        mode (str): 'regular' or 'normalized'

    Returns:
        scipy.sparse.csr_matrix
    """
    if mode not in LAPLACIAN_MODES:
        raise ConfigError(f"Unknown Laplacian mode {mode!r}; expected one of {LAPLACIAN_MODES}")
    adjacency = adjacency_matrix(graph)
    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    n = graph.node_count
    if mode == "regular":
        laplacian = sp.diags(degree) - adjacency
    else:
        inv_sqrt = np.zeros(n)
        connected = degree > 0
        inv_sqrt[connected] = 1.0 / np.sqrt(degree[connected])
        scaling = sp.diags(inv_sqrt)
        laplacian = sp.identity(n) - scaling @ adjacency @ scaling
    laplacian = sp.csr_matrix(laplacian, dtype=np.float64)
    laplacian.sum_duplicates()
    laplacian.sort_indices()
    return laplacian


def is_symmetric(matrix, atol=0.0):
    """Check entrywise symmetry of a sparse or dense matrix."""
    if sp.issparse(matrix):
        difference = abs(matrix - matrix.T)
        return difference.nnz == 0 or difference.max() <= atol
    matrix = np.asarray(matrix)
    return matrix.shape[0] == matrix.shape[1] and np.max(np.abs(matrix - matrix.T), initial=0.0) <= atol


def _dense(matrix):
    if sp.issparse(matrix):
        return matrix.toarray().astype(np.float64)
    return np.array(matrix, dtype=np.float64)


def eigendecompose_sym(matrix, max_dim=ORACLE_PARAMS["max_dim"], tol=ORACLE_PARAMS["tol"],
                       max_sweeps=ORACLE_PARAMS["max_sweeps"]):
    """
    Eigendecompose a real symmetric matrix with cyclic Jacobi rotations.

    This is the verification oracle: O(n^3) per sweep, exact to rounding.
    Sweeps continue until the off-diagonal Frobenius norm drops to
    tol * ||M||_F.

    Args:
        matrix: Sparse or dense symmetric matrix
        max_dim (int): Largest dimension accepted

    Returns:
        SpectralDecomposition

    Raises:
        OracleCapacityError: If the dimension exceeds max_dim
        ContractError: If the matrix is not symmetric
        NumericalError: If the sweeps do not converge
    """
    a = _dense(matrix)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"Expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n > max_dim:
        raise OracleCapacityError(f"Oracle capacity is {max_dim}, matrix has dimension {n}")
    scale = np.max(np.abs(a), initial=0.0)
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-12 * max(scale, 1.0):
        raise ContractError("Jacobi oracle requires a symmetric matrix")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    threshold = tol * np.linalg.norm(a)

    for sweep in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0

                vec_p, vec_q = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q
    else:
        raise NumericalError(f"Jacobi oracle did not converge in {max_sweeps} sweeps (n={n})")

    eigenvalues = np.diag(a).copy()
    order = np.argsort(eigenvalues, kind="stable")
    return SpectralDecomposition(eigenvalues[order], v[:, order])


def spectral_norm(matrix):
    """||M||_2 of a symmetric matrix, via the oracle."""
    eigenvalues = eigendecompose_sym(matrix).eigenvalues
    if len(eigenvalues) == 0:
        return 0.0
    return float(max(abs(eigenvalues[0]), abs(eigenvalues[-1])))


def gershgorin_bound(matrix):
    """Largest absolute row sum; equals 2 * max degree for D - A."""
    row_sums = np.asarray(abs(sp.csr_matrix(matrix)).sum(axis=1)).ravel()
    return float(row_sums.max(initial=0.0))


def lambda_max(matrix, tol=LAMBDA_MAX_PARAMS["tol"], max_iters=LAMBDA_MAX_PARAMS["max_iters"],
               mode="normalized", seed=LAMBDA_MAX_PARAMS["seed"]):
    """
    Estimate the largest eigenvalue of a positive semidefinite matrix.

    Power iteration from a seeded start vector; the returned Rayleigh
    Quotient estimate never exceeds the true largest eigenvalue. Without
    convergence the safe bound is returned: 2.0 for normalized Laplacians,
    the Gershgorin bound otherwise.

    Args:
        matrix: Sparse or dense PSD matrix
        tol (float): Relative change at which iteration stops
        max_iters (int): Iteration budget
        mode (str): 'normalized' or 'regular', selects the fallback

    Returns:
        float
    """
    n = matrix.shape[0]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    estimate = None
    for _ in range(max_iters):
        w = matrix @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        new_estimate = float(v @ w)
        if estimate is not None and abs(new_estimate - estimate) <= tol * abs(new_estimate):
            return new_estimate
        estimate = new_estimate
        v = w / norm

    fallback = 2.0 if mode == "normalized" else gershgorin_bound(matrix)
    logging.warning(f"lambda_max did not converge in {max_iters} iterations; using bound {fallback}")
    return fallback


def rayleigh_quotient(laplacian, x, eps=RQ_EPS):
    """
    Column-wise Rayleigh Quotients diag(XᵀLX) / (diag(XᵀX) + eps).

    Only the diagonal is formed. A 1-D signal gives a scalar.

    Raises:
        ShapeError: If X does not have one row per node
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != laplacian.shape[0]:
        raise ShapeError(f"Signal has {x.shape[0]} rows, matrix has dimension {laplacian.shape[0]}")
    lx = laplacian @ x
    numerator = np.sum(x * lx, axis=0)
    denominator = np.sum(x * x, axis=0) + eps
    return numerator / denominator
