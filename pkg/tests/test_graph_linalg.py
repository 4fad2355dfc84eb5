import numpy as np
import pytest
import scipy.sparse as sp

from src.dataset import GraphRecord, er_graph
from src.errors import ConfigError, ContractError, OracleCapacityError, ShapeError
from src.graph_linalg import (
    build_laplacian, eigendecompose_sym, gershgorin_bound, is_symmetric, lambda_max, rayleigh_quotient,
)
from src.utils import make_rng


def _random_laplacians(count, seed, mode="regular", max_nodes=12):
    rng = make_rng(seed, "laplacians")
    for _ in range(count):
        n = int(rng.integers(2, max_nodes + 1))
        yield build_laplacian(er_graph(n, 0.4, 1, rng), mode)


class TestLaplacian:
    def test_p2(self, p2):
        expected = [[1.0, -1.0], [-1.0, 1.0]]
        assert build_laplacian(p2, "regular").toarray().tolist() == expected
        np.testing.assert_allclose(build_laplacian(p2, "normalized").toarray(), expected)

    def test_isolated_node_normalized(self, isolated_node):
        assert build_laplacian(isolated_node, "normalized").toarray().tolist() == [[1.0]]

    def test_kernel_and_symmetry(self):
        for laplacian in _random_laplacians(20, 1):
            assert isinstance(laplacian, sp.csr_matrix)
            assert is_symmetric(laplacian)
            assert np.max(np.abs(laplacian @ np.ones(laplacian.shape[0]))) <= 1e-14

    def test_unknown_mode(self, p2):
        with pytest.raises(ConfigError, match="Unknown Laplacian mode"):
            build_laplacian(p2, "random-walk")


class TestOracle:
    def test_p2_and_k3(self, p2, k3):
        np.testing.assert_allclose(eigendecompose_sym(build_laplacian(p2)).eigenvalues, [0, 2], atol=1e-12)
        np.testing.assert_allclose(eigendecompose_sym(build_laplacian(k3)).eigenvalues, [0, 3, 3], atol=1e-12)

    def test_identity(self):
        decomp = eigendecompose_sym(np.eye(4))
        np.testing.assert_allclose(decomp.eigenvalues, np.ones(4))
        np.testing.assert_allclose(np.abs(decomp.eigenvectors), np.eye(4))

    @pytest.mark.parametrize("mode", ["regular", "normalized"])
    def test_decomposition_invariants(self, mode):
        for laplacian in _random_laplacians(15, 2, mode):
            dense = laplacian.toarray()
            decomp = eigendecompose_sym(laplacian)
            u = decomp.eigenvectors
            assert np.max(np.abs(u.T @ u - np.eye(decomp.dim))) <= 1e-8
            assert np.max(np.abs(decomp.reconstruct() - dense)) <= 1e-7 * np.max(np.abs(dense))
            assert np.all(np.diff(decomp.eigenvalues) >= 0)
            assert decomp.eigenvalues[0] >= -1e-10
            if mode == "normalized":
                assert decomp.eigenvalues[-1] <= 2 + 1e-10

    def test_capacity(self):
        with pytest.raises(OracleCapacityError):
            eigendecompose_sym(sp.identity(5, format="csr"), max_dim=4)

    def test_asymmetric(self):
        with pytest.raises(ContractError):
            eigendecompose_sym(np.array([[0.0, 1.0], [0.0, 0.0]]))


class TestLambdaMax:
    def test_p2_normalized(self, p2):
        assert lambda_max(build_laplacian(p2, "normalized")) == pytest.approx(2.0, abs=1e-6)

    def test_k3_regular(self, k3):
        assert lambda_max(build_laplacian(k3, "regular"), mode="regular") == pytest.approx(3.0, abs=1e-6)

    def test_zero_matrix(self):
        assert lambda_max(sp.csr_matrix((3, 3))) == 0.0

    def test_never_above_true_value(self):
        for laplacian in _random_laplacians(10, 3, "normalized"):
            assert lambda_max(laplacian) <= eigendecompose_sym(laplacian).eigenvalues[-1] + 1e-12

    def test_fallback_without_convergence(self, k3):
        laplacian = build_laplacian(k3, "regular")
        assert lambda_max(laplacian, tol=0.0, max_iters=1, mode="regular") == gershgorin_bound(laplacian) == 4.0
        assert lambda_max(build_laplacian(k3, "normalized"), tol=0.0, max_iters=1) == 2.0


class TestRayleighQuotient:
    def test_p2_examples(self, p2):
        laplacian = build_laplacian(p2)
        assert rayleigh_quotient(laplacian, np.array([1.0, 1.0])) == pytest.approx(0.0, abs=1e-12)
        assert rayleigh_quotient(laplacian, np.array([1.0, -1.0])) == pytest.approx(2.0)

    def test_columnwise(self, p2):
        values = rayleigh_quotient(build_laplacian(p2), np.array([[1.0, 1.0], [1.0, -1.0]]))
        np.testing.assert_allclose(values, [0.0, 2.0], atol=1e-12)

    def test_eigenvectors_and_range(self):
        rng = make_rng(5, "rq")
        for laplacian in _random_laplacians(10, 4):
            decomp = eigendecompose_sym(laplacian)
            ratios = rayleigh_quotient(laplacian, decomp.eigenvectors)
            np.testing.assert_allclose(ratios, decomp.eigenvalues, atol=1e-9)
            x = rng.standard_normal(decomp.dim)
            value = rayleigh_quotient(laplacian, x)
            assert decomp.eigenvalues[0] - 1e-9 <= value <= decomp.eigenvalues[-1] + 1e-9
            assert rayleigh_quotient(laplacian, -3.5 * x) == pytest.approx(value, rel=1e-10)

    def test_dead_column(self, p2):
        assert rayleigh_quotient(build_laplacian(p2), np.zeros((2, 1)))[0] == 0.0

    def test_shape_mismatch(self, p2):
        with pytest.raises(ShapeError):
            rayleigh_quotient(build_laplacian(p2), np.ones(3))


def test_edgeless_graph_is_well_defined():
    graph = GraphRecord(4, [], np.eye(4))
    assert build_laplacian(graph).nnz == 0
    np.testing.assert_allclose(build_laplacian(graph, "normalized").toarray(), np.eye(4))
