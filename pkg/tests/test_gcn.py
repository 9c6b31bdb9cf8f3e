"""Spectral graph convolution: normalization contracts and layer math."""

import numpy as np
import pytest

from avscene import gcn
from avscene import tensor as T
from avscene.errors import DataError


def random_adjacency(rng, k):
    """Random valid adjacency: symmetric, nonnegative, zero diagonal."""
    raw = rng.uniform(0.0, 5.0, size=(k, k)) * (rng.random((k, k)) < 0.4)
    adj = np.triu(raw, 1)
    return adj + adj.T


class TestLaplacian:
    def test_two_node_hand_case(self):
        lap = gcn.laplacian(np.array([[0.0, 2.0], [2.0, 0.0]]))
        assert np.array_equal(lap.data, [[2.0, -2.0], [-2.0, 2.0]])

    def test_empty_graph(self):
        lap = gcn.laplacian(np.zeros((3, 3)))
        assert np.all(lap.data == 0.0)

    def test_rows_sum_to_zero(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            lap = gcn.laplacian(random_adjacency(rng, 8))
            assert np.max(np.abs(lap.data.sum(axis=1))) < 1e-12

    def test_positive_semidefinite(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            lap = gcn.laplacian(random_adjacency(rng, 10))
            assert np.linalg.eigvalsh(lap.data).min() >= -1e-9

    def test_asymmetry_rejected(self):
        bad = np.array([[0.0, 1.0], [2.0, 0.0]])
        with pytest.raises(DataError, match="symmetric"):
            gcn.laplacian(bad)


class TestPropagationMatrix:
    def test_two_node_hand_case(self):
        prop = gcn.propagation_matrix(np.array([[0.0, 2.0], [2.0, 0.0]]))
        want = np.array([[1 / 3, 2 / 3], [2 / 3, 1 / 3]])
        assert np.max(np.abs(prop.l_norm.data - want)) < 1e-12
        eig = np.sort(np.linalg.eigvalsh(prop.l_norm.data))
        assert eig[1] == pytest.approx(1.0, abs=1e-12)
        assert eig[0] == pytest.approx(-1 / 3, abs=1e-12)

    def test_isolated_nodes_give_identity(self):
        prop = gcn.propagation_matrix(np.zeros((5, 5)))
        assert np.array_equal(prop.l_norm.data, np.eye(5))

    def test_spectral_bound_sweep(self):
        # Dense eigensolver oracle over random valid adjacencies.
        rng = np.random.default_rng(2)
        for k in (8, 20, 24):
            for _ in range(34):
                prop = gcn.propagation_matrix(random_adjacency(rng, k))
                sym_gap = np.max(np.abs(prop.l_norm.data - prop.l_norm.data.T))
                assert sym_gap <= 1e-12
                radius = np.max(np.abs(np.linalg.eigvalsh(prop.l_norm.data)))
                assert radius <= 1.0 + 1e-9


class TestGcnLayer:
    def test_double_identity(self):
        x = T.Tensor(np.abs(np.random.default_rng(3).standard_normal((2, 4, 3))))
        prop = gcn.PropagationMatrix(T.Tensor(np.eye(4)))
        out = gcn.gcn_layer(x, prop, T.Tensor(np.eye(3)))
        assert np.array_equal(out.data, x.data)

    def test_constant_nodes_stay_constant_pre_activation(self):
        # Any propagation matrix with unit row sums preserves constants.
        rng = np.random.default_rng(4)
        raw = rng.uniform(0.1, 1.0, size=(4, 4))
        sym = (raw + raw.T) / 2
        row_stochastic = sym / sym.sum(axis=1, keepdims=True)
        # Symmetrize while keeping row sums 1: average with its transpose is
        # not stochastic in general, so use a symmetric doubly-stochastic mix.
        m = 0.5 * row_stochastic + 0.5 * row_stochastic.T
        m = m / m.sum(axis=1, keepdims=True)
        m = (m + m.T) / 2
        m = m / m.sum(axis=1, keepdims=True)
        prop = gcn.PropagationMatrix(T.Tensor(m))
        x = T.Tensor(np.tile(np.array([1.5, -2.0, 0.5]), (1, 4, 1)))
        theta = T.Tensor(rng.standard_normal((2, 3)))
        out = gcn.gcn_layer(x, prop, theta, activate=False)
        spread = out.data.max(axis=1) - out.data.min(axis=1)
        assert np.max(np.abs(spread)) < 1e-9

    def test_triple_loop_oracle(self):
        rng = np.random.default_rng(5)
        n, k, cin, cout = 2, 4, 3, 2
        x = rng.standard_normal((n, k, cin))
        lm = rng.standard_normal((k, k))
        theta = rng.standard_normal((cout, cin))
        prop = gcn.PropagationMatrix(T.Tensor(lm))
        got = gcn.gcn_layer(T.Tensor(x), prop, T.Tensor(theta), activate=False).data
        want = np.zeros((n, k, cout))
        for ni in range(n):
            for i in range(k):
                for o in range(cout):
                    acc = 0.0
                    for j in range(k):
                        for c in range(cin):
                            acc += lm[i, j] * x[ni, j, c] * theta[o, c]
                    want[ni, i, o] = acc
        assert np.max(np.abs(got - want)) < 1e-12

    def test_gradients(self):
        rng = np.random.default_rng(6)
        reg = T.ParamRegistry()
        theta = reg.register("theta", rng.standard_normal((2, 3)))
        x = reg.register("x", rng.standard_normal((2, 4, 3)))
        prop = gcn.propagation_matrix(random_adjacency(rng, 4))

        def loss():
            return T.total_sum(gcn.gcn_layer(x, prop, theta))

        report = T.finite_diff_check(reg, loss, epsilon=1e-5)
        assert report.max_relative_error < 1e-5, report.per_param


class TestReadout:
    def test_flattened_width(self):
        # 2 * K * C: both graphs' node features side by side.
        y1 = T.Tensor(np.zeros((2, 20, 256)))
        y2 = T.Tensor(np.zeros((2, 20, 256)))
        out = gcn.graph_readout(y1, y2)
        assert out.shape == (2, 2 * 20 * 256)

    def test_zero_inputs(self):
        out = gcn.graph_readout(T.Tensor(np.zeros((1, 4, 2))), T.Tensor(np.zeros((1, 4, 2))))
        assert np.all(out.data == 0.0)

    def test_batch_equivariance(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((3, 4, 2))
        b = rng.standard_normal((3, 4, 2))
        base = gcn.graph_readout(T.Tensor(a), T.Tensor(b)).data
        perm = [2, 0, 1]
        swapped = gcn.graph_readout(T.Tensor(a[perm]), T.Tensor(b[perm])).data
        assert np.array_equal(swapped, base[perm])
