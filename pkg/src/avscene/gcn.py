"""Spectral graph convolution over the scene graphs.

The adjacency is normalized as (D+I)^{-1/2} (A+I) (D+I)^{-1/2} with D the
weighted degree (row sums of A), which bounds every eigenvalue in [-1, 1].
One 1x1-convolution filter bank per graph maps node features to a lower
channel count, followed by ReLU; the readout flattens and concatenates the
salient and contextual node features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError
from .tensor import (
    Tensor,
    batched_matrix_apply,
    concat,
    conv1x1,
    relu,
    reshape,
    transpose_last2,
)


def _as_array(a) -> np.ndarray:
    return a.data if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)


def _validate_adjacency(adj: np.ndarray) -> None:
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ConfigurationError(f"adjacency must be square, got {adj.shape}")
    if np.max(np.abs(adj - adj.T), initial=0.0) > 1e-12:
        raise DataError("adjacency is not symmetric within 1e-12")
    if np.any(adj < 0.0):
        raise DataError("adjacency has negative weights")
    if np.any(np.diag(adj) != 0.0):
        raise DataError("adjacency has a nonzero diagonal")


@dataclass
class PropagationMatrix:
    """Symmetric-normalized operator with spectrum inside [-1, 1]."""

    l_norm: Tensor

    @property
    def k(self) -> int:
        return self.l_norm.data.shape[0]


def laplacian(a) -> Tensor:
    """Graph Laplacian D - A; rows sum to zero by construction."""
    adj = _as_array(a)
    _validate_adjacency(adj)
    return Tensor(np.diag(adj.sum(axis=1)) - adj)


def propagation_matrix(a) -> PropagationMatrix:
    """(D+I)^{-1/2} (A+I) (D+I)^{-1/2} with D = diag of row sums of A."""
    adj = _as_array(a)
    _validate_adjacency(adj)
    inv_sqrt = 1.0 / np.sqrt(adj.sum(axis=1) + 1.0)
    a_hat = adj + np.eye(adj.shape[0])
    l_norm = inv_sqrt[:, None] * a_hat * inv_sqrt[None, :]
    return PropagationMatrix(l_norm=Tensor(l_norm))


def gcn_layer(
    x: Tensor,
    prop: PropagationMatrix,
    theta: Tensor,
    activate: bool = True,
) -> Tensor:
    """One propagation step: relu(L_norm @ X @ theta^T) per batch item.

    x is [N,K,C_in], theta a [C_out,C_in] filter bank. ``activate=False``
    returns the pre-activation (used by linearity tests).
    """
    if x.data.ndim != 3:
        raise ConfigurationError(f"gcn_layer: node features must be rank 3, got {x.data.ndim}")
    if x.data.shape[1] != prop.k:
        raise ConfigurationError(
            f"gcn_layer: {x.data.shape[1]} nodes vs {prop.k}x{prop.k} propagation matrix"
        )
    mixed = batched_matrix_apply(prop.l_norm.data, x)
    projected = transpose_last2(conv1x1(transpose_last2(mixed), theta))
    return relu(projected) if activate else projected


def graph_readout(y_salient: Tensor, y_contextual: Tensor) -> Tensor:
    """Flatten both [N,K,C] node tensors and concatenate salient-first."""
    if y_salient.data.shape != y_contextual.data.shape:
        raise ConfigurationError(
            f"readout shapes differ: {y_salient.data.shape} vs {y_contextual.data.shape}"
        )
    n, k, c = y_salient.data.shape
    return concat(
        [reshape(y_salient, (n, k * c)), reshape(y_contextual, (n, k * c))],
        axis=1,
    )
