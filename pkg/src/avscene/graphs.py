"""Construction of the salient and contextual scene graphs.

From the fused feature map we rank spatial positions by channel-summed
intensity, pick the top-K positions (salient graph) and the middle-K
positions of the ranking (contextual graph), group node ranks into 4-node
subgraphs by an arithmetic rule, and weight edges by the Manhattan distance
between node grid positions. Selection is plain indexing: gradients flow
through the gathered node features only, never through the ranking.

Node ranks are 0-based everywhere in code; the 1-based grouping rule is
converted at the boundary where it is evaluated.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .tensor import Tensor, gather_pixels


@dataclass
class IntensityMap:
    """Channel-summed feature intensities, flattened to [N, H*W]."""

    values: Tensor
    h: int
    w: int


@dataclass
class NodeSelection:
    """Ascending, disjoint flat indices of the two node sets."""

    salient_idx: np.ndarray
    contextual_idx: np.ndarray


@dataclass
class SubgraphLayout:
    """Partition of node ranks into 4-node groups plus one center per group."""

    k: int
    subgraphs: list
    centers: list

    def centers_one_based(self) -> list:
        return [c + 1 for c in self.centers]


@dataclass
class SceneGraph:
    kind: str  # "salient" or "contextual"
    node_features: Tensor  # [N, K, C]
    flat_indices: np.ndarray
    positions: list  # K pairs (x, y)
    adjacency: Tensor  # [K, K], symmetric, zero diagonal
    edges: set  # unordered rank pairs stored as (i, j) with i < j
    h: int
    w: int

    @property
    def k(self) -> int:
        return len(self.positions)


def intensity_map(f_ffr: Tensor) -> IntensityMap:
    """Sum f_ffr[N,C,H,W] over channels and flatten the grid row-major."""
    if f_ffr.data.ndim != 4:
        raise ConfigurationError(f"intensity_map: need rank 4, got {f_ffr.data.ndim}")
    n, _, h, w = f_ffr.data.shape
    values = f_ffr.data.sum(axis=1).reshape(n, h * w)
    return IntensityMap(values=Tensor(values), h=h, w=w)


def select_nodes(m: IntensityMap, k: int) -> NodeSelection:
    """Pick the top-k and middle-k positions of the descending intensity sort.

    The middle window is the half-open rank range
    [H*W//2 - k//2, H*W//2 + k//2). Ties sort by lower flat index. Both index
    lists are returned ascending, restoring the original spatial order.
    """
    _validate_k(k, m.h * m.w)
    if m.values.data.shape[0] != 1:
        raise ConfigurationError(
            f"select_nodes expects a single map, got batch {m.values.data.shape[0]}"
        )
    # Stable argsort of the negated values: descending, ties by lower index.
    order = np.argsort(-m.values.data[0], kind="stable")
    m_left = (m.h * m.w) // 2 - k // 2
    salient = np.sort(order[:k])
    contextual = np.sort(order[m_left : m_left + k])
    return NodeSelection(salient_idx=salient, contextual_idx=contextual)


def _validate_k(k: int, cells: int) -> None:
    if k < 4 or k % 4:
        raise ConfigurationError(f"node count must be a positive multiple of 4, got {k}")
    if cells < 3 * k:
        raise ConfigurationError(
            f"feature map has {cells} cells; need at least 3*k = {3 * k} "
            "for disjoint salient and contextual windows"
        )


def build_subgraphs(k: int) -> SubgraphLayout:
    """Group ranks into 4-node subgraphs {i, i+k/4, i+2k/4, i+3k/4}.

    Stated 1-based, stored 0-based; the center of group i is rank i + 2k/4.
    """
    if k < 4 or k % 4:
        raise ConfigurationError(f"node count must be a positive multiple of 4, got {k}")
    q = k // 4
    subgraphs = [(i, i + q, i + 2 * q, i + 3 * q) for i in range(q)]
    centers = [i + 2 * q for i in range(q)]
    return SubgraphLayout(k=k, subgraphs=subgraphs, centers=centers)


@functools.lru_cache(maxsize=64)
def _edges_for_k(k: int) -> frozenset:
    return frozenset(subgraph_edge_set(build_subgraphs(k)))


def node_positions(flat_indices, w: int) -> list:
    """Row-major flat index -> (x, y) grid position."""
    return [(int(i) % w, int(i) // w) for i in flat_indices]


def subgraph_edge_set(layout: SubgraphLayout) -> set:
    """All pairs within each 4-node group plus the chain of group centers."""
    edges = set()
    for group in layout.subgraphs:
        for a in range(4):
            for b in range(a + 1, 4):
                i, j = group[a], group[b]
                edges.add((min(i, j), max(i, j)))
    for a, b in zip(layout.centers, layout.centers[1:]):
        edges.add((min(a, b), max(a, b)))
    return edges


def _fill_adjacency(positions, edges) -> np.ndarray:
    k = len(positions)
    adjacency = np.zeros((k, k))
    for i, j in edges:
        (xi, yi), (xj, yj) = positions[i], positions[j]
        adjacency[i, j] = adjacency[j, i] = abs(xi - xj) + abs(yi - yj)
    return adjacency


def build_adjacency(positions, layout: SubgraphLayout) -> Tensor:
    """Manhattan-distance weights on the subgraph edge set, zero elsewhere.

    A connected pair at coincident positions keeps its edge with weight 0.
    """
    if len(positions) != layout.k:
        raise ConfigurationError(
            f"got {len(positions)} positions for a layout of {layout.k} nodes"
        )
    return Tensor(_fill_adjacency(positions, subgraph_edge_set(layout)))


def gather_node_features(f_ffr: Tensor, selection: NodeSelection):
    """Node feature matrices [N,K,C] for both node sets, ascending-index order."""
    v_salient = gather_pixels(f_ffr, selection.salient_idx)
    v_contextual = gather_pixels(f_ffr, selection.contextual_idx)
    return v_salient, v_contextual


def build_scene_graphs(f_ffr: Tensor, k: int):
    """Full pipeline from a fused feature map (batch of one) to both graphs."""
    m = intensity_map(f_ffr)
    selection = select_nodes(m, k)
    v_salient, v_contextual = gather_node_features(f_ffr, selection)
    edges = _edges_for_k(k)
    graphs = []
    for kind, idx, feats in (
        ("salient", selection.salient_idx, v_salient),
        ("contextual", selection.contextual_idx, v_contextual),
    ):
        positions = node_positions(idx, m.w)
        graphs.append(
            SceneGraph(
                kind=kind,
                node_features=feats,
                flat_indices=np.asarray(idx),
                positions=positions,
                adjacency=Tensor(_fill_adjacency(positions, edges)),
                edges=set(edges),
                h=m.h,
                w=m.w,
            )
        )
    return graphs[0], graphs[1]


def export_graphs_json(salient: SceneGraph, contextual: SceneGraph) -> str:
    """Serialize both graphs for the visualizer and debugging.

    Nodes are listed salient-first; edge endpoints index this combined node
    array, so contextual edges are offset by k.
    """
    k = salient.k
    nodes = []
    for graph in (salient, contextual):
        for rank, (flat, (x, y)) in enumerate(
            zip(graph.flat_indices, graph.positions)
        ):
            nodes.append(
                {
                    "rank": rank,
                    "flat_idx": int(flat),
                    "x": x,
                    "y": y,
                    "kind": graph.kind,
                }
            )
    edges = []
    for offset, graph in ((0, salient), (k, contextual)):
        adj = graph.adjacency.data
        for i, j in sorted(graph.edges):
            edges.append(
                {"i": i + offset, "j": j + offset, "weight": float(adj[i, j])}
            )
    return json.dumps(
        {"h": salient.h, "w": salient.w, "k": k, "nodes": nodes, "edges": edges},
        indent=2,
    )
