"""Host multigraph construction and differentiable neighborhood kernels.

Nodes are hosts (address strings), edges are individual flows carrying a
feature row each; parallel edges are preserved so every flow gets its own
embedding. The aggregation and endpoint-gather kernels are backed by cached
CSR incidence/selection matrices: sparse matmul accumulates each output row
in ascending edge order, which keeps results deterministic and lets the
brute-force test oracle match bit-for-bit in 64-bit mode.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse

from . import autograd as ag
from .data import FlowDataset
from .errors import DataError, DimensionError

NEIGHBORHOOD_MODES = ("both", "in")


class FlowGraph:
    """Multigraph over hosts with per-edge features.

    ``edge_origin`` maps each edge back to the index it had in the graph an
    augmentation derived it from (-1 for synthetic edges added by an
    augmentation); the base graph uses the identity mapping.
    """

    def __init__(
        self,
        num_nodes: int,
        host_keys: list[str],
        src: np.ndarray,
        dst: np.ndarray,
        X: np.ndarray,
        labels: np.ndarray | None = None,
        families: np.ndarray | None = None,
        edge_origin: np.ndarray | None = None,
    ) -> None:
        self.num_nodes = int(num_nodes)
        self.host_keys = host_keys
        self.src = np.asarray(src, dtype=np.intp)
        self.dst = np.asarray(dst, dtype=np.intp)
        if self.src.shape != self.dst.shape:
            raise DimensionError(f"src/dst length mismatch: {self.src.shape} vs {self.dst.shape}")
        if len(self.src) and (self.src.max() >= num_nodes or self.dst.max() >= num_nodes):
            raise DataError("edge endpoint index out of range")
        self.X = X
        if X.shape[0] != len(self.src):
            raise DimensionError(f"X has {X.shape[0]} rows for {len(self.src)} edges")
        self.labels = labels
        self.families = families
        if edge_origin is None:
            edge_origin = np.arange(len(self.src), dtype=np.intp)
        self.edge_origin = np.asarray(edge_origin, dtype=np.intp)
        self._cache: dict = {}

    @property
    def num_edges(self) -> int:
        return len(self.src)

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]

    def with_features(self, X: np.ndarray, edge_origin: np.ndarray | None = None) -> "FlowGraph":
        """Same topology, different feature rows; incidence caches are shared."""
        g = FlowGraph(
            self.num_nodes, self.host_keys, self.src, self.dst, X,
            labels=None, families=None, edge_origin=edge_origin,
        )
        g._cache = self._cache
        return g

    # -- cached sparse operators ------------------------------------------

    def _incidence(self, mode: str) -> sparse.csr_matrix:
        """num_nodes x num_edges matrix with a 1 per (incident node, edge).

        mode 'both' lists each edge under both endpoints (self-loops once);
        mode 'in' lists it under the destination only.
        """
        key = ("inc", mode)
        if key not in self._cache:
            if mode == "both":
                not_loop = self.src != self.dst
                rows = np.concatenate([self.src, self.dst[not_loop]])
                cols = np.concatenate(
                    [np.arange(self.num_edges), np.arange(self.num_edges)[not_loop]]
                )
            elif mode == "in":
                rows, cols = self.dst, np.arange(self.num_edges)
            else:
                raise ValueError(f"unknown neighborhood mode '{mode}'")
            data = np.ones(len(rows), dtype=np.float32)
            m = sparse.csr_matrix(
                (data, (rows, cols)), shape=(self.num_nodes, self.num_edges)
            )
            m.sort_indices()
            mt = m.T.tocsr()
            mt.sort_indices()
            self._cache[key] = (m, mt)
        return self._cache[key]

    def _selector_t(self, which: str) -> sparse.csr_matrix:
        """num_nodes x num_edges transpose of the endpoint row-selector."""
        key = ("sel", which)
        if key not in self._cache:
            nodes = self.src if which == "src" else self.dst
            data = np.ones(self.num_edges, dtype=np.float32)
            m = sparse.csr_matrix(
                (data, (nodes, np.arange(self.num_edges))),
                shape=(self.num_nodes, self.num_edges),
            )
            m.sort_indices()
            self._cache[key] = m
        return self._cache[key]

    def incidence_lists(self) -> list[np.ndarray]:
        """Per-node arrays of incident edge indices (ascending)."""
        m, _ = self._incidence("both")
        return [m.indices[m.indptr[u] : m.indptr[u + 1]] for u in range(self.num_nodes)]


def build_graph(ds: FlowDataset, dtype=np.float32) -> FlowGraph:
    """One node per distinct address, one edge per record, in record order.

    Expects normalized features; entries outside [0, 1] (or non-finite) are
    rejected because downstream reconstruction targets assume that range.
    """
    feats = np.ascontiguousarray(ds.features, dtype=dtype)
    if len(ds) and (not np.isfinite(feats).all() or feats.min() < 0.0 or feats.max() > 1.0):
        raise DataError("build_graph expects features normalized into [0, 1]")
    index: dict[str, int] = {}
    for addr in ds.src:
        if addr not in index:
            index[addr] = len(index)
    for addr in ds.dst:
        if addr not in index:
            index[addr] = len(index)
    src = np.fromiter((index[a] for a in ds.src), dtype=np.intp, count=len(ds))
    dst = np.fromiter((index[a] for a in ds.dst), dtype=np.intp, count=len(ds))
    return FlowGraph(
        num_nodes=len(index),
        host_keys=list(index.keys()),
        src=src,
        dst=dst,
        X=feats,
        labels=ds.labels.copy(),
        families=ds.families.copy(),
    )


def aggregate_neighbor_edges(g: FlowGraph, x: ag.Tensor, mode: str = "both") -> ag.Tensor:
    """Sum each node's incident edge feature rows (differentiable).

    Backward scatters a node's incoming gradient to all of its incident
    edge rows.
    """
    if x.value.shape[0] != g.num_edges:
        raise DimensionError(
            f"aggregate: X has {x.value.shape} rows for {g.num_edges} edges"
        )
    fwd, bwd = g._incidence(mode)
    out = ag.Tensor(fwd @ x.value)

    def backward() -> None:
        if out.grad is None:
            return
        ag.accumulate_grad(x, bwd @ out.grad)

    tape = ag.active_tape()
    if tape is not None:
        tape.record(backward)
    return out


def endpoint_concat(h: ag.Tensor, g: FlowGraph) -> ag.Tensor:
    """Per-edge [h_src || h_dst] rows from node embeddings (differentiable)."""
    if h.value.shape[0] != g.num_nodes:
        raise DimensionError(f"endpoint_concat: h has {h.value.shape} rows for {g.num_nodes} nodes")
    out = ag.Tensor(np.hstack((h.value[g.src], h.value[g.dst])))
    width = h.value.shape[1]

    def backward() -> None:
        if out.grad is None:
            return
        left = out.grad[:, :width]
        right = out.grad[:, width:]
        ag.accumulate_grad(h, g._selector_t("src") @ left + g._selector_t("dst") @ right)

    tape = ag.active_tape()
    if tape is not None:
        tape.record(backward)
    return out
