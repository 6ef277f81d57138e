"""Single-layer edge-feature GNN encoder.

Each node sums its incident edge features, passes the sum through one
ReLU-activated linear layer, and every edge embedding is the concatenation
of its two endpoint embeddings times a second weight matrix. The edge layer
carries no activation; downstream heads supply their own nonlinearities.
No bias terms anywhere in the encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .graph import FlowGraph, aggregate_neighbor_edges, endpoint_concat


@dataclass
class EncoderParams:
    w_agg: ag.Param   # feature_dim x hidden
    w_edge: ag.Param  # 2*hidden x hidden

    @property
    def hidden(self) -> int:
        return self.w_agg.value.shape[1]

    def all(self) -> list[ag.Param]:
        return [self.w_agg, self.w_edge]


def init_encoder_params(
    feature_dim: int, hidden: int, rng: np.random.Generator, dtype=np.float32
) -> EncoderParams:
    return EncoderParams(
        w_agg=ag.Param(ag.xavier_init(feature_dim, hidden, rng, dtype), name="w_agg"),
        w_edge=ag.Param(ag.xavier_init(2 * hidden, hidden, rng, dtype), name="w_edge"),
    )


def encode(
    g: FlowGraph, x: ag.Tensor, params: EncoderParams, neighborhood: str = "both"
) -> ag.Tensor:
    """Edge embeddings, one row per edge in edge order."""
    agg = aggregate_neighbor_edges(g, x, mode=neighborhood)
    h_nodes = ag.relu(ag.matmul(agg, params.w_agg.leaf()))
    pairs = endpoint_concat(h_nodes, g)
    return ag.matmul(pairs, params.w_edge.leaf())


def encode_graph(g: FlowGraph, params: EncoderParams, neighborhood: str = "both") -> np.ndarray:
    """Eager (no-tape) embedding of a graph's own features; inference path."""
    return encode(g, ag.Tensor(g.X), params, neighborhood).value


def encode_pair(
    g: FlowGraph,
    aug_pos,
    aug_neg,
    params: EncoderParams,
    rng: np.random.Generator,
    neighborhood: str = "both",
) -> tuple[ag.Tensor, ag.Tensor, FlowGraph, FlowGraph]:
    """Embed one positive and one negative view of ``g`` with shared weights.

    Returns (H_pos, H_neg, g_pos, g_neg); the graphs are needed downstream
    for reconstruction targets and for mapping edge masks through the
    augmentation.
    """
    from .objectives import corrupt

    g_pos = corrupt(g, aug_pos, rng)
    g_neg = corrupt(g, aug_neg, rng)
    h_pos = encode(g_pos, ag.Tensor(g_pos.X), params, neighborhood)
    h_neg = encode(g_neg, ag.Tensor(g_neg.X), params, neighborhood)
    return h_pos, h_neg, g_pos, g_neg
