"""Self-supervised objective: contrastive loss, reconstruction losses, and
the graph augmentations that produce positive/negative views.

The contrastive part follows the Deep Graph Infomax recipe at the edge
level: a sigmoid summary of the positive embeddings, a bilinear
discriminator, and binary cross-entropy pushing positive-edge scores to one
and corrupted-edge scores to zero. The reconstruction part decodes edge
features back out of the embeddings; its error is minimized on unlabeled
edges and maximized on the handful of labeled malicious edges, which is
what separates attack embeddings from the benign mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import ConfigError, DimensionError
from .graph import FlowGraph

PROB_EPS = 1e-7


@dataclass
class SslParams:
    w_disc: ag.Param  # hidden x hidden bilinear discriminator weight
    w_rec: ag.Param   # hidden x feature_dim feature decoder

    def all(self) -> list[ag.Param]:
        return [self.w_disc, self.w_rec]


def init_ssl_params(
    hidden: int, feature_dim: int, rng: np.random.Generator, dtype=np.float32
) -> SslParams:
    return SslParams(
        w_disc=ag.Param(ag.xavier_init(hidden, hidden, rng, dtype), name="w_disc"),
        w_rec=ag.Param(ag.xavier_init(hidden, feature_dim, rng, dtype), name="w_rec"),
    )


# ---------------------------------------------------------------------------
# augmentations


@dataclass(frozen=True)
class AugmentationSpec:
    """One graph transform: identity, edge_shuffle, node_drop(p),
    random_edge_add(ratio), or edge_mask(p)."""

    kind: str
    p: float | None = None
    ratio: float | None = None

    def validate(self) -> None:
        if self.kind in ("node_drop", "edge_mask"):
            if self.p is None or not (0.0 < self.p < 1.0):
                raise ConfigError(f"{self.kind}: p must be in (0, 1), got {self.p}")
        elif self.kind == "random_edge_add":
            if self.ratio is None or not (0.0 < self.ratio < 1.0):
                raise ConfigError(f"random_edge_add: ratio must be in (0, 1), got {self.ratio}")
        elif self.kind not in ("identity", "edge_shuffle"):
            raise ConfigError(f"unknown augmentation '{self.kind}'")


AUGMENTATION_PRESETS: dict[str, tuple[AugmentationSpec, AugmentationSpec]] = {
    # (positive view, negative view)
    "dgi_default": (AugmentationSpec("identity"), AugmentationSpec("edge_shuffle")),
    "aug1": (AugmentationSpec("node_drop", p=0.3), AugmentationSpec("edge_shuffle")),
    "aug2": (
        AugmentationSpec("random_edge_add", ratio=0.1),
        AugmentationSpec("edge_mask", p=0.3),
    ),
}


def corrupt(g: FlowGraph, spec: AugmentationSpec, rng: np.random.Generator) -> FlowGraph:
    """Deterministic-per-seed augmented copy of ``g`` (identity returns g)."""
    spec.validate()
    if spec.kind == "identity":
        return g
    if spec.kind == "edge_shuffle":
        perm = rng.permutation(g.num_edges)
        return g.with_features(g.X[perm], edge_origin=g.edge_origin[perm])
    if spec.kind == "node_drop":
        n_drop = math.ceil(spec.p * g.num_nodes)
        if n_drop >= g.num_nodes:
            raise ConfigError(f"node_drop would remove all {g.num_nodes} nodes")
        dropped = rng.choice(g.num_nodes, size=n_drop, replace=False)
        keep_node = np.ones(g.num_nodes, dtype=bool)
        keep_node[dropped] = False
        remap = np.cumsum(keep_node) - 1
        keep_edge = keep_node[g.src] & keep_node[g.dst]
        return FlowGraph(
            num_nodes=int(keep_node.sum()),
            host_keys=[k for k, keep in zip(g.host_keys, keep_node) if keep],
            src=remap[g.src[keep_edge]],
            dst=remap[g.dst[keep_edge]],
            X=g.X[keep_edge],
            edge_origin=g.edge_origin[keep_edge],
        )
    if spec.kind == "random_edge_add":
        n_add = math.ceil(spec.ratio * g.num_edges)
        new_src = rng.integers(0, g.num_nodes, size=n_add)
        new_dst = rng.integers(0, g.num_nodes, size=n_add)
        new_x = rng.uniform(0.0, 1.0, size=(n_add, g.feature_dim)).astype(g.X.dtype)
        return FlowGraph(
            num_nodes=g.num_nodes,
            host_keys=g.host_keys,
            src=np.concatenate([g.src, new_src]),
            dst=np.concatenate([g.dst, new_dst]),
            X=np.vstack([g.X, new_x]),
            edge_origin=np.concatenate(
                [g.edge_origin, np.full(n_add, -1, dtype=np.intp)]
            ),
        )
    if spec.kind == "edge_mask":
        n_mask = math.ceil(spec.p * g.num_edges)
        if n_mask >= g.num_edges:
            raise ConfigError(f"edge_mask would zero all {g.num_edges} edges")
        masked = rng.choice(g.num_edges, size=n_mask, replace=False)
        x = g.X.copy()
        x[masked] = 0.0
        return g.with_features(x, edge_origin=g.edge_origin.copy())
    raise ConfigError(f"unknown augmentation '{spec.kind}'")


# ---------------------------------------------------------------------------
# losses


def readout(h: ag.Tensor) -> ag.Tensor:
    """Global summary: sigmoid of the column mean of the edge embeddings."""
    if h.value.shape[0] == 0:
        raise DimensionError("readout: empty embedding matrix")
    return ag.sigmoid(ag.mean_rows(h))


def discriminate(h: ag.Tensor, s: ag.Tensor, w_disc: ag.Param) -> ag.Tensor:
    """Per-edge probability sigmoid(h_uv . W . s); one column."""
    if s.value.shape[0] != 1:
        raise DimensionError(f"summary must be a 1 x hidden row, got {s.value.shape}")
    projected = ag.matmul(w_disc.leaf(), ag.transpose(s))  # hidden x 1
    return ag.sigmoid(ag.matmul(h, projected))


def contrastive_loss(pos_probs: ag.Tensor, neg_probs: ag.Tensor) -> ag.Tensor:
    """-(sum log p_pos + sum log(1 - p_neg)) / (n_pos + n_neg).

    Both sums share the joint normalizer. Probabilities are clamped to
    [PROB_EPS, 1 - PROB_EPS] so a saturated discriminator cannot emit -inf.
    """
    n_pos, n_neg = pos_probs.value.shape[0], neg_probs.value.shape[0]
    if n_pos == 0 or n_neg == 0:
        raise DimensionError("contrastive_loss: empty probability vector")
    log_pos = ag.log(ag.clamp(pos_probs, PROB_EPS, 1.0 - PROB_EPS))
    log_neg = ag.log(ag.affine(ag.clamp(neg_probs, PROB_EPS, 1.0 - PROB_EPS), -1.0, 1.0))
    total = ag.add(ag.sum_all(log_pos), ag.sum_all(log_neg))
    return ag.affine(total, -1.0 / (n_pos + n_neg))


def reconstruct(h: ag.Tensor, w_rec: ag.Param) -> ag.Tensor:
    """Feature reconstructions sigmoid(H . W_rec); entries in (0, 1)."""
    return ag.sigmoid(ag.matmul(h, w_rec.leaf()))


def recon_losses(
    x: np.ndarray,
    x_hat: ag.Tensor,
    mal_mask: np.ndarray,
    reduction: str = "mean",
) -> tuple[ag.Tensor, ag.Tensor]:
    """Squared reconstruction error split into (labeled-malicious, rest).

    ``reduction='mean'`` averages over (edges x features) within each set,
    keeping the two terms on comparable scales regardless of how imbalanced
    the split is; ``'sum'`` is the literal unnormalized form. An empty set
    contributes an exact 0 with no gradient.
    """
    if x_hat.value.shape != x.shape:
        raise DimensionError(f"recon: shapes differ, {x_hat.value.shape} vs {x.shape}")
    mal_mask = np.asarray(mal_mask, dtype=bool)
    if mal_mask.shape[0] != x.shape[0]:
        raise DimensionError(
            f"recon: mask length {mal_mask.shape[0]} for {x.shape[0]} edges"
        )
    if reduction not in ("mean", "sum"):
        raise ConfigError(f"recon reduction must be 'mean' or 'sum', got '{reduction}'")
    sq = ag.square(ag.sub_const(x_hat, x))
    d = x.shape[1]

    def reduce_rows(idx: np.ndarray) -> ag.Tensor:
        if idx.size == 0:
            return ag.Tensor(np.zeros((1, 1), dtype=x_hat.value.dtype))
        picked = ag.sum_all(ag.gather_rows(sq, idx))
        if reduction == "mean":
            return ag.affine(picked, 1.0 / (idx.size * d))
        return picked

    mal_idx = np.flatnonzero(mal_mask)
    rest_idx = np.flatnonzero(~mal_mask)
    return reduce_rows(mal_idx), reduce_rows(rest_idx)


@dataclass
class LossBreakdown:
    """Scalar components of one training step's objective."""

    contrastive: float
    recon_fewshot: float
    recon_rest: float
    total: float


def hybrid_loss(
    contrastive: float,
    recon_fewshot: float,
    recon_rest: float,
    alpha: float,
    beta: float,
) -> LossBreakdown:
    """total = contrastive + alpha * recon_rest - beta * recon_fewshot."""
    if alpha < 0 or beta < 0:
        raise ConfigError(f"alpha/beta must be >= 0, got ({alpha}, {beta})")
    total = contrastive + alpha * recon_rest - beta * recon_fewshot
    return LossBreakdown(contrastive, recon_fewshot, recon_rest, total)


def combine_loss_terms(
    l_contrastive: ag.Tensor,
    l_fewshot: ag.Tensor,
    l_rest: ag.Tensor,
    alpha: float,
    beta: float,
) -> tuple[ag.Tensor, LossBreakdown]:
    """Tensor-composed total (for backward) plus its float breakdown."""
    total = ag.add(
        ag.add(l_contrastive, ag.affine(l_rest, alpha)),
        ag.affine(l_fewshot, -beta),
    )
    breakdown = hybrid_loss(
        l_contrastive.item(), l_fewshot.item(), l_rest.item(), alpha, beta
    )
    return total, breakdown
