"""Few-shot edge selection and the supervised MLP decoder head.

Selection simulates an analyst labeling k attacks per family, topped up
with a fixed fraction of randomly drawn edges that are *assumed* benign
without consulting labels (on imbalanced data the assumption is almost
always right, and making it label-free is the point). The decoder is a
2-layer MLP trained with binary cross-entropy on the selected edges only;
it never touches encoder weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import DataError, DimensionError
from .graph import FlowGraph


@dataclass
class FewShotSelection:
    """Labeled malicious picks plus the assumed-benign supplement."""

    mal_edges: np.ndarray     # edge indices, k per family
    benign_edges: np.ndarray  # edge indices, disjoint from mal_edges

    @property
    def edges(self) -> np.ndarray:
        return np.concatenate([self.mal_edges, self.benign_edges])

    @property
    def labels(self) -> np.ndarray:
        """1 exactly on the malicious picks, aligned with ``edges``."""
        return np.concatenate(
            [np.ones(len(self.mal_edges), dtype=np.int8),
             np.zeros(len(self.benign_edges), dtype=np.int8)]
        )

    def mal_mask(self, num_edges: int) -> np.ndarray:
        mask = np.zeros(num_edges, dtype=bool)
        mask[self.mal_edges] = True
        return mask


def select_few_shot(
    g: FlowGraph, k: int, benign_frac: float = 0.05, rng: np.random.Generator | None = None
) -> FewShotSelection:
    """Pick min(k, family size) edges per attack family plus random edges.

    Only the malicious picks consult labels. The supplement may therefore
    contain unlabeled attacks; they are still treated as benign.
    """
    if rng is None:
        rng = np.random.default_rng()
    if g.labels is None:
        raise DataError("select_few_shot needs a labeled graph")
    if k < 0:
        raise DataError(f"k must be >= 0, got {k}")

    mal: list[np.ndarray] = []
    if k > 0:
        families = sorted({f for f in g.families if f is not None})
        for fam in families:
            fam_edges = np.flatnonzero(g.families == fam)
            take = min(k, fam_edges.size)
            mal.append(np.sort(rng.choice(fam_edges, size=take, replace=False)))
    mal_edges = np.concatenate(mal) if mal else np.empty(0, dtype=np.intp)

    n_benign = math.ceil(benign_frac * g.num_edges)
    candidates = np.setdiff1d(np.arange(g.num_edges), mal_edges)
    n_benign = min(n_benign, candidates.size)
    benign_edges = np.sort(rng.choice(candidates, size=n_benign, replace=False))
    return FewShotSelection(mal_edges=mal_edges.astype(np.intp), benign_edges=benign_edges.astype(np.intp))


# ---------------------------------------------------------------------------
# decoder


@dataclass
class DecoderParams:
    w1: ag.Param
    b1: ag.Param
    w2: ag.Param
    b2: ag.Param

    def all(self) -> list[ag.Param]:
        return [self.w1, self.b1, self.w2, self.b2]


def init_decoder_params(
    hidden: int, rng: np.random.Generator, mlp_hidden: int = 128, dtype=np.float32
) -> DecoderParams:
    return DecoderParams(
        w1=ag.Param(ag.xavier_init(hidden, mlp_hidden, rng, dtype), name="dec_w1"),
        b1=ag.Param(np.zeros((1, mlp_hidden), dtype=dtype), name="dec_b1"),
        w2=ag.Param(ag.xavier_init(mlp_hidden, 1, rng, dtype), name="dec_w2"),
        b2=ag.Param(np.zeros((1, 1), dtype=dtype), name="dec_b2"),
    )


def decode(h: ag.Tensor, params: DecoderParams) -> ag.Tensor:
    """Per-row malicious probability sigmoid(ReLU(h W1 + b1) W2 + b2)."""
    z = ag.relu(ag.add_rowvec(ag.matmul(h, params.w1.leaf()), params.b1.leaf()))
    return ag.sigmoid(ag.add_rowvec(ag.matmul(z, params.w2.leaf()), params.b2.leaf()))


def bce_mean(probs: ag.Tensor, targets: np.ndarray) -> ag.Tensor:
    """Mean binary cross-entropy; probabilities clamped away from 0 and 1."""
    n = probs.value.shape[0]
    if n == 0:
        raise DataError("bce_mean: empty probability vector")
    y = np.asarray(targets, dtype=probs.value.dtype).reshape(n, 1)
    if y.shape != probs.value.shape:
        raise DimensionError(f"bce: probs {probs.value.shape} vs targets {y.shape}")
    p = ag.clamp(probs, 1e-7, 1.0 - 1e-7)
    term = ag.add(
        ag.mul_const(ag.log(p), -y),
        ag.mul_const(ag.log(ag.affine(p, -1.0, 1.0)), y - 1.0),
    )
    return ag.affine(ag.sum_all(term), 1.0 / n)


def decoder_loss(y_hat: ag.Tensor, selection: FewShotSelection) -> ag.Tensor:
    """BCE over the selected edges only; ``y_hat`` covers all edges."""
    idx = selection.edges
    if idx.size == 0:
        raise DataError("decoder_loss: empty selection")
    return bce_mean(ag.gather_rows(y_hat, idx), selection.labels)


def classify(y_hat: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Malicious iff probability strictly exceeds the threshold (ties benign)."""
    return (np.asarray(y_hat).reshape(-1) > threshold).astype(np.int8)
