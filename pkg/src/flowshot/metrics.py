"""Binary evaluation: per-class precision/recall/F1 and the macro average.

The 0/0 convention is 0 throughout, so degenerate single-class inputs
produce well-defined scores instead of NaNs.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .errors import DataError, DimensionError


@dataclass
class MetricsReport:
    benign_precision: float
    benign_recall: float
    benign_f1: float
    attack_precision: float
    attack_recall: float
    attack_f1: float
    macro_f1: float
    tp: int   # confusion counts w.r.t. the attack class
    fp: int
    tn: int
    fn: int
    runtime_seconds: float | None = None

    def to_dict(self, include_runtime: bool = True) -> dict:
        d = asdict(self)
        if not include_runtime:
            del d["runtime_seconds"]
        return d


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def evaluate(predicted: np.ndarray, truth: np.ndarray) -> MetricsReport:
    """Score 0/1 predictions against 0/1 truth (1 = attack)."""
    predicted = np.asarray(predicted).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if predicted.size == 0:
        raise DataError("evaluate: empty inputs")
    if predicted.shape != truth.shape:
        raise DimensionError(
            f"evaluate: {predicted.shape} predictions vs {truth.shape} truths"
        )
    tp = int(np.sum((predicted == 1) & (truth == 1)))
    fp = int(np.sum((predicted == 1) & (truth == 0)))
    tn = int(np.sum((predicted == 0) & (truth == 0)))
    fn = int(np.sum((predicted == 0) & (truth == 1)))
    attack_p, attack_r, attack_f1 = _prf(tp, fp, fn)
    benign_p, benign_r, benign_f1 = _prf(tn, fn, fp)
    return MetricsReport(
        benign_precision=benign_p,
        benign_recall=benign_r,
        benign_f1=benign_f1,
        attack_precision=attack_p,
        attack_recall=attack_r,
        attack_f1=attack_f1,
        macro_f1=(benign_f1 + attack_f1) / 2.0,
        tp=tp, fp=fp, tn=tn, fn=fn,
    )


def embedding_separation(h: np.ndarray, labels: np.ndarray) -> float:
    """How far attack embeddings sit from the benign centroid.

    Ratio of mean attack-to-benign-centroid distance over mean
    benign-to-centroid distance; larger means better-separated attacks.
    """
    labels = np.asarray(labels).reshape(-1)
    benign = h[labels == 0]
    attack = h[labels == 1]
    if benign.shape[0] == 0 or attack.shape[0] == 0:
        raise DataError("embedding_separation needs both classes present")
    centroid = benign.mean(axis=0)
    benign_dist = np.linalg.norm(benign - centroid, axis=1).mean()
    attack_dist = np.linalg.norm(attack - centroid, axis=1).mean()
    if benign_dist == 0.0:
        return float("inf")
    return float(attack_dist / benign_dist)
