"""Classification metrics: accuracy, weighted precision/F1/AUC, macro recall.

AUC is one-vs-rest from softmax scores with ties counted one half, averaged
with class-support weights. Classes absent from the evaluation set carry
zero weight everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Instance
from .losses import softmax
from .model import MultimodalModel, zero_fill_logits


@dataclass
class EvalResult:
    accuracy: float
    precision_weighted: float
    recall_macro: float
    f1_weighted: float
    auc_weighted: float
    confusion: np.ndarray  # [J, J] counts, rows true, columns predicted
    n_eval: int


def roc_auc_binary(scores: np.ndarray, positives: np.ndarray) -> float:
    """Probability a random positive outranks a random negative (ties 1/2).

    Rank-sum formulation with midranks for ties.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = _midranks(scores)
    rank_sum = ranks[positives].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _midranks(scores: np.ndarray) -> np.ndarray:
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # 1-based midrank
        i = j + 1
    return ranks


def confusion_matrix(labels: np.ndarray, preds: np.ndarray, n_classes: int) -> np.ndarray:
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (labels, preds), 1)
    return conf


def eval_from_scores(scores: np.ndarray, labels: np.ndarray) -> EvalResult:
    """Metrics from an [n, J] class-score matrix (softmax or logits alike)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, n_classes = scores.shape
    if n == 0:
        raise ValueError("empty evaluation set")
    preds = scores.argmax(axis=1)
    conf = confusion_matrix(labels, preds, n_classes)
    support = conf.sum(axis=1)
    predicted = conf.sum(axis=0)
    diag = np.diag(conf).astype(np.float64)
    present = support > 0

    accuracy = float(diag.sum() / n)
    recall = np.divide(diag, support, out=np.zeros(n_classes), where=present)
    precision = np.divide(diag, predicted, out=np.zeros(n_classes), where=predicted > 0)
    pr_sum = precision + recall
    f1 = np.divide(2 * precision * recall, pr_sum, out=np.zeros(n_classes), where=pr_sum > 0)

    total_support = support[present].sum()
    precision_weighted = float((support[present] * precision[present]).sum() / total_support)
    f1_weighted = float((support[present] * f1[present]).sum() / total_support)
    recall_macro = float(recall[present].mean())

    auc_values, auc_weights = [], []
    for c in range(n_classes):
        if support[c] == 0 or support[c] == n:  # needs both positives and negatives
            continue
        auc_values.append(roc_auc_binary(scores[:, c], labels == c))
        auc_weights.append(support[c])
    if auc_values:
        auc_weighted = float(np.average(auc_values, weights=auc_weights))
    else:
        auc_weighted = 0.5  # single-class evaluation set: ranking is undefined

    return EvalResult(
        accuracy=accuracy,
        precision_weighted=precision_weighted,
        recall_macro=recall_macro,
        f1_weighted=f1_weighted,
        auc_weighted=auc_weighted,
        confusion=conf,
        n_eval=n,
    )


def evaluate(model: MultimodalModel, test: list[Instance]) -> EvalResult:
    """Zero-fill inference over the test set, scored with softmax outputs."""
    if not test:
        raise ValueError("empty evaluation set")
    logits = zero_fill_logits(model, test)
    labels = np.array([inst.label for inst in test], dtype=np.int64)
    return eval_from_scores(softmax(logits), labels)
