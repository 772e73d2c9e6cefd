"""
Evaluation metrics: error rate, perplexity and character error rate
"""

import math
from typing import Iterable, Sequence

import numpy as np
from sklearn.metrics import zero_one_loss

from layerwise.core.errors import ConfigurationError


def edit_distance(reference: Sequence, hypothesis: Sequence) -> int:
    """Levenshtein distance with unit costs, two-row dynamic programme"""
    ref, hyp = list(reference), list(hypothesis)
    if ref == hyp:
        return 0
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    if len(ref) < len(hyp):
        ref, hyp = hyp, ref

    n = len(hyp)
    distance = np.zeros((2, n + 1), dtype=np.int64)
    distance[0] = np.arange(n + 1)
    for i in range(1, len(ref) + 1):
        prev, cur = distance[(i - 1) % 2], distance[i % 2]
        cur[0] = i
        for j in range(1, n + 1):
            if ref[i - 1] == hyp[j - 1]:
                cur[j] = prev[j - 1]
            else:
                cur[j] = 1 + min(prev[j - 1], cur[j - 1], prev[j])
    return int(distance[len(ref) % 2][n])


def character_error_rate(references: Iterable[Sequence], hypotheses: Iterable[Sequence]) -> float:
    """Σ edit distance / Σ reference length"""
    errors = 0
    length = 0
    for ref, hyp in zip(references, hypotheses):
        errors += edit_distance(ref, hyp)
        length += len(ref)
    if length == 0:
        raise ConfigurationError("character error rate needs non-empty references")
    return errors / length


def error_rate(targets: np.ndarray, predictions: np.ndarray) -> float:
    """Fraction of misclassified rows"""
    return float(zero_one_loss(np.asarray(targets).reshape(-1), np.asarray(predictions).reshape(-1)))


def perplexity(token_losses: np.ndarray) -> float:
    """exp of the mean per-token cross-entropy"""
    return math.exp(float(np.mean(token_losses)))
