"""
Softmax and categorical cross-entropy
"""

import numpy as np

from .errors import NonFiniteInputError, ShapeMismatchError
from .layers import softmax_rows

PROBABILITY_FLOOR = 1e-7


def softmax(logits):
    """
    Probabilities from logits, row-wise, computed as exp(z - max z) / sum

    Args:
        logits: 1-D row or 2-D batch of rows

    Raises:
        NonFiniteInputError: any entry is NaN or infinite
    """
    logits = np.asarray(logits)
    if not np.issubdtype(logits.dtype, np.floating):
        logits = logits.astype(np.float64)
    if logits.size == 0 or logits.shape[-1] < 1:
        raise ShapeMismatchError("softmax needs at least one logit per row")
    if not np.all(np.isfinite(logits)):
        raise NonFiniteInputError("softmax input contains NaN or infinite values")
    return softmax_rows(logits)


def true_class_probabilities(probabilities, onehot):
    probabilities = np.asarray(probabilities)
    onehot = np.asarray(onehot)
    if probabilities.ndim != 2 or probabilities.shape != onehot.shape:
        raise ShapeMismatchError(
            f"probabilities {probabilities.shape} and labels {onehot.shape} must be equal B x n"
        )
    targets = onehot.argmax(axis=1)
    return probabilities[np.arange(len(targets)), targets], targets


def categorical_cross_entropy(probabilities, onehot):
    """
    Mean negative log-probability of the true class

    loss = -(1/B) * sum_b log(clamp(p_b[y_b], 1e-7, 1))

    Returns:
        Python float, >= 0
    """
    picked, _ = true_class_probabilities(probabilities, onehot)
    clamped = np.clip(picked.astype(np.float64), PROBABILITY_FLOOR, 1.0)
    return float(-np.mean(np.log(clamped)))


def cross_entropy_logit_grad(probabilities, onehot):
    """
    Gradient of categorical_cross_entropy with respect to the logits

    Samples whose true-class probability sits below the clamp floor
    contribute nothing, matching the flat clamped loss.
    """
    picked, _ = true_class_probabilities(probabilities, onehot)
    active = (picked > PROBABILITY_FLOOR).astype(probabilities.dtype)[:, None]
    return (probabilities - onehot.astype(probabilities.dtype)) * active / probabilities.shape[0]
