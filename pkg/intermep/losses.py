"""
LOSSES
------
Training objectives of the sarcasm detector: binary cross-entropy on the
classifier probabilities, the label-aware cosine loss on projection
features, and their sum.

"""

__all__ = [
    'loss_bce',
    'loss_joint',
    'loss_proj',
    ]

import numpy as np

from intermep import maths
from intermep import tensor as tn
from intermep.tensor import Tensor


def _labels(labels, n):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    return labels.astype(np.int64)


def loss_bce(probs, labels):
    """
    Mean binary cross-entropy of probability pairs.

    -(1/N) sum_i [y_i log p_i1 + (1 - y_i) log p_i0], with probabilities
    clamped to [1e-7, 1 - 1e-7].

    Parameters
    ----------
    probs : Tensor
        (N, 2) rows summing to one.
    labels : array-like of int
        (N,) values in {0, 1}.

    Returns
    -------
    loss : Tensor
        Scalar.

    Raises
    ------
    ValueError
        On an empty batch.

    Example
    -------
    >>> loss_bce(Tensor([[0.2, 0.8]], dtype="float64"), [1]).item()
    0.2231435513142097

    """
    if probs.ndim != 2 or probs.shape[1] != 2:
        raise ValueError(f"probabilities must have shape (N, 2), got {probs.shape}")
    n = probs.shape[0]
    if n == 0:
        raise ValueError("binary cross-entropy of an empty batch is undefined")
    labels = _labels(labels, n)
    clamped = tn.clip(probs, maths.PROB_EPS, 1.0 - maths.PROB_EPS)
    picked = clamped[np.arange(n), labels]
    return -(tn.log(picked).mean())


def loss_proj(features, labels):
    """
    Label-aware cosine loss on unit feature rows.

        mean(H_P H_N^T) + mean(1 - H_P H_P^T) + mean(1 - H_N H_N^T)

    P are the sarcastic rows and N the rest. A term whose row set is empty
    contributes 0, so single-class batches still give a finite loss.

    Parameters
    ----------
    features : Tensor
        (N, d_f) unit rows.
    labels : array-like of int

    Returns
    -------
    loss : Tensor
        Scalar.

    """
    labels = _labels(labels, features.shape[0])
    positives = np.flatnonzero(labels == 1)
    negatives = np.flatnonzero(labels == 0)

    terms = []
    if len(positives) and len(negatives):
        h_p, h_n = features[positives], features[negatives]
        terms.append((h_p @ h_n.T).mean())
    if len(positives):
        h_p = features[positives]
        terms.append(1.0 - (h_p @ h_p.T).mean())
    if len(negatives):
        h_n = features[negatives]
        terms.append(1.0 - (h_n @ h_n.T).mean())

    if not terms:
        return Tensor(0.0, dtype=features.dtype)
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total


def loss_joint(loss_cls, loss_prj=None):
    """
    The unweighted sum of the classification and projection losses.

    `loss_prj` may be None (no projection head), which counts as 0.

    """
    if loss_prj is None:
        return loss_cls
    return loss_cls + loss_prj
