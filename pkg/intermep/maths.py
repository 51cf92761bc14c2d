"""
MATHS
-----
A collection of numerical primitives on plain numpy arrays.

These are the forward computations shared by the autograd engine in
:mod:`intermep.tensor`, the memory-enhanced predictor and the metrics.

"""

__all__ = [
    'DegenerateFeatureError',
    'NonFiniteError',
    'PROB_EPS',
    'check_finite',
    'clamp_probabilities',
    'gelu',
    'gelu_derivative',
    'l2_normalize',
    'moving_mean',
    'softmax',
    ]

import math

import numpy as np
from scipy import special

# Probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] before any log.
PROB_EPS = 1e-7

NORM_EPS = 1e-12


class NonFiniteError(ArithmeticError):
    """Raised when a NaN or Inf shows up in an array."""


class DegenerateFeatureError(ValueError):
    """Raised when a vector is too close to zero to be normalised."""


def check_finite(array, name="array"):
    """
    Raises a NonFiniteError if any entry of an array is NaN or Inf.

    Parameters
    ----------
    array : np.ndarray
        The array to check.
    name : str, optional
        A label used in the error message.
        Default: "array"

    Returns
    -------
    array : np.ndarray
        The input array, unchanged.

    """
    if not np.all(np.isfinite(array)):
        bad = int(np.size(array) - np.count_nonzero(np.isfinite(array)))
        msg = f"{name} contains {bad} non-finite value(s)"
        raise NonFiniteError(msg)
    return array


def softmax(values, axis=-1):
    """
    Calculates the softmax of an array along an axis.

    The maximum is subtracted before exponentiating, so the result is
    shift invariant and never overflows.

    Parameters
    ----------
    values : array-like
        The input logits. Must be non-empty and finite.
    axis : int, optional
        The axis to normalise over.
        Default: -1

    Returns
    -------
    probs : np.ndarray
        Positive entries summing to one along `axis`.

    Example
    -------
    >>> softmax([np.log(2), 0.0])
    array([0.66666667, 0.33333333])

    """
    values = np.asarray(values)
    if values.size == 0:
        raise ValueError("softmax of an empty array is undefined")
    check_finite(values, "softmax input")

    shifted = values - np.max(values, axis=axis, keepdims=True)
    exps = np.exp(shifted)
    return exps / np.sum(exps, axis=axis, keepdims=True)


def l2_normalize(values, axis=-1, eps=NORM_EPS):
    """
    Scales vectors to unit Euclidean length.

    Parameters
    ----------
    values : array-like
        The vector (or stack of vectors along `axis`).
    axis : int, optional
        The axis holding the vector components.
        Default: -1
    eps : float, optional
        Norms at or below this value are rejected.
        Default: 1e-12

    Returns
    -------
    unit : np.ndarray
        The normalised vectors.

    Raises
    ------
    DegenerateFeatureError
        If any vector has a norm <= eps.

    """
    values = np.asarray(values)
    check_finite(values, "l2_normalize input")
    norm = np.sqrt(np.sum(values * values, axis=axis, keepdims=True))
    if np.any(norm <= eps):
        raise DegenerateFeatureError("degenerate projection feature: norm is ~0")
    return values / norm


def clamp_probabilities(probs, eps=PROB_EPS):
    """
    Clamps probabilities into [eps, 1 - eps] so their logs are finite.

    """
    return np.clip(probs, eps, 1.0 - eps)


def gelu(x):
    """
    The exact (erf based) Gaussian error linear unit.

    gelu(x) = 0.5 * x * (1 + erf(x / sqrt(2)))

    """
    return 0.5 * x * (1.0 + special.erf(x / math.sqrt(2.0)))


def gelu_derivative(x):
    """
    Derivative of :func:`gelu` with respect to its input.

    """
    cdf = 0.5 * (1.0 + special.erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return cdf + x * pdf


def moving_mean(x, w, mode='valid'):
    """
    Calculates the moving average of a dataset within a window.

    Uses a convolution to calculate the moving average within a window.
    = np.convolve(x, np.ones(w), mode=mode) / w

    Parameters
    ----------
    x : np.ndarray or array-like
        The dataset, e.g. a per-step loss curve.
    w : int
        The width of the window.
    mode : {'full', 'valid', 'same'}, optional
        'valid' only reports windows that lie entirely inside the
        data, giving max(M, N) - min(M, N) + 1 values.
        Default: 'valid'

    Returns
    -------
    moving_avg : np.ndarray
        The moving average of the array x within the window.

    """
    if w < 1:
        raise ValueError("window must have value greater or equal to 1")
    return np.convolve(np.asarray(x, dtype=float), np.ones(w), mode=mode) / w
