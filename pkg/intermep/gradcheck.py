"""
GRADCHECK
---------
Verification of the autograd engine against central finite differences,
both for single functions and for a micro sarcasm detector in every
interaction mode.

"""

__all__ = [
    'GradcheckResult',
    'finite_diff_check',
    'micro_config',
    'run_gradcheck',
    ]

import logging
from dataclasses import dataclass

import numpy as np

from intermep import tensor as tn
from intermep.data import SynthSpec, gen_synthetic
from intermep.losses import loss_bce, loss_joint, loss_proj
from intermep.model import InteractionMode, ModelConfig, SarcasmDetector
from intermep.utils import get_rng_from_seed

log = logging.getLogger(__name__)

TOLERANCE = 1e-4

# Denominator floor; central differences carry ~1e-11 rounding noise.
GRAD_FLOOR = 1e-6


def finite_diff_check(scalar_fn, params, eps=1e-5, corrupt=None):
    """
    Compares analytic gradients with central differences.

    For every entry x of every trainable parameter:

        numeric = (f(x + eps) - f(x - eps)) / (2 eps)
        error = |analytic - numeric| / max(|analytic|, |numeric|, 1e-6)

    Parameters
    ----------
    scalar_fn : callable
        Takes no arguments and returns a scalar Tensor computed from the
        current values of `params`. Must be deterministic.
    params : dict of str -> Tensor
        Parameters to check. Frozen ones (no gradient) are skipped.
    eps : float, optional
        Default: 1e-5
    corrupt : callable or None, optional
        Applied to the analytic gradient dict before comparison; used to
        make sure the check can fail.

    Returns
    -------
    max_error : float
        0.0 if there is nothing to check.

    Example
    -------
    >>> x = tn.Parameter(1.0, dtype="float64")
    >>> finite_diff_check(lambda: x * x, {"x": x}) < 1e-8
    True

    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    trainable = {name: p for name, p in params.items() if p.requires_grad}
    grads = tn.backward(scalar_fn(), trainable)
    if corrupt is not None:
        grads = corrupt(grads)

    max_error = 0.0
    worst = None
    with tn.no_grad():
        for name, param in trainable.items():
            analytic = np.asarray(grads[name])
            for idx in np.ndindex(param.shape):
                original = param.data[idx]
                param.data[idx] = original + eps
                f_plus = scalar_fn().item()
                param.data[idx] = original - eps
                f_minus = scalar_fn().item()
                param.data[idx] = original
                numeric = (f_plus - f_minus) / (2.0 * eps)
                a = float(analytic[idx])
                error = abs(a - numeric) / max(abs(a), abs(numeric), GRAD_FLOOR)
                if error > max_error:
                    max_error, worst = error, (name, idx)
    if worst is not None:
        log.debug("largest gradient error %.3e at %s%s", max_error, *worst)
    return max_error


def micro_config(mode="tw"):
    """
    The tiny float64 model used for gradient checks.

    d = 8, one layer per encoder, two heads, top_n = 1, LoRA rank 2 on all
    four attention matrices, d_f = 8, 4x4 images in 2x2 patches.

    """
    return ModelConfig(
        d_t=8, d_v=8, n_layers_text=1, n_layers_vision=1, n_heads=2, top_n=1,
        interaction_mode=mode, lora_rank=2, lora_targets=("q", "k", "v", "o"),
        d_f=8, vocab_size=128, max_text_len=8, image_side=4, patch_size=2,
        dtype="float64")


def _micro_batch(seed):
    dataset = gen_synthetic(SynthSpec(n_samples=32, seed=seed, image_side=4, patch_size=2))
    positives = [s for s in dataset if s.label == 1][:2]
    negatives = [s for s in dataset if s.label == 0][:2]
    return dataset, positives + negatives


@dataclass(frozen=True)
class GradcheckResult:
    mode: str
    max_error: float
    n_parameters: int
    passed: bool


def run_gradcheck(seed=0, eps=1e-5, tolerance=TOLERANCE, modes=None, corrupt=None):
    """
    Gradient check of the joint loss of the micro model in each mode.

    Trainable parameters are moved away from their initial values first
    (LoRA B and the gate scalar start at zero, where many gradients
    vanish).

    Parameters
    ----------
    seed : int, optional
        Default: 0
    eps : float, optional
        Default: 1e-5
    tolerance : float, optional
        Pass threshold on the maximum relative error.
        Default: 1e-4
    modes : iterable of str or None, optional
        Default: all four interaction modes.
    corrupt : callable or None, optional
        Passed to :func:`finite_diff_check`.

    Returns
    -------
    results : list of GradcheckResult

    """
    modes = [InteractionMode(m) for m in (modes or [m.value for m in InteractionMode])]
    dataset, samples = _micro_batch(seed)
    results = []
    for mode in modes:
        detector = SarcasmDetector(micro_config(mode.value), dataset.vocab, seed=seed)
        params = detector.trainable_parameters()
        rng = get_rng_from_seed((seed, len(results)))
        for param in params.values():
            param.data += rng.normal(0.0, 0.5, size=param.shape)
        batch = detector.encode_batch(samples)

        def joint_loss():
            output = detector.forward(batch)
            return loss_joint(loss_bce(output.probs, batch.labels),
                              loss_proj(output.features, batch.labels))

        error = finite_diff_check(joint_loss, params, eps=eps, corrupt=corrupt)
        n_entries = int(sum(p.size for p in params.values()))
        results.append(GradcheckResult(mode.value, error, n_entries, error < tolerance))
        log.info("gradcheck %-4s max relative error %.3e over %d entries", mode.value, error, n_entries)
    return results
