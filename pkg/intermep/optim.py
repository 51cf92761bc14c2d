"""
OPTIM
-----
The AdamW optimiser and the cosine-with-warmup learning-rate schedule.

Parameters are split into named groups (``"lora"`` for low-rank adapter
factors, ``"default"`` for everything else) that share one update rule but
can run at different learning rates.

"""

__all__ = [
    'LrSchedule',
    'OptimizerState',
    'adamw_step',
    'lr_at',
    'parameter_group',
    ]

import math
from dataclasses import dataclass, field

import numpy as np


def parameter_group(name):
    """
    Returns the optimiser group of a parameter from its dotted name.

    Low-rank adapter factors (``...lora_A`` / ``...lora_B``) go to the
    ``"lora"`` group, everything else to ``"default"``.

    """
    leaf = name.rsplit(".", 1)[-1]
    return "lora" if leaf.startswith("lora_") else "default"


@dataclass
class OptimizerState:
    """
    The state AdamW carries between steps.

    Attributes
    ----------
    step_count : int
        Number of completed optimiser steps.
    first_moment, second_moment : dict of str -> np.ndarray
        Running averages of the gradient and squared gradient, one entry
        per trainable parameter.
    groups : dict of str -> str
        Parameter name -> group name.
    base_lrs : dict of str -> float
        Group name -> base learning rate.
    beta1, beta2, eps, weight_decay : float
        AdamW hyperparameters.

    """
    first_moment: dict
    second_moment: dict
    groups: dict
    base_lrs: dict = field(default_factory=lambda: {"default": 5e-4, "lora": 1e-4})
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step_count: int = 0

    @classmethod
    def create(cls, params, lr=5e-4, lora_lr=1e-4, beta1=0.9, beta2=0.999,
               eps=1e-8, weight_decay=0.01):
        """
        Builds zeroed moment accumulators for the trainable parameters.

        Parameters
        ----------
        params : dict of str -> Tensor
            Named parameters. Frozen ones are skipped.
        lr : float, optional
            Base learning rate of the "default" group.
            Default: 5e-4
        lora_lr : float, optional
            Base learning rate of the "lora" group.
            Default: 1e-4

        """
        trainable = {name: p for name, p in params.items() if p.requires_grad}
        return cls(
            first_moment={name: np.zeros_like(p.data) for name, p in trainable.items()},
            second_moment={name: np.zeros_like(p.data) for name, p in trainable.items()},
            groups={name: parameter_group(name) for name in trainable},
            base_lrs={"default": float(lr), "lora": float(lora_lr)},
            beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay,
        )


def adamw_step(params, grads, state, lr):
    """
    Applies one AdamW update in place.

    Weight decay is decoupled: p <- p * (1 - lr * wd) before the
    bias-corrected Adam step.

    Parameters
    ----------
    params : dict of str -> Tensor
        The trainable parameters, keyed like `state.first_moment`.
    grads : dict of str -> np.ndarray
        Gradients aligned with `params`.
    state : OptimizerState
        Moments and hyperparameters; `step_count` is incremented.
    lr : float or dict of str -> float
        A single learning rate, or one per group name.

    Returns
    -------
    params : dict of str -> Tensor
    state : OptimizerState

    """
    if set(grads) != set(state.first_moment):
        missing = sorted(set(state.first_moment) ^ set(grads))
        msg = f"gradients do not match the optimiser parameters: {missing}"
        raise ValueError(msg)
    for name, grad in grads.items():
        if np.shape(grad) != params[name].shape:
            msg = (f"gradient shape {np.shape(grad)} does not match parameter "
                   f"'{name}' of shape {params[name].shape}")
            raise ValueError(msg)
    rates = {name: lr[state.groups[name]] if isinstance(lr, dict) else lr for name in grads}
    if any(rate < 0 for rate in rates.values()):
        raise ValueError("learning rate must be non-negative")

    state.step_count += 1
    t = state.step_count
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t

    for name, grad in grads.items():
        rate = rates[name]
        param = params[name]
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad

        if state.weight_decay != 0:
            param.data *= 1.0 - rate * state.weight_decay
        denom = np.sqrt(v / correction2) + state.eps
        param.data -= (rate / correction1) * m / denom
    return params, state


@dataclass(frozen=True)
class LrSchedule:
    """
    Linear warmup from 0 followed by cosine decay to a floor.

    Attributes
    ----------
    base_lr : float
        Peak learning rate, reached at the end of warmup.
    total_steps : int
        Length of the schedule.
    warmup_fraction : float
        Share of `total_steps` spent warming up, in (0, 1).
        Default: 0.2
    min_lr_fraction : float
        Final learning rate as a fraction of `base_lr`, in (0, 1].
        Default: 0.01

    """
    base_lr: float
    total_steps: int
    warmup_fraction: float = 0.2
    min_lr_fraction: float = 0.01

    def __post_init__(self):
        problems = []
        if not self.base_lr > 0:
            problems.append("base_lr must be positive")
        if not (isinstance(self.total_steps, int) and self.total_steps > 0):
            problems.append("total_steps must be a positive integer")
        if not 0 < self.warmup_fraction < 1:
            problems.append("warmup_fraction must lie in (0, 1)")
        if not 0 < self.min_lr_fraction <= 1:
            problems.append("min_lr_fraction must lie in (0, 1]")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def warmup_steps(self):
        steps = self.warmup_fraction * self.total_steps
        # 0.2 * 100 must land exactly on step 20
        if abs(steps - round(steps)) < 1e-9:
            steps = float(round(steps))
        return steps


def lr_at(step, sched):
    """
    The learning rate at an optimisation step.

    Parameters
    ----------
    step : int
        0 <= step <= sched.total_steps.
    sched : LrSchedule

    Returns
    -------
    lr : float

    Example
    -------
    >>> sched = LrSchedule(5e-4, 100)
    >>> lr_at(0, sched), lr_at(20, sched)
    (0.0, 0.0005)

    """
    if not 0 <= step <= sched.total_steps:
        msg = f"step {step} outside the schedule range [0, {sched.total_steps}]"
        raise ValueError(msg)

    warmup = sched.warmup_steps
    if step < warmup:
        return sched.base_lr * step / warmup

    min_lr = sched.min_lr_fraction * sched.base_lr
    progress = (step - warmup) / (sched.total_steps - warmup)
    return min_lr + (sched.base_lr - min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))
