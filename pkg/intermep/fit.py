"""
FIT
---
Fitting the sarcasm detector: the joint-loss training loop with two-group
AdamW under a shared warmup + cosine schedule, and the ablation variants.

Only the adapter parts are trained when the backbone is frozen: the
classification and projection heads, the adapting and gated projections
with their gate scalars, and the LoRA factors.

"""

__all__ = [
    'ABLATION_VARIANTS',
    'AblationResult',
    'StepRecord',
    'TrainConfig',
    'TrainRun',
    'ablate',
    'ablation_config',
    'train',
    ]

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from intermep import maths
from intermep import metrics as mt
from intermep import tensor as tn
from intermep.losses import loss_bce, loss_joint, loss_proj
from intermep.model import SarcasmDetector
from intermep.optim import LrSchedule, OptimizerState, adamw_step, lr_at
from intermep.sampling import batches

log = logging.getLogger(__name__)

ABLATION_VARIANTS = ("baseline", "wo_proj", "wo_mep", "wo_lora")


@dataclass(frozen=True)
class TrainConfig:
    """
    Optimisation settings.

    Attributes
    ----------
    epochs : int
        Default: 3
    batch_size : int
        Default: 64
    lr : float
        Base rate of every trainable parameter except LoRA factors.
        Default: 5e-4
    lora_lr : float
        Base rate of the LoRA factors. Default: 1e-4
    warmup_fraction, min_lr_fraction : float
        Schedule shape. Default: 0.2, 0.01
    weight_decay, beta1, beta2, eps : float
        AdamW settings. Default: 0.01, 0.9, 0.999, 1e-8
    seed : int
        Seeds the initialisation and the batch order. Default: 0

    """
    epochs: int = 3
    batch_size: int = 64
    lr: float = 5e-4
    lora_lr: float = 1e-4
    warmup_fraction: float = 0.2
    min_lr_fraction: float = 0.01
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def validate(self):
        problems = []
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.lr <= 0 or self.lora_lr <= 0:
            problems.append("learning rates must be positive")
        if not 0 < self.warmup_fraction < 1:
            problems.append("warmup_fraction must lie in (0, 1)")
        if not 0 < self.min_lr_fraction <= 1:
            problems.append("min_lr_fraction must lie in (0, 1]")
        if self.weight_decay < 0:
            problems.append("weight_decay must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            problems.append("AdamW betas must lie in [0, 1)")
        if self.eps <= 0:
            problems.append("AdamW eps must be positive")
        return problems


@dataclass(frozen=True)
class StepRecord:
    step: int
    epoch: int
    loss_cls: float
    loss_proj: float
    loss: float
    lr: float
    lora_lr: float


@dataclass
class TrainRun:
    """
    Everything a training run produced.

    Attributes
    ----------
    model_config : ModelConfig
    train_config : TrainConfig
    detector : SarcasmDetector
        The model at the end of training.
    steps : list of StepRecord
    epoch_losses : list of float
        Mean joint loss per epoch.
    val_accuracy : list of float
        Classifier-only validation accuracy after each epoch.
    parameter_counts : dict

    """
    model_config: object
    train_config: TrainConfig
    detector: SarcasmDetector
    steps: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    parameter_counts: dict = field(default_factory=dict)

    @property
    def losses(self):
        return np.array([s.loss for s in self.steps])

    def smoothed_losses(self, window=10):
        """Moving mean of the per-step joint loss."""
        losses = self.losses
        if len(losses) == 0:
            return losses
        return maths.moving_mean(losses, min(window, len(losses)))

    def summary(self):
        """JSON-ready digest for run manifests."""
        return {
            "train_config": asdict(self.train_config),
            "model_config": self.model_config.to_dict(),
            "n_steps": len(self.steps),
            "epoch_losses": list(self.epoch_losses),
            "val_accuracy": list(self.val_accuracy),
            "parameter_counts": dict(self.parameter_counts),
            "final_loss": self.steps[-1].loss if self.steps else None,
        }


def train(model_config, train_config, train_set, val_set=None):
    """
    Trains a fresh detector by minimising the joint loss.

    Step s (0-based) runs at ``lr_at(s + 1)`` of each group's schedule.

    Parameters
    ----------
    model_config : ModelConfig
    train_config : TrainConfig
    train_set : intermep.data.Dataset
        Fully labelled.
    val_set : intermep.data.Dataset or None, optional
        Labelled; classifier-only accuracy is recorded after each epoch.

    Returns
    -------
    run : TrainRun

    Raises
    ------
    ValueError
        If a training sample has no label or the settings are invalid.

    """
    problems = train_config.validate()
    if problems:
        raise ValueError("; ".join(problems))
    if not train_set.is_labeled:
        raise ValueError(f"training set '{train_set.provenance}' contains unlabeled samples")
    if len(train_set) == 0 and train_config.epochs > 0:
        raise ValueError("cannot train on an empty dataset")

    detector = SarcasmDetector(model_config, train_set.vocab, seed=train_config.seed)
    counts = detector.parameter_counts()
    log.info("trainable parameters: %d of %d", counts["trainable"], counts["total"])
    run = TrainRun(model_config, train_config, detector, parameter_counts=counts)

    steps_per_epoch = math.ceil(len(train_set) / train_config.batch_size)
    total_steps = train_config.epochs * steps_per_epoch
    if total_steps == 0:
        return run

    params = detector.trainable_parameters()
    state = OptimizerState.create(params, lr=train_config.lr, lora_lr=train_config.lora_lr,
                                  beta1=train_config.beta1, beta2=train_config.beta2,
                                  eps=train_config.eps, weight_decay=train_config.weight_decay)
    schedules = {
        "default": LrSchedule(train_config.lr, total_steps, train_config.warmup_fraction,
                              train_config.min_lr_fraction),
        "lora": LrSchedule(train_config.lora_lr, total_steps, train_config.warmup_fraction,
                           train_config.min_lr_fraction),
    }

    step = 0
    for epoch in range(train_config.epochs):
        epoch_total = 0.0
        for chunk in batches(train_set, train_config.batch_size, seed=train_config.seed,
                             shuffle=True, epoch=epoch):
            batch = detector.encode_batch(chunk)
            output = detector.forward(batch)
            l_cls = loss_bce(output.probs, batch.labels)
            l_proj = loss_proj(output.features, batch.labels) if output.features is not None else None
            loss = loss_joint(l_cls, l_proj)

            grads = tn.backward(loss, params)
            rates = {group: lr_at(step + 1, sched) for group, sched in schedules.items()}
            adamw_step(params, grads, state, rates)

            record = StepRecord(step, epoch, l_cls.item(), l_proj.item() if l_proj is not None else 0.0,
                                loss.item(), rates["default"], rates["lora"])
            run.steps.append(record)
            epoch_total += record.loss
            log.debug("step %d: loss=%.5f (cls %.5f, proj %.5f) lr=%.2e",
                      step, record.loss, record.loss_cls, record.loss_proj, record.lr)
            step += 1

        run.epoch_losses.append(epoch_total / steps_per_epoch)
        message = f"epoch {epoch + 1}/{train_config.epochs}: mean loss {run.epoch_losses[-1]:.4f}"
        if val_set is not None and len(val_set):
            accuracy = mt.evaluate(detector, val_set, batch_size=train_config.batch_size).accuracy
            run.val_accuracy.append(accuracy)
            message += f", val acc {accuracy:.4f}"
        log.info(message)
    return run


def ablation_config(variant, model_config):
    """
    The model configuration of an ablation variant.

    ``wo_proj`` drops the projection head, ``wo_lora`` removes every LoRA
    factor; ``baseline`` and ``wo_mep`` train the full model.

    """
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"unknown ablation variant {variant!r}; choose from {ABLATION_VARIANTS}")
    if variant == "wo_proj":
        return replace(model_config, use_projection=False)
    if variant == "wo_lora":
        return replace(model_config, lora_rank=0, lora_targets=())
    return model_config


@dataclass
class AblationResult:
    variant: str
    report: mt.MetricsReport
    run: TrainRun


def ablate(variant, model_config, train_config, train_set, test_set, val_set=None,
           memory_size=64, normalize=False):
    """
    Trains and evaluates one ablation variant.

    ``baseline`` and ``wo_lora`` are evaluated with the memory-enhanced
    predictor; ``wo_proj`` and ``wo_mep`` with the classifier alone.

    Returns
    -------
    result : AblationResult

    """
    config = ablation_config(variant, model_config)
    run = train(config, train_config, train_set, val_set)
    use_mep = variant in ("baseline", "wo_lora")
    report = mt.evaluate(run.detector, test_set, use_mep=use_mep,
                         memory_size=memory_size if use_mep else None,
                         normalize=normalize, batch_size=train_config.batch_size)
    log.info("ablation %s: acc=%.4f f1=%.4f", variant, report.accuracy, report.f1)
    return AblationResult(variant, report, run)
