"""
METRICS
-------
Classification metrics, evaluation of a detector with and without the
memory-enhanced predictor, memory-size sweeps and single-feature probes.

"""

__all__ = [
    'MetricsReport',
    'ProbeResult',
    'SweepResult',
    'evaluate',
    'evaluate_outputs',
    'format_table',
    'metrics',
    'predict_outputs',
    'sweep_memory',
    'unimodal_probe',
    ]

import io as _stdio
import logging
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import optimize, special

from intermep import io
from intermep import tensor as tn
from intermep.data import NEGATIVE_WORDS, POSITIVE_WORDS
from intermep.mep import mep_run
from intermep.sampling import batches

log = logging.getLogger(__name__)

CLASSIFIER = "classifier"


@dataclass(frozen=True)
class MetricsReport:
    """
    Accuracy, precision, recall and F1 with sarcastic as the positive class.

    Precision and recall are 0 when their denominators are 0; F1 is 0 when
    precision + recall is 0.

    """
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    mode: str = CLASSIFIER
    memory_size: Optional[int] = None

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self):
        return asdict(self)


def _ratio(num, den):
    return num / den if den > 0 else 0.0


def metrics(predictions, labels, mode=CLASSIFIER, memory_size=None):
    """
    Builds a MetricsReport from predicted and true labels.

    Parameters
    ----------
    predictions, labels : array-like of int
        Equal length, values in {0, 1}.
    mode : str, optional
        Tag stored in the report.
    memory_size : int or None, optional

    Returns
    -------
    report : MetricsReport

    Raises
    ------
    ValueError
        On empty input, unequal lengths or non-binary values.

    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        msg = f"predictions {predictions.shape} and labels {labels.shape} must be equal-length vectors"
        raise ValueError(msg)
    if predictions.size == 0:
        raise ValueError("cannot compute metrics of an empty evaluation set")
    for name, values in (("predictions", predictions), ("labels", labels)):
        if not np.all((values == 0) | (values == 1)):
            raise ValueError(f"{name} must be 0 or 1")

    tp = int(np.sum((predictions == 1) & (labels == 1)))
    fp = int(np.sum((predictions == 1) & (labels == 0)))
    tn = int(np.sum((predictions == 0) & (labels == 0)))
    fn = int(np.sum((predictions == 0) & (labels == 1)))
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2.0 * precision * recall, precision + recall)
    accuracy = (tp + tn) / predictions.size
    return MetricsReport(accuracy, precision, recall, f1, tp, fp, tn, fn, mode, memory_size)


def predict_outputs(detector, dataset, batch_size=64):
    """
    Classifier probabilities and projection features in dataset order.

    Returns
    -------
    probs : np.ndarray
        (N, 2) float64.
    features : np.ndarray or None
        (N, d_f) float64, None without a projection head.

    """
    probs, features = [], []
    with tn.no_grad():
        for chunk in batches(dataset, batch_size):
            output = detector.forward(detector.encode_batch(chunk))
            probs.append(output.probs.data.astype(np.float64))
            if output.features is not None:
                features.append(output.features.data.astype(np.float64))
    if not probs:
        return np.zeros((0, 2)), None
    probs = np.concatenate(probs)
    features = np.concatenate(features) if features else None
    return probs, features


def _renormalise(features):
    # float32 rows are unit only to ~1e-7; restore exact unit length in float64
    return features / np.sqrt(np.sum(features * features, axis=1, keepdims=True))


def evaluate_outputs(probs, features, labels, use_mep=False, memory_size=None,
                     normalize=False, d_f=None):
    """
    Metrics from precomputed classifier outputs.

    Parameters
    ----------
    probs : np.ndarray
        (N, 2).
    features : np.ndarray or None
        (N, d_f); required with `use_mep`.
    labels : array-like of int
    use_mep : bool, optional
        Default: False
    memory_size : int or None, optional
        Required with `use_mep`.
    normalize : bool, optional
        Mean instead of summed similarities in the MEP.
    d_f : int or None, optional
        Expected feature width.

    Returns
    -------
    report : MetricsReport

    """
    if not use_mep:
        predictions = np.where(probs[:, 1] > probs[:, 0], 1, 0)
        return metrics(predictions, labels)

    if features is None:
        raise ValueError("MEP evaluation needs projection features; the model has no projection head")
    if memory_size is None:
        raise ValueError("MEP evaluation needs a memory size")
    if d_f is not None and features.shape[1] != d_f:
        raise ValueError(f"d_f mismatch: features have width {features.shape[1]}, expected {d_f}")
    features = _renormalise(features)
    stream = zip(probs / probs.sum(axis=1, keepdims=True), features)
    predictions = [p.final_label for p in mep_run(stream, memory_size, features.shape[1], normalize)]
    return metrics(predictions, labels, mode=f"mep(L={memory_size})", memory_size=memory_size)


def evaluate(detector, dataset, use_mep=False, memory_size=None, normalize=False,
             batch_size=64, d_f=None):
    """
    Evaluates a detector on a labelled dataset.

    In classifier-only mode every sample is labelled by the argmax of its
    classifier probabilities (ties go to non-sarcastic). In MEP mode the
    samples stream through the memory in dataset order.

    Returns
    -------
    report : MetricsReport

    """
    labels = dataset.labels
    probs, features = predict_outputs(detector, dataset, batch_size)
    report = evaluate_outputs(probs, features, labels, use_mep, memory_size, normalize, d_f)
    log.info("%s on %s: acc=%.4f f1=%.4f", report.mode, dataset.provenance,
             report.accuracy, report.f1)
    return report


@dataclass(frozen=True)
class SweepResult:
    """
    One MEP evaluation per candidate memory size.

    Attributes
    ----------
    rows : tuple of MetricsReport
        In candidate order.
    best_memory_size : int
        Highest accuracy; ties go to the smallest L.
    split : str
        Name of the stream the sweep ran on.
    leaks_labels : bool
        True when the best L was picked on the test stream.

    """
    rows: tuple
    best_memory_size: int
    split: str = "val"
    leaks_labels: bool = False

    @property
    def best(self):
        return next(r for r in self.rows if r.memory_size == self.best_memory_size)

    def to_dict(self):
        return {"split": self.split, "leaks_labels": self.leaks_labels,
                "best_memory_size": self.best_memory_size,
                "rows": [r.to_dict() for r in self.rows]}


def sweep_memory(detector, dataset, candidates, normalize=False, batch_size=64,
                 split="val", outputs=None):
    """
    Runs MEP evaluation for every candidate memory size.

    The classifier outputs are computed once and streamed in the same
    order for every candidate.

    Parameters
    ----------
    detector : SarcasmDetector
    dataset : intermep.data.Dataset
    candidates : sequence of int
        Non-empty; every entry >= 1.
    split : str, optional
        "val" or "test"; a sweep on "test" is flagged as leaking labels.
    outputs : tuple or None, optional
        Precomputed ``(probs, features)``.

    Returns
    -------
    result : SweepResult

    """
    candidates = [int(c) for c in candidates]
    if not candidates:
        raise ValueError("memory sweep needs at least one candidate")
    labels = dataset.labels
    probs, features = outputs if outputs is not None else predict_outputs(detector, dataset, batch_size)
    rows = tuple(evaluate_outputs(probs, features, labels, True, size, normalize)
                 for size in candidates)
    best = min(rows, key=lambda r: (-r.accuracy, r.memory_size)).memory_size
    for row in rows:
        log.info("sweep %s L=%-5d acc=%.4f f1=%.4f", split, row.memory_size, row.accuracy, row.f1)
    return SweepResult(rows, best, split, leaks_labels=(split == "test"))


TABLE_HEADER = ("mode", "acc", "precision", "recall", "f1", "tp", "fp", "tn", "fn")


def format_table(reports, best_memory_size=None):
    """
    Renders reports as an aligned plain-text table.

    A ``*`` marks the row of `best_memory_size`.

    """
    buffer = _stdio.StringIO()
    io.write_row(buffer, TABLE_HEADER)
    for report in reports:
        mark = "*" if best_memory_size is not None and report.memory_size == best_memory_size else ""
        io.write_row(buffer, [report.mode + mark, report.accuracy, report.precision,
                              report.recall, report.f1, report.tp, report.fp,
                              report.tn, report.fn])
    return buffer.getvalue()


def _probe_feature(sample, modality):
    if modality == "text":
        words = sample.text.split()
        return sum(w in POSITIVE_WORDS for w in words) - sum(w in NEGATIVE_WORDS for w in words)
    if modality == "image":
        return float(np.mean(sample.image))
    raise ValueError(f"unknown modality {modality!r}; use 'text' or 'image'")


@dataclass(frozen=True)
class ProbeResult:
    modality: str
    accuracy: float
    weight: float
    bias: float


def unimodal_probe(dataset, modality, train_fraction=0.5):
    """
    Fits a one-feature logistic regression on a single modality.

    The text feature is the number of positive minus negative lexicon
    words; the image feature is the mean brightness. The first
    `train_fraction` of the samples fit the probe, the rest measure its
    accuracy.

    Returns
    -------
    result : ProbeResult

    """
    labels = dataset.labels.astype(np.float64)
    x = np.array([_probe_feature(s, modality) for s in dataset], dtype=np.float64)
    n_train = int(round(train_fraction * len(x)))
    if n_train < 1 or n_train >= len(x):
        raise ValueError("the probe needs samples on both sides of the split")
    mu, sigma = x[:n_train].mean(), x[:n_train].std() or 1.0
    z = (x - mu) / sigma

    def nll(theta):
        logits = theta[0] * z[:n_train] + theta[1]
        return np.mean(np.logaddexp(0.0, logits) - labels[:n_train] * logits)

    def grad(theta):
        residual = special.expit(theta[0] * z[:n_train] + theta[1]) - labels[:n_train]
        return np.array([np.mean(residual * z[:n_train]), np.mean(residual)])

    fit = optimize.minimize(nll, x0=np.zeros(2), jac=grad, method="BFGS")
    held_out = special.expit(fit.x[0] * z[n_train:] + fit.x[1]) > 0.5
    accuracy = float(np.mean(held_out == (labels[n_train:] == 1)))
    return ProbeResult(modality, accuracy, float(fit.x[0]), float(fit.x[1]))
