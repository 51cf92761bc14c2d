"""
MEP
---
The memory-enhanced predictor: a streaming, non-parametric classifier on
top of the detector's classifier probabilities and projection features.

For every incoming sample the classifier's argmax routes the projection
feature into one of two fixed-capacity channels (0 = non-sarcastic,
1 = sarcastic). Once a channel is full it only admits a sample whose
prediction entropy is strictly lower than the highest entropy it holds,
which is then evicted. The final prediction is a softmax over the summed
cosine similarities between the sample and each channel, computed after the
sample has been stored.

:func:`mep_oracle` re-derives the same predictions with a different
structure (record lists and a full re-sort per step) and is used to verify
:func:`mep_run`.

"""

__all__ = [
    'MemoryState',
    'MepPrediction',
    'StreamRecord',
    'entropy',
    'load_stream',
    'mep_oracle',
    'mep_run',
    'mep_step',
    'write_predictions',
    ]

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from intermep import io
from intermep import maths

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
UNIT_TOLERANCE = 1e-5


def entropy(probs):
    """
    Shannon entropy (natural log) of a probability pair.

    Probabilities are clamped to [1e-7, 1 - 1e-7] first, so the result is
    finite and lies in [0, ln 2].

    Parameters
    ----------
    probs : array-like
        Two non-negative entries summing to 1 within 1e-6.

    Returns
    -------
    c : float

    Example
    -------
    >>> round(entropy([0.9, 0.1]), 6)
    0.325083

    """
    probs = _probability_pair(probs)
    value = float(np.sum(special.entr(maths.clamp_probabilities(probs))))
    return min(max(value, 0.0), LN2)


def _probability_pair(probs):
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (2,):
        raise ValueError(f"expected a probability pair, got shape {probs.shape}")
    maths.check_finite(probs, "probabilities")
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-6:
        raise ValueError(f"invalid probability pair {probs.tolist()}")
    return probs


def _unit_feature(feature, d_f):
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape != (d_f,):
        raise ValueError(f"feature width {feature.shape} does not match d_f={d_f}")
    maths.check_finite(feature, "feature")
    norm = math.sqrt(math.fsum(feature * feature))
    if abs(norm - 1.0) > UNIT_TOLERANCE:
        raise ValueError(f"feature must have unit norm, got {norm:.6f}")
    return feature


def _argmax_pair(pair):
    """Index of the larger entry; ties go to 0."""
    return 0 if pair[0] >= pair[1] else 1


def _channel_logit(rows, feature, normalize):
    # fsum of per-row dot products does not depend on the row order.
    if len(rows) == 0:
        return 0.0
    total = math.fsum((np.asarray(rows) * feature).sum(axis=1))
    return total / len(rows) if normalize else total


@dataclass
class MemoryState:
    """
    The dual-channel memory.

    Attributes
    ----------
    capacity : int
        Rows per channel, L >= 1.
    d_f : int
        Feature width.
    memory : np.ndarray
        (2, L, d_f) stored features; rows past `fill[c]` are unused.
    fill : np.ndarray
        (2,) number of filled rows per channel.
    entropies : np.ndarray
        (2, L) entropy of each stored row.
    samples_seen : int

    """
    capacity: int
    d_f: int
    memory: np.ndarray
    fill: np.ndarray
    entropies: np.ndarray
    samples_seen: int = 0

    @classmethod
    def create(cls, capacity, d_f):
        if not isinstance(capacity, (int, np.integer)) or capacity < 1:
            raise ValueError(f"memory size must be an integer >= 1, got {capacity!r}")
        if d_f < 1:
            raise ValueError(f"d_f must be >= 1, got {d_f}")
        return cls(int(capacity), int(d_f), np.zeros((2, capacity, d_f)),
                   np.zeros(2, dtype=np.int64), np.zeros((2, capacity)))

    def channel(self, label):
        """Stored (features, entropies) of one channel."""
        n = self.fill[label]
        return self.memory[label, :n], self.entropies[label, :n]


@dataclass(frozen=True)
class MepPrediction:
    pseudo_label: int
    entropy: float
    classifier_probs: tuple
    final_probs: tuple
    final_label: int

    def to_record(self):
        return {
            "pseudo_label": self.pseudo_label,
            "entropy": self.entropy,
            "probs": list(self.classifier_probs),
            "final_probs": list(self.final_probs),
            "prediction": self.final_label,
        }


def _predict(probs, pseudo_label, c, logits):
    final = maths.softmax(np.asarray(logits, dtype=np.float64))
    return MepPrediction(pseudo_label, c, tuple(float(p) for p in probs),
                         tuple(float(p) for p in final), _argmax_pair(final))


def mep_step(state, probs, feature, normalize=False):
    """
    Routes one sample into memory, then predicts it.

    Parameters
    ----------
    state : MemoryState
        Updated in place.
    probs : array-like
        Classifier probability pair.
    feature : array-like
        Unit projection feature of width ``state.d_f``.
    normalize : bool, optional
        Average the similarities per channel instead of summing them.
        Default: False

    Returns
    -------
    prediction : MepPrediction

    Raises
    ------
    ValueError
        On a non-unit feature, a width mismatch or an invalid pair.

    """
    probs = _probability_pair(probs)
    feature = _unit_feature(feature, state.d_f)
    label = _argmax_pair(probs)
    c = entropy(probs)

    filled = state.fill[label]
    if filled < state.capacity:
        state.memory[label, filled] = feature
        state.entropies[label, filled] = c
        state.fill[label] += 1
    else:
        worst = int(np.argmax(state.entropies[label]))
        if c < state.entropies[label, worst]:
            state.memory[label, worst] = feature
            state.entropies[label, worst] = c
    state.samples_seen += 1

    logits = [_channel_logit(state.channel(ch)[0], feature, normalize) for ch in (0, 1)]
    return _predict(probs, label, c, logits)


def mep_run(stream, capacity, d_f, normalize=False, state=None):
    """
    Folds :func:`mep_step` over a stream of (probs, feature) pairs.

    Parameters
    ----------
    stream : iterable of (array-like, array-like)
    capacity : int
        Memory size L.
    d_f : int
    normalize : bool, optional
        Default: False
    state : MemoryState or None, optional
        Continue from an existing memory instead of an empty one.

    Returns
    -------
    predictions : list of MepPrediction
        One per stream item, in order.

    """
    if state is None:
        state = MemoryState.create(capacity, d_f)
    predictions = [mep_step(state, probs, feature, normalize) for probs, feature in stream]
    log.debug("MEP processed %d samples (L=%d, fill=%s)", len(predictions),
              state.capacity, state.fill.tolist())
    return predictions


def mep_oracle(stream, capacity, d_f, normalize=False):
    """
    Independent re-derivation of :func:`mep_run`.

    Every channel is a list of records (entropy, slot, arrival, feature).
    A full channel re-sorts its records by (-entropy, slot) to find the
    eviction candidate; the newcomer takes over that slot only with a
    strictly lower entropy. Votes are taken over the records in arrival
    order.

    Without tied entropies a channel always holds the L lowest entropies
    routed to it, but that selection cannot stand in for this one: among
    tied maxima the record in the first slot is dropped, and slots are
    recycled by earlier evictions, so which tied record survives depends
    on the eviction history rather than on entropy and arrival alone.
    The records therefore carry their slot.

    Returns
    -------
    predictions : list of MepPrediction

    """
    if capacity < 1:
        raise ValueError(f"memory size must be an integer >= 1, got {capacity!r}")
    channels = ([], [])
    predictions = []
    for arrival, (probs, feature) in enumerate(stream):
        probs = _probability_pair(probs)
        feature = _unit_feature(feature, d_f)
        label = _argmax_pair(probs)
        c = entropy(probs)

        records = channels[label]
        if len(records) < capacity:
            records.append((c, len(records), arrival, feature))
        else:
            ranked = sorted(records, key=lambda record: (-record[0], record[1]))
            candidate = ranked[0]
            if c < candidate[0]:
                records.remove(candidate)
                records.append((c, candidate[1], arrival, feature))

        logits = []
        for ch in (0, 1):
            by_arrival = sorted(channels[ch], key=lambda record: record[2])
            logits.append(_channel_logit([record[3] for record in by_arrival], feature, normalize))
        predictions.append(_predict(probs, label, c, logits))
    return predictions


@dataclass(frozen=True)
class StreamRecord:
    """One line of an embedding-stream replay file."""
    id: str
    probs: tuple
    feature: np.ndarray
    label: Optional[int] = None


def load_stream(path, d_f=None):
    """
    Reads an embedding-stream JSONL file.

    Each line is ``{"id": str, "probs": [p0, p1], "feature": [...],
    "label": 0 | 1 (optional)}``.

    Parameters
    ----------
    path : str
    d_f : int or None, optional
        Expected feature width; taken from the first record if None.

    Returns
    -------
    records : list of StreamRecord

    Raises
    ------
    ValueError
        Naming the line number of a malformed record.

    """
    records = []
    for line_no, raw in io.read_jsonl(path):
        try:
            if not isinstance(raw, dict):
                raise ValueError("record must be a JSON object")
            missing = [key for key in ("id", "probs", "feature") if key not in raw]
            if missing:
                raise ValueError(f"missing field(s) {missing}")
            probs = _probability_pair(raw["probs"])
            feature = np.asarray(raw["feature"], dtype=np.float64)
            if feature.ndim != 1:
                raise ValueError("'feature' must be a flat list of numbers")
            if d_f is None:
                d_f = feature.shape[0]
            feature = _unit_feature(feature, d_f)
            label = raw.get("label")
            if label is not None and (isinstance(label, bool) or label not in (0, 1)):
                raise ValueError(f"'label' must be 0 or 1, got {label!r}")
        except (TypeError, ValueError, maths.NonFiniteError) as err:
            raise ValueError(f"{path}: line {line_no}: {err}") from None
        records.append(StreamRecord(str(raw["id"]), tuple(probs.tolist()), feature, label))
    return records


def write_predictions(path, ids, predictions):
    """Writes one JSON object per prediction, keyed by sample id."""
    io.write_jsonl(path, ({"id": sample_id, **prediction.to_record()}
                          for sample_id, prediction in zip(ids, predictions)))
