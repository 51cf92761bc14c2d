"""
DATA
----
Samples, vocabularies and datasets, the synthetic incongruity (XOR)
generator, and JSONL loading and saving.

In a synthetic sample the text carries a hidden sentiment bit and the
image a hidden brightness bit; the sample is sarcastic exactly when the
two disagree, so neither modality alone predicts the label.

"""

__all__ = [
    'BOS',
    'Dataset',
    'EOS',
    'FILLER_WORDS',
    'NEGATIVE_WORDS',
    'PAD',
    'POSITIVE_WORDS',
    'SHORTCUT_WORD',
    'SamplePair',
    'SynthSpec',
    'UNK',
    'Vocab',
    'gen_synthetic',
    'load_jsonl',
    'save_jsonl',
    ]

from collections.abc import Mapping
from dataclasses import dataclass
from typing import Optional

import numpy as np

from intermep import io
from intermep.utils import get_rng_from_seed

PAD = "<pad>"
BOS = "<bos>"
EOS = "<eos>"
UNK = "<unk>"
SPECIAL_TOKENS = (PAD, BOS, EOS, UNK)

POSITIVE_WORDS = (
    "great", "love", "wonderful", "amazing", "happy", "perfect", "brilliant", "fantastic",
    "awesome", "delightful", "lovely", "superb", "excellent", "glorious", "cheerful", "best",
)
NEGATIVE_WORDS = (
    "awful", "hate", "terrible", "horrible", "sad", "broken", "worst", "miserable",
    "dreadful", "gloomy", "ugly", "boring", "disaster", "painful", "annoying", "nasty",
)
FILLER_WORDS = (
    "the", "a", "today", "this", "weather", "my", "day", "morning",
    "is", "so", "just", "really", "again", "at", "work", "traffic",
    "coffee", "with", "monday", "weekend", "train", "office", "lunch", "view",
    "outside", "here", "now", "what", "such", "very", "our", "trip",
)
SHORTCUT_WORD = "lol"

BRIGHT_LEVEL = 0.8
DARK_LEVEL = 0.2
BRIGHTNESS_JITTER = 0.1


class Vocab(Mapping):
    """
    An immutable token -> id map whose first entries are the special
    tokens ``<pad>``, ``<bos>``, ``<eos>`` and ``<unk>``.

    Parameters
    ----------
    tokens : sequence of str
        Tokens in id order. Missing special tokens are prepended.

    """
    def __init__(self, tokens):
        ordered = [t for t in SPECIAL_TOKENS if t not in tokens] + list(tokens)
        if len(set(ordered)) != len(ordered):
            raise ValueError("vocabulary tokens must be unique")
        self._tokens = tuple(ordered)
        self._index = {token: idx for idx, token in enumerate(self._tokens)}

    @classmethod
    def build(cls, texts):
        """A vocabulary of the specials plus every whitespace token in `texts`, sorted."""
        words = set()
        for text in texts:
            words.update(text.split())
        return cls(list(SPECIAL_TOKENS) + sorted(words - set(SPECIAL_TOKENS)))

    @classmethod
    def load(cls, path):
        """Reads a vocab file: one token per line, line number = id."""
        with open(path, "r", encoding="utf-8") as file_object:
            return cls([line.rstrip("\n") for line in file_object if line.rstrip("\n")])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as file_object:
            for token in self._tokens:
                file_object.write(f"{token}\n")

    @property
    def tokens(self):
        return self._tokens

    def lookup(self, token):
        """The id of `token`, or the ``<unk>`` id."""
        return self._index.get(token, self._index[UNK])

    def __getitem__(self, token):
        return self._index[token]

    def __iter__(self):
        return iter(self._tokens)

    def __len__(self):
        return len(self._tokens)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self._tokens == other._tokens

    def __hash__(self):
        return hash(self._tokens)


@dataclass(eq=False)
class SamplePair:
    """
    One text-image pair with an optional label (1 = sarcastic).

    """
    id: str
    text: str
    image: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.image.ndim != 2 or self.image.shape[0] != self.image.shape[1]:
            msg = f"sample '{self.id}': image must be square, got shape {self.image.shape}"
            raise ValueError(msg)
        if not np.all(np.isfinite(self.image)) or self.image.min() < 0.0 or self.image.max() > 1.0:
            msg = f"sample '{self.id}': image values must lie in [0, 1]"
            raise ValueError(msg)
        if self.label is not None:
            if self.label not in (0, 1):
                msg = f"sample '{self.id}': label must be 0 or 1, got {self.label!r}"
                raise ValueError(msg)
            self.label = int(self.label)

    def to_record(self):
        record = {"id": self.id, "text": self.text, "image": self.image.tolist()}
        if self.label is not None:
            record["label"] = self.label
        return record

    @classmethod
    def from_record(cls, record, image_side=None):
        """
        Builds a sample from a decoded JSONL object.

        Raises
        ------
        ValueError
            On missing fields, wrong types or a wrong image size.

        """
        if not isinstance(record, dict):
            raise ValueError("record must be a JSON object")
        for key in ("id", "text", "image"):
            if key not in record:
                raise ValueError(f"missing field '{key}'")
        extra = set(record) - {"id", "text", "image", "label"}
        if extra:
            raise ValueError(f"unexpected field(s) {sorted(extra)}")
        if not isinstance(record["id"], str) or not isinstance(record["text"], str):
            raise ValueError("'id' and 'text' must be strings")
        try:
            image = np.asarray(record["image"], dtype=np.float64)
        except (TypeError, ValueError):
            raise ValueError("'image' must be a list of rows of numbers") from None
        if image_side is not None and image.shape != (image_side, image_side):
            msg = f"image dimension mismatch: expected {image_side}x{image_side}, got {image.shape}"
            raise ValueError(msg)
        label = record.get("label")
        if label is not None and (isinstance(label, bool) or label not in (0, 1)):
            raise ValueError(f"'label' must be 0 or 1, got {label!r}")
        return cls(record["id"], record["text"], image, label)


@dataclass(eq=False)
class Dataset:
    """
    An ordered, immutable collection of samples with its vocabulary.

    Attributes
    ----------
    samples : list of SamplePair
    vocab : Vocab
    provenance : str
        Where the samples came from (a path or a generator seed).

    """
    samples: list
    vocab: Vocab
    provenance: str = ""

    def __post_init__(self):
        self.samples = list(self.samples)
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValueError("sample ids must be unique within a dataset")
        missing = [t for t in (BOS, EOS, UNK) if t not in self.vocab]
        if missing:
            raise ValueError(f"vocabulary lacks special tokens {missing}")

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, idx):
        return self.samples[idx]

    @property
    def is_labeled(self):
        return all(s.label is not None for s in self.samples)

    @property
    def labels(self):
        """The labels as an int array. Raises ValueError if any sample is unlabeled."""
        if not self.is_labeled:
            raise ValueError(f"dataset '{self.provenance}' contains unlabeled samples")
        return np.array([s.label for s in self.samples], dtype=int)

    def subset(self, indices, provenance=None):
        return Dataset([self.samples[i] for i in indices], self.vocab,
                       provenance if provenance is not None else self.provenance)

    def label_counts(self):
        """(non-sarcastic, sarcastic, unlabeled) counts."""
        labels = [s.label for s in self.samples]
        return labels.count(0), labels.count(1), labels.count(None)


@dataclass(frozen=True)
class SynthSpec:
    """
    Settings of the synthetic incongruity dataset.

    Attributes
    ----------
    n_samples : int
        Number of samples, >= 1.
    seed : int
        Generator seed. Default: 0
    text_noise : float
        Probability of one distractor word from the opposite lexicon.
        Default: 0.0
    image_noise : float
        Per-pixel flip (v -> 1 - v) probability. Default: 0.0
    image_side, patch_size : int
        Image geometry. Default: 32, 8
    shortcut : float
        Probability of appending a marker word to sarcastic texts.
        Default: 0.0
    n_sentiment_words : int
        Lexicon words per text. Default: 3
    max_filler_words : int
        Upper bound on filler words per text (at least one). Default: 4

    """
    n_samples: int
    seed: int = 0
    text_noise: float = 0.0
    image_noise: float = 0.0
    image_side: int = 32
    patch_size: int = 8
    shortcut: float = 0.0
    n_sentiment_words: int = 3
    max_filler_words: int = 4

    def __post_init__(self):
        problems = []
        if self.n_samples < 1:
            problems.append("empty dataset: n_samples must be >= 1")
        for name in ("text_noise", "image_noise", "shortcut"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                problems.append(f"{name} must lie in [0, 1), got {value}")
        if self.patch_size < 1 or self.image_side % self.patch_size:
            problems.append("patch_size must divide image_side")
        if self.n_sentiment_words < 1 or self.max_filler_words < 1:
            problems.append("texts need at least one sentiment and one filler word")
        if problems:
            raise ValueError("; ".join(problems))


def gen_synthetic(spec):
    """
    Generates the synthetic incongruity dataset.

    Each sample draws a text bit and an image bit uniformly. The text is
    built from positive words (bit 1) or negative words (bit 0) plus filler;
    the image is bright (0.8) or dark (0.2) with +-0.1 jitter. The label is
    the XOR of the two bits.

    Parameters
    ----------
    spec : SynthSpec

    Returns
    -------
    dataset : Dataset
        Fully determined by `spec`.

    """
    rng = get_rng_from_seed(spec.seed)
    side = spec.image_side
    samples = []
    for idx in range(spec.n_samples):
        text_bit, image_bit = (int(b) for b in rng.integers(0, 2, size=2))
        label = text_bit ^ image_bit

        lexicon, opposite = (POSITIVE_WORDS, NEGATIVE_WORDS) if text_bit else (NEGATIVE_WORDS, POSITIVE_WORDS)
        words = [str(w) for w in rng.choice(lexicon, size=spec.n_sentiment_words)]
        n_filler = int(rng.integers(1, spec.max_filler_words + 1))
        words += [str(w) for w in rng.choice(FILLER_WORDS, size=n_filler)]
        if rng.random() < spec.text_noise:
            words.append(str(rng.choice(opposite)))
        if label == 1 and rng.random() < spec.shortcut:
            words.append(SHORTCUT_WORD)
        text = " ".join(words[j] for j in rng.permutation(len(words)))

        level = BRIGHT_LEVEL if image_bit else DARK_LEVEL
        image = level + rng.uniform(-BRIGHTNESS_JITTER, BRIGHTNESS_JITTER, size=(side, side))
        flips = rng.random((side, side)) < spec.image_noise
        image = np.round(np.clip(np.where(flips, 1.0 - image, image), 0.0, 1.0), 4)

        samples.append(SamplePair(f"synth-{spec.seed}-{idx:06d}", text, image, label))

    vocab = Vocab.build(s.text for s in samples)
    return Dataset(samples, vocab, provenance=f"synthetic(seed={spec.seed}, n={spec.n_samples})")


def load_jsonl(path, vocab=None, image_side=None):
    """
    Loads samples from a JSONL file, one object per line.

    Parameters
    ----------
    path : str
        The file to read.
    vocab : Vocab or None, optional
        If None, a vocabulary is built from this file's tokens.
    image_side : int or None, optional
        Expected image side; images of another size are rejected.

    Returns
    -------
    dataset : Dataset

    Raises
    ------
    ValueError
        Naming the line number of a malformed record.

    """
    samples = []
    for line_no, record in io.read_jsonl(path):
        try:
            samples.append(SamplePair.from_record(record, image_side=image_side))
        except ValueError as err:
            raise ValueError(f"{path}: line {line_no}: {err}") from None
    if vocab is None:
        vocab = Vocab.build(s.text for s in samples)
    return Dataset(samples, vocab, provenance=str(path))


def save_jsonl(dataset, path):
    """Writes a dataset in the sample JSONL schema."""
    io.write_jsonl(path, (sample.to_record() for sample in dataset))
