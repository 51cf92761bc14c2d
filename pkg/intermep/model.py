"""
MODEL
-----
The interactive dual encoder and the sarcasm detector built on it.

A text encoder (causal, eos summarises the sentence) and a vision encoder
(bidirectional, cls summarises the image) share the same layer design. In
the interaction modes the top-n layers of one or both encoders become
conditional: they attend to the other encoder's vanilla final-layer
representations as extra keys and values.

    none : fused = [text eos,             image cls]
    t2v  : fused = [text eos,             image cls | text]
    v2t  : fused = [text eos | image,     image cls]
    tw   : fused = [text eos | image,     image cls | text]

The fused vector feeds a classification head (two-way softmax) and a
projection head (unit vectors in a d_f-dimensional metric space).

"""

__all__ = [
    'Batch',
    'ClassificationHead',
    'DetectorOutput',
    'EncoderOutput',
    'InterCLIP',
    'InteractionMode',
    'ModelConfig',
    'ProjectionHead',
    'SarcasmDetector',
    'TextEncoder',
    'TransformerEncoder',
    'VisionEncoder',
    'encode_batch',
    'extract_patches',
    'fuse',
    'load_detector',
    'save_detector',
    'tokenize',
    ]

import logging
import os
from dataclasses import asdict, dataclass, fields
from enum import Enum
from typing import Optional

import numpy as np

from intermep import io
from intermep import tensor as tn
from intermep.data import BOS, EOS, PAD, Vocab
from intermep.layers import ATTENTION_MATRICES, EncoderLayer, FeedForward, LayerNorm, Module, normal_init
from intermep.tensor import Parameter, Tensor
from intermep.utils import ConfigError, get_rng_from_seed, parse_name_list

log = logging.getLogger(__name__)

PRESET_DIR = os.path.join(os.path.dirname(__file__), "presets")


class InteractionMode(str, Enum):
    NONE = "none"
    T2V = "t2v"
    V2T = "v2t"
    TW = "tw"

    @property
    def conditions_text(self):
        """Whether the text encoder attends to the image."""
        return self in (InteractionMode.V2T, InteractionMode.TW)

    @property
    def conditions_image(self):
        """Whether the vision encoder attends to the text."""
        return self in (InteractionMode.T2V, InteractionMode.TW)


def _normalise_target(name):
    name = str(name).strip().lower()
    return name[2:] if name.startswith("w_") else name


@dataclass
class ModelConfig:
    """
    Architecture hyperparameters of the sarcasm detector.

    Attributes
    ----------
    d_t, d_v : int
        Text and vision widths.
    n_layers_text, n_layers_vision : int
        Encoder depths.
    n_heads : int
        Attention heads; must divide both widths.
    top_n : int
        Number of conditioned (and LoRA-adapted) top layers.
    interaction_mode : str
        One of "none", "t2v", "v2t", "tw".
    lora_rank : int
        0 disables LoRA.
    lora_targets : tuple of str
        Subset of ("q", "k", "v", "o"); "W_k" style names are accepted.
    lora_alpha : float or None
        LoRA scale numerator; None means equal to the rank.
    d_f : int
        Projection width.
    vocab_size, max_text_len, image_side, patch_size : int
        Input geometry.
    freeze_backbone : bool
        Keep encoder base weights fixed.
    use_projection : bool
        Build the projection head.
    dtype : str
        "float32" or "float64".

    """
    d_t: int = 64
    d_v: int = 64
    n_layers_text: int = 4
    n_layers_vision: int = 4
    n_heads: int = 4
    top_n: int = 2
    interaction_mode: str = "t2v"
    lora_rank: int = 4
    lora_targets: tuple = ("k", "v", "o")
    lora_alpha: Optional[float] = None
    d_f: int = 64
    vocab_size: int = 128
    max_text_len: int = 16
    image_side: int = 32
    patch_size: int = 8
    freeze_backbone: bool = True
    use_projection: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if isinstance(self.interaction_mode, InteractionMode):
            self.interaction_mode = self.interaction_mode.value
        self.interaction_mode = str(self.interaction_mode).lower()
        self.lora_targets = tuple(_normalise_target(t) for t in parse_name_list(self.lora_targets))

    @property
    def mode(self):
        return InteractionMode(self.interaction_mode)

    @property
    def n_patches(self):
        return (self.image_side // self.patch_size) ** 2

    @property
    def fused_width(self):
        return self.d_t + self.d_v

    def validate(self):
        """
        Checks every constraint.

        Returns
        -------
        problems : list of str
            Empty when the configuration is valid.

        """
        problems = []
        positive = ("d_t", "d_v", "n_layers_text", "n_layers_vision", "n_heads", "d_f",
                    "vocab_size", "image_side", "patch_size")
        for name in positive:
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                problems.append(f"{name} must be a positive integer, got {value!r}")
        if problems:
            return problems

        if self.d_t % self.n_heads or self.d_v % self.n_heads:
            problems.append(f"n_heads={self.n_heads} must divide d_t={self.d_t} and d_v={self.d_v}")
        if not 0 <= self.top_n <= min(self.n_layers_text, self.n_layers_vision):
            problems.append(f"top_n={self.top_n} must lie in [0, {min(self.n_layers_text, self.n_layers_vision)}]")
        if self.interaction_mode not in {m.value for m in InteractionMode}:
            problems.append(f"unknown interaction_mode {self.interaction_mode!r}")
        if self.lora_rank < 0:
            problems.append("lora_rank must be non-negative")
        unknown = sorted(set(self.lora_targets) - set(ATTENTION_MATRICES))
        if unknown:
            problems.append(f"unknown lora_targets {unknown}; choose from W_q, W_k, W_v, W_o")
        if self.lora_rank == 0 and self.lora_targets:
            problems.append("lora_targets must be empty when lora_rank is 0")
        if self.lora_alpha is not None and not self.lora_alpha > 0:
            problems.append("lora_alpha must be positive")
        if self.max_text_len < 2:
            problems.append("max_text_len must leave room for bos and eos")
        if self.image_side % self.patch_size:
            problems.append(f"patch_size={self.patch_size} must divide image_side={self.image_side}")
        if self.dtype not in ("float32", "float64"):
            problems.append(f"dtype must be float32 or float64, got {self.dtype!r}")
        return problems

    def check(self):
        """Raises ConfigError listing every problem."""
        problems = self.validate()
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self):
        data = asdict(self)
        data["lora_targets"] = list(self.lora_targets)
        return data

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError([f"unknown model config key '{key}'" for key in unknown])
        return cls(**data)

    @classmethod
    def from_preset(cls, name):
        """
        Loads one of the bundled presets ("toy" or "paper").

        """
        path = os.path.join(PRESET_DIR, f"{name}.json")
        if not os.path.exists(path):
            available = sorted(os.path.splitext(f)[0] for f in os.listdir(PRESET_DIR))
            raise ConfigError(f"unknown preset '{name}'; available: {available}")
        return cls.from_dict(io.load_yaml(path))


def tokenize(text, vocab, max_len):
    """
    Maps a text to token ids framed by bos and eos.

    Tokens are whitespace separated; unknown words map to unk. Texts longer
    than `max_len` are cut so that eos stays the last id.

    Example
    -------
    >>> vocab = Vocab(["great", "sunny", "day"])
    >>> tokenize("great sunny day", vocab, 16)
    [1, 4, 5, 6, 2]

    """
    if max_len < 2:
        raise ValueError("max_len must be at least 2")
    ids = [vocab.lookup(word) for word in text.split()][:max_len - 2]
    return [vocab[BOS]] + ids + [vocab[EOS]]


def extract_patches(images, patch_size):
    """
    Cuts square images into non-overlapping flattened patches.

    Parameters
    ----------
    images : np.ndarray
        Shape (batch, side, side).
    patch_size : int

    Returns
    -------
    patches : np.ndarray
        Shape (batch, (side / patch_size) ** 2, patch_size ** 2), patches in
        row-major order.

    """
    images = np.asarray(images)
    batch, height, width = images.shape
    if height != width or height % patch_size:
        msg = f"image of shape {images.shape[1:]} cannot be cut into {patch_size}x{patch_size} patches"
        raise ValueError(msg)
    grid = height // patch_size
    blocks = images.reshape(batch, grid, patch_size, grid, patch_size).transpose(0, 1, 3, 2, 4)
    return blocks.reshape(batch, grid * grid, patch_size * patch_size)


@dataclass(eq=False)
class Batch:
    """
    Model-ready arrays for a list of samples.

    Attributes
    ----------
    tokens : np.ndarray
        (batch, max_text_len) ids, padded after eos.
    text_valid : np.ndarray
        (batch, max_text_len) bool, False on padding.
    eos_positions : np.ndarray
        (batch,) index of each eos.
    patches : np.ndarray
        (batch, m, patch_size ** 2).
    labels : np.ndarray or None

    """
    tokens: np.ndarray
    text_valid: np.ndarray
    eos_positions: np.ndarray
    patches: np.ndarray
    labels: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.tokens)


def encode_batch(samples, vocab, config):
    """
    Tokenises and patches a list of samples.

    Raises
    ------
    ValueError
        On an empty batch or an image of the wrong size.

    """
    if not samples:
        raise ValueError("cannot encode an empty batch")
    n = config.max_text_len
    tokens = np.full((len(samples), n), vocab[PAD], dtype=np.int64)
    valid = np.zeros((len(samples), n), dtype=bool)
    eos = np.zeros(len(samples), dtype=np.int64)
    for row, sample in enumerate(samples):
        ids = tokenize(sample.text, vocab, n)
        tokens[row, :len(ids)] = ids
        valid[row, :len(ids)] = True
        eos[row] = len(ids) - 1

    side = config.image_side
    for sample in samples:
        if sample.image.shape != (side, side):
            msg = (f"sample '{sample.id}': image dimension mismatch, expected "
                   f"{side}x{side}, got {sample.image.shape}")
            raise ValueError(msg)
    images = np.stack([sample.image for sample in samples])
    patches = extract_patches(images, config.patch_size).astype(config.dtype)

    labels = None
    if all(sample.label is not None for sample in samples):
        labels = np.array([sample.label for sample in samples], dtype=np.int64)
    return Batch(tokens, valid, eos, patches, labels)


class TransformerEncoder(Module):
    """
    A stack of pre-norm encoder layers with a final layer norm.

    The lowest ``n_layers - top_n`` layers are plain and fully frozen when
    the backbone is frozen. The top `top_n` layers carry the LoRA factors
    and, when `conditional`, the cross-modal conditioning.

    """
    def __init__(self, d, n_layers, n_heads, top_n, rng, dtype="float32", causal=False,
                 conditional=False, d_cond=None, lora_rank=0, lora_targets=(),
                 lora_alpha=None, freeze_backbone=True):
        self.n_lower = n_layers - top_n
        self.layers = []
        for idx in range(n_layers):
            top = idx >= self.n_lower
            self.layers.append(EncoderLayer(
                d, n_heads, rng, dtype=dtype, causal=causal,
                conditional=conditional and top, d_cond=d_cond,
                lora_rank=lora_rank if top else 0,
                lora_targets=lora_targets if top else (),
                lora_alpha=lora_alpha, freeze_backbone=freeze_backbone))
        self.norm_final = LayerNorm(d, dtype=dtype, trainable=not freeze_backbone)

    def lower(self, x, valid):
        for layer in self.layers[:self.n_lower]:
            x = layer(x, valid)
        return x

    def upper(self, x, valid, condition=None, cond_valid=None):
        for layer in self.layers[self.n_lower:]:
            x = layer(x, valid, condition=condition, cond_valid=cond_valid)
        return self.norm_final(x)

    def encode(self, x, valid, condition=None, cond_valid=None):
        return self.upper(self.lower(x, valid), valid, condition, cond_valid)


class TextEncoder(TransformerEncoder):
    def __init__(self, config, rng, conditional=False):
        super().__init__(
            config.d_t, config.n_layers_text, config.n_heads, config.top_n, rng,
            dtype=config.dtype, causal=True, conditional=conditional, d_cond=config.d_v,
            lora_rank=config.lora_rank, lora_targets=config.lora_targets,
            lora_alpha=config.lora_alpha, freeze_backbone=config.freeze_backbone)
        trainable = not config.freeze_backbone
        self.token_embedding = Parameter(
            normal_init(rng, (config.vocab_size, config.d_t), 1.0, config.dtype),
            trainable=trainable, dtype=config.dtype)
        self.position_embedding = Parameter(
            normal_init(rng, (config.max_text_len, config.d_t), 0.1, config.dtype),
            trainable=trainable, dtype=config.dtype)

    def embed(self, tokens):
        """(batch, n) ids -> (batch, n, d_t) token plus position embeddings."""
        tokens = np.asarray(tokens)
        if tokens.max(initial=0) >= self.token_embedding.shape[0]:
            raise ValueError("token id outside the embedding table")
        return self.token_embedding[tokens] + self.position_embedding[:tokens.shape[1]]


class VisionEncoder(TransformerEncoder):
    def __init__(self, config, rng, conditional=False):
        super().__init__(
            config.d_v, config.n_layers_vision, config.n_heads, config.top_n, rng,
            dtype=config.dtype, causal=False, conditional=conditional, d_cond=config.d_t,
            lora_rank=config.lora_rank, lora_targets=config.lora_targets,
            lora_alpha=config.lora_alpha, freeze_backbone=config.freeze_backbone)
        trainable = not config.freeze_backbone
        patch_dim = config.patch_size ** 2
        self.n_patches = config.n_patches
        self.patch_embedding = Parameter(
            normal_init(rng, (config.d_v, patch_dim), patch_dim ** -0.5, config.dtype),
            trainable=trainable, dtype=config.dtype)
        self.cls_embedding = Parameter(
            normal_init(rng, (1, 1, config.d_v), 1.0, config.dtype),
            trainable=trainable, dtype=config.dtype)
        self.position_embedding = Parameter(
            normal_init(rng, (config.n_patches + 1, config.d_v), 0.5, config.dtype),
            trainable=trainable, dtype=config.dtype)

    def patchify(self, patches):
        """
        Embeds flattened patches and prepends the cls position.

        Parameters
        ----------
        patches : np.ndarray
            (batch, m, patch_size ** 2).

        Returns
        -------
        embedded : Tensor
            (batch, m + 1, d_v).

        """
        patches = np.asarray(patches)
        if patches.ndim != 3 or patches.shape[1:] != (self.n_patches, self.patch_embedding.shape[1]):
            msg = (f"patches of shape {patches.shape} do not match "
                   f"({self.n_patches}, {self.patch_embedding.shape[1]})")
            raise ValueError(msg)
        embedded = Tensor(patches, dtype=self.patch_embedding.dtype) @ self.patch_embedding.T
        batch = patches.shape[0]
        cls = self.cls_embedding + Tensor(np.zeros((batch, 1, embedded.shape[2])), dtype=embedded.dtype)
        return tn.concatenate([cls, embedded], axis=1) + self.position_embedding


@dataclass(eq=False)
class EncoderOutput:
    """
    Representations produced by one forward pass of :class:`InterCLIP`.

    Attributes
    ----------
    text, image : Tensor or None
        Vanilla final-layer outputs, (batch, n, d_t) and (batch, m + 1, d_v).
    text_inter, image_inter : Tensor or None
        Conditioned outputs, present per interaction mode.
    fused : Tensor
        (batch, d_t + d_v).
    sources : tuple of str
        Which representation supplied the text half and the image half.

    """
    text: Optional[Tensor]
    image: Optional[Tensor]
    text_inter: Optional[Tensor]
    image_inter: Optional[Tensor]
    fused: Tensor
    sources: tuple


FUSION_SOURCES = {
    InteractionMode.NONE: ("text", "image"),
    InteractionMode.T2V: ("text", "image_inter"),
    InteractionMode.V2T: ("text_inter", "image"),
    InteractionMode.TW: ("text_inter", "image_inter"),
}


def fuse(mode, text, image, text_inter, image_inter, eos_positions):
    """
    Concatenates the text eos row and the image cls row named by `mode`.

    Parameters
    ----------
    mode : InteractionMode or str
    text, image, text_inter, image_inter : Tensor or None
        Batched encoder outputs; only those the mode names are read.
    eos_positions : array-like of int
        Eos index per sample.

    Returns
    -------
    fused : Tensor
        (batch, d_t + d_v), text part first.
    sources : tuple of str

    Raises
    ------
    ValueError
        If a representation the mode needs is missing.

    """
    mode = InteractionMode(mode)
    available = {"text": text, "image": image, "text_inter": text_inter, "image_inter": image_inter}
    text_key, image_key = FUSION_SOURCES[mode]
    for key in (text_key, image_key):
        if available[key] is None:
            raise ValueError(f"interaction mode '{mode.value}' needs the '{key}' representation")
    text_rep, image_rep = available[text_key], available[image_key]
    eos_positions = np.asarray(eos_positions)
    eos_rows = text_rep[np.arange(text_rep.shape[0]), eos_positions]
    cls_rows = image_rep[:, 0]
    return tn.concatenate([eos_rows, cls_rows], axis=-1), (text_key, image_key)


class InterCLIP(Module):
    """
    The interactive dual encoder.

    Parameters
    ----------
    config : ModelConfig
    rng : np.random.Generator

    """
    def __init__(self, config, rng):
        mode = config.mode
        self.config = config
        self.text_encoder = TextEncoder(config, rng, conditional=mode.conditions_text)
        self.vision_encoder = VisionEncoder(config, rng, conditional=mode.conditions_image)

    def encode_text(self, tokens, text_valid, condition=None, cond_valid=None):
        """
        Text representations, conditioned on image representations when
        `condition` is given.

        """
        encoder = self.text_encoder
        return encoder.encode(encoder.embed(tokens), text_valid, condition, cond_valid)

    def encode_image(self, patches, condition=None, cond_valid=None):
        encoder = self.vision_encoder
        embedded = encoder.patchify(patches)
        valid = np.ones(embedded.shape[:2], dtype=bool)
        return encoder.encode(embedded, valid, condition, cond_valid)

    def __call__(self, batch):
        """
        Runs the passes the interaction mode needs and fuses them.

        Conditions are always the other encoder's vanilla output. The
        lower layers run once and are shared by the vanilla and the
        conditioned pass of an encoder.

        Returns
        -------
        output : EncoderOutput

        """
        mode = self.config.mode
        text_encoder, vision_encoder = self.text_encoder, self.vision_encoder
        text_lower = text_encoder.lower(text_encoder.embed(batch.tokens), batch.text_valid)
        image_embedded = vision_encoder.patchify(batch.patches)
        image_valid = np.ones(image_embedded.shape[:2], dtype=bool)
        image_lower = vision_encoder.lower(image_embedded, image_valid)

        text = image = text_inter = image_inter = None
        if mode is not InteractionMode.V2T:
            text = text_encoder.upper(text_lower, batch.text_valid)
        if mode is not InteractionMode.T2V:
            image = vision_encoder.upper(image_lower, image_valid)
        if mode.conditions_image:
            image_inter = vision_encoder.upper(image_lower, image_valid,
                                               condition=text, cond_valid=batch.text_valid)
        if mode.conditions_text:
            text_inter = text_encoder.upper(text_lower, batch.text_valid,
                                            condition=image, cond_valid=image_valid)

        fused, sources = fuse(mode, text, image, text_inter, image_inter, batch.eos_positions)
        return EncoderOutput(text, image, text_inter, image_inter, fused, sources)


class ClassificationHead(Module):
    """Two-layer perceptron to two logits; the output layer starts at zero."""
    def __init__(self, d_in, rng, dtype="float32"):
        self.mlp = FeedForward(d_in, d_in, rng, dtype=dtype, d_out=2, zero_init_output=True)

    def __call__(self, fused):
        return tn.softmax(self.mlp(fused), axis=-1)


class ProjectionHead(Module):
    """Two-layer perceptron to d_f, rows L2-normalised."""
    def __init__(self, d_in, d_f, rng, dtype="float32"):
        self.mlp = FeedForward(d_in, d_in, rng, dtype=dtype, d_out=d_f)

    def __call__(self, fused):
        return tn.l2_normalize(self.mlp(fused), axis=-1)


@dataclass(eq=False)
class DetectorOutput:
    probs: Tensor
    features: Optional[Tensor]
    encoded: EncoderOutput


class SarcasmDetector(Module):
    """
    InterCLIP with a classification head and an optional projection head.

    Parameters
    ----------
    config : ModelConfig
        Checked on construction.
    vocab : intermep.data.Vocab
        Must fit in ``config.vocab_size``.
    seed : int, optional
        Seed of the parameter initialisation.
        Default: 0

    """
    def __init__(self, config, vocab, seed=0):
        config.check()
        if len(vocab) > config.vocab_size:
            msg = f"vocabulary of {len(vocab)} tokens exceeds vocab_size={config.vocab_size}"
            raise ConfigError(msg)
        self.config = config
        self._vocab = vocab
        self.seed = seed
        rng = get_rng_from_seed(seed)
        self.interclip = InterCLIP(config, rng)
        self.classifier = ClassificationHead(config.fused_width, rng, dtype=config.dtype)
        self.projector = (ProjectionHead(config.fused_width, config.d_f, rng, dtype=config.dtype)
                          if config.use_projection else None)

    @property
    def vocab(self):
        return self._vocab

    def encode_batch(self, samples):
        return encode_batch(samples, self._vocab, self.config)

    def classify(self, fused):
        """(N, d_t + d_v) -> (N, 2) probabilities; column 1 is sarcastic."""
        return self.classifier(fused)

    def project(self, fused):
        """(N, d_t + d_v) -> (N, d_f) unit rows."""
        if self.projector is None:
            raise ValueError("this detector was built without a projection head")
        return self.projector(fused)

    def __call__(self, batch):
        return self.forward(batch)

    def forward(self, batch):
        encoded = self.interclip(batch)
        probs = self.classify(encoded.fused)
        features = self.project(encoded.fused) if self.projector is not None else None
        return DetectorOutput(probs, features, encoded)

    def parameter_counts(self):
        """Number of trainable and total parameter entries."""
        params = self.parameters()
        total = sum(p.size for p in params.values())
        trainable = sum(p.size for p in params.values() if p.requires_grad)
        return {"trainable": int(trainable), "total": int(total)}


def save_detector(path, detector, metadata=None):
    """
    Writes a self-contained checkpoint: tensors, config and vocabulary.

    Returns
    -------
    manifest : dict

    """
    params = detector.parameters()
    extra = {
        "model_config": detector.config.to_dict(),
        "vocab": list(detector.vocab.tokens),
        "seed": detector.seed,
        "trainable": sorted(name for name, p in params.items() if p.requires_grad),
    }
    extra.update(metadata or {})
    manifest = io.save_checkpoint(path, detector.state_dict(), extra)
    log.info("wrote checkpoint %s (%d tensors)", path, len(manifest["tensors"]))
    return manifest


def load_detector(path):
    """
    Rebuilds a detector from a checkpoint written by :func:`save_detector`.

    Returns
    -------
    detector : SarcasmDetector
    manifest : dict

    """
    tensors, manifest = io.load_checkpoint(path)
    try:
        config = ModelConfig.from_dict(manifest["model_config"])
        vocab = Vocab(manifest["vocab"])
    except KeyError as err:
        raise ValueError(f"{path}: checkpoint manifest lacks {err}") from None
    detector = SarcasmDetector(config, vocab, seed=manifest.get("seed", 0))
    detector.load_state_dict(tensors)
    return detector, manifest
