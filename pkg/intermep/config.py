"""
CONFIG
------
Run configuration for the command line tools.

A :class:`RunConfig` is built in layers, later layers winning:

    dataclass defaults < preset < config file < environment < flags

The config file (JSON or YAML) comes from ``--config`` or the
``INTERCLIP_MEP_CONFIG`` environment variable; every other field can be
set through ``INTERCLIP_MEP_<FIELD>``, e.g. ``INTERCLIP_MEP_TOP_N=2``.

"""

__all__ = [
    'CONFIG_ENV',
    'ConfigError',
    'ENV_PREFIX',
    'RunConfig',
    'resolve_config',
    ]

import logging
import os
from dataclasses import asdict, dataclass, fields
from typing import Optional

from intermep import io
from intermep.data import SynthSpec
from intermep.fit import TrainConfig
from intermep.model import ModelConfig
from intermep.sampling import split_sizes
from intermep.utils import ConfigError, parse_int_list, parse_name_list

log = logging.getLogger(__name__)

ENV_PREFIX = "INTERCLIP_MEP_"
CONFIG_ENV = "INTERCLIP_MEP_CONFIG"

TRUE_WORDS = ("1", "true", "yes", "on")
FALSE_WORDS = ("0", "false", "no", "off")


@dataclass
class RunConfig:
    """
    Every setting of a command line run, with defaults.

    The model fields mirror :class:`intermep.model.ModelConfig`, the
    optimisation fields :class:`intermep.fit.TrainConfig` (``adam_eps`` is
    its ``eps``) and the data fields :class:`intermep.data.SynthSpec`.

    """
    # model
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
    # optimisation
    epochs: int = 3
    batch_size: int = 64
    lr: float = 5e-4
    lora_lr: float = 1e-4
    warmup_fraction: float = 0.2
    min_lr_fraction: float = 0.01
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # synthetic data
    n: int = 2000
    text_noise: float = 0.0
    image_noise: float = 0.0
    shortcut: float = 0.0
    fractions: tuple = (0.8, 0.1, 0.1)
    # evaluation
    mep: bool = True
    memory_size: int = 64
    sweep: tuple = (8, 16, 32, 64)
    normalize_memory: bool = False
    # run
    seed: int = 0
    out: str = "runs"
    preset: Optional[str] = None

    def model_config(self):
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def train_config(self):
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                           lora_lr=self.lora_lr, warmup_fraction=self.warmup_fraction,
                           min_lr_fraction=self.min_lr_fraction,
                           weight_decay=self.weight_decay, beta1=self.beta1,
                           beta2=self.beta2, eps=self.adam_eps, seed=self.seed)

    def synth_spec(self):
        return SynthSpec(n_samples=self.n, seed=self.seed, text_noise=self.text_noise,
                         image_noise=self.image_noise, image_side=self.image_side,
                         patch_size=self.patch_size, shortcut=self.shortcut)

    def validate(self):
        """
        Returns the list of every problem with this configuration.

        """
        problems = list(self.model_config().validate())
        problems += self.train_config().validate()
        try:
            self.synth_spec()
        except ValueError as err:
            problems.append(str(err))
        try:
            split_sizes(max(self.n, 0), self.fractions)
        except ValueError as err:
            problems.append(str(err))
        if self.memory_size < 1:
            problems.append(f"memory_size must be >= 1, got {self.memory_size}")
        if not self.sweep or min(self.sweep) < 1:
            problems.append("sweep candidates must be a non-empty list of sizes >= 1")
        return problems

    def check(self):
        problems = self.validate()
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self):
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = list(value)
        return data

    @classmethod
    def from_dict(cls, data, source="config"):
        """
        Builds a RunConfig from plain values (strings are parsed).

        Raises
        ------
        ConfigError
            On unknown keys or values of the wrong type.

        """
        known = {f.name: f for f in fields(cls)}
        problems = [f"{source}: unknown key '{key}'" for key in sorted(set(data) - set(known))]
        values = {}
        for key, value in data.items():
            if key not in known:
                continue
            try:
                values[key] = _coerce(key, value, known[key].default)
            except (TypeError, ValueError) as err:
                problems.append(f"{source}: {key}: {err}")
        if problems:
            raise ConfigError(problems)
        return cls(**values)


def _coerce(name, value, default):
    """Converts `value` to the type of the field default."""
    if value is None:
        if default is None:
            return None
        raise ValueError("value must not be null")
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in TRUE_WORDS:
            return True
        if text in FALSE_WORDS:
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if isinstance(default, tuple):
        if name == "lora_targets":
            return parse_name_list(value)
        if name == "sweep":
            return parse_int_list(value)
        items = value if isinstance(value, (list, tuple)) else str(value).split(",")
        return tuple(float(item) for item in items if str(item).strip())
    if isinstance(default, int):
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise ValueError(f"expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float) or name == "lora_alpha":
        if isinstance(value, bool):
            raise ValueError(f"expected a number, got {value!r}")
        return float(value)
    return str(value)


def _environment_layer(environ):
    layer = {}
    for f in fields(RunConfig):
        key = f"{ENV_PREFIX}{f.name.upper()}"
        if key in environ:
            layer[f.name] = environ[key]
    return layer


def resolve_config(config_path=None, overrides=None, environ=None):
    """
    Builds the effective RunConfig from all layers.

    Parameters
    ----------
    config_path : str or None, optional
        Config file; falls back to ``$INTERCLIP_MEP_CONFIG``.
    overrides : dict or None, optional
        Command line values; None entries are ignored.
    environ : mapping or None, optional
        Defaults to ``os.environ``.

    Returns
    -------
    config : RunConfig
        Validated.

    Raises
    ------
    ConfigError
        Listing every problem across all layers.

    """
    environ = os.environ if environ is None else environ
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    config_path = config_path or environ.get(CONFIG_ENV)

    file_layer = {}
    if config_path:
        try:
            file_layer = io.load_yaml(config_path)
        except OSError as err:
            raise ConfigError(f"cannot read config file {config_path}: {err.strerror}") from None
        log.debug("loaded config file %s", config_path)
    env_layer = _environment_layer(environ)

    preset = overrides.get("preset") or env_layer.get("preset") or file_layer.get("preset")
    merged = RunConfig().to_dict()
    if preset:
        merged.update(ModelConfig.from_preset(preset).to_dict())
    merged.update(file_layer)
    merged.update(env_layer)
    merged.update(overrides)

    problems = []
    for source, layer in (("config file", file_layer), ("environment", env_layer),
                          ("flags", overrides)):
        try:
            RunConfig.from_dict(layer, source=source)
        except ConfigError as err:
            problems += err.problems
    if problems:
        raise ConfigError(problems)
    return RunConfig.from_dict(merged).check()
