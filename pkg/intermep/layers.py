"""
LAYERS
------
Building blocks of the dual encoder: linear maps with optional low-rank
adapters, layer norm, feed-forward blocks, multi-head self-attention and
the conditional self-attention that lets one encoder attend to the other
encoder's representations.

All layers operate on batched tensors of shape (batch, sequence, width).

"""

__all__ = [
    'ConditionalSelfAttention',
    'EncoderLayer',
    'FeedForward',
    'LayerNorm',
    'Linear',
    'LoRALinear',
    'MASK_VALUE',
    'Module',
    'SelfAttention',
    'attention_bias',
    'lora_forward',
    ]

import numpy as np

from intermep import tensor as tn
from intermep.tensor import Parameter, Tensor

# Additive attention bias for disallowed keys. Finite so tensors stay finite.
MASK_VALUE = -1e9

ATTENTION_MATRICES = ("q", "k", "v", "o")


class Module:
    """
    Base class that discovers parameters held as attributes.

    Parameters are found in attribute order, recursing into sub-modules
    and lists of sub-modules, and named with dotted paths such as
    ``layers.0.attention.w_q.weight``.

    """
    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for idx, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{idx}.")

    def parameters(self):
        return dict(self.named_parameters())

    def trainable_parameters(self):
        return {name: p for name, p in self.named_parameters() if p.requires_grad}

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        """
        Copies arrays into the parameters of this module.

        Raises
        ------
        ValueError
            If names or shapes disagree.

        """
        params = self.parameters()
        if set(params) != set(state):
            missing = sorted(set(params) - set(state))
            unexpected = sorted(set(state) - set(params))
            msg = f"state mismatch; missing: {missing}, unexpected: {unexpected}"
            raise ValueError(msg)
        for name, param in params.items():
            array = np.asarray(state[name])
            if array.shape != param.shape:
                msg = f"shape mismatch for '{name}': {array.shape} vs {param.shape}"
                raise ValueError(msg)
            param.data[...] = array


def normal_init(rng, shape, std, dtype):
    return (rng.normal(0.0, std, size=shape)).astype(dtype)


class Linear(Module):
    """
    y = x W^T + b with W of shape (d_out, d_in).

    Parameters
    ----------
    d_in, d_out : int
        Input and output widths.
    rng : np.random.Generator
        Source of the initial weights (std d_in ** -0.5).
    dtype : str, optional
        Default: "float32"
    bias : bool, optional
        Default: True
    zero_init : bool, optional
        Start with all-zero weights and bias.
        Default: False
    trainable : bool, optional
        Default: True

    """
    def __init__(self, d_in, d_out, rng, dtype="float32", bias=True,
                 zero_init=False, trainable=True):
        shape = (d_out, d_in)
        weight = np.zeros(shape, dtype=dtype) if zero_init else normal_init(rng, shape, d_in ** -0.5, dtype)
        self.weight = Parameter(weight, trainable=trainable, dtype=dtype)
        self.bias = Parameter(np.zeros(d_out), trainable=trainable, dtype=dtype) if bias else None

    def __call__(self, x):
        out = x @ self.weight.T
        if self.bias is not None:
            out = out + self.bias
        return out


def lora_forward(x, base_W, lora_A, lora_B, alpha, r, bias=None):
    """
    Applies a weight matrix with an optional low-rank update.

    output = x (W + (alpha / r) B A)^T (+ bias)

    The update is merged into the weight before the product, so with
    B = 0 the output is bit-identical to ``x @ W.T``.

    Parameters
    ----------
    x : Tensor
        Input of shape (..., d_in).
    base_W : Tensor
        Weight of shape (d_out, d_in).
    lora_A : Tensor or None
        Down projection of shape (r, d_in).
    lora_B : Tensor or None
        Up projection of shape (d_out, r).
    alpha : float
        Scale numerator.
    r : int
        Rank; 0 disables the update.
    bias : Tensor or None, optional

    Returns
    -------
    out : Tensor

    """
    if r == 0:
        if lora_A is not None or lora_B is not None:
            raise ValueError("LoRA rank 0 cannot carry low-rank factors")
        weight = base_W
    else:
        d_out, d_in = base_W.shape
        if lora_A is None or lora_B is None:
            raise ValueError(f"LoRA rank {r} needs both factors")
        if lora_A.shape != (r, d_in) or lora_B.shape != (d_out, r):
            msg = (f"LoRA factor shapes {lora_A.shape}, {lora_B.shape} do not fit "
                   f"rank {r} on a {base_W.shape} weight")
            raise ValueError(msg)
        weight = base_W + (lora_B @ lora_A) * (alpha / r)

    out = x @ weight.T
    if bias is not None:
        out = out + bias
    return out


class LoRALinear(Module):
    """
    A (usually frozen) linear map with trainable low-rank factors.

    A is drawn uniformly in +-1/sqrt(d_in); B starts at zero so the
    adapted map equals the base map at initialisation.

    """
    def __init__(self, d_in, d_out, rng, rank=0, alpha=None, dtype="float32",
                 trainable_base=False):
        base = Linear(d_in, d_out, rng, dtype=dtype, trainable=trainable_base)
        self.weight = base.weight
        self.bias = base.bias
        self.rank = int(rank)
        self.alpha = float(alpha if alpha is not None else rank)
        if self.rank > 0:
            bound = d_in ** -0.5
            self.lora_A = Parameter(rng.uniform(-bound, bound, size=(rank, d_in)), dtype=dtype)
            self.lora_B = Parameter(np.zeros((d_out, rank)), dtype=dtype)
        else:
            self.lora_A = None
            self.lora_B = None

    def __call__(self, x):
        return lora_forward(x, self.weight, self.lora_A, self.lora_B,
                            self.alpha, self.rank, bias=self.bias)


class LayerNorm(Module):
    def __init__(self, d, dtype="float32", trainable=True, eps=1e-5):
        self.weight = Parameter(np.ones(d), trainable=trainable, dtype=dtype)
        self.bias = Parameter(np.zeros(d), trainable=trainable, dtype=dtype)
        self.eps = eps

    def __call__(self, x):
        return tn.layer_norm(x, self.weight, self.bias, eps=self.eps)


class FeedForward(Module):
    """Two linear maps with a GELU in between."""
    def __init__(self, d, hidden, rng, dtype="float32", trainable=True, d_out=None,
                 zero_init_output=False):
        self.fc1 = Linear(d, hidden, rng, dtype=dtype, trainable=trainable)
        self.fc2 = Linear(hidden, d if d_out is None else d_out, rng, dtype=dtype,
                          trainable=trainable, zero_init=zero_init_output)

    def __call__(self, x):
        return self.fc2(tn.gelu(self.fc1(x)))


def attention_bias(seq_valid, cond_valid=None, causal=False, dtype="float32"):
    """
    Builds the additive attention bias for a sequence plus condition rows.

    Keys are the n sequence rows followed by the m condition rows. A
    sequence key is allowed if it is not padding and, for causal
    encoders, not in the future of the query. Condition keys are exempt
    from the causal rule and only respect their own padding.

    Parameters
    ----------
    seq_valid : np.ndarray
        Boolean (batch, n) mask of real sequence positions.
    cond_valid : np.ndarray or None, optional
        Boolean (batch, m) mask of real condition rows.
    causal : bool, optional
        Default: False

    Returns
    -------
    bias : np.ndarray
        Shape (batch, 1, n + m, n + m); 0 where allowed, MASK_VALUE elsewhere.

    """
    seq_valid = np.asarray(seq_valid, dtype=bool)
    batch, n = seq_valid.shape
    if cond_valid is None:
        cond_valid = np.ones((batch, 0), dtype=bool)
    cond_valid = np.asarray(cond_valid, dtype=bool)
    total = n + cond_valid.shape[1]

    keys = np.concatenate([seq_valid, cond_valid], axis=1)[:, None, :]
    allowed = np.broadcast_to(keys, (batch, total, total)).copy()
    if causal:
        rows = np.arange(total)[:, None]
        cols = np.arange(total)[None, :]
        future = (cols > rows) & (cols < n)
        allowed &= ~future[None]
    return np.where(allowed, 0.0, MASK_VALUE).astype(dtype)[:, None]


class SelfAttention(Module):
    """
    Multi-head scaled dot-product attention.

    ``w_o`` is the attention's output projection head; LoRA factors sit on
    the matrices named in `lora_targets`.

    """
    def __init__(self, d, n_heads, rng, dtype="float32", lora_rank=0,
                 lora_targets=(), lora_alpha=None, trainable_base=False):
        if d % n_heads:
            raise ValueError(f"n_heads={n_heads} does not divide width {d}")
        self.n_heads = n_heads
        self.head_dim = d // n_heads
        for tag in ATTENTION_MATRICES:
            rank = lora_rank if tag in lora_targets else 0
            setattr(self, f"w_{tag}", LoRALinear(d, d, rng, rank=rank, alpha=lora_alpha,
                                                dtype=dtype, trainable_base=trainable_base))

    def _heads(self, x):
        batch, seq, _ = x.shape
        return x.reshape(batch, seq, self.n_heads, self.head_dim).transpose(0, 2, 1, 3)

    def attend(self, x, bias):
        """
        Attention over the rows of `x`, heads merged, before ``w_o``.

        """
        batch, seq, d = x.shape
        q = self._heads(self.w_q(x))
        k = self._heads(self.w_k(x))
        v = self._heads(self.w_v(x))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (self.head_dim ** -0.5) + Tensor(bias, dtype=x.dtype)
        weights = tn.softmax(scores, axis=-1)
        out = (weights @ v).transpose(0, 2, 1, 3)
        return out.reshape(batch, seq, d)

    def __call__(self, x, bias):
        return self.w_o(self.attend(x, bias))


class ConditionalSelfAttention(SelfAttention):
    """
    Self-attention that can also attend to another modality.

    The condition is mapped into this encoder's width by the adapting
    projection ``adapter`` and appended to the keys/values. Only the first
    n output rows are kept, and the output is

        H'' = w_o(H') + gate(H') * tanh(beta)

    with ``beta`` starting at 0. Without a condition the layer is plain
    self-attention.

    """
    def __init__(self, d, d_cond, n_heads, rng, dtype="float32", lora_rank=0,
                 lora_targets=(), lora_alpha=None, trainable_base=False):
        super().__init__(d, n_heads, rng, dtype=dtype, lora_rank=lora_rank,
                         lora_targets=lora_targets, lora_alpha=lora_alpha,
                         trainable_base=trainable_base)
        self.d_cond = d_cond
        self.adapter = Linear(d_cond, d, rng, dtype=dtype)
        self.gate = Linear(d, d, rng, dtype=dtype)
        self.beta = Parameter(np.zeros(1), dtype=dtype)

    def __call__(self, h, bias, condition=None):
        if condition is None:
            return super().__call__(h, bias)
        if condition.ndim != 3 or condition.shape[0] != h.shape[0] or condition.shape[2] != self.d_cond:
            msg = (f"condition of shape {condition.shape} does not fit a batch of "
                   f"{h.shape[0]} with width {self.d_cond}")
            raise ValueError(msg)

        n = h.shape[1]
        joined = tn.concatenate([h, self.adapter(condition)], axis=1)
        h_prime = self.attend(joined, bias)[:, :n]
        return self.w_o(h_prime) + self.gate(h_prime) * tn.tanh(self.beta)


class EncoderLayer(Module):
    """
    A pre-norm transformer layer: x + attn(ln(x)), then x + mlp(ln(x)).

    Parameters
    ----------
    conditional : bool, optional
        Use :class:`ConditionalSelfAttention` (needs `d_cond`).
        Default: False

    """
    def __init__(self, d, n_heads, rng, dtype="float32", conditional=False, d_cond=None,
                 lora_rank=0, lora_targets=(), lora_alpha=None, freeze_backbone=True,
                 causal=False):
        trainable = not freeze_backbone
        self.conditional = conditional
        self.causal = causal
        self.norm1 = LayerNorm(d, dtype=dtype, trainable=trainable)
        if conditional:
            self.attention = ConditionalSelfAttention(
                d, d_cond, n_heads, rng, dtype=dtype, lora_rank=lora_rank,
                lora_targets=lora_targets, lora_alpha=lora_alpha, trainable_base=trainable)
        else:
            self.attention = SelfAttention(
                d, n_heads, rng, dtype=dtype, lora_rank=lora_rank,
                lora_targets=lora_targets, lora_alpha=lora_alpha, trainable_base=trainable)
        self.norm2 = LayerNorm(d, dtype=dtype, trainable=trainable)
        self.mlp = FeedForward(d, 4 * d, rng, dtype=dtype, trainable=trainable)

    def __call__(self, x, seq_valid, condition=None, cond_valid=None):
        if condition is not None and not self.conditional:
            raise ValueError("this layer does not take a condition")
        if condition is None:
            bias = attention_bias(seq_valid, causal=self.causal, dtype=x.dtype)
            attended = self.attention(self.norm1(x), bias)
        else:
            if cond_valid is None:
                cond_valid = np.ones(condition.shape[:2], dtype=bool)
            bias = attention_bias(seq_valid, cond_valid, causal=self.causal, dtype=x.dtype)
            attended = self.attention(self.norm1(x), bias, condition=condition)
        x = x + attended
        return x + self.mlp(self.norm2(x))
