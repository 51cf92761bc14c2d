"""
SAMPLING
--------
Deterministic splitting of a dataset into train / validation / test parts
and mini-batch iteration.

"""

__all__ = [
    'batches',
    'split',
    'split_sizes',
    ]

import numpy as np

from intermep.utils import get_rng_from_seed


def split_sizes(n, fractions):
    """
    Number of samples per part for a (train, validation, test) split.

    The first two sizes are round(fraction * n); the test part takes the
    remainder.

    Parameters
    ----------
    n : int
        Dataset size.
    fractions : sequence of 3 floats
        Non-negative, summing to 1 within 1e-9.

    Returns
    -------
    sizes : tuple of 3 int

    Example
    -------
    >>> split_sizes(2000, (0.8, 0.1, 0.1))
    (1600, 200, 200)

    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ValueError(f"expected three split fractions, got {len(fractions)}")
    if any(f < 0 for f in fractions):
        raise ValueError(f"split fractions must be non-negative, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {sum(fractions)}")

    n_train = min(n, int(round(fractions[0] * n)))
    n_val = min(n - n_train, int(round(fractions[1] * n)))
    return n_train, n_val, n - n_train - n_val


def split(dataset, fractions=(0.8, 0.1, 0.1), seed=0):
    """
    Splits a dataset into train, validation and test parts.

    Samples are shuffled within each label stratum (unlabeled samples form
    their own stratum) and the strata are interleaved by relative rank, so
    every contiguous cut keeps close to the overall label balance.

    Parameters
    ----------
    dataset : intermep.data.Dataset
    fractions : sequence of 3 floats, optional
        Default: (0.8, 0.1, 0.1)
    seed : int, optional
        Default: 0

    Returns
    -------
    train, validation, test : intermep.data.Dataset
        Each keeps the vocabulary of `dataset`.

    """
    n = len(dataset)
    sizes = split_sizes(n, fractions)
    rng = get_rng_from_seed(seed)

    strata = {}
    for idx, sample in enumerate(dataset):
        strata.setdefault(sample.label, []).append(idx)

    keys = []
    for order, label in enumerate(sorted(strata, key=lambda l: -1 if l is None else l)):
        members = np.asarray(strata[label])[rng.permutation(len(strata[label]))]
        for rank, idx in enumerate(members):
            keys.append(((rank + 0.5) / len(members), order, int(idx)))
    ordered = [idx for _, _, idx in sorted(keys)]

    parts = []
    start = 0
    for name, size in zip(("train", "val", "test"), sizes):
        parts.append(dataset.subset(ordered[start:start + size],
                                    provenance=f"{dataset.provenance}[{name}]"))
        start += size
    return tuple(parts)


def batches(dataset, batch_size, seed=None, shuffle=False, epoch=0):
    """
    Iterates over a dataset in mini-batches.

    Parameters
    ----------
    dataset : sequence of SamplePair
    batch_size : int
        At least 1. The final batch may be smaller.
    seed : None or int, optional
        Seed of the per-epoch permutation.
    shuffle : bool, optional
        Default: False
    epoch : int, optional
        Combined with `seed` so every epoch gets its own permutation.
        Default: 0

    Yields
    ------
    batch : list of SamplePair

    Example
    -------
    >>> [len(b) for b in batches(list(range(10)), 3)]
    [3, 3, 3, 1]

    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(dataset))
    if shuffle:
        rng = get_rng_from_seed(None if seed is None else (seed, epoch))
        order = rng.permutation(len(dataset))
    for start in range(0, len(dataset), batch_size):
        yield [dataset[int(i)] for i in order[start:start + batch_size]]
