import numpy as np
import pytest

from intermep import sampling
from intermep.data import SynthSpec, gen_synthetic


@pytest.fixture(scope="module")
def dataset():
    return gen_synthetic(SynthSpec(n_samples=2000, seed=4, image_side=4, patch_size=2))


def test_split_sizes():
    assert sampling.split_sizes(2000, (0.8, 0.1, 0.1)) == (1600, 200, 200)
    assert sampling.split_sizes(10, (1, 0, 0)) == (10, 0, 0)
    assert sampling.split_sizes(7, (0.5, 0.25, 0.25)) == (4, 2, 1)


@pytest.mark.parametrize("fractions", [(0.8, 0.1), (0.8, 0.3, 0.1), (1.2, -0.1, -0.1)])
def test_split_sizes_invalid(fractions):
    with pytest.raises(ValueError):
        sampling.split_sizes(10, fractions)


def test_split_partitions(dataset):
    train, val, test = sampling.split(dataset, seed=1)
    assert (len(train), len(val), len(test)) == (1600, 200, 200)
    ids = [s.id for part in (train, val, test) for s in part]
    assert sorted(ids) == sorted(s.id for s in dataset)
    assert train.provenance.endswith("[train]")
    assert train.vocab == dataset.vocab


def test_split_is_deterministic(dataset):
    a = sampling.split(dataset, seed=3)
    b = sampling.split(dataset, seed=3)
    c = sampling.split(dataset, seed=4)
    assert [s.id for s in a[1]] == [s.id for s in b[1]]
    assert [s.id for s in a[1]] != [s.id for s in c[1]]


def test_split_keeps_label_balance(dataset):
    overall = dataset.labels.mean()
    for part in sampling.split(dataset, seed=0):
        assert abs(part.labels.mean() - overall) <= 0.02


def test_split_everything_in_train(dataset):
    train, val, test = sampling.split(dataset, fractions=(1, 0, 0))
    assert len(train) == 2000 and len(val) == 0 and len(test) == 0


def test_batches_sizes():
    assert [len(b) for b in sampling.batches(list(range(10)), 3)] == [3, 3, 3, 1]


def test_batches_unshuffled_order():
    assert [x for b in sampling.batches(list(range(7)), 2) for x in b] == list(range(7))


def test_batches_shuffle_per_epoch():
    items = list(range(20))
    first = [x for b in sampling.batches(items, 4, seed=1, shuffle=True, epoch=0) for x in b]
    again = [x for b in sampling.batches(items, 4, seed=1, shuffle=True, epoch=0) for x in b]
    second = [x for b in sampling.batches(items, 4, seed=1, shuffle=True, epoch=1) for x in b]
    assert first == again
    assert first != second
    assert sorted(first) == items


def test_batches_invalid_size():
    with pytest.raises(ValueError):
        list(sampling.batches([1, 2], 0))
