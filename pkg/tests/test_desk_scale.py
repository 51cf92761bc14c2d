"""
Desk-scale training runs on the synthetic XOR data. All are slow; run with
``pytest -m slow``.

"""
import pytest

from intermep import fit
from intermep import metrics as mt
from intermep.config import RunConfig
from intermep.data import SynthSpec, gen_synthetic
from intermep.sampling import split

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2)


def make_splits(seed, noise=0.0):
    dataset = gen_synthetic(SynthSpec(n_samples=2200, seed=seed, text_noise=noise,
                                      image_noise=noise))
    train_set, _, test_set = split(dataset, (2000 / 2200, 0.0, 200 / 2200), seed=seed)
    return train_set, test_set


def configs(mode="t2v", seed=0):
    config = RunConfig(interaction_mode=mode, seed=seed)
    return config.model_config(), config.train_config()


@pytest.mark.parametrize("mode", ["none", "t2v", "v2t", "tw"])
def test_every_mode_learns_the_xor(mode):
    wins = 0
    for seed in SEEDS:
        train_set, test_set = make_splits(seed)
        model_config, train_config = configs(mode, seed)
        run = fit.train(model_config, train_config, train_set)
        wins += mt.evaluate(run.detector, test_set).accuracy >= 0.95
    assert wins >= 2


@pytest.mark.parametrize("modality", ["text", "image"])
def test_single_modality_is_not_enough(modality):
    train_set, test_set = make_splits(0)
    assert mt.unimodal_probe(train_set, modality).accuracy <= 0.60


def test_lora_does_not_hurt_on_noisy_data():
    wins = 0
    for seed in SEEDS:
        train_set, test_set = make_splits(seed, noise=0.15)
        model_config, train_config = configs(seed=seed)
        base = fit.ablate("baseline", model_config, train_config, train_set, test_set)
        wo_lora = fit.ablate("wo_lora", model_config, train_config, train_set, test_set)
        wins += base.report.accuracy >= wo_lora.report.accuracy
    assert wins >= 2


def test_memory_does_not_degrade_the_classifier():
    wins = 0
    for seed in SEEDS:
        train_set, test_set = make_splits(seed, noise=0.15)
        model_config, train_config = configs(seed=seed)
        detector = fit.train(model_config, train_config, train_set).detector
        outputs = mt.predict_outputs(detector, test_set)
        classifier = mt.evaluate_outputs(*outputs, test_set.labels)
        sweep = mt.sweep_memory(detector, test_set, (8, 16, 32, 64), outputs=outputs, split="test")
        wins += sweep.best.accuracy >= classifier.accuracy - 0.01
    assert wins >= 2
