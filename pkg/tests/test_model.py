import numpy as np
import pytest

from intermep import model as md
from intermep.data import SynthSpec, Vocab, gen_synthetic
from intermep.utils import ConfigError

MODES = ("none", "t2v", "v2t", "tw")


def tiny_config(mode="tw", **kwargs):
    settings = dict(d_t=8, d_v=12, n_layers_text=2, n_layers_vision=2, n_heads=2, top_n=1,
                    interaction_mode=mode, lora_rank=2, lora_targets=("k", "v", "o"), d_f=6,
                    vocab_size=128, max_text_len=12, image_side=4, patch_size=2,
                    dtype="float64")
    settings.update(kwargs)
    return md.ModelConfig(**settings)


@pytest.fixture(scope="module")
def dataset():
    return gen_synthetic(SynthSpec(n_samples=12, seed=3, image_side=4, patch_size=2))


def detector_and_batch(dataset, mode="tw", **kwargs):
    detector = md.SarcasmDetector(tiny_config(mode, **kwargs), dataset.vocab, seed=1)
    return detector, detector.encode_batch(list(dataset)[:5])


def test_config_defaults_are_valid():
    assert md.ModelConfig().validate() == []


def test_config_normalises_targets_and_mode():
    config = md.ModelConfig(interaction_mode="T2V", lora_targets="W_k, W_v,o")
    assert config.lora_targets == ("k", "v", "o")
    assert config.mode is md.InteractionMode.T2V


def test_config_lists_every_problem():
    config = md.ModelConfig(n_heads=3, top_n=9, interaction_mode="sideways",
                            lora_targets=("z",), patch_size=5, dtype="float16")
    problems = config.validate()
    assert len(problems) == 6
    with pytest.raises(ConfigError) as err:
        config.check()
    assert err.value.problems == problems


def test_config_rank_zero_needs_no_targets():
    assert md.ModelConfig(lora_rank=0, lora_targets=()).validate() == []
    assert md.ModelConfig(lora_rank=0).validate() != []


def test_config_round_trip():
    config = tiny_config()
    assert md.ModelConfig.from_dict(config.to_dict()) == config


def test_config_unknown_key():
    with pytest.raises(ConfigError, match="unknown model config key 'depth'"):
        md.ModelConfig.from_dict({"depth": 3})


def test_presets():
    paper = md.ModelConfig.from_preset("paper")
    assert (paper.top_n, paper.lora_rank, paper.d_f) == (4, 8, 1024)
    assert paper.lora_targets == ("k", "v", "o")
    assert paper.validate() == []
    assert md.ModelConfig.from_preset("toy") == md.ModelConfig()


def test_unknown_preset():
    with pytest.raises(ConfigError, match="unknown preset"):
        md.ModelConfig.from_preset("huge")


def test_tokenize():
    vocab = Vocab(["great", "sunny", "day"])
    assert md.tokenize("great sunny day", vocab, 16) == [1, 4, 5, 6, 2]
    assert md.tokenize("great cloudy", vocab, 16) == [1, 4, 3, 2]


def test_tokenize_truncates_before_eos():
    vocab = Vocab(["a"])
    ids = md.tokenize("a a a a a", vocab, 4)
    assert ids == [1, 4, 4, 2]


def test_extract_patches():
    images = np.arange(16.0).reshape(1, 4, 4)
    patches = md.extract_patches(images, 2)
    assert patches.shape == (1, 4, 4)
    assert patches[0, 0].tolist() == [0.0, 1.0, 4.0, 5.0]
    assert patches[0, 3].tolist() == [10.0, 11.0, 14.0, 15.0]


def test_extract_patches_bad_size():
    with pytest.raises(ValueError):
        md.extract_patches(np.zeros((1, 4, 4)), 3)


def test_encode_batch(dataset):
    config = tiny_config()
    samples = list(dataset)[:3]
    batch = md.encode_batch(samples, dataset.vocab, config)
    assert batch.tokens.shape == (3, 12)
    assert batch.patches.shape == (3, 4, 4)
    for row, sample in enumerate(samples):
        eos = batch.eos_positions[row]
        assert batch.tokens[row, eos] == dataset.vocab["<eos>"]
        assert batch.text_valid[row].sum() == eos + 1
        assert np.all(batch.tokens[row, eos + 1:] == dataset.vocab["<pad>"])
    assert batch.labels.tolist() == [s.label for s in samples]


def test_encode_batch_image_mismatch(dataset):
    with pytest.raises(ValueError, match="image dimension mismatch"):
        md.encode_batch(list(dataset)[:2], dataset.vocab, tiny_config(image_side=8))


def test_encode_batch_empty(dataset):
    with pytest.raises(ValueError):
        md.encode_batch([], dataset.vocab, tiny_config())


@pytest.mark.parametrize("mode", MODES)
def test_forward_shapes_and_initial_probabilities(dataset, mode):
    detector, batch = detector_and_batch(dataset, mode)
    output = detector(batch)
    assert output.encoded.fused.shape == (5, 20)
    assert np.array_equal(output.probs.data, np.full((5, 2), 0.5))
    assert output.features.shape == (5, 6)
    assert np.allclose(np.linalg.norm(output.features.data, axis=1), 1.0, atol=1e-5)


@pytest.mark.parametrize("mode,present", [
    ("none", ("text", "image")),
    ("t2v", ("text", "image_inter")),
    ("v2t", ("text_inter", "image")),
    ("tw", ("text", "image", "text_inter", "image_inter")),
])
def test_passes_per_mode(dataset, mode, present):
    detector, batch = detector_and_batch(dataset, mode)
    encoded = detector.interclip(batch)
    for key in ("text", "image", "text_inter", "image_inter"):
        assert (getattr(encoded, key) is not None) == (key in present)


def test_t2v_text_half_is_vanilla_eos(dataset):
    detector, batch = detector_and_batch(dataset, "t2v")
    encoded = detector.interclip(batch)
    text = detector.interclip.encode_text(batch.tokens, batch.text_valid).data
    eos_rows = text[np.arange(5), batch.eos_positions]
    assert np.array_equal(encoded.fused.data[:, :8], eos_rows)


def test_shared_lower_layers_match_full_passes(dataset):
    """
    Sharing the lower layers gives the same result as two full passes.

    """
    detector, batch = detector_and_batch(dataset, "tw")
    clip = detector.interclip
    encoded = clip(batch)
    text = clip.encode_text(batch.tokens, batch.text_valid)
    image = clip.encode_image(batch.patches)
    image_valid = np.ones(image.shape[:2], dtype=bool)
    assert np.array_equal(encoded.text.data, text.data)
    assert np.array_equal(encoded.image.data, image.data)
    text_inter = clip.encode_text(batch.tokens, batch.text_valid, condition=image,
                                  cond_valid=image_valid)
    image_inter = clip.encode_image(batch.patches, condition=text, cond_valid=batch.text_valid)
    assert np.array_equal(encoded.text_inter.data, text_inter.data)
    assert np.array_equal(encoded.image_inter.data, image_inter.data)


def test_top_n_zero_ignores_condition(dataset):
    detector, batch = detector_and_batch(dataset, "none", top_n=0, lora_rank=0, lora_targets=())
    clip = detector.interclip
    condition = clip.encode_image(batch.patches)
    plain = clip.encode_text(batch.tokens, batch.text_valid)
    conditioned = clip.encode_text(batch.tokens, batch.text_valid, condition=condition)
    assert np.array_equal(plain.data, conditioned.data)


def test_condition_row_order_does_not_matter(dataset):
    detector, batch = detector_and_batch(dataset, "t2v")
    clip = detector.interclip
    text = clip.encode_text(batch.tokens, batch.text_valid)
    order = np.array([2, 0, 1] + list(range(3, text.shape[1])))
    valid = batch.text_valid
    a = clip.encode_image(batch.patches, condition=text, cond_valid=valid).data
    b = clip.encode_image(batch.patches, condition=text[:, order], cond_valid=valid[:, order]).data
    assert np.allclose(a, b, atol=1e-12)


def test_fuse_errors_and_none_mode():
    text = md.Tensor(np.ones((1, 3, 2)))
    image = md.Tensor(np.zeros((1, 2, 3)))
    with pytest.raises(ValueError, match="needs the 'image_inter'"):
        md.fuse("t2v", text, image, None, None, [2])
    fused, sources = md.fuse("none", text, image, md.Tensor(np.full((1, 3, 2), 7.0)), None, [2])
    assert sources == ("text", "image")
    assert fused.data.tolist() == [[1.0, 1.0, 0.0, 0.0, 0.0]]


def test_batch_of_one_matches_larger_batch(dataset):
    detector, batch = detector_and_batch(dataset, "tw")
    for param in detector.trainable_parameters().values():
        param.data += 0.1
    full = detector(batch)
    single = detector(detector.encode_batch([dataset[0]]))
    assert np.allclose(full.probs.data[0], single.probs.data[0], atol=1e-12)
    assert np.allclose(full.features.data[0], single.features.data[0], atol=1e-12)


def test_frozen_backbone_trains_adapters_only(dataset):
    detector, _ = detector_and_batch(dataset, "t2v")
    names = set(detector.trainable_parameters())
    assert not any("embedding" in name or "norm" in name for name in names)
    assert not any(name.startswith("interclip.") and ".mlp." in name for name in names)
    assert any(name.endswith("lora_B") for name in names)
    assert "interclip.vision_encoder.layers.1.attention.beta" in names
    assert not any("text_encoder" in name and "adapter" in name for name in names)
    assert any(name.startswith("classifier.") for name in names)
    assert any(name.startswith("projector.") for name in names)
    counts = detector.parameter_counts()
    assert 0 < counts["trainable"] < counts["total"]


def test_lora_only_on_top_layers(dataset):
    detector, _ = detector_and_batch(dataset, "none")
    names = set(detector.parameters())
    assert "interclip.text_encoder.layers.1.attention.w_k.lora_A" in names
    assert "interclip.text_encoder.layers.0.attention.w_k.lora_A" not in names


def test_without_projection(dataset):
    detector, batch = detector_and_batch(dataset, "tw", use_projection=False)
    assert detector(batch).features is None
    with pytest.raises(ValueError, match="without a projection head"):
        detector.project(detector.interclip(batch).fused)


def test_vocab_too_large(dataset):
    with pytest.raises(ConfigError, match="exceeds vocab_size"):
        md.SarcasmDetector(tiny_config(vocab_size=10), dataset.vocab)


def test_same_seed_same_output(dataset):
    a, batch = detector_and_batch(dataset, "tw")
    b, _ = detector_and_batch(dataset, "tw")
    assert np.array_equal(a.interclip(batch).fused.data, b.interclip(batch).fused.data)


def test_checkpoint_round_trip(dataset, tmp_path):
    detector, batch = detector_and_batch(dataset, "v2t", dtype="float32")
    for param in detector.trainable_parameters().values():
        param.data += np.float32(0.05)
    path = str(tmp_path / "model.json")
    md.save_detector(path, detector, metadata={"note": "x"})
    loaded, manifest = md.load_detector(path)
    assert manifest["note"] == "x"
    assert loaded.config == detector.config
    assert loaded.vocab == detector.vocab
    assert np.array_equal(loaded(batch).probs.data, detector(batch).probs.data)
