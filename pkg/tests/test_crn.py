"""Residual classifier: geometry, determinism, residual paths, gradients."""

import numpy as np
import pytest

from helpers import cast_model_float64, fd_subset_check
from mdnet.crn import CrnSpec, classify, crn_build, crn_forward
from mdnet.errors import DimensionError
from mdnet.tensor import Tensor, softmax

# per-layer output shapes for a batch of 4 (channel-corrected table rows)
EXPECTED_SHAPES = {
    "conv1": (4, 64, 32, 32),
    "maxpool1": (4, 64, 16, 16),
    "conv2_1": (4, 128, 16, 16),
    "conv2_2": (4, 128, 16, 16),
    "maxpool2": (4, 128, 8, 8),
    "conv3_1": (4, 256, 8, 8),
    "conv3_2": (4, 256, 8, 8),
    "conv3_3": (4, 256, 8, 8),
    "fc1": (4, 1024),
    "fc2": (4, 1024),
    "fc3": (4, 43),
}


def test_default_spec_final_width_is_43():
    model = crn_build(CrnSpec(), seed=0)
    assert model.fcs[2].weight.shape == (1024, 43)


def test_custom_class_count():
    model = crn_build(CrnSpec(num_classes=2), seed=0)
    assert model.fcs[2].weight.shape == (1024, 2)


def test_same_seed_gives_bit_identical_parameters():
    a = crn_build(CrnSpec(), seed=123)
    b = crn_build(CrnSpec(), seed=123)
    for name, t in a.named_tensors().items():
        assert np.array_equal(t.data, b.named_tensors()[name].data), name


def test_intermediate_shapes_match_layer_table():
    model = crn_build(CrnSpec(), seed=0)
    batch = Tensor(np.random.default_rng(0).random((4, 3, 32, 32), dtype=np.float32))
    logits, inter = crn_forward(model, batch, mode="train", return_intermediates=True)
    assert logits.shape == (4, 43)
    for name, shape in EXPECTED_SHAPES.items():
        assert tuple(inter[name].shape) == shape, name


def test_wrong_input_size_rejected():
    model = crn_build(CrnSpec(), seed=0)
    with pytest.raises(DimensionError):
        crn_forward(model, Tensor(np.zeros((1, 3, 64, 64))))


def test_zero_input_gives_zero_logits():
    model = crn_build(CrnSpec(num_classes=7), seed=0)
    logits = crn_forward(model, Tensor(np.zeros((2, 3, 32, 32))), mode="train")
    assert np.allclose(logits.data, 0.0)


def test_eval_forward_is_deterministic():
    model = crn_build(CrnSpec(), seed=0)
    batch = Tensor(np.random.default_rng(1).random((2, 3, 32, 32), dtype=np.float32))
    a = crn_forward(model, batch, mode="eval").data
    b = crn_forward(model, batch, mode="eval").data
    assert np.array_equal(a, b)


def test_residual_skips_are_live_paths():
    model = crn_build(CrnSpec(), seed=0)
    batch = Tensor(np.random.default_rng(2).random((1, 3, 32, 32), dtype=np.float32))
    with_skips = crn_forward(model, batch, mode="eval").data.copy()
    saved = [model.skip1.weight.data.copy(), model.skip2.weight.data.copy()]
    model.skip1.weight.data = np.zeros_like(saved[0])
    model.skip2.weight.data = np.zeros_like(saved[1])
    without = crn_forward(model, batch, mode="eval").data
    model.skip1.weight.data, model.skip2.weight.data = saved
    assert np.max(np.abs(with_skips - without)) > 0.0


def test_softmax_rows_sum_to_one():
    model = crn_build(CrnSpec(), seed=0)
    batch = Tensor(np.random.default_rng(3).random((3, 3, 32, 32), dtype=np.float32))
    probs = softmax(crn_forward(model, batch, mode="eval"), axis=1).data
    assert np.max(np.abs(probs.sum(axis=1) - 1.0)) < 1e-6


def test_first_conv_gradient_matches_finite_differences():
    # tiny class count keeps the double-precision sweep cheap
    model = cast_model_float64(crn_build(CrnSpec(num_classes=2), seed=0))
    w = model.convs["conv1"].weight
    rng = np.random.default_rng(4)
    batch = Tensor(rng.random((1, 3, 32, 32)), dtype=np.float64)

    def loss():
        return crn_forward(model, batch, mode="train").mean()

    probe = rng.choice(w.size, size=6, replace=False)
    assert fd_subset_check(loss, w, probe, eps=1e-6) < 1e-3


class TestClassify:
    def test_unique_max_wins(self):
        model = crn_build(CrnSpec(num_classes=43), seed=0)
        # force deterministic logits: zero the last layer, set one bias
        model.fcs[2].weight.data[:] = 0.0
        model.fcs[2].bias.data[:] = 0.0
        model.fcs[2].bias.data[7] = 3.0
        cls, prob = classify(model, np.random.default_rng(5).random((3, 32, 32), dtype=np.float32))
        assert cls == 7
        expected = np.exp(3.0) / (np.exp(3.0) + 42.0)
        assert abs(prob - expected) < 1e-6

    def test_uniform_logits_tie_breaks_to_class_zero(self):
        model = crn_build(CrnSpec(num_classes=43), seed=0)
        model.fcs[2].weight.data[:] = 0.0
        model.fcs[2].bias.data[:] = 0.0
        cls, prob = classify(model, np.zeros((3, 32, 32), dtype=np.float32))
        assert cls == 0
        assert abs(prob - 1.0 / 43.0) < 1e-9
