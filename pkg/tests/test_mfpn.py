"""Pyramid trunk: layer-table geometry, fusion, determinism, gradients."""

import numpy as np
import pytest

from helpers import cast_model_float64, fd_subset_check
from mdnet.errors import ConfigError, DimensionError
from mdnet.mfpn import MfpnSpec, mfpn_build, mfpn_forward
from mdnet.tensor import Tensor, no_grad

SLIM = dict(stem_channels=(2, 3, 4), down_channels=(4, 4, 5, 6, 6), fused_channels=3)


def test_input_512_reproduces_layer_table():
    model = mfpn_build(MfpnSpec(input_size=512), seed=0)
    with no_grad():
        pyr = mfpn_forward(model, Tensor(np.zeros((1, 3, 512, 512), dtype=np.float32)), mode="eval")
    down_shapes = [tuple(m.shape) for m in pyr.down_maps]
    assert down_shapes == [
        (1, 256, 32, 32),
        (1, 256, 16, 16),
        (1, 512, 8, 8),
        (1, 1024, 4, 4),
        (1, 1024, 2, 2),
    ]
    up_shapes = [tuple(m.shape) for m in pyr.up_maps]
    assert up_shapes == [
        (1, 256, 64, 64),
        (1, 256, 32, 32),
        (1, 256, 16, 16),
        (1, 256, 8, 8),
        (1, 256, 4, 4),
    ]
    assert pyr.sizes() == [64, 32, 16, 8, 4]


def test_input_384_has_48_pixel_finest_level():
    spec = MfpnSpec(input_size=384, **SLIM)
    model = mfpn_build(spec, seed=0)
    with no_grad():
        pyr = mfpn_forward(model, Tensor(np.zeros((1, 3, 384, 384), dtype=np.float32)), mode="eval")
    assert pyr.sizes() == [48, 24, 12, 6, 3]


def test_spec_level_sizes_matches_forward():
    spec = MfpnSpec(input_size=384, **SLIM)
    model = mfpn_build(spec, seed=0)
    with no_grad():
        pyr = mfpn_forward(model, Tensor(np.zeros((1, 3, 384, 384), dtype=np.float32)), mode="eval")
    assert spec.level_sizes() == pyr.sizes()


def test_indivisible_input_size_rejected():
    with pytest.raises(ConfigError):
        MfpnSpec(input_size=100).validate()


def test_wrong_runtime_size_rejected():
    model = mfpn_build(MfpnSpec(input_size=384, **SLIM), seed=0)
    with pytest.raises(DimensionError):
        mfpn_forward(model, Tensor(np.zeros((1, 3, 256, 256))))


def test_same_seed_bit_identical():
    a = mfpn_build(MfpnSpec(input_size=256, **SLIM), seed=9)
    b = mfpn_build(MfpnSpec(input_size=256, **SLIM), seed=9)
    for name, t in a.named_tensors().items():
        assert np.array_equal(t.data, b.named_tensors()[name].data), name


def test_zero_image_gives_zero_pyramid():
    model = mfpn_build(MfpnSpec(input_size=128, **SLIM), seed=0)
    pyr = mfpn_forward(model, Tensor(np.zeros((2, 3, 128, 128), dtype=np.float32)), mode="train")
    for lvl in pyr.levels:
        assert np.allclose(lvl.data, 0.0)


def test_five_down_and_five_up_layers_execute():
    model = mfpn_build(MfpnSpec(input_size=128, **SLIM), seed=0)
    pyr = mfpn_forward(model, Tensor(np.zeros((1, 3, 128, 128), dtype=np.float32)), mode="eval")
    assert len(pyr.down_maps) == 5
    assert len(pyr.up_maps) == 5
    assert len(model.up) == 5 and len(model.down) == 5


def test_resolutions_strictly_halve():
    for size in (256, 384, 512):
        spec = MfpnSpec(input_size=size, **SLIM)
        sizes = spec.level_sizes()
        assert len(sizes) == 5
        for a, b in zip(sizes, sizes[1:]):
            assert b == -(-a // 2)
        if size % 128 == 0:
            assert all(a == 2 * b for a, b in zip(sizes, sizes[1:]))


def test_fused_channels_are_uniform():
    model = mfpn_build(MfpnSpec(input_size=256, **SLIM), seed=0)
    with no_grad():
        pyr = mfpn_forward(model, Tensor(np.zeros((1, 3, 256, 256), dtype=np.float32)), mode="eval")
    assert all(lvl.shape[1] == 3 for lvl in pyr.levels)


def test_coarsest_level_gradient_wrt_up_conv_matches_fd():
    spec = MfpnSpec(input_size=64, stem_channels=(2, 2, 2), down_channels=(2, 2, 2, 2, 2), fused_channels=2)
    model = cast_model_float64(mfpn_build(spec, seed=0))
    rng = np.random.default_rng(0)
    image = Tensor(rng.random((1, 3, 64, 64)), dtype=np.float64)
    w = model.up[4].weight  # the transposed conv feeding the coarsest level

    def loss():
        pyr = mfpn_forward(model, image, mode="train")
        return pyr.levels[4].sum()

    probe = rng.choice(w.size, size=5, replace=False)
    assert fd_subset_check(loss, w, probe, eps=1e-6) < 1e-3
