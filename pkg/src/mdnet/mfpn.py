"""Multi-resolution trunk: strided downsampling plus learned upsampling.

A three-conv stem (stride 2 each) takes the image to 1/8 resolution, five
more stride-2 convolutions continue halving, and five transposed
convolutions walk back up.  At each resolution on the way up, the upsampled
map is added to a 1x1-projected copy of the same-resolution downward map;
the five fused maps (finest first) form the pyramid the detection head
consumes.  All fused maps carry ``fused_channels`` channels so the head sees
a uniform interface.
"""

from dataclasses import dataclass, field

import numpy as np

from . import layers
from .errors import ConfigError, DimensionError
from .layers import batchnorm, conv2d, transposed_conv2d

STEM_STRIDE = 8
NUM_LEVELS = 5


@dataclass
class MfpnSpec:
    input_size: int = 384
    stem_channels: tuple = (64, 128, 256)
    down_channels: tuple = (256, 256, 512, 1024, 1024)
    fused_channels: int = 256

    def validate(self):
        if self.input_size % STEM_STRIDE != 0:
            raise ConfigError(
                f"input_size must be divisible by the stem stride {STEM_STRIDE}, "
                f"got {self.input_size}"
            )
        if len(self.stem_channels) != 3:
            raise ConfigError("stem_channels must list 3 widths")
        if len(self.down_channels) != NUM_LEVELS:
            raise ConfigError(f"down_channels must list {NUM_LEVELS} widths")

    def level_sizes(self):
        """Spatial sizes of the five fused maps, finest first."""
        sizes = [self.input_size // STEM_STRIDE]
        for _ in range(NUM_LEVELS - 1):
            sizes.append(-(-sizes[-1] // 2))  # stride-2 conv = ceil halving
        return sizes


@dataclass
class FeaturePyramid:
    """Fused multi-resolution maps, finest first, plus raw path outputs."""

    levels: list
    down_maps: list = field(default_factory=list)
    up_maps: list = field(default_factory=list)

    def sizes(self):
        return [lvl.shape[2] for lvl in self.levels]


class MfpnModel:
    def __init__(self, spec, seed=0):
        spec.validate()
        self.spec = spec
        rng = np.random.default_rng(seed)
        fused = spec.fused_channels

        chans = [3, *spec.stem_channels]
        self.stem = [layers.make_conv(chans[i], chans[i + 1], 3, rng) for i in range(3)]
        self.stem_bns = [layers.make_batchnorm(c) for c in spec.stem_channels]

        down_in = [spec.stem_channels[-1], *spec.down_channels[:-1]]
        self.down = [
            layers.make_conv(cin, cout, 3, rng)
            for cin, cout in zip(down_in, spec.down_channels)
        ]
        self.down_bns = [layers.make_batchnorm(c) for c in spec.down_channels]

        # lateral 1x1 projections: stem output plus the first four down maps
        lat_in = [spec.stem_channels[-1], *spec.down_channels[:-1]]
        self.lateral = [layers.make_conv(c, fused, 1, rng) for c in lat_in]
        # the coarsest down map seeds the upward path
        self.seed = layers.make_conv(spec.down_channels[-1], fused, 1, rng)

        # up[i] produces the level-i map from the next-coarser fused map
        self.up = [layers.make_transposed_conv(fused, fused, 3, rng) for _ in range(NUM_LEVELS)]
        self.up_bns = [layers.make_batchnorm(fused) for _ in range(NUM_LEVELS)]

    def named_tensors(self):
        out = {}

        def put(prefix, conv, bn=None):
            out[f"{prefix}.weight"] = conv.weight
            out[f"{prefix}.bias"] = conv.bias
            if bn is not None:
                out[f"{prefix}.bn.gamma"] = bn.gamma
                out[f"{prefix}.bn.beta"] = bn.beta
                out[f"{prefix}.bn.running_mean"] = bn.running_mean
                out[f"{prefix}.bn.running_var"] = bn.running_var

        for i, (cv, bn) in enumerate(zip(self.stem, self.stem_bns)):
            put(f"stem{i}", cv, bn)
        for i, (cv, bn) in enumerate(zip(self.down, self.down_bns)):
            put(f"down{i}", cv, bn)
        for i, cv in enumerate(self.lateral):
            put(f"lateral{i}", cv)
        put("seed", self.seed)
        for i, (cv, bn) in enumerate(zip(self.up, self.up_bns)):
            put(f"up{i}", cv, bn)
        return out

    def parameters(self):
        return [t for t in self.named_tensors().values() if t.requires_grad]


def mfpn_build(spec, seed=0):
    return MfpnModel(spec, seed)


def _tconv_to(x, params, bn, target, mode):
    """Stride-2 transposed conv landing exactly on ``target`` pixels."""
    h = x.shape[2]
    out_pad = target - ((h - 1) * 2 - 2 + 3)
    y = transposed_conv2d(x, params, stride=2, padding=1, output_padding=out_pad)
    return batchnorm(y, bn, mode=mode)


def mfpn_forward(model, image, mode="train"):
    """Run an N x 3 x S x S batch through the trunk; returns the pyramid."""
    spec = model.spec
    if image.ndim != 4 or image.shape[1] != 3:
        raise DimensionError(f"expected N x 3 x S x S input, got {tuple(image.shape)}")
    if image.shape[2] != spec.input_size or image.shape[3] != spec.input_size:
        raise DimensionError(
            f"input is {image.shape[2]}x{image.shape[3]} but the model was built "
            f"for {spec.input_size}x{spec.input_size}"
        )

    x = image
    for cv, bn in zip(model.stem, model.stem_bns):
        x = batchnorm(conv2d(x, cv, stride=2, padding=1), bn, mode=mode).relu()
    stem_out = x

    down_maps = []
    for cv, bn in zip(model.down, model.down_bns):
        x = batchnorm(conv2d(x, cv, stride=2, padding=1), bn, mode=mode).relu()
        down_maps.append(x)

    lat_src = [stem_out, *down_maps[:-1]]
    laterals = [conv2d(src, cv, stride=1, padding=0) for src, cv in zip(lat_src, model.lateral)]

    up_maps = [None] * NUM_LEVELS
    levels = [None] * NUM_LEVELS
    t = conv2d(down_maps[-1], model.seed, stride=1, padding=0)
    for i in reversed(range(NUM_LEVELS)):
        t = _tconv_to(t, model.up[i], model.up_bns[i], laterals[i].shape[2], mode)
        up_maps[i] = t
        t = layers.add(t, laterals[i]).relu()
        levels[i] = t

    return FeaturePyramid(levels=levels, down_maps=down_maps, up_maps=up_maps)
