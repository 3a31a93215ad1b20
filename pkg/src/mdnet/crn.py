"""Residual convolutional classifier for 32x32 sign crops.

Six 3x3 convolutions in three blocks, two maxpools, two residual skips
(each bridged by a learned 1x1 projection so channel counts line up), and
three fully-connected layers ending in ``num_classes`` logits:

    conv1(3->64) -> pool -> [conv2_1(64->128) -> conv2_2(128->128) + skip]
    -> pool -> [conv3_1(128->256) -> conv3_2 -> conv3_3 + skip]
    -> fc(16384->1024) -> fc(1024->1024) -> fc(1024->num_classes)

Every convolution is followed by batch normalisation; ReLU comes after the
normalisation (and after each residual addition).
"""

from dataclasses import dataclass

import numpy as np

from . import layers
from .errors import DimensionError
from .layers import batchnorm, conv2d, fully_connected, maxpool2d
from .tensor import Tensor, no_grad, softmax

INPUT_SIZE = 32

# (name, in_ch, out_ch) for the six 3x3 convolutions
_CONV_ROWS = (
    ("conv1", 3, 64),
    ("conv2_1", 64, 128),
    ("conv2_2", 128, 128),
    ("conv3_1", 128, 256),
    ("conv3_2", 256, 256),
    ("conv3_3", 256, 256),
)
_FC_DIMS = (16384, 1024, 1024)  # fc3 output width comes from the spec


@dataclass
class CrnSpec:
    num_classes: int = 43

    def validate(self):
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be positive, got {self.num_classes}")


class CrnModel:
    """Built parameter set for the residual classifier."""

    def __init__(self, spec, seed=0):
        spec.validate()
        self.spec = spec
        rng = np.random.default_rng(seed)
        self.convs = {}
        self.bns = {}
        for name, cin, cout in _CONV_ROWS:
            self.convs[name] = layers.make_conv(cin, cout, 3, rng)
            self.bns[name] = layers.make_batchnorm(cout)
        # 1x1 projections carrying each pooled map onto the residual sum
        self.skip1 = layers.make_conv(64, 128, 1, rng)
        self.skip2 = layers.make_conv(128, 256, 1, rng)
        self.fcs = [
            layers.make_linear(_FC_DIMS[0], _FC_DIMS[1], rng),
            layers.make_linear(_FC_DIMS[1], _FC_DIMS[2], rng),
            layers.make_linear(_FC_DIMS[2], spec.num_classes, rng),
        ]

    def named_tensors(self):
        """Ordered name -> Tensor map of parameters and running statistics."""
        out = {}
        for name, _, _ in _CONV_ROWS:
            cp, bn = self.convs[name], self.bns[name]
            out[f"{name}.weight"] = cp.weight
            out[f"{name}.bias"] = cp.bias
            out[f"{name}.bn.gamma"] = bn.gamma
            out[f"{name}.bn.beta"] = bn.beta
            out[f"{name}.bn.running_mean"] = bn.running_mean
            out[f"{name}.bn.running_var"] = bn.running_var
        out["skip1.weight"] = self.skip1.weight
        out["skip1.bias"] = self.skip1.bias
        out["skip2.weight"] = self.skip2.weight
        out["skip2.bias"] = self.skip2.bias
        for i, fc in enumerate(self.fcs, start=1):
            out[f"fc{i}.weight"] = fc.weight
            out[f"fc{i}.bias"] = fc.bias
        return out

    def parameters(self):
        return [t for t in self.named_tensors().values() if t.requires_grad]

    def parameter_count(self):
        return sum(t.size for t in self.parameters())


def crn_build(spec, seed=0):
    """Deterministically initialise a classifier for the given spec."""
    return CrnModel(spec, seed)


def _conv_block(model, name, x, mode):
    y = conv2d(x, model.convs[name], stride=1, padding=1)
    return batchnorm(y, model.bns[name], mode=mode)


def crn_forward(model, batch, mode="train", return_intermediates=False):
    """Run a batch N x 3 x 32 x 32 to pre-softmax logits N x num_classes.

    With ``return_intermediates`` the per-layer outputs come back too, keyed
    by layer name, for shape-conformance checks.
    """
    if batch.ndim != 4 or batch.shape[1:] != (3, INPUT_SIZE, INPUT_SIZE):
        raise DimensionError(
            f"crn_forward expects N x 3 x {INPUT_SIZE} x {INPUT_SIZE}, got {tuple(batch.shape)}"
        )
    inter = {}
    x = _conv_block(model, "conv1", batch, mode).relu()
    inter["conv1"] = x
    p1 = maxpool2d(x)  # N x 64 x 16 x 16
    inter["maxpool1"] = p1

    y = _conv_block(model, "conv2_1", p1, mode).relu()
    inter["conv2_1"] = y
    y = _conv_block(model, "conv2_2", y, mode)
    y = layers.add(y, conv2d(p1, model.skip1, stride=1, padding=0)).relu()
    inter["conv2_2"] = y
    p2 = maxpool2d(y)  # N x 128 x 8 x 8
    inter["maxpool2"] = p2

    y = _conv_block(model, "conv3_1", p2, mode).relu()
    inter["conv3_1"] = y
    y = _conv_block(model, "conv3_2", y, mode).relu()
    inter["conv3_2"] = y
    y = _conv_block(model, "conv3_3", y, mode)
    y = layers.add(y, conv2d(p2, model.skip2, stride=1, padding=0)).relu()
    inter["conv3_3"] = y

    y = fully_connected(y, model.fcs[0]).relu()
    inter["fc1"] = y
    y = fully_connected(y, model.fcs[1]).relu()
    inter["fc2"] = y
    logits = fully_connected(y, model.fcs[2])
    inter["fc3"] = logits
    if return_intermediates:
        return logits, inter
    return logits


def classify(model, image):
    """Predict (class id, probability) for one 3 x 32 x 32 image (eval mode).

    Ties pick the lowest class id.
    """
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float32)
    with no_grad():
        logits = crn_forward(model, Tensor(arr[None]), mode="eval")
        probs = softmax(logits, axis=1).data[0]
    cls = int(np.argmax(probs))
    return cls, float(probs[cls])
