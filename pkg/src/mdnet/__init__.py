"""Multi-scale deconvolution network for traffic-sign recognition.

A self-contained numpy stack: reverse-mode autodiff tensor, residual
classifier, feature-pyramid trunk with learned upsampling, five-scale
detection head with anchor matching and a weighted confidence/localisation
loss, plus dataset tooling, deterministic training loops, and a batch CLI.
"""

from .boxes import Detection, GroundTruthBox, decode, encode, iou, nms
from .crn import CrnSpec, classify, crn_build, crn_forward
from .detection import (
    HeadSpec,
    LossConfig,
    MatchAssignment,
    confidence_loss,
    detect,
    generate_default_boxes,
    localization_loss,
    match_anchors,
    mdn_build,
    mdn_forward,
    total_loss,
)
from .estimators import TrafficSignClassifier, TrafficSignDetector
from .mfpn import FeaturePyramid, MfpnSpec, mfpn_build, mfpn_forward
from .tensor import Tensor, no_grad
from .training import (
    TrainConfig,
    evaluate_classifier,
    evaluate_detector,
    load_checkpoint,
    save_checkpoint,
    train_classifier,
    train_detector,
)

__version__ = "0.1.0"

__all__ = [
    "Detection",
    "GroundTruthBox",
    "decode",
    "encode",
    "iou",
    "nms",
    "CrnSpec",
    "classify",
    "crn_build",
    "crn_forward",
    "HeadSpec",
    "LossConfig",
    "MatchAssignment",
    "confidence_loss",
    "detect",
    "generate_default_boxes",
    "localization_loss",
    "match_anchors",
    "mdn_build",
    "mdn_forward",
    "total_loss",
    "TrafficSignClassifier",
    "TrafficSignDetector",
    "FeaturePyramid",
    "MfpnSpec",
    "mfpn_build",
    "mfpn_forward",
    "Tensor",
    "no_grad",
    "TrainConfig",
    "evaluate_classifier",
    "evaluate_detector",
    "load_checkpoint",
    "save_checkpoint",
    "train_classifier",
    "train_detector",
]
