"""scikit-learn style estimators wrapping the classifier and detector.

These are thin adapters: hyperparameters live in ``__init__`` (so
``get_params`` / ``set_params`` / ``clone`` work), ``fit`` runs the training
engine, and predictions come back as plain numpy arrays.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .crn import INPUT_SIZE, CrnSpec, crn_build, crn_forward
from .data import ClassificationDataset, DetectionDataset, DetectionScene
from .detection import HeadSpec, LossConfig, detect, mdn_build
from .mfpn import MfpnSpec
from .tensor import Tensor, no_grad, softmax
from .training import TrainConfig, evaluate_detector, train_classifier, train_detector


def _check_images(X, size, name="X"):
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 4 or X.shape[1] != 3 or X.shape[2] != size or X.shape[3] != size:
        raise ValueError(
            f"{name} must have shape (n_samples, 3, {size}, {size}), got {X.shape}"
        )
    return X


class TrafficSignClassifier(ClassifierMixin, BaseEstimator):
    """Residual CNN classifier over 32x32 RGB crops.

    Parameters mirror the training config; ``fit(X, y)`` expects images in
    [0, 1] shaped (n, 3, 32, 32) and integer labels in [0, num_classes).
    """

    def __init__(
        self,
        num_classes=43,
        epochs=20,
        batch_size=32,
        lr=0.01,
        momentum=0.9,
        seed=0,
    ):
        self.num_classes = num_classes
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.seed = seed

    def fit(self, X, y):
        X = _check_images(X, INPUT_SIZE)
        y = np.asarray(y, dtype=np.int64)
        if y.shape != (len(X),):
            raise ValueError(f"y must be (n_samples,), got {y.shape}")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        dataset = ClassificationDataset(images=X, labels=y, num_classes=self.num_classes)
        model = crn_build(CrnSpec(num_classes=self.num_classes), seed=self.seed)
        cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            momentum=self.momentum,
            seed=self.seed,
        )
        self.model_, self.history_ = train_classifier(model, dataset, cfg)
        self.classes_ = np.arange(self.num_classes)
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this estimator has not been fitted yet")

    def predict_proba(self, X):
        self._require_fitted()
        X = _check_images(X, INPUT_SIZE)
        with no_grad():
            logits = crn_forward(self.model_, Tensor(X), mode="eval")
            return softmax(logits, axis=1).data

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)


class TrafficSignDetector(BaseEstimator):
    """Multi-scale detector over square scenes.

    ``fit(X, y)`` takes images (n, 3, S, S) in [0, 1] and, per image, an
    array (B, 5) of ground truths ``[class_id, cx, cy, w, h]`` with
    normalised center-form boxes and class ids starting at 1.  ``predict``
    returns, per image, an array (M, 6) of
    ``[class_id, score, xmin, ymin, xmax, ymax]``.  ``score`` is mAP.
    """

    def __init__(
        self,
        input_size=256,
        num_classes=3,
        epochs=40,
        batch_size=16,
        lr=0.005,
        momentum=0.9,
        seed=0,
        augment=False,
        score_threshold=0.5,
        nms_iou=0.45,
        match_iou=0.5,
        alpha=1.0,
        negative_ratio=3.0,
        stem_channels=(16, 24, 32),
        down_channels=(32, 32, 48, 64, 64),
        fused_channels=32,
        head_channels=(48, 48, 64, 64, 64),
    ):
        self.input_size = input_size
        self.num_classes = num_classes
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.seed = seed
        self.augment = augment
        self.score_threshold = score_threshold
        self.nms_iou = nms_iou
        self.match_iou = match_iou
        self.alpha = alpha
        self.negative_ratio = negative_ratio
        self.stem_channels = stem_channels
        self.down_channels = down_channels
        self.fused_channels = fused_channels
        self.head_channels = head_channels

    def _dataset(self, X, y):
        scenes = []
        for img, gt in zip(X, y):
            gt = np.asarray(gt, dtype=np.float64).reshape(-1, 5)
            scenes.append(
                DetectionScene(
                    image=img,
                    boxes=gt[:, 1:],
                    classes=gt[:, 0].astype(np.int64),
                )
            )
        return DetectionDataset(scenes=scenes, num_classes=self.num_classes)

    def fit(self, X, y):
        X = _check_images(X, self.input_size)
        if len(y) != len(X):
            raise ValueError("y must provide one ground-truth array per image")
        trunk = MfpnSpec(
            input_size=self.input_size,
            stem_channels=tuple(self.stem_channels),
            down_channels=tuple(self.down_channels),
            fused_channels=self.fused_channels,
        )
        head = HeadSpec(
            num_classes=self.num_classes, head_channels=tuple(self.head_channels)
        )
        model = mdn_build(trunk, head, seed=self.seed)
        cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            momentum=self.momentum,
            seed=self.seed,
            eval_every=0,
            augment=self.augment,
            loss=LossConfig(
                alpha=self.alpha,
                negative_ratio=self.negative_ratio,
                match_iou=self.match_iou,
            ),
        )
        self.model_, self.history_ = train_detector(model, self._dataset(X, y), cfg)
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this estimator has not been fitted yet")

    def predict(self, X):
        self._require_fitted()
        X = _check_images(X, self.input_size)
        results = []
        for img in X:
            dets = detect(
                self.model_, img, t=self.score_threshold, nms_iou=self.nms_iou
            )
            rows = [
                [d.class_id, d.score, d.xmin, d.ymin, d.xmax, d.ymax] for d in dets
            ]
            results.append(np.asarray(rows, dtype=np.float64).reshape(-1, 6))
        return results

    def score(self, X, y):
        """Mean average precision at the configured thresholds."""
        self._require_fitted()
        X = _check_images(X, self.input_size)
        metrics = evaluate_detector(
            self.model_,
            self._dataset(X, y),
            t=self.score_threshold,
            match_iou=self.match_iou,
            nms_iou=self.nms_iou,
        )
        return metrics.map_score
