"""Batch command-line front end: train, eval, detect, synth.

Exit codes: 0 success, 2 input/config error, 3 numeric abort during
training, 4 checkpoint/model mismatch.
"""

import argparse
import os
import sys

import numpy as np
import yaml

from . import data as D
from .boxes import detection_row
from .crn import CrnSpec, crn_build
from .detection import HeadSpec, LossConfig, detect, mdn_build
from .errors import CheckpointError, ConfigError, DataError, MdnetError, TrainingDiverged
from .mfpn import MfpnSpec
from .training import (
    TrainConfig,
    evaluate_classifier,
    evaluate_detector,
    load_checkpoint,
    save_checkpoint,
    train_classifier,
    train_detector,
    write_metrics,
)

# every config key, with its default; unknown keys are rejected
_MODEL_DEFAULTS = {
    "kind": None,  # "crn" | "mdn" (required)
    "num_classes": None,  # 43 for crn, 3 for mdn
    "seed": 0,
    "input_size": 384,
    "stem_channels": [64, 128, 256],
    "down_channels": [256, 256, 512, 1024, 1024],
    "fused_channels": 256,
    "head_channels": [256, 256, 512, 512, 512],
}
_DATA_DEFAULTS = {
    "kind": None,  # classification | detection | synthetic-classification | synthetic-detection
    "root": None,
    "annotations": None,
    "split_manifest": None,
    "split": None,
    "superclass_map": None,
    "balance": False,
    "balance_low": 500,
    "balance_high": 1000,
    "n": 100,
    "seed": 0,
    "classes": [1, 2, 3],
    "sign_size": [20, 120],
    "max_signs": 2,
    "fog": False,
    "occlusion": False,
}
_TRAIN_DEFAULTS = {
    "epochs": 200,
    "batch_size": 32,
    "lr": 0.001,
    "momentum": 0.9,
    "seed": 0,
    "checkpoint_every": 0,
    "eval_every": 1,
    "target_accuracy": None,
    "augment": False,
    "alpha": 1.0,
    "negative_ratio": 3.0,
    "match_iou": 0.5,
}
_DETECT_DEFAULTS = {"t": 0.5, "nms_iou": 0.45}


def _merge_section(raw, defaults, section):
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config section [{section}] must be a mapping")
    unknown = set(raw) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    merged = dict(defaults)
    merged.update(raw)
    return merged


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark else ""
        raise ConfigError(f"{path}: YAML parse error{where}: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping of sections")
    unknown = set(raw) - {"model", "data", "train", "detect"}
    if unknown:
        raise ConfigError(f"{path}: unknown section(s): {', '.join(sorted(unknown))}")
    cfg = {
        "model": _merge_section(raw.get("model"), _MODEL_DEFAULTS, "model"),
        "data": _merge_section(raw.get("data"), _DATA_DEFAULTS, "data"),
        "train": _merge_section(raw.get("train"), _TRAIN_DEFAULTS, "train"),
        "detect": _merge_section(raw.get("detect"), _DETECT_DEFAULTS, "detect"),
    }
    if cfg["model"]["kind"] not in ("crn", "mdn"):
        raise ConfigError(f"{path}: model.kind must be 'crn' or 'mdn'")
    if cfg["model"]["num_classes"] is None:
        cfg["model"]["num_classes"] = 43 if cfg["model"]["kind"] == "crn" else 3
    return cfg


def _build_model(mc):
    if mc["kind"] == "crn":
        return crn_build(CrnSpec(num_classes=mc["num_classes"]), seed=mc["seed"])
    trunk = MfpnSpec(
        input_size=mc["input_size"],
        stem_channels=tuple(mc["stem_channels"]),
        down_channels=tuple(mc["down_channels"]),
        fused_channels=mc["fused_channels"],
    )
    head = HeadSpec(num_classes=mc["num_classes"], head_channels=tuple(mc["head_channels"]))
    return mdn_build(trunk, head, seed=mc["seed"])


def _load_dataset(dc, mc):
    kind = dc["kind"]
    if kind == "classification":
        if not dc["root"]:
            raise ConfigError("data.root is required for classification datasets")
        dataset = D.load_classification_dataset(dc["root"], num_classes=mc["num_classes"])
        if dc["balance"]:
            dataset = D.balance_classes(
                dataset, low=dc["balance_low"], high=dc["balance_high"], seed=dc["seed"]
            )
        return dataset
    if kind == "detection":
        if not dc["root"]:
            raise ConfigError("data.root is required for detection datasets")
        return D.load_detection_dataset(
            dc["root"],
            annotation_file=dc["annotations"],
            input_size=mc["input_size"],
            split_manifest=dc["split_manifest"],
            split=dc["split"],
            superclass_map=dc["superclass_map"],
            num_classes=mc["num_classes"],
        )
    if kind == "synthetic-classification":
        return D.generate_synthetic_chips(dc["n"], num_classes=mc["num_classes"], seed=dc["seed"])
    if kind == "synthetic-detection":
        return D.generate_synthetic_scenes(
            dc["n"],
            classes=tuple(dc["classes"]),
            seed=dc["seed"],
            size=mc["input_size"],
            sign_size=tuple(dc["sign_size"]),
            max_signs=dc["max_signs"],
            fog=dc["fog"],
            occlusion=dc["occlusion"],
        )
    raise ConfigError(f"unknown data.kind {kind!r}")


def _train_config(tc, kind):
    return TrainConfig(
        epochs=tc["epochs"],
        batch_size=tc["batch_size"],
        lr=tc["lr"],
        momentum=tc["momentum"],
        seed=tc["seed"],
        checkpoint_every=tc["checkpoint_every"],
        eval_every=tc["eval_every"] if kind == "crn" else 0,
        target_accuracy=tc["target_accuracy"],
        augment=tc["augment"],
        loss=LossConfig(
            alpha=tc["alpha"],
            negative_ratio=tc["negative_ratio"],
            match_iou=tc["match_iou"],
        ),
    )


def cmd_train(args):
    cfg = load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    model = _build_model(cfg["model"])
    dataset = _load_dataset(cfg["data"], cfg["model"])
    tcfg = _train_config(cfg["train"], cfg["model"]["kind"])

    checkpoints = []

    def progress(record):
        line = f"epoch {record.epoch}: loss {record.train_loss:.4f}"
        if record.eval_accuracy is not None:
            line += f" accuracy {record.eval_accuracy:.4f}"
        print(line)
        if tcfg.checkpoint_every and record.epoch % tcfg.checkpoint_every == 0:
            path = os.path.join(args.out, f"model_epoch{record.epoch}.ckpt")
            save_checkpoint(model, path)
            checkpoints.append(path)

    if cfg["model"]["kind"] == "crn":
        model, history = train_classifier(model, dataset, tcfg, progress=progress)
    else:
        model, history = train_detector(model, dataset, tcfg, progress=progress)
    save_checkpoint(model, os.path.join(args.out, "model.ckpt"))
    write_metrics(history, os.path.join(args.out, "metrics.csv"), cfg["model"]["kind"])
    print(f"wrote {os.path.join(args.out, 'model.ckpt')} and metrics.csv")
    return 0


def cmd_eval(args):
    model = load_checkpoint(args.checkpoint)
    kind = "crn" if not hasattr(model, "anchors") else "mdn"
    if kind == "crn":
        dataset = D.load_classification_dataset(args.data, num_classes=model.spec.num_classes)
        accuracy = evaluate_classifier(model, dataset)
        print(f"samples: {len(dataset)}")
        print(f"accuracy: {accuracy:.6f}")
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(f"samples;accuracy\n{len(dataset)};{accuracy:.6f}\n")
        return 0
    dataset = D.load_detection_dataset(
        args.data,
        annotation_file=args.annotations,
        input_size=model.input_size,
        split_manifest=args.split_manifest,
        split=args.split,
        superclass_map=args.superclass_map,
        num_classes=model.num_classes,
    )
    metrics = evaluate_detector(
        model, dataset, t=args.t, match_iou=args.match_iou, nms_iou=args.nms_iou
    )
    print("class;ap;precision;recall;tp;detections;ground_truths")
    for cls, m in sorted(metrics.per_class.items()):
        print(
            f"{cls};{m.ap:.6f};{m.precision:.6f};{m.recall:.6f};"
            f"{m.true_positives};{m.detections};{m.ground_truths}"
        )
    for name, m in sorted(metrics.per_superclass.items()):
        print(
            f"{name};{m.ap:.6f};{m.precision:.6f};{m.recall:.6f};"
            f"{m.true_positives};{m.detections};{m.ground_truths}"
        )
    print(f"mAP;{metrics.map_score:.6f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(f"mAP;{metrics.map_score:.6f}\n")
    return 0


def _draw_box(image, xmin, ymin, xmax, ymax, color=(1.0, 0.0, 0.0)):
    _, h, w = image.shape
    x1 = int(np.clip(round(xmin * w), 0, w - 1))
    x2 = int(np.clip(round(xmax * w), 0, w - 1))
    y1 = int(np.clip(round(ymin * h), 0, h - 1))
    y2 = int(np.clip(round(ymax * h), 0, h - 1))
    for c in range(3):
        image[c, y1, x1 : x2 + 1] = color[c]
        image[c, y2, x1 : x2 + 1] = color[c]
        image[c, y1 : y2 + 1, x1] = color[c]
        image[c, y1 : y2 + 1, x2] = color[c]


def cmd_detect(args):
    model = load_checkpoint(args.checkpoint)
    if not hasattr(model, "anchors"):
        raise ConfigError("detect needs a detector checkpoint (model.kind = mdn)")
    image = D.load_image(args.image)
    if image.shape[1] != model.input_size or image.shape[2] != model.input_size:
        image = D.bilinear_resize(image, model.input_size, model.input_size)
    dets = detect(model, image, t=args.t, nms_iou=args.nms_iou)
    image_id = os.path.splitext(os.path.basename(args.image))[0]
    lines = [detection_row(image_id, d) for d in dets]
    text = "\n".join(lines)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + ("\n" if lines else ""))
    if text:
        print(text)
    if args.render:
        canvas = image.copy()
        for d in dets:
            _draw_box(canvas, d.xmin, d.ymin, d.xmax, d.ymax)
        D.write_ppm(args.render, canvas)
    return 0


def cmd_synth(args):
    dataset = D.generate_synthetic_scenes(
        args.n,
        classes=tuple(int(c) for c in args.classes.split(",")),
        seed=args.seed,
        size=args.size,
        sign_size=(args.sign_min, args.sign_max),
        max_signs=args.max_signs,
        fog=args.fog,
        occlusion=args.occlude,
    )
    D.save_detection_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} scenes ({dataset.total_boxes()} boxes) to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mdnet", description="Traffic-sign classifier/detector batch runner"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a YAML config")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("checkpoint")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--annotations", default=None)
    p.add_argument("--split-manifest", default=None)
    p.add_argument("--split", default=None, choices=["train", "test"])
    p.add_argument("--superclass-map", default=None)
    p.add_argument("--t", type=float, default=0.5)
    p.add_argument("--nms-iou", type=float, default=0.45)
    p.add_argument("--match-iou", type=float, default=0.5)
    p.add_argument("--out", default=None, help="also write metrics to this file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("detect", help="run detection on one image")
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.add_argument("--t", type=float, default=0.5)
    p.add_argument("--nms-iou", type=float, default=0.45)
    p.add_argument("--out", default=None, help="write detection rows here")
    p.add_argument("--render", default=None, help="write a PPM with boxes drawn")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("synth", help="write a synthetic detection dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--classes", default="1,2,3")
    p.add_argument("--sign-min", type=int, default=20)
    p.add_argument("--sign-max", type=int, default=120)
    p.add_argument("--max-signs", type=int, default=2)
    p.add_argument("--fog", action="store_true")
    p.add_argument("--occlude", action="store_true")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (ConfigError, DataError, MdnetError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
