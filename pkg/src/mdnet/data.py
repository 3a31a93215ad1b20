"""Dataset ingestion, augmentation, and synthetic fixtures.

Images are float32 arrays shaped (3, H, W) with values in [0, 1].  The only
raster format read and written natively is binary PPM (P6, maxval 255);
other formats fall back to Pillow when it is installed.

Annotation conventions (semicolon-delimited text):

* classification: ``Filename;Width;Height;Roi.X1;Roi.Y1;Roi.X2;Roi.Y2;ClassId``
  with one file per class directory,
* detection: ``Filename;Xmin;Ymin;Xmax;Ymax;ClassId`` with one row per box,
* split manifest: ``Filename;train`` or ``Filename;test`` rows.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .boxes import GroundTruthBox, center_to_corner, corner_to_center
from .errors import DataError

DEFAULT_SUPERCLASSES = {1: "prohibitory", 2: "mandatory", 3: "danger"}

# solid fill colours per superclass: red circle, blue circle, yellow triangle
_CLASS_COLORS = {1: (0.85, 0.10, 0.10), 2: (0.10, 0.20, 0.85), 3: (0.92, 0.82, 0.08)}
_CLASS_SHAPES = {1: "circle", 2: "circle", 3: "triangle"}


# ----------------------------------------------------------------------
# raster I/O
# ----------------------------------------------------------------------
def write_ppm(path, image):
    """Write a (3, H, W) float image in [0, 1] as binary PPM."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image, got {image.shape}")
    _, h, w = image.shape
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.transpose(1, 2, 0).tobytes())


def read_ppm(path):
    """Read a binary PPM (P6, maxval 255) into a float32 (3, H, W) array."""
    with open(path, "rb") as fh:
        raw = fh.read()

    pos = 0

    def token():
        nonlocal pos
        while pos < len(raw):
            if raw[pos : pos + 1].isspace():
                pos += 1
            elif raw[pos : pos + 1] == b"#":
                while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                    pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        return raw[start:pos]

    magic = token()
    if magic != b"P6":
        raise DataError(f"{path}: not a binary PPM (magic {magic!r})")
    try:
        w, h, maxval = int(token()), int(token()), int(token())
    except ValueError:
        raise DataError(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace after maxval
    data = raw[pos : pos + 3 * w * h]
    if len(data) != 3 * w * h:
        raise DataError(f"{path}: truncated pixel data")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)
    return (arr.transpose(2, 0, 1).astype(np.float32)) / 255.0


def load_image(path):
    """Read any supported raster image as float32 (3, H, W) in [0, 1]."""
    if str(path).lower().endswith(".ppm"):
        return read_ppm(path)
    try:
        from PIL import Image
    except ImportError:
        raise DataError(
            f"{path}: only PPM is supported without Pillow installed"
        ) from None
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None
    return arr.transpose(2, 0, 1) / 255.0


# ----------------------------------------------------------------------
# resampling and photometric jitter
# ----------------------------------------------------------------------
def bilinear_resize(image, out_h, out_w):
    """Resize (C, H, W) with bilinear interpolation (pixel-center mapping)."""
    image = np.asarray(image)
    c, h, w = image.shape
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    img = image.astype(np.float64)
    top = img[:, y0][:, :, x0] * (1 - fx) + img[:, y0][:, :, x1] * fx
    bot = img[:, y1][:, :, x0] * (1 - fx) + img[:, y1][:, :, x1] * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


def affine_transform(image, angle_deg=0.0, translate=(0.0, 0.0), scale=1.0):
    """Rotate/scale about the image center and translate (pixels), bilinear.

    Positive angles rotate content counter-clockwise in (x right, y down)
    coordinates; samples from outside the source are zero.
    """
    image = np.asarray(image)
    c, h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dx = (xs - cx - translate[0]) / scale
    dy = (ys - cy - translate[1]) / scale
    # inverse rotation back into source coordinates
    src_x = cos_t * dx + sin_t * dy + cx
    src_y = -sin_t * dx + cos_t * dy + cy

    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    fx = src_x - x0
    fy = src_y - y0
    out = np.zeros((c, h, w), dtype=np.float64)
    img = image.astype(np.float64)
    for oy, ox, wgt in (
        (y0, x0, (1 - fy) * (1 - fx)),
        (y0, x0 + 1, (1 - fy) * fx),
        (y0 + 1, x0, fy * (1 - fx)),
        (y0 + 1, x0 + 1, fy * fx),
    ):
        valid = (oy >= 0) & (oy < h) & (ox >= 0) & (ox < w)
        yc = np.clip(oy, 0, h - 1)
        xc = np.clip(ox, 0, w - 1)
        out += img[:, yc, xc] * (wgt * valid)
    return out.astype(np.float32)


@dataclass
class AugmentConfig:
    """Jitter amplitudes; zero amplitudes make augment_image the identity."""

    rotation_deg: float = 10.0
    translate_frac: float = 0.1
    scale_range: tuple = (0.9, 1.1)
    brightness: float = 0.2
    contrast_range: tuple = (0.8, 1.2)


def augment_image(image, seed, config=None):
    """Random affine + photometric jitter, deterministic per seed."""
    cfg = config or AugmentConfig()
    rng = np.random.default_rng(seed)
    c, h, w = image.shape
    angle = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)
    tx = rng.uniform(-cfg.translate_frac, cfg.translate_frac) * w
    ty = rng.uniform(-cfg.translate_frac, cfg.translate_frac) * h
    scale = rng.uniform(*cfg.scale_range)
    out = affine_transform(image, angle, (tx, ty), scale)
    contrast = rng.uniform(*cfg.contrast_range)
    brightness = rng.uniform(-cfg.brightness, cfg.brightness)
    return np.clip(out * contrast + brightness, 0.0, 1.0).astype(np.float32)


# ----------------------------------------------------------------------
# classification datasets
# ----------------------------------------------------------------------
CHIP_SIZE = 32


@dataclass
class ClassificationDataset:
    images: np.ndarray  # (N, 3, 32, 32) float32
    labels: np.ndarray  # (N,) int64
    num_classes: int

    def __len__(self):
        return len(self.labels)

    def class_counts(self):
        counts = np.zeros(self.num_classes, dtype=np.int64)
        for lbl in self.labels:
            counts[lbl] += 1
        return counts


_CLS_HEADER = "Filename;Width;Height;Roi.X1;Roi.Y1;Roi.X2;Roi.Y2;ClassId"


def load_classification_dataset(root, num_classes=None, chip_size=CHIP_SIZE):
    """Load a tree of per-class directories with GTSRB-style annotations.

    Each class directory holds images plus a semicolon-delimited annotation
    file.  Every record is cropped to its ROI, resized to ``chip_size`` and
    scaled to [0, 1].
    """
    root = str(root)
    if not os.path.isdir(root):
        raise DataError(f"{root}: not a directory")
    images, labels = [], []
    for entry in sorted(os.listdir(root)):
        class_dir = os.path.join(root, entry)
        if not os.path.isdir(class_dir):
            continue
        csvs = sorted(f for f in os.listdir(class_dir) if f.lower().endswith(".csv"))
        for csv_name in csvs:
            csv_path = os.path.join(class_dir, csv_name)
            with open(csv_path, encoding="utf-8") as fh:
                lines = fh.read().splitlines()
            if not lines or lines[0].strip() != _CLS_HEADER:
                raise DataError(f"{csv_path}:1: expected header {_CLS_HEADER!r}")
            for lineno, line in enumerate(lines[1:], start=2):
                if not line.strip():
                    continue
                parts = line.split(";")
                if len(parts) != 8:
                    raise DataError(f"{csv_path}:{lineno}: expected 8 fields, got {len(parts)}")
                try:
                    fname = parts[0]
                    width, height, x1, y1, x2, y2, class_id = map(int, parts[1:])
                except ValueError:
                    raise DataError(f"{csv_path}:{lineno}: non-integer field") from None
                if not (0 <= x1 < x2 <= width and 0 <= y1 < y2 <= height):
                    raise DataError(
                        f"{csv_path}:{lineno}: ROI ({x1},{y1},{x2},{y2}) invalid for "
                        f"{width}x{height} image"
                    )
                img_path = os.path.join(class_dir, fname)
                if not os.path.exists(img_path):
                    raise DataError(f"{csv_path}:{lineno}: missing image {fname}")
                img = load_image(img_path)
                if img.shape[1] != height or img.shape[2] != width:
                    raise DataError(
                        f"{csv_path}:{lineno}: image is {img.shape[2]}x{img.shape[1]}, "
                        f"record says {width}x{height}"
                    )
                crop = img[:, y1:y2, x1:x2]
                images.append(bilinear_resize(crop, chip_size, chip_size))
                labels.append(class_id)
    if not images:
        raise DataError(f"{root}: no samples found")
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    if labels.max() >= num_classes:
        raise DataError(f"{root}: class id {labels.max()} >= num_classes {num_classes}")
    return ClassificationDataset(
        images=np.stack(images).astype(np.float32),
        labels=labels,
        num_classes=num_classes,
    )


def balance_classes(dataset, low=500, high=1000, seed=0, config=None):
    """Top up under-represented classes with augmented copies.

    Classes below ``low`` grow to exactly ``low``; classes in [low, high)
    grow to exactly ``high``; larger classes pass through untouched.  Added
    samples are jittered copies of originals, never raw duplicates.
    """
    if not low < high:
        raise ValueError(f"need low < high, got {low} >= {high}")
    rng = np.random.default_rng(seed)
    by_class = {cls: [] for cls in range(dataset.num_classes)}
    for idx, lbl in enumerate(dataset.labels):
        by_class[int(lbl)].append(idx)

    images = [dataset.images[i] for i in range(len(dataset))]
    labels = list(dataset.labels)
    for cls in sorted(by_class):
        members = by_class[cls]
        count = len(members)
        if count == 0:
            raise DataError(f"class {cls} has no samples to augment from")
        if count >= high:
            continue
        target = low if count < low else high
        for j in range(target - count):
            src = dataset.images[members[j % count]]
            images.append(augment_image(src, int(rng.integers(0, 2**63 - 1)), config))
            labels.append(cls)
    return ClassificationDataset(
        images=np.stack(images).astype(np.float32),
        labels=np.asarray(labels, dtype=np.int64),
        num_classes=dataset.num_classes,
    )


def generate_synthetic_chips(n, num_classes=5, seed=0, chip_size=CHIP_SIZE):
    """Small labelled chips (coloured shapes on noise) for desk-scale runs."""
    rng = np.random.default_rng(seed)
    palette = np.array(
        [
            (0.85, 0.10, 0.10),
            (0.10, 0.20, 0.85),
            (0.92, 0.82, 0.08),
            (0.10, 0.75, 0.20),
            (0.75, 0.15, 0.80),
            (0.95, 0.55, 0.10),
            (0.15, 0.80, 0.80),
            (0.55, 0.35, 0.15),
        ]
    )
    images = np.empty((n, 3, chip_size, chip_size), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        cls = int(rng.integers(0, num_classes))
        color = palette[cls % len(palette)] * rng.uniform(0.85, 1.0)
        img = rng.uniform(0.15, 0.45) + rng.uniform(-0.08, 0.08, (3, chip_size, chip_size))
        d = rng.uniform(0.5, 0.85) * chip_size
        cx = rng.uniform(d / 2 + 1, chip_size - d / 2 - 1)
        cy = rng.uniform(d / 2 + 1, chip_size - d / 2 - 1)
        shape = "circle" if (cls % 2 == 0) else "triangle"
        mask = _shape_mask(shape, chip_size, cx, cy, d)
        img = np.where(mask[None], color[:, None, None], img)
        images[i] = np.clip(img, 0, 1)
        labels[i] = cls
    return ClassificationDataset(images=images, labels=labels, num_classes=num_classes)


# ----------------------------------------------------------------------
# detection datasets
# ----------------------------------------------------------------------
@dataclass
class DetectionScene:
    image: np.ndarray  # (3, S, S) float32
    boxes: np.ndarray  # (B, 4) float64 center form, normalised
    classes: np.ndarray  # (B,) int64
    source_size: tuple = None  # (width, height) before resizing

    def ground_truths(self):
        return [
            GroundTruthBox(int(c), *map(float, b))
            for c, b in zip(self.classes, self.boxes)
        ]


@dataclass
class DetectionDataset:
    scenes: list
    num_classes: int
    superclass_map: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.scenes)

    def total_boxes(self):
        return sum(len(s.classes) for s in self.scenes)

    def superclass_of(self, class_id):
        return self.superclass_map.get(int(class_id), f"class_{class_id}")


def load_split_manifest(path):
    splits = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(";")
            if len(parts) != 2 or parts[1] not in ("train", "test"):
                raise DataError(f"{path}:{lineno}: expected 'Filename;train|test'")
            splits[parts[0]] = parts[1]
    return splits


def load_superclass_map(path):
    mapping = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(";")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'class_id;superclass'")
            mapping[int(parts[0])] = parts[1]
    return mapping


def load_detection_dataset(
    root,
    annotation_file=None,
    input_size=384,
    split_manifest=None,
    split=None,
    superclass_map=None,
    num_classes=None,
):
    """Load scenes plus boxes, resizing images to ``input_size`` square.

    Boxes are normalised by the original image dimensions, so they stay
    aligned after the (aspect-squashing) square resize.  Images present on
    disk but absent from the annotation file get zero boxes.
    """
    root = str(root)
    img_dir = os.path.join(root, "images")
    if not os.path.isdir(img_dir):
        img_dir = root
    if annotation_file is None:
        annotation_file = os.path.join(root, "annotations.csv")
    records = {}
    with open(annotation_file, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("Filename;"):
                continue
            parts = line.split(";")
            if len(parts) != 6:
                raise DataError(f"{annotation_file}:{lineno}: expected 6 fields")
            try:
                fname = parts[0]
                x1, y1, x2, y2, class_id = map(int, parts[1:])
            except ValueError:
                raise DataError(f"{annotation_file}:{lineno}: non-integer field") from None
            records.setdefault(fname, []).append((lineno, x1, y1, x2, y2, class_id))

    splits = load_split_manifest(split_manifest) if split_manifest else None
    if superclass_map is None:
        superclass_map = dict(DEFAULT_SUPERCLASSES)
    elif isinstance(superclass_map, (str, os.PathLike)):
        superclass_map = load_superclass_map(superclass_map)

    names = sorted(f for f in os.listdir(img_dir) if f.lower().endswith(".ppm"))
    if not names:
        raise DataError(f"{img_dir}: no .ppm images found")
    scenes = []
    max_class = 0
    for fname in names:
        if splits is not None:
            part = splits.get(fname)
            if split is not None and part != split:
                continue
        img = read_ppm(os.path.join(img_dir, fname))
        _, h, w = img.shape
        corner_rows, classes = [], []
        for lineno, x1, y1, x2, y2, class_id in records.get(fname, []):
            if not (0 <= x1 < x2 <= w and 0 <= y1 < y2 <= h):
                raise DataError(
                    f"{annotation_file}:{lineno}: box ({x1},{y1},{x2},{y2}) outside "
                    f"{w}x{h} image {fname}"
                )
            if class_id < 1:
                raise DataError(f"{annotation_file}:{lineno}: class id must be >= 1")
            corner_rows.append([x1 / w, y1 / h, x2 / w, y2 / h])
            classes.append(class_id)
            max_class = max(max_class, class_id)
        boxes = (
            corner_to_center(np.asarray(corner_rows, dtype=np.float64))
            if corner_rows
            else np.zeros((0, 4), dtype=np.float64)
        )
        resized = img if (h == input_size and w == input_size) else bilinear_resize(img, input_size, input_size)
        scenes.append(
            DetectionScene(
                image=resized,
                boxes=boxes,
                classes=np.asarray(classes, dtype=np.int64),
                source_size=(w, h),
            )
        )
    return DetectionDataset(
        scenes=scenes,
        num_classes=num_classes or max(max_class, 1),
        superclass_map=superclass_map,
    )


# ----------------------------------------------------------------------
# synthetic scenes
# ----------------------------------------------------------------------
def _shape_mask(shape, size, cx, cy, d):
    ys, xs = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    if shape == "circle":
        r = d / 2.0
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    if shape == "triangle":
        # equilateral, apex up; bounding box is d wide and d*sqrt(3)/2 tall
        ht = d * np.sqrt(3.0) / 2.0
        ax, ay = cx, cy - ht / 2.0
        bx, by = cx - d / 2.0, cy + ht / 2.0
        ex, ey = cx + d / 2.0, cy + ht / 2.0

        def side(px, py, qx, qy):
            return (qx - px) * (ys - py) - (qy - py) * (xs - px)

        # vertices run clockwise on screen (y down): interior is where all
        # cross products share the same sign
        s1 = side(ax, ay, bx, by)
        s2 = side(bx, by, ex, ey)
        s3 = side(ex, ey, ax, ay)
        return (s1 <= 0) & (s2 <= 0) & (s3 <= 0)
    raise ValueError(f"unknown shape {shape!r}")


def _shape_extent(shape, cx, cy, d):
    """Analytic (xmin, ymin, xmax, ymax) of the rendered shape, in pixels."""
    if shape == "circle":
        r = d / 2.0
        return cx - r, cy - r, cx + r, cy + r
    ht = d * np.sqrt(3.0) / 2.0
    return cx - d / 2.0, cy - ht / 2.0, cx + d / 2.0, cy + ht / 2.0


def generate_synthetic_scenes(
    n,
    classes=(1, 2, 3),
    seed=0,
    size=256,
    sign_size=(20, 120),
    max_signs=2,
    fog=False,
    occlusion=False,
):
    """Render sign-like shapes on noise backgrounds with exact boxes.

    Classes follow the superclass convention: 1 red circle, 2 blue circle,
    3 yellow triangle.  Optional fog alpha-blends the scene toward white;
    optional occlusion pastes a grey patch over part of each sign while the
    annotation keeps the full extent.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    # fog and occlusion draw from their own stream so enabling them does not
    # change the scene layouts produced by a given seed
    rng_fx = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    scenes = []
    lo, hi = sign_size
    hi = min(hi, size - 8)
    for _ in range(n):
        base = rng.uniform(0.20, 0.50)
        img = np.full((3, size, size), base, dtype=np.float64)
        img += rng.uniform(-0.10, 0.10, (3, size, size))
        boxes_px, cls_ids = [], []
        count = int(rng.integers(1, max_signs + 1))
        for _ in range(count):
            cls = int(classes[rng.integers(0, len(classes))])
            shape = _CLASS_SHAPES[cls]
            for _ in range(25):
                d = rng.uniform(lo, hi)
                margin = d / 2.0 + 2.0
                cx = rng.uniform(margin, size - margin)
                cy = rng.uniform(margin, size - margin)
                ext = _shape_extent(shape, cx, cy, d)
                if all(_overlap(ext, other) < 0.05 for other in boxes_px):
                    break
            else:
                continue
            color = np.asarray(_CLASS_COLORS[cls]) * rng.uniform(0.88, 1.0)
            mask = _shape_mask(shape, size, cx, cy, d)
            img = np.where(mask[None], color[:, None, None], img)
            if occlusion:
                _occlude(img, ext, rng_fx)
            boxes_px.append(ext)
            cls_ids.append(cls)
        if fog:
            alpha = rng_fx.uniform(0.25, 0.50)
            img = (1 - alpha) * img + alpha * 0.92
        corners = np.asarray(boxes_px, dtype=np.float64).reshape(-1, 4) / size
        scenes.append(
            DetectionScene(
                image=np.clip(img, 0, 1).astype(np.float32),
                boxes=corner_to_center(corners) if len(corners) else np.zeros((0, 4)),
                classes=np.asarray(cls_ids, dtype=np.int64),
                source_size=(size, size),
            )
        )
    return DetectionDataset(
        scenes=scenes,
        num_classes=int(max(classes)),
        superclass_map=dict(DEFAULT_SUPERCLASSES),
    )


def _overlap(a, b):
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def _occlude(img, ext, rng):
    """Grey patch over up to ~30% of the sign's box (annotation unchanged)."""
    x1, y1, x2, y2 = ext
    bw, bh = x2 - x1, y2 - y1
    pw = rng.uniform(0.2, 0.55) * bw
    ph = rng.uniform(0.2, 0.55) * bh
    px = rng.uniform(x1, x2 - pw)
    py = rng.uniform(y1, y2 - ph)
    xs = slice(max(int(px), 0), min(int(px + pw), img.shape[2]))
    ys = slice(max(int(py), 0), min(int(py + ph), img.shape[1]))
    img[:, ys, xs] = rng.uniform(0.35, 0.55)


def save_detection_dataset(dataset, out_dir):
    """Write scenes as PPM files plus a detection annotation file."""
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    lines = ["Filename;Xmin;Ymin;Xmax;Ymax;ClassId"]
    for i, scene in enumerate(dataset.scenes):
        fname = f"scene_{i:05d}.ppm"
        write_ppm(os.path.join(img_dir, fname), scene.image)
        size_w = scene.image.shape[2]
        size_h = scene.image.shape[1]
        corners = center_to_corner(scene.boxes)
        for corner, cls in zip(corners, scene.classes):
            x1 = max(int(np.floor(corner[0] * size_w)), 0)
            y1 = max(int(np.floor(corner[1] * size_h)), 0)
            x2 = min(int(np.ceil(corner[2] * size_w)), size_w)
            y2 = min(int(np.ceil(corner[3] * size_h)), size_h)
            lines.append(f"{fname};{x1};{y1};{x2};{y2};{cls}")
    with open(os.path.join(out_dir, "annotations.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
