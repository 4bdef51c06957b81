"""Defect detection on line-scan images and detection scoring.

Pipeline: Gaussian smoothing, Canny edges, 8-connected labelling of edge
pixels, and an area threshold that separates defects from dust. Images are
``uint8`` arrays indexed ``[row, col]``; boxes use inclusive pixel bounds with
x the column and y the row.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class DetectConfig:
    gaussian_sigma: float = 1.4
    kernel_size: int = 5
    canny_low: float = 40.0
    canny_high: float = 100.0
    area_threshold: float = 30.0

    def __post_init__(self):
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd and >= 3")
        if not self.canny_low < self.canny_high:
            raise ValueError("canny_low must be below canny_high")
        if self.area_threshold < 0 or self.gaussian_sigma <= 0:
            raise ValueError("area threshold must be >= 0 and sigma > 0")


@dataclass(frozen=True)
class Box:
    x_min: int
    y_min: int
    x_max: int
    y_max: int
    area: int = 0

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def shifted(self, dx: int, dy: int) -> "Box":
        return Box(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy, self.area)

    def as_list(self) -> list[int]:
        return [int(self.x_min), int(self.y_min), int(self.x_max), int(self.y_max), int(self.area)]


@dataclass(frozen=True)
class DetectionMetrics:
    TP: int
    FP: int
    FN: int
    precision: float
    recall: float
    f_measure: float


def gaussian_kernel(sigma: float, size: int) -> np.ndarray:
    x = np.arange(size) - size // 2
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _correlate_rows(a: np.ndarray, k: np.ndarray) -> np.ndarray:
    r = len(k) // 2
    padded = np.pad(a, ((0, 0), (r, r)), mode="edge")
    out = np.zeros_like(a, dtype=float)
    for i, w in enumerate(k):
        out += w * padded[:, i:i + a.shape[1]]
    return out


def gaussian_blur(img: np.ndarray, cfg: DetectConfig = DetectConfig()) -> np.ndarray:
    """Separable Gaussian with edge replication. ``uint8`` in, ``uint8`` out
    (rounded); float arrays stay float."""
    k = gaussian_kernel(cfg.gaussian_sigma, cfg.kernel_size)
    a = np.asarray(img, dtype=float)
    out = _correlate_rows(_correlate_rows(a, k).T, k).T
    if np.asarray(img).dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out


def sobel(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.pad(np.asarray(img, dtype=float), 1, mode="edge")
    h, w = a.shape[0] - 2, a.shape[1] - 2

    def s(dy, dx):
        return a[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]

    gx = (s(-1, 1) + 2 * s(0, 1) + s(1, 1)) - (s(-1, -1) + 2 * s(0, -1) + s(1, -1))
    gy = (s(1, -1) + 2 * s(1, 0) + s(1, 1)) - (s(-1, -1) + 2 * s(-1, 0) + s(-1, 1))
    return gx, gy


_NMS_OFFSETS = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}  # (drow, dcol) along the gradient


def canny(img: np.ndarray, cfg: DetectConfig = DetectConfig()) -> np.ndarray:
    """Binary edge map (0/255) from Sobel gradients, 4-bin non-maximum
    suppression and double-threshold hysteresis."""
    gx, gy = sobel(img)
    mag = np.hypot(gx, gy)
    angle = np.degrees(np.arctan2(gy, gx)) % 180.0
    bins = np.floor((angle + 22.5) / 45.0).astype(int) % 4
    padded = np.pad(mag, 1, mode="constant")
    h, w = mag.shape
    keep = np.zeros(mag.shape, dtype=bool)
    for b, (dr, dc) in _NMS_OFFSETS.items():
        fwd = padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        back = padded[1 - dr:1 - dr + h, 1 - dc:1 - dc + w]
        # strict on one side so plateaus of equal magnitude stay one pixel wide
        keep |= (bins == b) & (mag > back) & (mag >= fwd)
    thin = np.where(keep, mag, 0.0)
    strong = thin >= cfg.canny_high
    weak = thin >= cfg.canny_low
    out = np.zeros(mag.shape, dtype=bool)
    stack = list(zip(*np.nonzero(strong)))
    for r, c in stack:
        out[r, c] = True
    while stack:
        r, c = stack.pop()
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w and weak[rr, cc] and not out[rr, cc]:
                    out[rr, cc] = True
                    stack.append((rr, cc))
    return out.astype(np.uint8) * 255


def connected_boxes(binary: np.ndarray) -> list[Box]:
    """Bounding boxes of 8-connected foreground components, raster order."""
    labels, n = ndimage.label(np.asarray(binary) > 0, structure=np.ones((3, 3), dtype=int))
    boxes = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        area = int(np.count_nonzero(labels[sl] == i))
        boxes.append(Box(sl[1].start, sl[0].start, sl[1].stop - 1, sl[0].stop - 1, area))
    return boxes


def detect_defects(binary: np.ndarray, cfg: DetectConfig = DetectConfig()) -> list[Box]:
    return [b for b in connected_boxes(binary) if b.area >= cfg.area_threshold]


def detect_pipeline(img: np.ndarray, cfg: DetectConfig = DetectConfig()) -> tuple[list[Box], np.ndarray]:
    edges = canny(gaussian_blur(img, cfg), cfg)
    return detect_defects(edges, cfg), edges


def iou(a: Box, b: Box) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min) + 1
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min) + 1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / float(a.width * a.height + b.width * b.height - inter)


def _overlaps(a: Box, b: Box) -> bool:
    return min(a.x_max, b.x_max) >= max(a.x_min, b.x_min) and min(a.y_max, b.y_max) >= max(a.y_min, b.y_min)


def metrics_from_counts(tp: int, fp: int, fn: int) -> DetectionMetrics:
    # empty denominators count as perfect: no detections means no false alarms
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return DetectionMetrics(tp, fp, fn, precision, recall, f)


def match_detections(detected, ground_truth, iou_threshold: float = 0.3) -> list[tuple[int, int]]:
    """Greedy one-to-one matching by descending IoU (ties: lower indices first)."""
    if not 0 < iou_threshold < 1:
        raise ValueError("iou_threshold must lie in (0, 1)")
    cand = [(-iou(d, g), i, j) for i, d in enumerate(detected) for j, g in enumerate(ground_truth)]
    cand = sorted(c for c in cand if -c[0] >= iou_threshold)
    used_d, used_g, pairs = set(), set(), []
    for _, i, j in cand:
        if i not in used_d and j not in used_g:
            used_d.add(i)
            used_g.add(j)
            pairs.append((i, j))
    return pairs


def score_detections(detected, ground_truth, iou_threshold: float = 0.3, ignore=()) -> DetectionMetrics:
    """Precision / recall / F-measure of boxes against truth.

    Unmatched detections touching an ``ignore`` box (a defect only partly in
    view) are dropped instead of counted as false positives.
    """
    detected, ground_truth = list(detected), list(ground_truth)
    pairs = match_detections(detected, ground_truth, iou_threshold)
    matched = {i for i, _ in pairs}
    fp = sum(1 for i, d in enumerate(detected)
             if i not in matched and not any(_overlaps(d, g) for g in ignore))
    tp = len(pairs)
    return metrics_from_counts(tp, fp, len(ground_truth) - tp)


# -- image files ----------------------------------------------------------------

def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def _pnm_header(data: bytes, magic: bytes):
    if not data.startswith(magic):
        raise ValueError(f"not a {magic.decode()} image")
    fields, pos = [], 2
    while len(fields) < 3:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(int(data[pos:end]))
        pos = end
    return fields, pos + 1


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (w, h, maxval), start = _pnm_header(data, b"P5")
    if maxval > 255:
        raise ValueError("16-bit PGM not supported")
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=start).reshape(h, w).copy()


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes())


def annotate(img: np.ndarray, boxes, color=(255, 0, 0), pad: int = 2) -> np.ndarray:
    """Grey image to RGB with a one-pixel rectangle around each box."""
    rgb = np.repeat(np.asarray(img, dtype=np.uint8)[:, :, None], 3, axis=2)
    h, w = rgb.shape[:2]
    for b in boxes:
        x0, y0 = max(b.x_min - pad, 0), max(b.y_min - pad, 0)
        x1, y1 = min(b.x_max + pad, w - 1), min(b.y_max + pad, h - 1)
        rgb[y0, x0:x1 + 1] = color
        rgb[y1, x0:x1 + 1] = color
        rgb[y0:y1 + 1, x0] = color
        rgb[y0:y1 + 1, x1] = color
    return rgb


METRICS_HEADER = ["part_id", "TP", "FP", "FN", "precision", "recall", "f_measure"]


def metrics_csv(rows) -> str:
    """``rows`` are (part_id, DetectionMetrics); values to three decimals."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for part, m in rows:
        w.writerow([part, m.TP, m.FP, m.FN, f"{m.precision:.3f}", f"{m.recall:.3f}", f"{m.f_measure:.3f}"])
    return buf.getvalue()
