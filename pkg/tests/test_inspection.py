from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specscan.inspection import (
    Box, DetectConfig, annotate, canny, detect_defects, detect_pipeline, gaussian_blur,
    gaussian_kernel, iou, match_detections, metrics_csv, metrics_from_counts, read_pgm, score_detections,
    sobel, write_pgm, write_ppm,
)

# (TP, FP, FN) -> (precision, recall, F) as published for five inspected parts
REFERENCE_ROWS = [
    ((20, 3, 0), (0.870, 1.000, 0.930)),
    ((9, 3, 0), (0.750, 1.000, 0.857)),
    ((11, 1, 2), (0.917, 0.846, 0.880)),
    ((12, 4, 3), (0.750, 0.800, 0.774)),
    ((10, 5, 0), (0.667, 1.000, 0.800)),
]


def boxes_for_counts(tp, fp, fn):
    truth = [Box(20 * i, 0, 20 * i + 9, 9) for i in range(tp + fn)]
    detected = truth[:tp] + [Box(20 * i, 100, 20 * i + 9, 109) for i in range(fp)]
    return detected, truth


def flood_fill_boxes(binary):
    """Plain BFS labelling, 8-connected, boxes as (x0, y0, x1, y1, area)."""
    h, w = binary.shape
    seen = np.zeros_like(binary, dtype=bool)
    out = []
    for r in range(h):
        for c in range(w):
            if not binary[r, c] or seen[r, c]:
                continue
            q, cells = deque([(r, c)]), []
            seen[r, c] = True
            while q:
                y, x = q.popleft()
                cells.append((y, x))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < h and 0 <= xx < w and binary[yy, xx] and not seen[yy, xx]:
                            seen[yy, xx] = True
                            q.append((yy, xx))
            ys, xs = zip(*cells)
            out.append((min(xs), min(ys), max(xs), max(ys), len(cells)))
    return sorted(out)


def random_blobs(seed, shape=(60, 80), count=8):
    rng = np.random.default_rng(seed)
    img = np.zeros(shape, dtype=np.uint8)
    for _ in range(count):
        r, c = rng.integers(0, shape[0]), rng.integers(0, shape[1])
        hh, ww = rng.integers(1, 9, 2)
        img[r:r + hh, c:c + ww] = 255
    img[rng.random(shape) < 0.02] = 255
    return img


# -- blur / canny ---------------------------------------------------------------

def test_blur_constant_image_unchanged():
    img = np.full((30, 40), 77, dtype=np.uint8)
    assert np.array_equal(gaussian_blur(img), img)


def test_blur_impulse_gives_kernel():
    img = np.zeros((15, 15))
    img[7, 7] = 1.0
    k = gaussian_kernel(1.4, 5)
    out = gaussian_blur(img)
    assert np.allclose(out[5:10, 5:10], np.outer(k, k), atol=1e-15)
    assert np.isclose(out.sum(), 1.0)


def test_blur_matches_direct_convolution():
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 255, (25, 30))
    k2 = np.outer(gaussian_kernel(1.4, 5), gaussian_kernel(1.4, 5))
    padded = np.pad(img, 2, mode="edge")
    ref = np.array([[np.sum(padded[r:r + 5, c:c + 5] * k2) for c in range(30)] for r in range(25)])
    assert np.allclose(gaussian_blur(img), ref, atol=1e-10)
    u8 = np.zeros((20, 20), dtype=np.uint8)
    u8[10, 10] = 255
    assert abs(int(gaussian_blur(u8).astype(int).sum()) - 255) <= 25


def test_sobel_ramp():
    img = np.tile(np.arange(10.0) * 3, (8, 1))
    gx, gy = sobel(img)
    assert np.allclose(gx[:, 1:-1], 24.0) and np.allclose(gy, 0.0)


def test_canny_uniform_is_empty():
    assert not canny(np.full((20, 20), 128, dtype=np.uint8)).any()


def test_canny_vertical_step_single_line():
    img = np.zeros((20, 20), dtype=np.uint8)
    img[:, 10:] = 200
    e = canny(img) > 0
    cols = np.flatnonzero(e.any(axis=0))
    assert len(cols) == 1 and cols[0] in (9, 10)
    assert e[:, cols[0]].all()


def test_canny_weak_only_blob_vanishes():
    img = np.zeros((30, 30), dtype=np.uint8)
    img[10:20, 10:20] = 15  # gradient 60 max: above low, below high
    assert not canny(img, DetectConfig(canny_low=40, canny_high=100)).any()
    assert canny(img, DetectConfig(canny_low=10, canny_high=50)).any()


def test_config_validation():
    with pytest.raises(ValueError):
        DetectConfig(canny_low=100, canny_high=40)
    with pytest.raises(ValueError):
        DetectConfig(kernel_size=4)
    with pytest.raises(ValueError):
        DetectConfig(area_threshold=-1)


# -- components -----------------------------------------------------------------

def test_square_area_threshold():
    img = np.zeros((20, 20), dtype=np.uint8)
    img[5:10, 7:12] = 255
    found = detect_defects(img, DetectConfig(area_threshold=10))
    assert len(found) == 1 and (found[0].width, found[0].height, found[0].area) == (5, 5, 25)
    assert detect_defects(img, DetectConfig(area_threshold=30)) == []


@pytest.mark.parametrize("seed", range(50))
def test_components_match_flood_fill(seed):
    img = random_blobs(seed)
    s = 6
    got = sorted((b.x_min, b.y_min, b.x_max, b.y_max, b.area)
                 for b in detect_defects(img, DetectConfig(area_threshold=s)))
    assert got == [b for b in flood_fill_boxes(img > 0) if b[4] >= s]


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10**6), st.integers(0, 20), st.integers(0, 20))
def test_detection_translation_invariant(seed, dy, dx):
    img = np.zeros((80, 100), dtype=np.uint8)
    img[10:50, 10:70] = random_blobs(seed, (40, 60))
    moved = np.zeros_like(img)
    moved[dy:, dx:] = img[:80 - dy, :100 - dx]
    a = detect_pipeline(img)[0]
    b = detect_pipeline(moved)[0]
    assert [x.shifted(dx, dy) for x in a] == b


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10**6), st.floats(0, 40), st.floats(0, 40))
def test_raising_threshold_never_adds(seed, s1, s2):
    img = random_blobs(seed)
    lo, hi = sorted((s1, s2))
    assert len(detect_defects(img, DetectConfig(area_threshold=hi))) <= \
        len(detect_defects(img, DetectConfig(area_threshold=lo)))


def test_pipeline_deterministic():
    img = np.full((60, 60), 20, dtype=np.uint8)
    img[20:35, 25:40] = 220
    a, ea = detect_pipeline(img)
    b, eb = detect_pipeline(img.copy())
    assert a == b and np.array_equal(ea, eb) and len(a) == 1


# -- metrics --------------------------------------------------------------------

@pytest.mark.parametrize("counts,expected", REFERENCE_ROWS)
def test_reference_rows(counts, expected):
    detected, truth = boxes_for_counts(*counts)
    m = score_detections(detected, truth)
    assert (m.TP, m.FP, m.FN) == counts
    assert tuple(round(v, 3) for v in (m.precision, m.recall, m.f_measure)) == expected


def test_exact_match_is_perfect():
    truth = [Box(0, 0, 4, 4), Box(10, 10, 19, 12)]
    m = score_detections(truth, truth)
    assert m.precision == m.recall == m.f_measure == 1.0


def test_iou_and_matching():
    a, b = Box(0, 0, 9, 9), Box(5, 0, 14, 9)
    assert np.isclose(iou(a, b), 50 / 150)
    assert iou(a, Box(20, 20, 21, 21)) == 0.0
    # the better overlap wins the one-to-one match
    assert match_detections([b, a], [a]) == [(1, 0)]
    with pytest.raises(ValueError):
        match_detections([a], [a], iou_threshold=1.0)


def test_ignore_boxes_suppress_false_positives():
    part = Box(0, 0, 5, 5)
    m = score_detections([Box(1, 1, 3, 3)], [], ignore=[part])
    assert (m.TP, m.FP, m.FN) == (0, 0, 0)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_f_measure_properties(tp, fp, fn):
    m = metrics_from_counts(tp, fp, fn)
    assert 0 <= m.f_measure <= 1
    if tp > 0:
        assert (m.f_measure == 1.0) == (fp == 0 and fn == 0)
        assert np.isclose(m.f_measure, 2 * m.precision * m.recall / (m.precision + m.recall))


def test_metrics_csv_layout():
    text = metrics_csv([("R1", metrics_from_counts(20, 3, 0))])
    assert text.splitlines() == ["part_id,TP,FP,FN,precision,recall,f_measure", "R1,20,3,0,0.870,1.000,0.930"]


# -- files ----------------------------------------------------------------------

def test_pgm_round_trip(tmp_path):
    img = np.random.default_rng(1).integers(0, 256, (37, 53), dtype=np.uint8)
    write_pgm(tmp_path / "a.pgm", img)
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)
    (tmp_path / "c.pgm").write_bytes(b"P5\n# note\n2 1\n255\n\x01\x02")
    assert read_pgm(tmp_path / "c.pgm").tolist() == [[1, 2]]
    (tmp_path / "b.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(ValueError):
        read_pgm(tmp_path / "b.pgm")


def test_annotate_draws_red_box(tmp_path):
    img = np.zeros((20, 20), dtype=np.uint8)
    rgb = annotate(img, [Box(5, 5, 8, 8)], pad=1)
    assert rgb.shape == (20, 20, 3)
    assert tuple(rgb[4, 4]) == (255, 0, 0) and tuple(rgb[6, 6]) == (0, 0, 0)
    write_ppm(tmp_path / "a.ppm", rgb)
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n20 20\n255\n")
