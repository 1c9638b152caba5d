"""Deterministic stand-in datasets written in the real binary formats.

The build environment has no route to the canonical MNIST/CIFAR-10
downloads, so these generators produce small learnable classification
sets with the same shapes, written byte-exactly as IDX pairs and CIFAR-10
binary batches. Everything downstream (parsers, pipeline, CLI) treats
them like the real thing.

glyphs28: 10 stroke-glyph classes on a 28x28 grayscale canvas with random
affine pose, stroke thickness, contrast and pixel noise.

shapes32: 10 shape/texture classes on a 32x32 RGB canvas with random
colors, pose and textured backgrounds; color carries no class signal.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataio import write_cifar_bin, write_idx

# polyline strokes per glyph class, unit square coordinates
def _ring(cx, cy, r, n=10):
    ang = np.linspace(0, 2 * np.pi, n + 1)
    pts = np.stack([cx + r * np.cos(ang), cy + r * np.sin(ang)], axis=1)
    return [(tuple(pts[i]), tuple(pts[i + 1])) for i in range(n)]


_GLYPHS = [
    _ring(0.5, 0.5, 0.32),                                             # 0
    [((0.5, 0.15), (0.5, 0.85)), ((0.5, 0.15), (0.35, 0.3))],          # 1
    [((0.25, 0.2), (0.75, 0.2)), ((0.75, 0.2), (0.25, 0.8)),
     ((0.25, 0.8), (0.75, 0.8))],                                      # 2
    [((0.25, 0.2), (0.75, 0.2)), ((0.3, 0.5), (0.7, 0.5)),
     ((0.25, 0.8), (0.75, 0.8))],                                      # 3
    [((0.65, 0.15), (0.65, 0.85)), ((0.25, 0.6), (0.8, 0.6)),
     ((0.65, 0.15), (0.25, 0.6))],                                     # 4
    [((0.7, 0.2), (0.3, 0.2)), ((0.3, 0.2), (0.3, 0.5)),
     ((0.3, 0.5), (0.7, 0.5)), ((0.7, 0.5), (0.7, 0.8)),
     ((0.7, 0.8), (0.3, 0.8))],                                        # 5
    [((0.35, 0.15), (0.35, 0.8))] + _ring(0.5, 0.65, 0.18, 8),         # 6
    [((0.25, 0.2), (0.75, 0.2)), ((0.75, 0.2), (0.4, 0.85))],          # 7
    _ring(0.5, 0.32, 0.17, 8) + _ring(0.5, 0.68, 0.2, 8),              # 8
    _ring(0.5, 0.35, 0.18, 8) + [((0.68, 0.35), (0.62, 0.85))],        # 9
]


def _segment_distance(px, py, a, b):
    ax, ay = a
    bx, by = b
    vx, vy = bx - ax, by - ay
    denom = vx * vx + vy * vy
    if denom < 1e-12:
        return np.hypot(px - ax, py - ay)
    t = np.clip(((px - ax) * vx + (py - ay) * vy) / denom, 0.0, 1.0)
    return np.hypot(px - (ax + t * vx), py - (ay + t * vy))


def _rasterize(segments, size, rng):
    """Stamp strokes with a random affine pose onto a size x size canvas."""
    angle = rng.uniform(-0.35, 0.35)
    scale = rng.uniform(0.75, 1.1)
    shear = rng.uniform(-0.15, 0.15)
    tx, ty = rng.uniform(-0.08, 0.08, size=2)
    ca, sa = np.cos(angle), np.sin(angle)

    def warp(p):
        x, y = p[0] - 0.5, p[1] - 0.5
        x, y = x + shear * y, y
        x, y = scale * (ca * x - sa * y), scale * (sa * x + ca * y)
        return ((x + 0.5 + tx) * size, (y + 0.5 + ty) * size)

    ys, xs = np.mgrid[0:size, 0:size]
    xs = xs + 0.5
    ys = ys + 0.5
    thick = rng.uniform(1.0, 1.9)
    canvas = np.zeros((size, size), dtype=np.float32)
    for a, b in segments:
        dist = _segment_distance(xs, ys, warp(a), warp(b))
        canvas = np.maximum(canvas, np.clip(1.0 - (dist - thick) / 1.2, 0.0, 1.0))
    return canvas


def glyphs28(count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Balanced 10-class glyph images, (count,1,28,28) uint8 + labels."""
    rng = np.random.default_rng(seed)
    labels = np.arange(count) % 10
    rng.shuffle(labels)
    images = np.empty((count, 1, 28, 28), dtype=np.uint8)
    for i, cls in enumerate(labels):
        fg = rng.uniform(0.55, 1.0)
        canvas = _rasterize(_GLYPHS[cls], 28, rng) * fg
        canvas += rng.normal(0.0, 0.035, size=canvas.shape)
        images[i, 0] = (np.clip(canvas, 0, 1) * 255).astype(np.uint8)
    return images, labels.astype(np.int64)


# -- 32x32 RGB shapes ----------------------------------------------------------


def _shape_mask(cls, size, rng):
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float32)
    cx = size / 2 + rng.uniform(-4, 4)
    cy = size / 2 + rng.uniform(-4, 4)
    r = rng.uniform(0.28, 0.42) * size
    dx, dy = xs - cx, ys - cy
    angle = rng.uniform(0, np.pi)
    rx = np.cos(angle) * dx - np.sin(angle) * dy
    ry = np.sin(angle) * dx + np.cos(angle) * dy
    period = rng.uniform(5.0, 8.0)
    if cls == 0:  # filled circle
        return (dx * dx + dy * dy) < r * r
    if cls == 1:  # square outline
        m = np.maximum(np.abs(rx), np.abs(ry))
        return (m < r) & (m > r * 0.6)
    if cls == 2:  # filled triangle
        return (ry > -r * 0.7) & (ry < 2.2 * np.abs(rx) * -1 + r)
    if cls == 3:  # horizontal stripes
        return np.sin(ys / period * 2 * np.pi) > 0.2
    if cls == 4:  # vertical stripes
        return np.sin(xs / period * 2 * np.pi) > 0.2
    if cls == 5:  # checkerboard
        return (np.sin(rx / period * 2 * np.pi) * np.sin(ry / period * 2 * np.pi)) > 0
    if cls == 6:  # ring
        d2 = dx * dx + dy * dy
        return (d2 < r * r) & (d2 > (0.55 * r) ** 2)
    if cls == 7:  # plus sign
        return ((np.abs(rx) < r * 0.25) | (np.abs(ry) < r * 0.25)) & (
            np.maximum(np.abs(rx), np.abs(ry)) < r
        )
    if cls == 8:  # diagonal stripes
        return np.sin((xs + ys) / period * 2 * np.pi) > 0.2
    # 9: two disjoint blobs
    d1 = (xs - cx + r * 0.7) ** 2 + (ys - cy) ** 2
    d2 = (xs - cx - r * 0.7) ** 2 + (ys - cy) ** 2
    return (d1 < (0.45 * r) ** 2) | (d2 < (0.45 * r) ** 2)


def shapes32(count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Balanced 10-class RGB shape images, (count,3,32,32) uint8 + labels."""
    rng = np.random.default_rng(seed)
    labels = np.arange(count) % 10
    rng.shuffle(labels)
    images = np.empty((count, 3, 32, 32), dtype=np.uint8)
    for i, cls in enumerate(labels):
        while True:
            fg = rng.uniform(0.1, 0.95, size=3)
            bg = rng.uniform(0.1, 0.95, size=3)
            if np.abs(fg - bg).sum() > 0.8:  # keep shapes visible
                break
        texture = rng.normal(0.0, 0.05, size=(1, 32, 32))
        mask = _shape_mask(cls, 32, rng)[None]
        img = np.where(mask, fg.reshape(3, 1, 1), bg.reshape(3, 1, 1)) + texture
        img += rng.normal(0.0, 0.03, size=(3, 32, 32))
        images[i] = (np.clip(img, 0, 1) * 255).astype(np.uint8)
    return images, labels.astype(np.int64)


GLYPHS_MEAN = (0.18,)
GLYPHS_STD = (0.33,)
SHAPES_MEAN = (0.5, 0.5, 0.5)
SHAPES_STD = (0.27, 0.27, 0.27)


def write_glyphs_idx(out_dir, train: int = 6000, test: int = 1000,
                     seed: int = 2024) -> dict[str, str]:
    """Write IDX train/test pairs; returns the file map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "train_images": out / "train-images-idx3-ubyte",
        "train_labels": out / "train-labels-idx1-ubyte",
        "test_images": out / "t10k-images-idx3-ubyte",
        "test_labels": out / "t10k-labels-idx1-ubyte",
    }
    imgs, labs = glyphs28(train, seed)
    write_idx(files["train_images"], files["train_labels"], imgs, labs)
    imgs, labs = glyphs28(test, seed + 1)
    write_idx(files["test_images"], files["test_labels"], imgs, labs)
    return {k: str(v) for k, v in files.items()}


def write_shapes_cifar(out_dir, train: int = 6000, test: int = 1000,
                       seed: int = 2024) -> dict[str, str]:
    """Write CIFAR-binary train/test batches; returns the file map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "train": out / "data_batch_1.bin",
        "test": out / "test_batch.bin",
    }
    imgs, labs = shapes32(train, seed)
    write_cifar_bin(files["train"], imgs, labs)
    imgs, labs = shapes32(test, seed + 1)
    write_cifar_bin(files["test"], imgs, labs)
    return {k: str(v) for k, v in files.items()}
