"""Losses and the differentiable crop-resize.

Cross entropy accepts either hard class indices or full per-row
distributions; the soft path is what teacher relabeling uses (it equals
KL divergence up to the teacher-entropy constant, which kl_div adds back
explicitly). crop_resize is the deterministic half of random-resized-crop:
bilinear resampling with half-pixel centers and align_corners=False, so a
full-image crop at source resolution is bit-exact identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, gather_flat, log, exp, tsum

__all__ = [
    "CropSpec",
    "crop_resize",
    "log_softmax",
    "softmax_np",
    "cross_entropy",
    "kl_div",
    "mse",
]


# sampled pipeline crops never go below this; tiny rectangles stay legal
# for direct crop_resize calls (degenerate upsampling has defined math)
MIN_SAMPLED_CROP = 4


@dataclass(frozen=True)
class CropSpec:
    """Crop rectangle in source-pixel coordinates plus output resolution."""

    top: int
    left: int
    height: int
    width: int
    out_h: int
    out_w: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"empty crop {self.height}x{self.width}")
        if self.top < 0 or self.left < 0:
            raise ValueError("crop origin must be non-negative")
        if self.out_h < 1 or self.out_w < 1:
            raise ValueError("output resolution must be positive")

    def validate_for(self, h: int, w: int) -> None:
        if self.top + self.height > h or self.left + self.width > w:
            raise ValueError(
                f"crop ({self.top},{self.left},{self.height},{self.width}) "
                f"outside {h}x{w} image"
            )

    def coords(self) -> tuple[int, int, int, int]:
        return (self.top, self.left, self.height, self.width)


def _bilinear_grid(src: int, dst: int, offset: int):
    """Source coordinates for half-pixel-center bilinear resampling."""
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, src - 1.0)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, src - 1)
    frac = (pos - i0).astype(np.float32)
    return i0 + offset, i1 + offset, frac


def crop_resize(image: Tensor, crop: CropSpec) -> Tensor:
    """Bilinearly resample a crop rectangle of a (C,H,W) image.

    Gradients distribute to the four source pixels of each output sample
    with the bilinear weights, making the op linear in the image.
    """
    if image.ndim != 3:
        raise ValueError(f"crop_resize expects (C,H,W), got {image.shape}")
    c, h, w = image.shape
    crop.validate_for(h, w)

    y0, y1, fy = _bilinear_grid(crop.height, crop.out_h, crop.top)
    x0, x1, fx = _bilinear_grid(crop.width, crop.out_w, crop.left)

    src = image.data
    tl = src[:, y0[:, None], x0[None, :]]
    tr = src[:, y0[:, None], x1[None, :]]
    bl = src[:, y1[:, None], x0[None, :]]
    br = src[:, y1[:, None], x1[None, :]]
    fy2 = fy[:, None]
    fx2 = fx[None, :]
    w_tl = (1.0 - fy2) * (1.0 - fx2)
    w_tr = (1.0 - fy2) * fx2
    w_bl = fy2 * (1.0 - fx2)
    w_br = fy2 * fx2
    out_data = tl * w_tl + tr * w_tr + bl * w_bl + br * w_br

    cidx = np.arange(c, dtype=np.intp)[:, None, None]

    def vjp(g):
        gx = np.zeros((c, h, w), dtype=np.float32)
        np.add.at(gx, (cidx, y0[None, :, None], x0[None, None, :]), g * w_tl)
        np.add.at(gx, (cidx, y0[None, :, None], x1[None, None, :]), g * w_tr)
        np.add.at(gx, (cidx, y1[None, :, None], x0[None, None, :]), g * w_bl)
        np.add.at(gx, (cidx, y1[None, :, None], x1[None, None, :]), g * w_br)
        return (gx,)

    return Tensor._from_op(out_data, (image,), vjp, "crop_resize")


def log_softmax(logits: Tensor) -> Tensor:
    """Row-wise log softmax, stabilized by a detached max shift."""
    if logits.ndim != 2:
        raise ValueError(f"expected (B,L) logits, got {logits.shape}")
    shift = Tensor(logits.data.max(axis=1, keepdims=True))
    z = logits - shift
    lse = log(tsum(exp(z), axis=1, keepdims=True))
    return z - lse


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z, dtype=np.float64)
    return (e / e.sum(axis=-1, keepdims=True)).astype(np.float32)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross entropy; labels are class indices or (B,L) distributions."""
    b, l = logits.shape
    logp = log_softmax(logits)
    labels = np.asarray(labels)
    if labels.ndim == 1:
        if labels.min() < 0 or labels.max() >= l:
            raise ValueError(f"label index out of range for {l} classes")
        picked = gather_flat(logp, np.arange(b) * l + labels.astype(np.intp))
        return -picked.mean()
    if labels.shape != (b, l):
        raise ValueError(f"soft labels shape {labels.shape} != {(b, l)}")
    sums = labels.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-5:
        raise ValueError("soft label rows must sum to 1 within 1e-5")
    target = Tensor(labels.astype(np.float32))
    return -(target * logp).sum() * (1.0 / b)


def per_sample_cross_entropy(logits: Tensor, labels: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Mean CE as a graph scalar plus the detached per-sample CE vector."""
    b, l = logits.shape
    logp = log_softmax(logits)
    picked = gather_flat(logp, np.arange(b) * l + np.asarray(labels, dtype=np.intp))
    per_sample = -picked.data.copy()
    return -picked.mean(), per_sample


def kl_div(teacher_logits: np.ndarray, student_logits: Tensor) -> Tensor:
    """Mean KL(teacher || student) over the batch, teacher side constant."""
    p = softmax_np(teacher_logits).astype(np.float64)
    # teacher entropy term is a constant; carried so identical logits give 0
    neg_entropy = float((p * np.log(np.maximum(p, 1e-30))).sum(axis=1).mean())
    b = teacher_logits.shape[0]
    logq = log_softmax(student_logits)
    ce_term = -(Tensor(p.astype(np.float32)) * logq).sum() * (1.0 / b)
    return ce_term + neg_entropy


def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    diff = pred - Tensor(np.asarray(target, dtype=np.float32))
    return (diff * diff).mean()
