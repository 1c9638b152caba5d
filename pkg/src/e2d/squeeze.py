"""Teacher training: fit the classifier on the original data and freeze
its parameters together with the BN running statistics.

Augmentation is the classic recipe per source: 4px-pad random crop plus
horizontal flip for color image sets, nothing for grayscale digits (a
flipped glyph changes identity). Augmentation happens on uint8 pixels
before normalization so pad values land where a black border would.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffnet as d
from .dataio import RawDataset
from .diffnet.checkpoint import load_state, save_state
from .seeds import derive_rng


@dataclass
class TeacherConfig:
    width: int = 16
    epochs: int = 5
    batch: int = 128
    lr: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    augment: str = "auto"  # auto | none | flip-crop

    def resolve_augment(self, kind: str) -> str:
        if self.augment != "auto":
            return self.augment
        return "flip-crop" if kind == "cifar10" else "none"


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; carries the last finite checkpoint."""

    def __init__(self, message: str, checkpoint: "TeacherCheckpoint | None"):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TeacherCheckpoint:
    state: dict[str, np.ndarray]
    specs: list[d.LayerSpec]
    fingerprint: str
    top1: float
    batch_losses: list[float] = field(default_factory=list, repr=False)

    def build_model(self) -> d.Model:
        model = d.Model(self.specs, seed=0)
        model.load_state_dict(self.state)
        model.set_requires_grad(False)
        return model

    def bn_stats(self) -> d.BNStats:
        means = [v for k, v in self.state.items() if k.endswith("running_mean")]
        variances = [v for k, v in self.state.items() if k.endswith("running_var")]
        return d.BNStats(list(means), list(variances))

    def save(self, path) -> None:
        save_state(path, self.state)
        sidecar = {
            "fingerprint": self.fingerprint,
            "top1": self.top1,
            "specs": [vars(s) for s in self.specs],
        }
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=1))

    @classmethod
    def load(cls, path) -> "TeacherCheckpoint":
        sidecar = json.loads(Path(str(path) + ".json").read_text())
        specs = [d.LayerSpec(**{k: v for k, v in s.items()}) for s in sidecar["specs"]]
        return cls(
            state=load_state(path),
            specs=specs,
            fingerprint=sidecar["fingerprint"],
            top1=sidecar["top1"],
        )


def _augment_uint8(images: np.ndarray, mode: str, rng: np.random.Generator) -> np.ndarray:
    if mode == "none":
        return images
    n, c, h, w = images.shape
    out = np.empty_like(images)
    pad = 4
    padded = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=images.dtype)
    padded[:, :, pad : pad + h, pad : pad + w] = images
    tops = rng.integers(0, 2 * pad + 1, size=n)
    lefts = rng.integers(0, 2 * pad + 1, size=n)
    flips = rng.random(n) < 0.5
    for i in range(n):
        crop = padded[i, :, tops[i] : tops[i] + h, lefts[i] : lefts[i] + w]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return out


def evaluate_model(model: d.Model, ds: RawDataset, ordinals=None,
                   batch: int = 512, mode: str = "eval") -> float:
    """Top-1 accuracy of argmax predictions over the given split."""
    if ordinals is None:
        ordinals = np.arange(ds.count)
    correct = 0
    for start in range(0, len(ordinals), batch):
        chunk = ordinals[start : start + batch]
        x = d.Tensor(ds.normalize(chunk))
        logits = model.forward(x, mode).logits.data
        correct += int((logits.argmax(axis=1) == ds.labels[chunk]).sum())
    return correct / len(ordinals)


def train_teacher(train_ds: RawDataset, test_ds: RawDataset, cfg: TeacherConfig,
                  kind: str, seed: int, fingerprint: str = "",
                  log_fn=None) -> TeacherCheckpoint:
    """Train the teacher and freeze parameters + BN running statistics."""
    rng = derive_rng(seed, "squeeze")
    c, _, _ = train_ds.image_shape
    specs = d.convnet3(c, train_ds.num_classes, width=cfg.width)
    model = d.Model(specs, seed=int(rng.integers(2**31)))
    params = [p for _, p in model.parameters()]
    opt = d.AdamW(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                  weight_decay=cfg.weight_decay)
    augment = cfg.resolve_augment(kind)

    steps_per_epoch = max(1, math.ceil(train_ds.count / cfg.batch))
    total_steps = max(1, cfg.epochs * steps_per_epoch)
    batch_losses: list[float] = []
    last_good: dict[str, np.ndarray] = model.state_dict()
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(train_ds.count)
        t0 = time.monotonic()
        for start in range(0, train_ds.count, cfg.batch):
            chunk = order[start : start + cfg.batch]
            imgs = _augment_uint8(train_ds.images[chunk], augment, rng)
            x = (imgs.astype(np.float32) / 255.0 - train_ds.mean.reshape(1, -1, 1, 1)) \
                / train_ds.std.reshape(1, -1, 1, 1)
            lr = cfg.lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
            try:
                loss = d.cross_entropy(
                    model.forward(d.Tensor(x), "train").logits, train_ds.labels[chunk]
                )
                model.zero_grad()
                loss.backward()
            except d.NonFiniteError as e:
                ckpt = TeacherCheckpoint(last_good, specs, fingerprint, float("nan"),
                                         batch_losses)
                raise TrainingDiverged(f"teacher diverged at step {step}: {e}", ckpt)
            opt.step(lr=lr)
            batch_losses.append(loss.item())
            step += 1
        last_good = model.state_dict()
        if log_fn:
            log_fn(epoch, batch_losses[-1], time.monotonic() - t0)

    top1 = evaluate_model(model, test_ds) if test_ds is not None else float("nan")
    return TeacherCheckpoint(model.state_dict(), specs, fingerprint, top1,
                             batch_losses)
