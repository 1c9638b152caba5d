"""Student training on the distilled set with teacher soft labels.

The learning-rate schedule is the early-smoothing / late-steep shape:
cosine decay controlled by a smoothness factor until five sixths of the
run, then a straight line to zero. Soft labels are produced on the fly by
running the frozen teacher on the identical augmented batch, so no label
files exist on disk. An exponential moving average of the student weights
is maintained and used for the final evaluation.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import diffnet as d
from .dataio import RawDataset
from .recover import SyntheticSet, sample_rrc
from .seeds import derive_rng
from .squeeze import TeacherCheckpoint, evaluate_model


class EvaluateError(RuntimeError):
    pass


@dataclass
class SSRSConfig:
    total_iterations: int
    zeta: float = 2.0
    base_lr: float = 0.001

    def __post_init__(self):
        if self.total_iterations < 6:
            raise EvaluateError("schedule needs at least 6 iterations")
        if self.zeta <= 0:
            raise EvaluateError("zeta must be positive")


def ssrs_lr(i: int, cfg: SSRSConfig) -> float:
    """Multiplier in [0,1]: cosine until 5N/6, then linear to zero at N."""
    n, zeta = cfg.total_iterations, cfg.zeta
    if not 0 <= i <= n:
        raise EvaluateError(f"iteration {i} outside [0, {n}]")
    if 6 * i <= 5 * n:  # integer comparison keeps the breakpoint exact
        return (1.0 + math.cos(i * math.pi / (zeta * n))) / 2.0
    head = (1.0 + math.cos(5.0 * math.pi / (6.0 * zeta))) / 2.0
    return head * (6.0 * n - 6.0 * i) / (6.0 * n)


def cosine_lr(i: int, n: int) -> float:
    return (1.0 + math.cos(math.pi * i / n)) / 2.0


def multistep_lr(i: int, n: int) -> float:
    """Tenfold drops at 2/3 and 5/6 of the run."""
    if 3 * i < 2 * n:
        return 1.0
    if 6 * i < 5 * n:
        return 0.1
    return 0.01


SCHEDULES = ("ssrs", "cosine", "multistep")


def lr_multiplier(i: int, schedule: str, cfg: SSRSConfig) -> float:
    if schedule == "ssrs":
        return ssrs_lr(i, cfg)
    if schedule == "cosine":
        return cosine_lr(i, cfg.total_iterations)
    if schedule == "multistep":
        return multistep_lr(i, cfg.total_iterations)
    raise EvaluateError(f"unknown schedule {schedule!r}")


@dataclass
class StudentConfig:
    epochs: int = 300
    batch: int = 100
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    loss: str = "kl"  # kl | mse-gt-plus-ce
    ce_weight: float = 0.025
    ema_rate: float = 0.99
    zeta: float = 2.0
    schedule: str = "ssrs"
    crop_scale_min: float = 0.4
    crop_scale_max: float = 1.0
    aspect_min: float = 0.75
    aspect_max: float = 4.0 / 3.0
    flip_prob: float = 0.0
    cutmix_alpha: float = 1.0
    cutmix_prob: float = 0.5
    eval_every: int = 0  # 0 -> epochs // 10
    width: int = 0  # 0 -> same as teacher

    def __post_init__(self):
        if self.loss not in ("kl", "mse-gt-plus-ce"):
            raise EvaluateError(f"unknown loss kind {self.loss!r}")
        if self.schedule not in SCHEDULES:
            raise EvaluateError(f"unknown schedule {self.schedule!r}")
        if not 0 <= self.ema_rate < 1:
            raise EvaluateError("ema_rate must lie in [0, 1)")
        if self.ce_weight < 0:
            raise EvaluateError("ce_weight must be >= 0")


@dataclass
class _CropRanges:
    scale_min: float
    scale_max: float
    aspect_min: float
    aspect_max: float


def cutmix(batch: np.ndarray, label_dist: np.ndarray, rng: np.random.Generator,
           alpha: float, lam: float | None = None):
    """Paste a rectangle between permutation-paired images.

    Labels mix by the exact realized pixel-area ratio of the (possibly
    border-clipped) box, not the drawn lambda. Batch of one is identity.
    """
    n, _, h, w = batch.shape
    if n < 2:
        return batch, label_dist
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(n)
    cut = math.sqrt(max(0.0, 1.0 - lam))
    ch, cw = int(h * cut), int(w * cut)
    cy = int(rng.integers(0, h))
    cx = int(rng.integers(0, w))
    y1, y2 = max(cy - ch // 2, 0), min(cy + ch // 2, h)
    x1, x2 = max(cx - cw // 2, 0), min(cx + cw // 2, w)
    area = max(y2 - y1, 0) * max(x2 - x1, 0)
    lam_exact = 1.0 - area / (h * w)
    mixed = batch.copy()
    if area > 0:
        mixed[:, :, y1:y2, x1:x2] = batch[perm][:, :, y1:y2, x1:x2]
    labels = lam_exact * label_dist + (1.0 - lam_exact) * label_dist[perm]
    return mixed, labels


def soft_label_loss(student_logits: d.Tensor, teacher_logits: np.ndarray,
                    mixed_labels: np.ndarray, cfg: StudentConfig) -> d.Tensor:
    """Distillation objective on one batch; teacher side is constant."""
    if student_logits.shape != teacher_logits.shape:
        raise EvaluateError(
            f"logit shapes differ: {student_logits.shape} vs {teacher_logits.shape}"
        )
    if cfg.loss == "kl":
        return d.kl_div(teacher_logits, student_logits)
    total = d.mse(student_logits, teacher_logits)
    if cfg.ce_weight > 0:
        if mixed_labels is None:
            raise EvaluateError("mse-gt-plus-ce needs labels for the CE term")
        total = total + cfg.ce_weight * d.cross_entropy(student_logits, mixed_labels)
    return total


@dataclass
class EvalRow:
    run_id: str
    epoch: int
    lr_multiplier: float
    train_loss: float
    test_top1: float
    ema_test_top1: float
    wall_ms: float

    HEADER = ("run_id", "epoch", "lr_multiplier", "train_loss", "test_top1",
              "ema_test_top1", "wall_ms")

    def as_csv(self) -> list:
        return [self.run_id, self.epoch, f"{self.lr_multiplier:.8f}",
                f"{self.train_loss:.6f}", f"{self.test_top1:.4f}",
                f"{self.ema_test_top1:.4f}", f"{self.wall_ms:.3f}"]


@dataclass
class StudentResult:
    state: dict[str, np.ndarray]
    ema_state: dict[str, np.ndarray]
    specs: list
    rows: list[EvalRow] = field(repr=False, default_factory=list)
    final_top1: float = 0.0
    final_ema_top1: float = 0.0
    wall_s: float = 0.0


def _ema_model(specs, ema_params: list[np.ndarray], student: d.Model) -> d.Model:
    model = d.Model(specs, seed=0)
    state = student.state_dict()
    for (name, _), arr in zip(student.parameters(), ema_params):
        state[name] = arr
    model.load_state_dict(state)  # running stats copied from the student
    return model


def train_student(synth: SyntheticSet, teacher_ckpt: TeacherCheckpoint,
                  test_ds: RawDataset, cfg: StudentConfig, master_seed: int,
                  run_id: str = "run") -> StudentResult:
    """Relabel-and-train: soft labels on the fly, SSRS-style lr, EMA eval."""
    t_start = time.monotonic()
    if synth.mean.shape != test_ds.mean.shape or not (
        np.allclose(synth.mean, test_ds.mean) and np.allclose(synth.std, test_ds.std)
    ):
        raise EvaluateError("synthetic set and eval split disagree on normalization")
    teacher = teacher_ckpt.build_model()
    rng = derive_rng(master_seed, "eval")
    m = len(synth.images)
    if m == 0:
        raise EvaluateError("cannot train a student on an empty synthetic set")
    num_classes = synth.num_classes
    if cfg.width > 0:
        specs = d.convnet3(synth.images.shape[1], num_classes, width=cfg.width)
    else:
        specs = teacher_ckpt.specs
    student = d.Model(specs, seed=int(rng.integers(2**31)))
    params = [p for _, p in student.parameters()]
    opt = d.AdamW(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                  weight_decay=cfg.weight_decay)
    ema = [p.data.copy() for p in params]

    batch_size = min(cfg.batch, m)
    steps_per_epoch = max(1, math.ceil(m / batch_size))
    total = max(cfg.epochs * steps_per_epoch, 1)
    sched = SSRSConfig(total, cfg.zeta, cfg.lr) if total >= 6 else None
    ranges = _CropRanges(cfg.crop_scale_min, cfg.crop_scale_max,
                         cfg.aspect_min, cfg.aspect_max)
    onehot = np.eye(num_classes, dtype=np.float32)[synth.labels]
    eval_every = cfg.eval_every if cfg.eval_every > 0 else max(1, cfg.epochs // 10)
    dims = synth.images.shape[2:]

    rows: list[EvalRow] = []
    i = 0
    mult = 1.0
    loss_value = float("nan")
    for epoch in range(cfg.epochs):
        t0 = time.monotonic()
        order = rng.permutation(m)
        for start in range(0, m, batch_size):
            idx = order[start : start + batch_size]
            imgs = np.empty_like(synth.images[idx])
            for j, ordinal in enumerate(idx):
                crop = sample_rrc(rng, dims, ranges)
                view = d.crop_resize(d.Tensor(synth.images[ordinal]), crop)
                imgs[j] = view.data
            flips = rng.random(len(idx)) < cfg.flip_prob
            if flips.any():
                imgs[flips] = imgs[flips][:, :, :, ::-1]
            labels = onehot[idx]
            if len(idx) >= 2 and rng.random() < cfg.cutmix_prob:
                imgs, labels = cutmix(imgs, labels, rng, cfg.cutmix_alpha)
            teacher_logits = teacher.forward(d.Tensor(imgs), "eval").logits.data
            mult = lr_multiplier(i, cfg.schedule, sched) if sched else 1.0
            try:
                logits = student.forward(d.Tensor(imgs), "train").logits
                loss = soft_label_loss(logits, teacher_logits, labels, cfg)
                student.zero_grad()
                loss.backward()
            except d.NonFiniteError as e:
                raise EvaluateError(f"student diverged at iteration {i}: {e}")
            opt.step(lr=cfg.lr * mult)
            for buf, p in zip(ema, params):
                buf *= cfg.ema_rate
                buf += (1.0 - cfg.ema_rate) * p.data
            loss_value = loss.item()
            i += 1
        if (epoch + 1) % eval_every == 0 or epoch == cfg.epochs - 1:
            top1 = evaluate_model(student, test_ds)
            ema_top1 = evaluate_model(_ema_model(specs, ema, student), test_ds)
            rows.append(EvalRow(run_id, epoch, mult, loss_value, top1, ema_top1,
                                (time.monotonic() - t0) * 1000.0))

    if cfg.epochs == 0:
        top1 = evaluate_model(student, test_ds)
        rows.append(EvalRow(run_id, -1, 1.0, float("nan"), top1, top1, 0.0))
        ema_top1 = top1
    else:
        top1, ema_top1 = rows[-1].test_top1, rows[-1].ema_test_top1
    ema_state = _ema_model(specs, ema, student).state_dict()
    return StudentResult(
        state=student.state_dict(),
        ema_state=ema_state,
        specs=specs,
        rows=rows,
        final_top1=top1,
        final_ema_top1=ema_top1,
        wall_s=time.monotonic() - t_start,
    )
