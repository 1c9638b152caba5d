"""Synthesis engine: full-image init, exploration, exploitation, early stop.

Per synthetic image the engine keeps a bounded memory of crop rectangles
whose teacher loss exceeded the threshold. Exploration applies one shared
random crop per step to the whole class batch, records hard crops, and
takes a pixel step. Exploitation re-samples each image's own buffered
crops (softmax over stored losses), refreshes or evicts them against the
threshold, and keeps optimizing only images whose buffers are non-empty.
A class stops as soon as every buffer is empty; a full run stops at the
iteration budget.

Classes are synthesized in independent shards: own RNG stream (derived
from master seed + class id), own per-image optimizers, read-only teacher.
Shards may run in parallel processes; results are assembled class-major,
so the output is bit-identical regardless of worker count.
"""

from __future__ import annotations

import math
import os
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffnet as d
from .dataio import ClassIndex, RawDataset, sample_init_images
from .diffnet.functional import MIN_SAMPLED_CROP
from .metrics import SimilarityTrace, class_mean_cosine, _penultimate_features, snapshot_steps
from .seeds import derive_rng
from .squeeze import TeacherCheckpoint

VARIANTS = ("e2d", "random", "exploit-only", "alternating", "gradcam")
ALT_CYCLE = 20  # steps per phase under the alternating variant


class RecoverError(RuntimeError):
    pass


@dataclass
class RecoverConfig:
    iterations: int = 200  # total budget T
    k: int = -1  # explicit exploration budget; -1 derives from k_fraction
    k_fraction: float = 0.7
    epsilon: float = 0.5
    alpha_bn: float = 0.1
    lr: float = 0.05
    beta1: float = 0.5
    beta2: float = 0.9
    weight_decay: float = 0.0
    batch: int = 80
    scale_min: float = 0.25
    scale_max: float = 1.0
    aspect_min: float = 0.75
    aspect_max: float = 4.0 / 3.0
    buffer_capacity: int = 16
    variant: str = "e2d"
    workers: int = 0  # 0 -> all available cores
    stride: int = 0  # similarity snapshot stride; 0 -> T//20

    def resolved_workers(self) -> int:
        return self.workers if self.workers > 0 else (os.cpu_count() or 1)

    def resolved_k(self) -> int:
        if self.k >= 0:
            return self.k
        return int(round(self.k_fraction * self.iterations))

    def validate(self, ipc: int) -> None:
        if self.iterations < 0:
            raise RecoverError("iterations must be >= 0")
        if self.iterations > 0 and not 0 <= self.resolved_k() < max(self.iterations, 1):
            raise RecoverError(
                f"exploration budget k={self.resolved_k()} must lie in "
                f"[0, iterations={self.iterations})"
            )
        if self.epsilon < 0:
            raise RecoverError("epsilon must be >= 0")
        if self.alpha_bn < 0:
            raise RecoverError("alpha_bn must be >= 0")
        if not 0 < self.scale_min <= self.scale_max <= 1.0:
            raise RecoverError("need 0 < scale_min <= scale_max <= 1")
        if not 0 < self.aspect_min <= self.aspect_max:
            raise RecoverError("need 0 < aspect_min <= aspect_max")
        if self.buffer_capacity < 1:
            raise RecoverError("buffer_capacity must be >= 1")
        if self.variant not in VARIANTS:
            raise RecoverError(f"unknown variant {self.variant!r}")
        if self.batch < 1:
            raise RecoverError("batch must be >= 1")
        if self.alpha_bn > 0 and ipc > 0 and self.iterations > 0:
            chunks = max(1, math.ceil(ipc / self.batch))
            if ipc // chunks < 2:
                raise RecoverError(
                    "BN alignment needs batches of >= 2 images: "
                    f"ipc={ipc} with batch={self.batch} leaves a degenerate chunk"
                )


def variant_schedule(cfg: RecoverConfig, t: int) -> str:
    """Phase for 1-based step t: 'explore' or 'exploit'."""
    if t < 1 or t > cfg.iterations:
        raise RecoverError(f"step {t} outside 1..{cfg.iterations}")
    if cfg.variant in ("random", "gradcam"):
        return "explore"
    if cfg.variant == "alternating":
        return "explore" if ((t - 1) // ALT_CYCLE) % 2 == 0 else "exploit"
    # e2d and exploit-only switch once after the exploration budget
    return "explore" if t <= cfg.resolved_k() else "exploit"


# -- crop sampling --------------------------------------------------------------


def sample_rrc(rng: np.random.Generator, dims: tuple[int, int],
               cfg: RecoverConfig, counters: dict | None = None) -> d.CropSpec:
    """Area-uniform, log-aspect-uniform, position-uniform crop of dims."""
    h_img, w_img = dims
    if min(h_img, w_img) < MIN_SAMPLED_CROP:
        raise RecoverError(f"image {h_img}x{w_img} below minimum crop size")
    for _ in range(10):
        s = rng.uniform(cfg.scale_min, cfg.scale_max)
        aspect = math.exp(rng.uniform(math.log(cfg.aspect_min),
                                      math.log(cfg.aspect_max)))
        area = s * h_img * w_img
        w = int(round(math.sqrt(area * aspect)))
        h = int(round(math.sqrt(area / aspect)))
        if h < MIN_SAMPLED_CROP or w < MIN_SAMPLED_CROP:
            continue
        if h <= h_img and w <= w_img:
            top = int(rng.integers(0, h_img - h + 1))
            left = int(rng.integers(0, w_img - w + 1))
            return d.CropSpec(top, left, h, w, h_img, w_img)
    if counters is not None:
        counters["rrc_fallbacks"] = counters.get("rrc_fallbacks", 0) + 1
    side = min(h_img, w_img)
    return d.CropSpec((h_img - side) // 2, (w_img - side) // 2, side, side,
                      h_img, w_img)


def gradcam_probe(teacher: d.Model, image: np.ndarray, cls: int) -> np.ndarray:
    """Class-activation map of the last conv block, normalized to [0,1].

    Channel weights are the spatially averaged gradients of the class
    logit; the map is the ReLU of the weighted activation sum, bilinearly
    upsampled to image resolution. An all-zero map falls back to uniform.
    """
    c, h, w = image.shape
    x = d.Tensor(image[None], requires_grad=True)
    res = teacher.forward(x, "eval")
    logit = d.gather_flat(res.logits, np.array([cls]))
    logit.sum().backward()
    acts = res.last_conv.data[0]
    grads = res.last_conv.grad[0]
    weights = grads.mean(axis=(1, 2))
    cam = np.maximum((weights[:, None, None] * acts).sum(axis=0), 0.0)
    peak = cam.max()
    if peak <= 0:
        return np.ones((h, w), dtype=np.float32)
    cam = (cam / peak).astype(np.float32)
    up = d.crop_resize(d.Tensor(cam[None]),
                       d.CropSpec(0, 0, cam.shape[0], cam.shape[1], h, w))
    return up.data[0]


def sample_gradcam_crop(rng: np.random.Generator, cam: np.ndarray, h: int,
                        w: int, out_h: int, out_w: int) -> d.CropSpec:
    """Place an h x w crop with center probability proportional to 1-cam."""
    h_img, w_img = cam.shape
    tops = np.arange(h_img - h + 1)
    lefts = np.arange(w_img - w + 1)
    centers = cam[tops[:, None] + h // 2, lefts[None, :] + w // 2]
    weights = np.clip(1.0 - centers, 0.0, None).reshape(-1)
    total = weights.sum()
    if total <= 0:
        weights = np.ones_like(weights)
        total = weights.sum()
    flat = int(rng.choice(len(weights), p=weights / total))
    return d.CropSpec(int(tops[flat // len(lefts)]), int(lefts[flat % len(lefts)]),
                      h, w, out_h, out_w)


# -- memory buffers --------------------------------------------------------------


@dataclass
class CropRecord:
    crop: d.CropSpec
    loss: float
    inserted_step: int


class MemoryBuffer:
    """Bounded per-image record set, unique by crop coordinates."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.records: list[CropRecord] = []

    def __len__(self) -> int:
        return len(self.records)

    def insert(self, crop: d.CropSpec, loss: float, step: int) -> str:
        """Returns the event kind: 'updated', 'inserted' or 'evicted+inserted'."""
        for rec in self.records:
            if rec.crop.coords() == crop.coords():
                rec.loss = loss
                rec.inserted_step = step
                return "updated"
        evicted = False
        if len(self.records) >= self.capacity:
            weakest = min(range(len(self.records)), key=lambda i: self.records[i].loss)
            self.records.pop(weakest)
            evicted = True
        self.records.append(CropRecord(crop, loss, step))
        return "evicted+inserted" if evicted else "inserted"

    def probabilities(self) -> np.ndarray:
        losses = np.array([rec.loss for rec in self.records], dtype=np.float64)
        e = np.exp(losses - losses.max())
        return e / e.sum()

    def sample(self, rng: np.random.Generator) -> int:
        if not self.records:
            raise RecoverError("cannot sample from an empty buffer")
        return int(rng.choice(len(self.records), p=self.probabilities()))

    def update(self, index: int, loss: float) -> None:
        self.records[index].loss = loss

    def remove(self, index: int) -> None:
        self.records.pop(index)

    def assert_residency(self, epsilon: float) -> None:
        for rec in self.records:
            if not rec.loss > epsilon:
                raise RecoverError(
                    f"resident record with loss {rec.loss} <= epsilon {epsilon}"
                )


def exploit_sample(buffer: MemoryBuffer, rng: np.random.Generator) -> int:
    """Pick a record index with probability softmax(stored losses)."""
    return buffer.sample(rng)


# -- loss -------------------------------------------------------------------------


def distillation_loss(crop_batch: d.Tensor, labels: np.ndarray, teacher: d.Model,
                      bn_stats: d.BNStats, alpha_bn: float):
    """Teacher CE plus weighted squared-L2 BN statistics alignment.

    Returns (total scalar on the graph, detached per-image CE vector,
    float parts dict for metric rows).
    """
    if alpha_bn > 0 and crop_batch.shape[0] < 2:
        raise RecoverError("BN alignment is degenerate on a batch of one image")
    mode = "capture" if alpha_bn > 0 else "eval"
    res = teacher.forward(crop_batch, mode)
    mean_ce, ce_vec = d.per_sample_cross_entropy(res.logits, labels)
    total = mean_ce
    align_value = 0.0
    if alpha_bn > 0:
        align = None
        for (mu, var), rm, rv in zip(res.bn_batch, bn_stats.means, bn_stats.variances):
            dm = mu - d.Tensor(rm)
            dv = var - d.Tensor(rv)
            term = (dm * dm).sum() + (dv * dv).sum()
            align = term if align is None else align + term
        align_value = align.item()
        total = total + alpha_bn * align
    parts = {"mean_ce": mean_ce.item(), "bn_align": align_value,
             "total_loss": total.item()}
    return total, ce_vec, parts


# -- metric rows ------------------------------------------------------------------


@dataclass
class MetricRow:
    run_id: str
    class_id: int
    step: int
    phase: str
    mean_ce: float
    bn_align: float
    total_loss: float
    resident_records: int
    frozen_images: int
    wall_ms: float

    HEADER = ("run_id", "class", "step", "phase", "mean_ce", "bn_align",
              "total_loss", "resident_records", "frozen_images", "wall_ms")

    def as_csv(self) -> list:
        return [self.run_id, self.class_id, self.step, self.phase,
                f"{self.mean_ce:.6f}", f"{self.bn_align:.6f}",
                f"{self.total_loss:.6f}", self.resident_records,
                self.frozen_images, f"{self.wall_ms:.3f}"]


# -- the synthetic set ---------------------------------------------------------------


E2DS_MAGIC = b"E2DS"
E2DS_VERSION = 1


@dataclass
class SyntheticSet:
    """Distilled images in normalized space, class-major, one hard label each."""

    num_classes: int
    ipc: int
    mean: np.ndarray
    std: np.ndarray
    images: np.ndarray  # (num_classes * ipc, C, H, W) float32
    provenance: np.ndarray  # source ordinals, same order
    step: int = 0

    def __post_init__(self):
        if len(self.images) != self.num_classes * self.ipc:
            raise RecoverError("image count != classes * ipc")
        if not np.isfinite(self.images).all():
            raise RecoverError("non-finite synthetic pixels")

    @property
    def labels(self) -> np.ndarray:
        return np.arange(len(self.images)) // max(self.ipc, 1)

    def class_block(self, cls: int) -> np.ndarray:
        return self.images[cls * self.ipc : (cls + 1) * self.ipc]

    def denormalized(self) -> np.ndarray:
        return self.images * self.std.reshape(1, -1, 1, 1) + self.mean.reshape(1, -1, 1, 1)

    def save(self, path) -> None:
        # the step counter is runtime state recorded in the run manifest,
        # not part of the on-disk layout
        n, c, h, w = self.images.shape
        buf = bytearray()
        buf += E2DS_MAGIC
        buf += struct.pack("<IIIIII", E2DS_VERSION, self.num_classes, self.ipc,
                           h, w, c)
        buf += np.asarray(self.mean, "<f4").tobytes()
        buf += np.asarray(self.std, "<f4").tobytes()
        buf += np.ascontiguousarray(self.images, "<f4").tobytes()
        buf += np.ascontiguousarray(self.provenance, "<u4").tobytes()
        Path(path).write_bytes(bytes(buf))

    @classmethod
    def load(cls, path, step: int = 0) -> "SyntheticSet":
        data = Path(path).read_bytes()
        if data[:4] != E2DS_MAGIC:
            raise RecoverError(f"{path}: bad magic {data[:4]!r}")
        version, classes, ipc, h, w, c = struct.unpack_from("<IIIIII", data, 4)
        if version != E2DS_VERSION:
            raise RecoverError(f"{path}: unsupported version {version}")
        off = 28
        mean = np.frombuffer(data, "<f4", c, off).astype(np.float32)
        off += 4 * c
        std = np.frombuffer(data, "<f4", c, off).astype(np.float32)
        off += 4 * c
        n = classes * ipc
        images = np.frombuffer(data, "<f4", n * c * h * w, off).astype(np.float32)
        off += 4 * n * c * h * w
        provenance = np.frombuffer(data, "<u4", n, off).astype(np.uint32)
        off += 4 * n
        if off != len(data):
            raise RecoverError(f"{path}: {len(data) - off} trailing bytes")
        return cls(classes, ipc, mean, std, images.reshape(n, c, h, w).copy(),
                   provenance.copy(), step)


def init_full_image(ds: RawDataset, idx: ClassIndex, ipc: int,
                    master_seed: int) -> SyntheticSet:
    """Seed every synthetic image with a whole real image of its class."""
    blocks, prov = [], []
    for cls in range(ds.num_classes):
        rng = derive_rng(master_seed, "recover", cls)
        ordinals = sample_init_images(ds, idx, cls, ipc, rng)
        prov.append(ordinals)
        if ipc:
            blocks.append(ds.normalize(ordinals))
    images = (np.concatenate(blocks) if blocks
              else np.empty((0,) + ds.image_shape, np.float32))
    return SyntheticSet(ds.num_classes, ipc, ds.mean.copy(), ds.std.copy(),
                        images, np.concatenate(prov).astype(np.uint32), step=0)


# -- per-class shard -----------------------------------------------------------------


class EarlyStop(Exception):
    """All buffers empty during exploitation."""


@dataclass
class ShardResult:
    class_id: int
    images: np.ndarray
    provenance: np.ndarray
    rows: list[MetricRow]
    trace: SimilarityTrace
    stopped_at: int  # executed steps t*
    rrc_fallbacks: int


class ClassShard:
    """Sequential synthesis of one class's ipc images."""

    def __init__(self, class_id: int, images0: np.ndarray, provenance: np.ndarray,
                 teacher: d.Model, bn_stats: d.BNStats, cfg: RecoverConfig,
                 rng: np.random.Generator, run_id: str = "run"):
        self.class_id = class_id
        self.cfg = cfg
        self.rng = rng
        self.run_id = run_id
        self.teacher = teacher
        self.bn_stats = bn_stats
        self.pixels = [d.Tensor(img.copy(), requires_grad=True) for img in images0]
        self.provenance = provenance
        self.opts = [
            d.AdamW([p], lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                    weight_decay=cfg.weight_decay)
            for p in self.pixels
        ]
        self.buffers = [MemoryBuffer(cfg.buffer_capacity) for _ in self.pixels]
        self.labels_all = np.full(len(self.pixels), class_id, dtype=np.int64)
        self.dims = images0.shape[2:]
        self.counters: dict[str, int] = {}

    @property
    def ipc(self) -> int:
        return len(self.pixels)

    def frozen_count(self) -> int:
        return sum(1 for b in self.buffers if len(b) == 0)

    def resident_records(self) -> int:
        return sum(len(b) for b in self.buffers)

    def _chunks(self, indices: list[int]) -> list[np.ndarray]:
        n = len(indices)
        parts = max(1, math.ceil(n / self.cfg.batch))
        return [c for c in np.array_split(np.asarray(indices), parts) if len(c)]

    def _loss_over(self, indices: np.ndarray, crops: dict[int, d.CropSpec],
                   update: bool):
        """Forward/backward/step over chunked indices; returns per-image CE
        (aligned with `indices`) and averaged loss parts."""
        ce_all = np.empty(len(indices), dtype=np.float64)
        agg = {"mean_ce": 0.0, "bn_align": 0.0, "total_loss": 0.0}
        pos = 0
        for chunk in self._chunks(list(indices)):
            views = [d.crop_resize(self.pixels[i], crops[i]) for i in chunk]
            batch = d.stack(views)
            # exploitation can shrink to a single live image; a one-view
            # batch has no meaningful statistics to align, so that step
            # falls back to the plain CE objective
            alpha = self.cfg.alpha_bn if len(chunk) >= 2 else 0.0
            loss, ce_vec, parts = distillation_loss(
                batch, self.labels_all[chunk], self.teacher, self.bn_stats,
                alpha,
            )
            if update:
                for i in chunk:
                    self.pixels[i].grad = None
                loss.backward()
                for i in chunk:
                    self.opts[i].step()
            ce_all[pos : pos + len(chunk)] = ce_vec
            pos += len(chunk)
            for key in agg:
                agg[key] += parts[key] * len(chunk)
        for key in agg:
            agg[key] /= max(len(indices), 1)
        return ce_all, agg

    def explore_step(self, t: int, epsilon: float, update_pixels: bool = True) -> MetricRow:
        """One shared crop, per-image CE, threshold insertion, pixel step."""
        t0 = time.monotonic()
        crop = sample_rrc(self.rng, self.dims, self.cfg, self.counters)
        indices = np.arange(self.ipc)
        ce, parts = self._loss_over(indices, {i: crop for i in indices},
                                    update_pixels)
        for i, ce_i in zip(indices, ce):
            if ce_i > epsilon:
                event = self.buffers[i].insert(crop, float(ce_i), t)
                for kind in event.split("+"):
                    self.counters[kind] = self.counters.get(kind, 0) + 1
        for b in self.buffers:
            b.assert_residency(epsilon)
        return self._row(t, "explore", parts, t0)

    def gradcam_step(self, t: int) -> MetricRow:
        """Per-image crops centered away from high-activation regions."""
        t0 = time.monotonic()
        probe = sample_rrc(self.rng, self.dims, self.cfg, self.counters)
        crops = {}
        for i in range(self.ipc):
            cam = gradcam_probe(self.teacher, self.pixels[i].data, self.class_id)
            crops[i] = sample_gradcam_crop(self.rng, cam, probe.height,
                                           probe.width, *self.dims)
        indices = np.arange(self.ipc)
        _, parts = self._loss_over(indices, crops, update=True)
        return self._row(t, "explore", parts, t0)

    def exploit_step(self, t: int) -> MetricRow:
        """Per-image buffered crops; refresh-or-evict; step the survivors."""
        t0 = time.monotonic()
        participants = [i for i in range(self.ipc) if len(self.buffers[i]) > 0]
        if not participants:
            raise EarlyStop
        picked = {i: exploit_sample(self.buffers[i], self.rng) for i in participants}
        crops = {i: self.buffers[i].records[picked[i]].crop for i in participants}
        indices = np.asarray(participants)
        ce, parts = self._loss_over(indices, crops, update=True)
        for i, ce_i in zip(participants, ce):
            if ce_i > self.cfg.epsilon:
                self.buffers[i].update(picked[i], float(ce_i))
                self.counters["updated"] = self.counters.get("updated", 0) + 1
            else:
                self.buffers[i].remove(picked[i])
                self.counters["evicted"] = self.counters.get("evicted", 0) + 1
        for b in self.buffers:
            b.assert_residency(self.cfg.epsilon)
        return self._row(t, "exploit", parts, t0)

    def _row(self, t: int, phase: str, parts: dict, t0: float) -> MetricRow:
        return MetricRow(
            run_id=self.run_id,
            class_id=self.class_id,
            step=t,
            phase=phase,
            mean_ce=parts["mean_ce"],
            bn_align=parts["bn_align"],
            total_loss=parts["total_loss"],
            resident_records=self.resident_records(),
            frozen_images=self.frozen_count(),
            wall_ms=(time.monotonic() - t0) * 1000.0,
        )

    def snapshot_stats(self) -> tuple[float | None, float]:
        """(mean pairwise cosine, mean teacher CE) on the full images."""
        batch = d.Tensor(self.snapshot())
        res = self.teacher.forward(batch, "eval")
        value, _ = class_mean_cosine(res.penultimate.data)
        ce, _ = d.per_sample_cross_entropy(res.logits, self.labels_all)
        return value, ce.item()

    def snapshot(self) -> np.ndarray:
        return np.stack([p.data.copy() for p in self.pixels])

    def run(self) -> ShardResult:
        cfg = self.cfg
        trace = SimilarityTrace(self.class_id)
        stride = cfg.stride if cfg.stride > 0 else max(1, cfg.iterations // 20)
        want = set(snapshot_steps(cfg.iterations, stride, cfg.iterations))
        trace.append(0, *self.snapshot_stats())
        rows: list[MetricRow] = []
        epsilon = math.inf if cfg.variant in ("random", "gradcam") else cfg.epsilon
        stopped_at = cfg.iterations
        for t in range(1, cfg.iterations + 1):
            phase = variant_schedule(cfg, t)
            try:
                if phase == "explore":
                    if cfg.variant == "gradcam":
                        rows.append(self.gradcam_step(t))
                    else:
                        update = not (cfg.variant == "exploit-only")
                        rows.append(self.explore_step(t, epsilon, update))
                else:
                    rows.append(self.exploit_step(t))
            except EarlyStop:
                if cfg.variant != "alternating":
                    stopped_at = t - 1
                    break
                # an alternating cycle may refill buffers later; idle through
            if t in want:
                trace.append(t, *self.snapshot_stats())
        if trace.steps[-1] != stopped_at:
            trace.append(stopped_at, *self.snapshot_stats())
        return ShardResult(
            class_id=self.class_id,
            images=self.snapshot(),
            provenance=self.provenance,
            rows=rows,
            trace=trace,
            stopped_at=stopped_at,
            rrc_fallbacks=self.counters.get("rrc_fallbacks", 0),
        )


def _run_shard(args) -> ShardResult:
    (class_id, images0, provenance, specs, state, cfg, rng, run_id) = args
    teacher = d.Model(specs, seed=0)
    teacher.load_state_dict(state)
    teacher.set_requires_grad(False)
    shard = ClassShard(class_id, images0, provenance, teacher,
                       teacher.bn_stats(), cfg, rng, run_id)
    return shard.run()


@dataclass
class RecoverResult:
    synth: SyntheticSet
    rows: list[MetricRow]
    traces: list[SimilarityTrace]
    stopped_at: dict[int, int]
    rrc_fallbacks: int
    wall_s: float


def run_recover(ds: RawDataset, teacher_ckpt: TeacherCheckpoint,
                cfg: RecoverConfig, ipc: int, master_seed: int,
                run_id: str = "run") -> RecoverResult:
    """Synthesize the full set, one independent shard per class."""
    cfg.validate(ipc)
    t_start = time.monotonic()
    idx = ClassIndex.build(ds)
    jobs = []
    for cls in range(ds.num_classes):
        rng = derive_rng(master_seed, "recover", cls)
        ordinals = sample_init_images(ds, idx, cls, ipc, rng)
        jobs.append((cls, ds.normalize(ordinals), ordinals.astype(np.uint32),
                     teacher_ckpt.specs, teacher_ckpt.state, cfg, rng, run_id))

    if ipc == 0:
        synth = SyntheticSet(ds.num_classes, 0, ds.mean.copy(), ds.std.copy(),
                             np.empty((0,) + ds.image_shape, np.float32),
                             np.empty(0, np.uint32))
        return RecoverResult(synth, [], [], {}, 0, time.monotonic() - t_start)

    workers = min(cfg.resolved_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_shard, jobs))
    else:
        results = [_run_shard(job) for job in jobs]

    results.sort(key=lambda r: r.class_id)
    images = np.concatenate([r.images for r in results])
    provenance = np.concatenate([r.provenance for r in results])
    stopped = {r.class_id: r.stopped_at for r in results}
    synth = SyntheticSet(ds.num_classes, ipc, ds.mean.copy(), ds.std.copy(),
                         images, provenance,
                         step=max(stopped.values()) if stopped else 0)
    rows = [row for r in results for row in r.rows]
    rows.sort(key=lambda r: (r.class_id, r.step))
    return RecoverResult(
        synth=synth,
        rows=rows,
        traces=[r.trace for r in results],
        stopped_at=stopped,
        rrc_fallbacks=sum(r.rrc_fallbacks for r in results),
        wall_s=time.monotonic() - t_start,
    )
