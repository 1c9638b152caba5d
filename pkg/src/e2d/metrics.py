"""Redundancy diagnostics: pairwise cosine similarity of teacher features.

Features are the penultimate activations (post-global-pool, pre-classifier)
of an eval-mode forward over the full synthetic images, never crops: the
measurement asks how redundant the dataset itself is, not its augmented
views. Higher similarity means more redundant representations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffnet as d


@dataclass
class SimilarityReport:
    """Per-class mean pairwise cosine similarity at one step."""

    per_class: list[float | None]  # None for classes with fewer than 2 images
    global_mean: float | None
    step: int = 0
    skipped_pairs: int = 0


def _penultimate_features(teacher: d.Model, images: np.ndarray,
                          batch: int = 256) -> np.ndarray:
    feats = []
    for start in range(0, len(images), batch):
        x = d.Tensor(images[start : start + batch])
        feats.append(teacher.forward(x, "eval").penultimate.data)
    return np.concatenate(feats)


def class_mean_cosine(features: np.ndarray) -> tuple[float | None, int]:
    """Mean over unordered feature pairs; zero-norm rows skip their pairs."""
    m = len(features)
    if m < 2:
        return None, 0
    f = features.astype(np.float64)
    norms = np.linalg.norm(f, axis=1)
    ok = norms > 0
    skipped_rows = int((~ok).sum())
    f = f[ok] / norms[ok, None]
    kept = len(f)
    if kept < 2:
        return None, m * (m - 1) // 2
    sims = f @ f.T
    total = (sims.sum() - kept) / 2.0  # off-diagonal upper triangle
    pairs = kept * (kept - 1) // 2
    skipped = m * (m - 1) // 2 - pairs
    return float(total / pairs), skipped


def feature_similarity(teacher: d.Model, images: np.ndarray, ipc: int,
                       step: int = 0) -> SimilarityReport:
    """Report for a class-major image block of num_classes * ipc entries."""
    if len(images) % max(ipc, 1) != 0:
        raise ValueError(f"{len(images)} images do not split into ipc={ipc} groups")
    feats = _penultimate_features(teacher, images)
    per_class = []
    skipped = 0
    for start in range(0, len(images), ipc):
        value, miss = class_mean_cosine(feats[start : start + ipc])
        per_class.append(value)
        skipped += miss
    present = [v for v in per_class if v is not None]
    global_mean = float(np.mean(present)) if present else None
    return SimilarityReport(per_class, global_mean, step, skipped)


@dataclass
class SimilarityTrace:
    """Per-class similarity and full-image CE series at snapshot steps."""

    class_id: int
    steps: list[int] = field(default_factory=list)
    values: list[float | None] = field(default_factory=list)
    full_ce: list[float] = field(default_factory=list)

    def append(self, step: int, value: float | None, ce: float = float("nan")) -> None:
        self.steps.append(step)
        self.values.append(value)
        self.full_ce.append(ce)


def snapshot_steps(total: int, stride: int, final: int) -> list[int]:
    """Measurement grid: init, every stride, and the final executed step."""
    if stride <= 0:
        stride = max(1, total // 20)
    steps = {0, final}
    steps.update(s for s in range(stride, final + 1, stride))
    return sorted(steps)


def merge_traces(traces: list[SimilarityTrace]) -> list[dict]:
    """Combine per-class traces into rows with a global mean per step.

    Classes that early-stopped are frozen past their last snapshot, so
    carrying their final value forward is exact, not an approximation.
    """
    grid = sorted({s for tr in traces for s in tr.steps})
    lookups = {tr.class_id: dict(zip(tr.steps, tr.values)) for tr in traces}
    carried: dict[int, float | None] = {tr.class_id: None for tr in traces}
    rows = []
    for s in grid:
        for cid, lookup in lookups.items():
            if s in lookup:
                carried[cid] = lookup[s]
        present = [v for v in carried.values() if v is not None]
        global_mean = float(np.mean(present)) if present else None
        for cid in sorted(lookups):
            rows.append(
                {
                    "step": s,
                    "class": cid,
                    "mean_cosine": carried[cid],
                    "global_mean_cosine": global_mean,
                }
            )
    return rows
