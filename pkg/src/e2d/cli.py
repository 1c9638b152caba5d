"""Command-line orchestration of the pipeline stages.

Subcommands: squeeze, recover, eval, metrics, pipeline, ablate, gendata.
Artifacts and CSVs land in runs/<run_id>/; every run writes a manifest
that pins config, seeds and artifact hashes, and a rerun skips stages
whose fingerprint and artifact bytes are unchanged.

Exit codes: 0 ok, 2 config error, 3 stage failure, 4 fingerprint mismatch.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

from .config import ConfigError, RunConfig, parse_config
from .dataio import FormatError
from .diffnet.tensor import NonFiniteError
from .evaluate import EvalRow, EvaluateError, train_student
from .manifest import (
    FingerprintMismatch,
    RunManifest,
    config_section_text,
    dataset_fingerprint,
    sha256_text,
)
from .metrics import feature_similarity, merge_traces
from .recover import (
    MetricRow,
    RecoverError,
    SyntheticSet,
    run_recover,
)
from .squeeze import TeacherCheckpoint, TrainingDiverged, train_teacher
from . import toydata

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_FINGERPRINT = 4

SIMILARITY_HEADER = ("run_id", "step", "class", "mean_cosine",
                     "global_mean_cosine")
ABLATE_HEADER = ("run_id", "axis", "value", "test_top1", "ema_test_top1",
                 "early_stop_step", "recover_wall_s", "final_global_cosine")


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def _zero_wall(rows, column: int, deterministic: bool):
    if not deterministic:
        return rows
    # wall-clock differs between reruns by nature; the reference mode zeroes
    # it so deterministic CSVs are byte-comparable
    out = []
    for row in rows:
        row = list(row)
        row[column] = "0.000"
        out.append(row)
    return out


class Runtime:
    """Shared state for one CLI invocation."""

    def __init__(self, cfg: RunConfig, master_seed: int, run_id: str | None,
                 runs_root: str, deterministic: bool):
        self.cfg = cfg
        self.master_seed = master_seed
        self.deterministic = deterministic
        if deterministic:
            cfg.recover.workers = 1
        cfg_hash = sha256_text(cfg.serialize())[:8]
        self.run_id = run_id or (
            f"{cfg.dataset.kind}-ipc{cfg.dataset.ipc}-s{master_seed}-{cfg_hash}"
        )
        self.run_dir = Path(runs_root) / self.run_id
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.ds_fp = dataset_fingerprint(cfg.dataset.data_files())
        self.manifest = self._load_or_create_manifest()
        self._train = None
        self._test = None

    def _load_or_create_manifest(self) -> RunManifest:
        path = self.run_dir / "manifest.json"
        if path.exists():
            manifest = RunManifest.load(path)
            if manifest.dataset_fingerprint != self.ds_fp:
                raise FingerprintMismatch(
                    f"dataset files changed since {path} was written"
                )
            if manifest.config != self.cfg.as_tree() or \
                    manifest.master_seed != self.master_seed:
                manifest = RunManifest.fresh(self.run_id, self.master_seed,
                                             self.cfg, self.ds_fp,
                                             self.cfg.dataset.classes)
            return manifest
        return RunManifest.fresh(self.run_id, self.master_seed, self.cfg,
                                 self.ds_fp, self.cfg.dataset.classes)

    def save_manifest(self) -> None:
        self.manifest.save(self.run_dir / "manifest.json")

    @property
    def train_ds(self):
        if self._train is None:
            self._train = self.cfg.dataset.load_train()
        return self._train

    @property
    def test_ds(self):
        if self._test is None:
            self._test = self.cfg.dataset.load_test()
        return self._test

    # -- fingerprints ------------------------------------------------------

    def squeeze_fp(self) -> str:
        return sha256_text("squeeze", self.ds_fp,
                           config_section_text(self.cfg, "teacher"),
                           str(self.master_seed))

    def recover_fp(self) -> str:
        return sha256_text("recover", self.squeeze_fp(),
                           config_section_text(self.cfg, "recover"),
                           config_section_text(self.cfg, "metrics"),
                           str(self.cfg.dataset.ipc), str(self.master_seed))

    def eval_fp(self) -> str:
        return sha256_text("eval", self.recover_fp(),
                           config_section_text(self.cfg, "eval"),
                           str(self.master_seed))

    # -- stages --------------------------------------------------------------

    def stage_squeeze(self, out: str | None = None, log=print) -> str:
        path = out or str(self.run_dir / "teacher.e2dc")
        fp = self.squeeze_fp()
        if out is None and self.manifest.stage_is_current("squeeze", fp):
            log(f"[squeeze] up to date: {path}")
            return self.manifest.stages["squeeze"]["artifact"]
        t0 = time.monotonic()
        ckpt = train_teacher(
            self.train_ds, self.test_ds, self.cfg.teacher,
            self.cfg.dataset.kind, self.master_seed, fingerprint=fp,
            log_fn=lambda e, l, s: log(f"[squeeze] epoch {e} loss {l:.4f} ({s:.1f}s)"),
        )
        ckpt.save(path)
        self.manifest.record_stage("squeeze", fp, path, time.monotonic() - t0)
        self.save_manifest()
        log(f"[squeeze] wrote {path} (held-out top1 {ckpt.top1:.4f})")
        return path

    def stage_recover(self, teacher_path: str | None = None,
                      out: str | None = None, log=print) -> str:
        path = out or str(self.run_dir / "synth.e2ds")
        fp = self.recover_fp()
        if out is None and teacher_path is None and \
                self.manifest.stage_is_current("recover", fp):
            log(f"[recover] up to date: {path}")
            return self.manifest.stages["recover"]["artifact"]
        if teacher_path is None:
            teacher_path = self.manifest.verify_artifact("squeeze")
        ckpt = TeacherCheckpoint.load(teacher_path)
        t0 = time.monotonic()
        result = run_recover(self.train_ds, ckpt, self.cfg.recover,
                             self.cfg.dataset.ipc, self.master_seed,
                             run_id=self.run_id)
        result.synth.save(path)
        rows = _zero_wall([r.as_csv() for r in result.rows], 9, self.deterministic)
        _write_csv(self.run_dir / "recover_metrics.csv", MetricRow.HEADER, rows)
        if self.cfg.metrics.enabled:
            sim_rows = [
                [self.run_id, r["step"], r["class"],
                 _fmt_opt(r["mean_cosine"]), _fmt_opt(r["global_mean_cosine"])]
                for r in merge_traces(result.traces)
            ]
            _write_csv(self.run_dir / "similarity.csv", SIMILARITY_HEADER, sim_rows)
        self.manifest.record_stage("recover", fp, path, time.monotonic() - t0)
        self.manifest.stages["recover"]["early_stop_step"] = (
            max(result.stopped_at.values()) if result.stopped_at else 0
        )
        self.manifest.stages["recover"]["synth_step"] = result.synth.step
        self.manifest.stages["recover"]["rrc_fallbacks"] = result.rrc_fallbacks
        self.save_manifest()
        log(f"[recover] wrote {path} (stopped at "
            f"{self.manifest.stages['recover']['early_stop_step']} of "
            f"{self.cfg.recover.iterations})")
        return path

    def stage_eval(self, teacher_path: str | None = None,
                   synth_path: str | None = None, out: str | None = None,
                   metrics_out: str | None = None, log=print) -> dict:
        fp = self.eval_fp()
        explicit = teacher_path is not None or synth_path is not None
        if not explicit and self.manifest.stage_is_current("eval", fp):
            log("[eval] up to date")
            return self.manifest.stages["eval"]
        if teacher_path is None:
            teacher_path = self.manifest.verify_artifact("squeeze")
        if synth_path is None:
            synth_path = self.manifest.verify_artifact("recover")
        ckpt = TeacherCheckpoint.load(teacher_path)
        synth = SyntheticSet.load(synth_path)
        t0 = time.monotonic()
        result = train_student(synth, ckpt, self.test_ds, self.cfg.eval,
                               self.master_seed, run_id=self.run_id)
        student_path = out or str(self.run_dir / "student.e2dc")
        from .diffnet.checkpoint import save_state

        save_state(student_path, result.ema_state)
        rows = _zero_wall([r.as_csv() for r in result.rows], 6, self.deterministic)
        _write_csv(metrics_out or self.run_dir / "eval_metrics.csv",
                   EvalRow.HEADER, rows)
        self.manifest.record_stage("eval", fp, student_path,
                                   time.monotonic() - t0)
        self.manifest.stages["eval"]["test_top1"] = result.final_top1
        self.manifest.stages["eval"]["ema_test_top1"] = result.final_ema_top1
        self.save_manifest()
        log(f"[eval] student top1 {result.final_top1:.4f} "
            f"(ema {result.final_ema_top1:.4f})")
        return self.manifest.stages["eval"]

    def stage_metrics(self, teacher_path: str | None = None,
                      synth_path: str | None = None, log=print) -> str:
        if teacher_path is None:
            teacher_path = self.manifest.verify_artifact("squeeze")
        if synth_path is None:
            synth_path = self.manifest.verify_artifact("recover")
        ckpt = TeacherCheckpoint.load(teacher_path)
        step = self.manifest.stages.get("recover", {}).get("synth_step", 0)
        synth = SyntheticSet.load(synth_path, step=step)
        report = feature_similarity(ckpt.build_model(), synth.images,
                                    synth.ipc, step=synth.step)
        rows = [
            [self.run_id, report.step, cls, _fmt_opt(v), _fmt_opt(report.global_mean)]
            for cls, v in enumerate(report.per_class)
        ]
        path = self.run_dir / "similarity_final.csv"
        _write_csv(path, SIMILARITY_HEADER, rows)
        log(f"[metrics] global mean cosine {_fmt_opt(report.global_mean)}")
        return str(path)


def _fmt_opt(v) -> str:
    return "" if v is None else f"{v:.6f}"


def final_global_cosine(runtime: Runtime, synth_path: str) -> float | None:
    ckpt = TeacherCheckpoint.load(runtime.manifest.verify_artifact("squeeze"))
    synth = SyntheticSet.load(synth_path)
    report = feature_similarity(ckpt.build_model(), synth.images, synth.ipc)
    return report.global_mean


def cmd_ablate(runtime: Runtime, axis: str, values: list[str], log=print) -> int:
    """Controlled comparison over one axis with shared teacher and init."""
    import dataclasses

    cfg = runtime.cfg
    if axis not in ("variant", "k_fraction", "epsilon", "schedule"):
        log(f"ablate: unknown axis {axis!r}")
        return EXIT_CONFIG
    teacher_path = runtime.stage_squeeze(log=log)
    rows = []
    shared_synth = None
    for raw in values:
        sub = dataclasses.replace(cfg.recover)
        eval_cfg = dataclasses.replace(cfg.eval)
        try:
            if axis == "variant":
                sub.variant = raw
            elif axis == "k_fraction":
                sub.k = -1
                sub.k_fraction = float(raw)
            elif axis == "epsilon":
                sub.epsilon = float(raw)
            elif axis == "schedule":
                eval_cfg.schedule = raw
            sub.validate(cfg.dataset.ipc)
            if axis == "schedule":
                eval_cfg = dataclasses.replace(eval_cfg)  # revalidate kind
        except (RecoverError, EvaluateError, ValueError) as e:
            log(f"ablate: invalid value {raw!r}: {e}")
            return EXIT_CONFIG

        run_id = f"{runtime.run_id}-{axis}-{raw}"
        try:
            ckpt = TeacherCheckpoint.load(teacher_path)
            if axis == "schedule" and shared_synth is not None:
                synth, stopped, wall = shared_synth
            else:
                result = run_recover(runtime.train_ds, ckpt, sub,
                                     cfg.dataset.ipc, runtime.master_seed,
                                     run_id=run_id)
                synth = result.synth
                stopped = (max(result.stopped_at.values())
                           if result.stopped_at else 0)
                wall = result.wall_s
                if axis == "schedule":
                    shared_synth = (synth, stopped, wall)
            student = train_student(synth, ckpt, runtime.test_ds, eval_cfg,
                                    runtime.master_seed, run_id=run_id)
            cos = feature_similarity(ckpt.build_model(), synth.images,
                                     synth.ipc).global_mean
            rows.append([run_id, axis, raw, f"{student.final_top1:.4f}",
                         f"{student.final_ema_top1:.4f}", stopped,
                         f"{wall:.2f}", _fmt_opt(cos)])
            log(f"[ablate] {axis}={raw}: top1 {student.final_top1:.4f} "
                f"stop {stopped}")
        except (RecoverError, EvaluateError, TrainingDiverged,
                NonFiniteError) as e:
            log(f"[ablate] {axis}={raw} failed: {e}")
            rows.append([run_id, axis, raw, "", "", "", "", ""])
    path = runtime.run_dir / "ablate.csv"
    _write_csv(path, ABLATE_HEADER, rows)
    log(f"[ablate] wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="e2d",
        description="Desk-scale dataset distillation with explore/exploit "
                    "crop scheduling",
    )
    parser.add_argument("--config", help="run configuration file")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--run-id", default=None)
    parser.add_argument("--runs-root", default="runs")
    parser.add_argument("--deterministic", action="store_true",
                        help="single worker, zeroed wall-clock CSV columns")
    sub = parser.add_subparsers(dest="command", required=True)

    sq = sub.add_parser("squeeze", help="train and freeze the teacher")
    sq.add_argument("--out", default=None)

    rc = sub.add_parser("recover", help="synthesize the distilled set")
    rc.add_argument("--teacher", default=None)
    rc.add_argument("--out", default=None)

    ev = sub.add_parser("eval", help="train a student with soft labels")
    ev.add_argument("--teacher", default=None)
    ev.add_argument("--synth", default=None)
    ev.add_argument("--out", default=None)
    ev.add_argument("--metrics", default=None)

    sub.add_parser("metrics", help="similarity report for an existing set")

    sub.add_parser("pipeline", help="squeeze, recover and eval in order")

    ab = sub.add_parser("ablate", help="comparison runs over one axis")
    ab.add_argument("--axis", required=True,
                    choices=["variant", "k_fraction", "epsilon", "schedule"])
    ab.add_argument("--values", required=True,
                    help="comma-separated axis values")

    gen = sub.add_parser("gendata", help="write stand-in datasets")
    gen.add_argument("--kind", choices=["glyphs", "shapes"], required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--train", type=int, default=6000)
    gen.add_argument("--test", type=int, default=1000)
    gen.add_argument("--data-seed", type=int, default=2024)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    log = print

    if args.command == "gendata":
        writer = (toydata.write_glyphs_idx if args.kind == "glyphs"
                  else toydata.write_shapes_cifar)
        files = writer(args.out, train=args.train, test=args.test,
                       seed=args.data_seed)
        for key, path in files.items():
            log(f"[gendata] {key}: {path}")
        return EXIT_OK

    if not args.config:
        log("a --config file is required for this command")
        return EXIT_CONFIG
    try:
        cfg = parse_config(args.config)
        runtime = Runtime(cfg, args.seed, args.run_id, args.runs_root,
                          args.deterministic)
    except (ConfigError, FormatError) as e:
        log(f"config error: {e}")
        return EXIT_CONFIG
    except FingerprintMismatch as e:
        log(f"fingerprint mismatch: {e}")
        return EXIT_FINGERPRINT

    try:
        if args.command == "squeeze":
            runtime.stage_squeeze(out=args.out, log=log)
        elif args.command == "recover":
            runtime.stage_recover(teacher_path=args.teacher, out=args.out,
                                  log=log)
        elif args.command == "eval":
            runtime.stage_eval(teacher_path=args.teacher,
                               synth_path=args.synth, out=args.out,
                               metrics_out=args.metrics, log=log)
        elif args.command == "metrics":
            runtime.stage_metrics(log=log)
        elif args.command == "pipeline":
            runtime.stage_squeeze(log=log)
            runtime.stage_recover(log=log)
            runtime.stage_eval(log=log)
        elif args.command == "ablate":
            return cmd_ablate(runtime, args.axis,
                              [v.strip() for v in args.values.split(",")], log)
    except FingerprintMismatch as e:
        log(f"fingerprint mismatch: {e}")
        return EXIT_FINGERPRINT
    except (TrainingDiverged, EvaluateError, RecoverError, NonFiniteError,
            FormatError) as e:
        log(f"stage failed: {e}")
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
