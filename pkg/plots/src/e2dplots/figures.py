"""Figure builders over run-directory CSVs.

Each builder reads the CSVs written by the pipeline CLI and returns a
FigureData whose arrays are lifted verbatim from the files; rendering
draws those arrays and nothing else, so a test can compare the emitted
data against the source columns exactly. Consumed layout per run dir:

    manifest.json        stage wall times, final accuracies
    similarity.csv       run_id, step, class, mean_cosine, global_mean_cosine
    eval_metrics.csv     run_id, epoch, lr_multiplier, train_loss,
                         test_top1, ema_test_top1, wall_ms
    ablate.csv           run_id, axis, value, test_top1, ema_test_top1,
                         early_stop_step, recover_wall_s, final_global_cosine
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

KINDS = ("similarity", "ablation", "accuracy_vs_cost")


class PlotError(RuntimeError):
    pass


@dataclass
class Series:
    label: str
    x: list = field(default_factory=list)
    y: list = field(default_factory=list)


@dataclass
class FigureData:
    kind: str
    series: list[Series] = field(default_factory=list)
    x_label: str = ""
    y_label: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)


def _read_csv(path: Path) -> list[dict]:
    if not path.exists():
        raise PlotError(f"{path}: missing CSV")
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return rows


def _run_label(run_dir: Path, labels: dict[str, str] | None) -> str:
    name = run_dir.name
    return labels.get(name, name) if labels else name


def similarity_data(run_dirs, labels=None) -> FigureData:
    """One global-mean-cosine curve per run, deduplicated per step."""
    fig = FigureData("similarity", x_label="step", y_label="mean cosine similarity")
    for run in map(Path, run_dirs):
        rows = _read_csv(run / "similarity.csv")
        if not rows:
            print(f"warning: {run}/similarity.csv is empty; skipped")
            continue
        seen = {}
        for row in rows:
            if row["global_mean_cosine"] != "":
                seen[int(row["step"])] = float(row["global_mean_cosine"])
        steps = sorted(seen)
        fig.series.append(Series(_run_label(run, labels), steps,
                                 [seen[s] for s in steps]))
    return fig


def ablation_data(csv_path) -> FigureData:
    """Bar heights equal the accuracy column, in file order."""
    rows = _read_csv(Path(csv_path))
    fig = FigureData("ablation", x_label="value", y_label="test top-1")
    bars = Series("test_top1")
    for row in rows:
        if row["test_top1"] == "":
            print(f"warning: {row['run_id']} has no accuracy; skipped")
            continue
        bars.x.append(row["value"])
        bars.y.append(float(row["test_top1"]))
    fig.series.append(bars)
    return fig


def accuracy_vs_cost_data(run_dirs, labels=None) -> FigureData:
    """Scatter of final top-1 against recover wall-clock seconds."""
    fig = FigureData("accuracy_vs_cost", x_label="recover wall time (s)",
                     y_label="final test top-1")
    for run in map(Path, run_dirs):
        manifest_path = run / "manifest.json"
        if not manifest_path.exists():
            print(f"warning: {run}: no manifest; point dropped")
            continue
        manifest = json.loads(manifest_path.read_text())
        stages = manifest.get("stages", {})
        recover = stages.get("recover", {})
        evals = stages.get("eval", {})
        if "wall_s" not in recover or "test_top1" not in evals:
            print(f"warning: {run}: missing timings or accuracy; point dropped")
            continue
        fig.series.append(Series(_run_label(run, labels),
                                 [float(recover["wall_s"])],
                                 [float(evals["test_top1"])]))
    return fig


def render(fig_data: FigureData, out_path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    if fig_data.kind == "similarity":
        for s in fig_data.series:
            ax.plot(s.x, s.y, marker="o", markersize=3, label=s.label)
        if fig_data.series:
            ax.legend()
    elif fig_data.kind == "ablation":
        bars = fig_data.series[0]
        ax.bar(range(len(bars.x)), bars.y)
        ax.set_xticks(range(len(bars.x)), bars.x)
    elif fig_data.kind == "accuracy_vs_cost":
        for s in fig_data.series:
            ax.scatter(s.x, s.y, label=s.label)
        if fig_data.series:
            ax.legend()
    else:
        raise PlotError(f"unknown figure kind {fig_data.kind!r}")
    ax.set_xlabel(fig_data.x_label)
    ax.set_ylabel(fig_data.y_label)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def build(kind: str, runs, labels=None) -> FigureData:
    if kind == "similarity":
        return similarity_data(runs, labels)
    if kind == "ablation":
        if len(runs) != 1:
            raise PlotError("ablation takes exactly one run directory")
        return ablation_data(Path(runs[0]) / "ablate.csv")
    if kind == "accuracy_vs_cost":
        return accuracy_vs_cost_data(runs, labels)
    raise PlotError(f"unknown figure kind {kind!r} (choose from {KINDS})")
