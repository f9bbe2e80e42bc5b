"""Length-sweep evaluation with joint and per-task accuracies.

A model is scored over a grid of pair counts n.  For each n a fresh eval
set is drawn from its own random stream (derived from the eval seed and
n, disjoint from training streams), predictions are read at the scored
positions, and exact-match accuracy is computed against the brute-force
label oracle.  A combined-task prediction counts only if both answers
are right.
"""

from __future__ import annotations

import io
import csv as csv_mod
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tasks
from .models import Model, predict_answers
from .rng import Rng, derive_seed

DEFAULT_GRID = (5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 75, 100)
DEFAULT_SAMPLES = 2048
HIGHLIGHT_THRESHOLD = 0.90  # markdown bolds cells at or above this raw value

CSV_FIELDS = ("arch", "variant", "dat", "n", "samples", "joint_acc",
              "modulo_acc", "recall_acc", "seed", "checkpoint_hash")


@dataclass
class LengthResult:
    n: int
    samples: int
    joint_acc: float
    modulo_acc: float | None
    recall_acc: float | None


@dataclass
class EvalReport:
    arch: str
    variant: str
    dat: bool
    seed: int
    checkpoint_hash: str = ""
    label: str = ""
    rows: list[LengthResult] = field(default_factory=list)

    @property
    def lengths(self) -> tuple[int, ...]:
        return tuple(r.n for r in self.rows)

    def joint(self, n: int) -> float:
        for r in self.rows:
            if r.n == n:
                return r.joint_acc
        raise KeyError(f"no row for length {n}")

    def to_dict(self) -> dict:
        return {"arch": self.arch, "variant": self.variant, "dat": self.dat,
                "seed": self.seed, "checkpoint_hash": self.checkpoint_hash,
                "label": self.label, "rows": [asdict(r) for r in self.rows]}


def evaluate(model: Model, variant: str, lengths=DEFAULT_GRID,
             samples_per_length: int = DEFAULT_SAMPLES, seed: int = 0,
             batch_size: int = 256, checkpoint_hash: str = "",
             dat: bool = False, label: str = "") -> EvalReport:
    if not lengths:
        raise ValueError("lengths must be nonempty")
    for n in lengths:
        if not 1 <= n <= tasks.VOCAB.num_keys:
            raise ValueError(f"length {n} outside the key pool 1..{tasks.VOCAB.num_keys}")
    report = EvalReport(arch=model.spec.arch, variant=variant, dat=dat, seed=seed,
                        checkpoint_hash=checkpoint_hash,
                        label=label or model.spec.arch)
    for n in lengths:
        rng = Rng(derive_seed(seed, "eval", n))
        joint_hits = 0
        modulo_hits = 0
        recall_hits = 0
        done = 0
        while done < samples_per_length:
            b = min(batch_size, samples_per_length - done)
            batch = tasks.make_batch(variant, n, b, rng)
            mod_pred, rec_pred = predict_answers(model, batch)
            for row in range(b):
                gold_m, gold_r = tasks.oracle_label(batch.samples[row].tokens)
                ok = True
                if gold_m is not None:
                    hit = int(mod_pred[row]) == gold_m
                    modulo_hits += hit
                    ok = ok and hit
                if gold_r is not None:
                    hit = int(rec_pred[row]) == gold_r
                    recall_hits += hit
                    ok = ok and hit
                joint_hits += ok
            done += b
        report.rows.append(LengthResult(
            n=n, samples=samples_per_length,
            joint_acc=joint_hits / samples_per_length,
            modulo_acc=(modulo_hits / samples_per_length) if variant != "recall_only" else None,
            recall_acc=(recall_hits / samples_per_length) if variant != "modulo_only" else None,
        ))
    return report


# -- rendering ---------------------------------------------------------------

def render_csv(reports) -> str:
    """CSV rows, one per (report, length); schema is CSV_FIELDS."""
    if isinstance(reports, EvalReport):
        reports = [reports]
    buf = io.StringIO()
    writer = csv_mod.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for rep in reports:
        for row in rep.rows:
            writer.writerow([
                rep.arch, rep.variant, int(rep.dat), row.n, row.samples,
                f"{row.joint_acc:.6f}",
                "" if row.modulo_acc is None else f"{row.modulo_acc:.6f}",
                "" if row.recall_acc is None else f"{row.recall_acc:.6f}",
                rep.seed, rep.checkpoint_hash,
            ])
    return buf.getvalue()


def _cell(value: float) -> str:
    text = f"{value:.2f}"
    return f"**{text}**" if value >= HIGHLIGHT_THRESHOLD else text


def render_markdown(reports, metric: str = "joint") -> str:
    """Length-grid table, one row per report; >=0.90 cells are bolded.

    ``metric`` selects joint/modulo/recall accuracy (joint equals the
    single task's accuracy for single-task variants).
    """
    if isinstance(reports, EvalReport):
        reports = [reports]
    if not reports:
        return "| Model |\n|---|\n"
    grid = reports[0].lengths
    for rep in reports:
        if rep.lengths != grid:
            raise ValueError(f"length grids differ: {grid} vs {rep.lengths}")
    lines = ["| Model | " + " | ".join(str(n) for n in grid) + " |",
             "|---" * (len(grid) + 1) + "|"]
    for rep in reports:
        cells = []
        for row in rep.rows:
            value = {"joint": row.joint_acc, "modulo": row.modulo_acc,
                     "recall": row.recall_acc}[metric]
            cells.append("" if value is None else _cell(value))
        name = rep.label or rep.arch
        lines.append("| " + " | ".join([name] + cells) + " |")
    return "\n".join(lines) + "\n"


def render_report(report: EvalReport, format: str = "markdown") -> str:
    if format == "csv":
        return render_csv(report)
    if format == "markdown":
        return render_markdown(report)
    raise ValueError(f"unknown format {format!r}; expected csv or markdown")


@dataclass
class Comparison:
    """Per-length joint-accuracy deltas of each report vs the first one."""

    labels: list[str]
    lengths: tuple[int, ...]
    accuracies: list[list[float]]
    deltas: list[list[float]]  # deltas[i] = report i minus report 0

    def delta(self, label: str, n: int) -> float:
        i = self.labels.index(label)
        return self.deltas[i][self.lengths.index(n)]

    def render_markdown(self) -> str:
        lines = ["| Run | " + " | ".join(str(n) for n in self.lengths) + " |",
                 "|---" * (len(self.lengths) + 1) + "|"]
        for label, accs in zip(self.labels, self.accuracies):
            lines.append("| " + " | ".join([label] + [_cell(a) for a in accs]) + " |")
        for label, ds in zip(self.labels[1:], self.deltas[1:]):
            cells = [f"{d:+.2f}" for d in ds]
            lines.append("| Δ " + " | ".join([label] + cells) + " |")
        return "\n".join(lines) + "\n"


def compare_runs(reports: list[EvalReport]) -> Comparison:
    if not reports:
        raise ValueError("need at least one report to compare")
    grid = reports[0].lengths
    for rep in reports:
        if rep.lengths != grid:
            raise ValueError(f"length grids differ: {grid} vs {rep.lengths}")
    labels = [rep.label or rep.arch for rep in reports]
    accs = [[row.joint_acc for row in rep.rows] for rep in reports]
    base = accs[0]
    deltas = [[a - b for a, b in zip(run, base)] for run in accs]
    return Comparison(labels=labels, lengths=grid, accuracies=accs, deltas=deltas)
