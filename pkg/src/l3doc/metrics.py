"""Run records, the five sequence metrics, and machine-readable export.

metrics.jsonl holds one JSON object per line: per-epoch records
(task, epoch, loss, test_acc, wall_ms, steps) and task-boundary records
(the accuracy of every seen task under the model at that boundary).
summary.csv holds one row per task: its peak-phase accuracy (PPA), the
average and forgetting-ratio metrics at its boundary (APA, CFR), epochs
to reach 98% of its peak (SC), and optimizer steps spent (tt_steps).

Wall-clock stays in the jsonl only; every summary.csv column is a
deterministic function of the run so re-runs compare byte-for-byte.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import DataError


@dataclass(frozen=True)
class EpochRecord:
    task_id: int
    epoch: int
    train_loss: float
    test_acc: float
    wall_ms: float
    steps: int


@dataclass(frozen=True)
class BoundaryRecord:
    after_task: int
    task_id: int
    test_acc: float


@dataclass
class RunLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    boundaries: list[BoundaryRecord] = field(default_factory=list)

    def task_ids(self) -> list[int]:
        seen: dict[int, None] = {}
        for r in self.epochs:
            seen.setdefault(r.task_id, None)
        return list(seen)

    def trace(self, task_id: int) -> list[float]:
        return [r.test_acc for r in self.epochs if r.task_id == task_id]

    def boundary_accuracies(self, after_task: int) -> dict[int, float]:
        return {r.task_id: r.test_acc for r in self.boundaries if r.after_task == after_task}

    def peaks(self) -> dict[int, float]:
        """Reference accuracy per task: its value at its own boundary."""
        return {r.task_id: r.test_acc for r in self.boundaries if r.after_task == r.task_id}

    def fingerprint(self) -> str:
        """Digest of every deterministic field (wall-clock excluded)."""
        h = hashlib.sha256()
        for r in self.epochs:
            h.update(f"e|{r.task_id}|{r.epoch}|{r.train_loss!r}|{r.test_acc!r}|{r.steps}\n".encode())
        for b in self.boundaries:
            h.update(f"b|{b.after_task}|{b.task_id}|{b.test_acc!r}\n".encode())
        return h.hexdigest()


def ppa(trace: Sequence[float], top_frac: float = 0.05, aggregate: str = "mean") -> float:
    """Mean of the top ceil(top_frac * epochs) accuracies of a task's own
    training phase ("max" collapses to the single best epoch)."""
    if not trace:
        raise DataError("ppa: empty accuracy trace")
    if aggregate == "max":
        return max(trace)
    if aggregate != "mean":
        raise DataError(f"ppa: unknown aggregate {aggregate!r}")
    k = math.ceil(top_frac * len(trace))
    top = sorted(trace, reverse=True)[:k]
    return sum(top) / len(top)


def apa(seen_task_accuracies: Sequence[float]) -> float:
    if not seen_task_accuracies:
        raise DataError("apa: no task accuracies")
    return sum(seen_task_accuracies) / len(seen_task_accuracies)


def cfr(current_accuracies: Sequence[float], peak_accuracies: Sequence[float]) -> float:
    """Mean over seen tasks of current/peak; zero-peak tasks are skipped."""
    if len(current_accuracies) != len(peak_accuracies):
        raise DataError(f"cfr: {len(current_accuracies)} current vs {len(peak_accuracies)} peaks")
    ratios = []
    for cur, peak in zip(current_accuracies, peak_accuracies):
        if peak <= 0.0:
            warnings.warn("cfr: skipping task with zero peak accuracy", stacklevel=2)
            continue
        ratios.append(cur / peak)
    return sum(ratios) / len(ratios) if ratios else float("nan")


def sc(trace: Sequence[float]) -> int:
    """First 1-based epoch whose accuracy reaches 98% of the trace's peak."""
    if not trace:
        raise DataError("sc: empty accuracy trace")
    threshold = 0.98 * max(trace)
    for i, acc in enumerate(trace, start=1):
        if acc >= threshold:
            return i
    return len(trace)


# ------------------------------------------------------------------ export

def jsonl_lines(log: RunLog) -> list[str]:
    lines = []
    for r in log.epochs:
        lines.append(json.dumps({"kind": "epoch", "task": r.task_id, "epoch": r.epoch,
                                 "loss": r.train_loss, "test_acc": r.test_acc,
                                 "wall_ms": r.wall_ms, "steps": r.steps},
                                sort_keys=True, separators=(",", ":")))
    for b in log.boundaries:
        lines.append(json.dumps({"kind": "boundary", "after_task": b.after_task,
                                 "task": b.task_id, "test_acc": b.test_acc},
                                sort_keys=True, separators=(",", ":")))
    return lines


def parse_jsonl(text: str) -> RunLog:
    log = RunLog()
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            raise DataError(f"metrics.jsonl line {i}: not valid JSON") from None
        kind = rec.get("kind")
        if kind == "epoch":
            log.epochs.append(EpochRecord(rec["task"], rec["epoch"], rec["loss"],
                                          rec["test_acc"], rec["wall_ms"], rec["steps"]))
        elif kind == "boundary":
            log.boundaries.append(BoundaryRecord(rec["after_task"], rec["task"], rec["test_acc"]))
        else:
            raise DataError(f"metrics.jsonl line {i}: unknown record kind {kind!r}")
    return log


def summary_rows(log: RunLog, ppa_aggregate: str = "mean") -> list[dict]:
    rows = []
    peaks = log.peaks()
    for t in log.task_ids():
        trace = log.trace(t)
        at_boundary = log.boundary_accuracies(t)
        seen = sorted(at_boundary)
        rows.append({
            "task": t,
            "ppa": ppa(trace, aggregate=ppa_aggregate),
            "apa": apa([at_boundary[i] for i in seen]),
            "cfr": cfr([at_boundary[i] for i in seen], [peaks[i] for i in seen]),
            "sc": sc(trace),
            "tt_steps": sum(r.steps for r in log.epochs if r.task_id == t),
        })
    return rows


def summary_csv_bytes(rows: Sequence[dict]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["task", "ppa", "apa", "cfr", "sc", "tt_steps"])
    for row in rows:
        writer.writerow([row["task"], repr(float(row["ppa"])), repr(float(row["apa"])),
                         repr(float(row["cfr"])), row["sc"], row["tt_steps"]])
    return buf.getvalue().encode("utf-8")


def export(log: RunLog, out_dir: Path) -> dict[str, Path]:
    """Write metrics.jsonl and summary.csv; re-export is byte-identical."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jsonl_path = out_dir / "metrics.jsonl"
    jsonl_path.write_bytes(("\n".join(jsonl_lines(log)) + "\n").encode("utf-8")
                           if log.epochs or log.boundaries else b"")
    csv_path = out_dir / "summary.csv"
    csv_path.write_bytes(summary_csv_bytes(summary_rows(log)))
    return {"jsonl": jsonl_path, "csv": csv_path}
