"""Sequential task training with factor inheritance and archival.

One pass over the task sequence: the first task draws fresh factors,
later tasks inherit the previous task's kernels/contractions (heads are
always redrawn, class counts may differ).  Every optimizer step rebuilds
the pointwise kernels from the live knowledge base, runs the backbone,
and minimizes either the plain classification loss (first task, and
always in the baseline modes) or the attention-weighted total.  After a
task finishes, its factors are frozen into the archive, the knowledge
base is snapshotted for the next task's gap penalty, and every seen task
is re-evaluated under the *current* knowledge base with its archived
factors; that re-evaluation is where forgetting shows up.

Modes: "l3doc" (full method), "finetune" (shared state, no regularizers),
"stl" (fresh knowledge base and factors per task; its archive entries
carry their own frozen base, so old tasks cannot degrade by construction).
"""

from __future__ import annotations

import hashlib
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import mam as mam_mod
from .autodiff import Tensor
from .backbone import BackboneConfig, accuracy, classification_loss, forward, one_hot
from .datasets import TaskDataset
from .errors import ConfigError, DataError, NumericError
from .factorization import (FactorSpec, KnowledgeBase, TaskFactors,
                            init_knowledge_base, init_or_inherit_factors,
                            reconstruct_layer_kernels)
from .mam import MamConfig
from .metrics import BoundaryRecord, EpochRecord, RunLog

MODES = ("l3doc", "stl", "finetune")
THREADS_ENV = "L3DOC_THREADS"


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "l3doc"
    spec: FactorSpec = field(default_factory=FactorSpec)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    mam: MamConfig = field(default_factory=MamConfig)
    epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.spec.widths != self.backbone.widths:
            raise ConfigError(f"factor widths {self.spec.widths} != backbone widths {self.backbone.widths}")


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0


def adam_state(params: Sequence[Tensor]) -> OptimizerState:
    return OptimizerState(m=[np.zeros_like(p.data) for p in params],
                          v=[np.zeros_like(p.data) for p in params])


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: OptimizerState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Standard adaptive-moment update, in place."""
    state.step += 1
    t = state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], lr: float) -> None:
    for p, g in zip(params, grads):
        p.data = p.data - lr * g


@dataclass(frozen=True)
class ArchivedTask:
    """Immutable end-of-task state: factors, head, and evaluation inputs."""

    task_id: int
    kernels: tuple[np.ndarray, ...]
    contractions: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    head_weights: tuple[np.ndarray, ...]
    head_biases: tuple[np.ndarray, ...]
    kb_layers: tuple[np.ndarray, ...] | None
    dataset: TaskDataset
    peak_accuracy: float

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for group in (self.kernels, self.contractions, self.biases,
                      self.head_weights, self.head_biases, self.kb_layers or ()):
            for arr in group:
                h.update(arr.tobytes())
        return h.hexdigest()


def _frozen(tensors) -> tuple[np.ndarray, ...]:
    out = []
    for t in tensors:
        arr = np.array(t.data if isinstance(t, Tensor) else t, copy=True)
        arr.flags.writeable = False
        out.append(arr)
    return tuple(out)


class TaskArchive:
    """Append-only store of finished tasks; regularizer reads are counted
    so baseline modes can prove they never consult it during training."""

    def __init__(self):
        self._entries: list[ArchivedTask] = []
        self.regularizer_reads = 0

    def append(self, entry: ArchivedTask) -> None:
        self._entries.append(entry)

    def entries(self) -> list[ArchivedTask]:
        return list(self._entries)

    def for_regularization(self) -> list[ArchivedTask]:
        self.regularizer_reads += 1
        return list(self._entries)

    def __len__(self) -> int:
        return len(self._entries)


def archive_task(task_id: int, factors: TaskFactors, dataset: TaskDataset,
                 peak_accuracy: float, kb: KnowledgeBase | None = None) -> ArchivedTask:
    return ArchivedTask(
        task_id=task_id,
        kernels=_frozen(factors.kernels),
        contractions=_frozen(factors.contractions),
        biases=_frozen(factors.biases),
        head_weights=_frozen(factors.head_weights),
        head_biases=_frozen(factors.head_biases),
        kb_layers=_frozen(kb.layers) if kb is not None else None,
        dataset=dataset,
        peak_accuracy=peak_accuracy,
    )


def _stack_split(pairs) -> tuple[np.ndarray, np.ndarray]:
    n_pts = {cloud.points.shape for cloud, _ in pairs}
    if len(n_pts) != 1:
        raise DataError(f"objects disagree on point-cloud shape: {sorted(n_pts)}")
    batch = np.stack([cloud.points for cloud, _ in pairs])
    labels = np.array([label for _, label in pairs], dtype=np.int64)
    return batch, labels


def _value(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _eval_accuracy(pairs, layer_values, kernels_src, biases, head_w, head_b) -> float:
    batch, labels = _stack_split(pairs)
    layers = [ad.constant(_value(v)) for v in layer_values]
    factors_view = TaskFactors(0, [ad.constant(_value(k)) for k in kernels_src.kernels],
                               [ad.constant(_value(c)) for c in kernels_src.contractions],
                               [], [], [])
    kernels = reconstruct_layer_kernels(layers, factors_view)
    logits = forward(batch, kernels,
                     [ad.constant(_value(b)) for b in biases],
                     [ad.constant(_value(w)) for w in head_w],
                     [ad.constant(_value(b)) for b in head_b])
    return accuracy(logits, labels)


def evaluate_task(dataset: TaskDataset, kb: KnowledgeBase, factors: TaskFactors) -> float:
    return _eval_accuracy(dataset.test, kb.layers, factors, factors.biases,
                          factors.head_weights, factors.head_biases)


def evaluate_archive(kb: KnowledgeBase, archive: TaskArchive,
                     threads: int | None = None) -> dict[int, float]:
    """Accuracy of every archived task: its frozen factors and head applied
    to the live knowledge base (or its own frozen base, for independent
    per-task entries)."""
    if threads is None:
        threads = max(1, int(os.environ.get(THREADS_ENV, "1")))
    entries = archive.entries()

    def one(entry: ArchivedTask) -> tuple[int, float]:
        layer_values = entry.kb_layers if entry.kb_layers is not None else kb.layers
        acc = _eval_accuracy(entry.dataset.test, layer_values, entry,
                             entry.biases, entry.head_weights, entry.head_biases)
        return entry.task_id, acc

    if threads > 1 and len(entries) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, entries))
    else:
        results = [one(e) for e in entries]
    return dict(results)


def train_task(task_id: int, dataset: TaskDataset, kb: KnowledgeBase,
               archive: TaskArchive, cfg: ExperimentConfig,
               prev_factors: TaskFactors | None = None) -> tuple[TaskFactors, list[EpochRecord]]:
    """One task's optimization loop; mutates kb in place and returns the
    trained factors plus per-epoch records."""
    head_dims = cfg.backbone.head_dims(dataset.n_classes)
    factors = init_or_inherit_factors(prev_factors, cfg.spec, head_dims,
                                      seed=[cfg.seed, task_id, 1], task_id=task_id)
    rng = np.random.default_rng([cfg.seed, task_id, 2])
    params = [*kb.layers, *factors.trainable()]
    state = adam_state(params)
    train_batch, train_labels = _stack_split(dataset.train)
    if train_batch.shape[2] != cfg.backbone.widths[0]:
        raise DataError(f"point dimension {train_batch.shape[2]} != backbone input {cfg.backbone.widths[0]}")
    n = len(dataset.train)
    steps_per_epoch = -(-n // cfg.batch_size)
    records = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        losses = []
        wall_ms = 0.0
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            t0 = time.perf_counter()
            kernels = reconstruct_layer_kernels(kb.layers, factors)
            logits = forward(train_batch[idx], kernels, factors.biases,
                             factors.head_weights, factors.head_biases)
            targets = one_hot(train_labels[idx], dataset.n_classes)
            lc = classification_loss(logits, targets, cfg.backbone.loss_kind)
            if cfg.mode == "l3doc":
                total = mam_mod.total_loss(lc, kb, factors, archive.for_regularization(), cfg.mam)
            else:
                total = lc
            if not np.isfinite(total.data):
                raise NumericError(
                    f"non-finite loss {float(total.data)} at task {task_id} epoch {epoch} step {b + 1}")
            grads = ad.gradients(total, params)
            adam_step(params, grads, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
            wall_ms += (time.perf_counter() - t0) * 1e3
            losses.append(float(total.data))
        records.append(EpochRecord(task_id=task_id, epoch=epoch,
                                   train_loss=sum(losses) / len(losses),
                                   test_acc=evaluate_task(dataset, kb, factors),
                                   wall_ms=wall_ms, steps=steps_per_epoch))
    return factors, records


def run_sequence(cfg: ExperimentConfig, tasks: Sequence[TaskDataset]) -> tuple[TaskArchive, RunLog]:
    """Train the whole sequence, archiving and re-evaluating after each task."""
    if not tasks:
        raise DataError("run_sequence: no tasks")
    archive = TaskArchive()
    log = RunLog()
    kb = init_knowledge_base(cfg.spec, seed=[cfg.seed, 0, 0])
    prev_factors: TaskFactors | None = None
    for task_id, dataset in enumerate(tasks, start=1):
        if cfg.mode == "stl":
            kb = init_knowledge_base(cfg.spec, seed=[cfg.seed, task_id, 0])
            prev_factors = None
        factors, records = train_task(task_id, dataset, kb, archive, cfg, prev_factors)
        log.epochs.extend(records)
        peak = evaluate_task(dataset, kb, factors)
        archive.append(archive_task(task_id, factors, dataset, peak,
                                    kb=kb if cfg.mode == "stl" else None))
        kb.take_snapshot()
        for seen_id, acc in sorted(evaluate_archive(kb, archive).items()):
            log.boundaries.append(BoundaryRecord(after_task=task_id, task_id=seen_id, test_acc=acc))
        prev_factors = factors
    return archive, log
