"""Training loop with validation-based early stopping, and evaluation."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..models import Detector, ModelConfig, build_model, load_model, predict_batch, save_model, to_input
from ..nn import SGD, NonFiniteError, TrainConfig, lr_schedule
from ..nn.functional import softmax_cross_entropy
from .dataset import DataError, DatasetManifest, load_split, relabel_by_source

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    """Training diverged (CLI exit code 3)."""


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    train_accuracy: float
    val_accuracy: float
    seconds: float


@dataclass
class TrainResult:
    model: Detector
    labels: List[str]
    history: List[EpochStats]
    best_epoch: int
    best_val_accuracy: float
    checkpoint: Optional[Path] = None


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray
    per_class_recall: List[float]
    labels: List[str]
    dataset_name: str = ""
    model_name: str = ""

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> Dict:
        return {"dataset_name": self.dataset_name, "model_name": self.model_name,
                "accuracy": self.accuracy, "labels": list(self.labels),
                "confusion": self.confusion.astype(int).tolist(),
                "per_class_recall": list(self.per_class_recall)}

    @classmethod
    def from_dict(cls, d: Dict) -> "EvalReport":
        return cls(d["accuracy"], np.asarray(d["confusion"], dtype=np.int64), d["per_class_recall"],
                   d["labels"], d.get("dataset_name", ""), d.get("model_name", ""))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def confusion_report(y_true, y_pred, labels: Sequence[str], dataset_name="", model_name="") -> EvalReport:
    k = len(labels)
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (np.asarray(y_true), np.asarray(y_pred)), 1)
    total = conf.sum()
    acc = float(np.trace(conf) / total) if total else float("nan")
    rows = conf.sum(axis=1)
    recall = [float(conf[i, i] / rows[i]) if rows[i] else float("nan") for i in range(k)]
    return EvalReport(acc, conf, recall, list(labels), dataset_name, model_name)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def _accuracy(model, x, y, batch_size=128):
    if len(y) == 0:
        return float("nan")
    pred, _ = predict_batch(model, x, batch_size)
    return float((pred == y).mean())


def train(model_cfg: ModelConfig, manifest: DatasetManifest, train_cfg: TrainConfig,
          labels: Optional[Sequence[str]] = None, checkpoint: Optional[Path] = None,
          model_name: str = "", on_epoch: Optional[Callable[[EpochStats], None]] = None,
          data=None) -> TrainResult:
    """Fit on ``split == train``; keep the weights of the best validation epoch.

    Stops after ``train_cfg.patience`` epochs without a validation
    improvement or after ``train_cfg.epochs`` epochs. ``data`` may carry
    preloaded ``(x_train, y_train, x_val, y_val)`` arrays.
    """
    labels = list(labels) if labels is not None else manifest.labels
    if len(labels) != model_cfg.num_classes:
        raise DataError(f"manifest has {len(labels)} classes, model expects {model_cfg.num_classes}")
    if data is None:
        x_tr, y_tr = load_split(manifest, "train", labels)
        x_va, y_va = load_split(manifest, "val", labels)
    else:
        x_tr, y_tr, x_va, y_va = data
    if len(y_tr) == 0:
        raise DataError("manifest has no training records")
    if x_tr.shape[1] != model_cfg.input_size:
        raise DataError(f"blocks are {x_tr.shape[1]}px, model expects {model_cfg.input_size}px")

    model = build_model(model_cfg, seed=train_cfg.seed)
    opt = SGD(model, train_cfg)
    rng = np.random.default_rng(train_cfg.seed)
    steps_per_epoch = -(-len(y_tr) // train_cfg.batch_size)
    horizon = train_cfg.max_iter or train_cfg.epochs * steps_per_epoch

    history: List[EpochStats] = []
    best_acc, best_epoch, best_state = -1.0, -1, None
    it = 0
    for epoch in range(train_cfg.epochs):
        t0 = time.perf_counter()
        losses, correct = [], 0
        lr = lr_schedule(train_cfg, epoch)  if train_cfg.schedule == "step" else None
        for idx in _batches(len(y_tr), train_cfg.batch_size, rng):
            step_lr = lr if lr is not None else lr_schedule(train_cfg, it, horizon)
            xb = to_input(x_tr[idx], model_cfg, model.dtype)
            try:
                logits = model(xb)
                loss = softmax_cross_entropy(logits, y_tr[idx])
            except NonFiniteError as exc:
                raise NumericError(f"non-finite values at epoch {epoch}, iteration {it} "
                                   f"(lr={step_lr:.3g}): {exc}") from exc
            opt.zero_grad()
            loss.backward()
            opt.step(step_lr)
            losses.append(float(loss.values) * len(idx))
            correct += int((logits.values.argmax(axis=1) == y_tr[idx]).sum())
            it += 1
        val_acc = _accuracy(model, x_va, y_va)
        stats = EpochStats(epoch, float(step_lr), float(sum(losses) / len(y_tr)),
                           correct / len(y_tr), val_acc, time.perf_counter() - t0)
        history.append(stats)
        log.info("epoch %d lr %.4g loss %.4f train %.4f val %.4f (%.1fs)", epoch, stats.lr,
                 stats.train_loss, stats.train_accuracy, val_acc, stats.seconds)
        if on_epoch:
            on_epoch(stats)
        if val_acc > best_acc:
            best_acc, best_epoch, best_state = val_acc, epoch, model.state_dict()
        elif epoch - best_epoch >= train_cfg.patience:
            break

    model.load_state_dict(best_state)
    result = TrainResult(model, labels, history, best_epoch, best_acc)
    if checkpoint is not None:
        result.checkpoint = save_model(model, checkpoint, {
            "labels": labels, "model_name": model_name or model_cfg.family,
            "train": train_cfg.to_dict(), "trained_on": manifest.name})
    return result


def evaluate(model, manifest: DatasetManifest, split: str = "val", labels: Optional[Sequence[str]] = None,
             model_name: str = "", data=None) -> EvalReport:
    """Confusion matrix and accuracy of ``model`` (a Detector or checkpoint path) on one split."""
    if not isinstance(model, Detector):
        model, meta = load_model(model)
        labels = labels or meta.get("labels")
        model_name = model_name or meta.get("model_name", "")
    labels = list(labels) if labels is not None else manifest.labels
    if data is None:
        x, y = load_split(manifest, split, labels)
    else:
        x, y = data
    if len(y) == 0:
        raise DataError(f"manifest {manifest.name!r} has no {split} records")
    cfg = model.cfg
    channels = x.shape[3]
    if x.shape[1] != cfg.input_size or x.shape[2] != cfg.input_size or \
            (channels != cfg.input_channels and not (channels == 3 and cfg.input_channels == 1)):
        raise DataError(f"blocks {x.shape[1:]} do not match model input "
                        f"{cfg.input_size}x{cfg.input_size}x{cfg.input_channels}")
    pred, _ = predict_batch(model, x)
    return confusion_report(y, pred, labels, manifest.name, model_name or cfg.family)


def cross_eval(model, manifests: Sequence[DatasetManifest], split: str = "val",
               labels: Optional[Sequence[str]] = None, model_name: str = ""):
    """One evaluation per manifest; returns ``[(dataset_name, accuracy, report), ...]``."""
    if not isinstance(model, Detector):
        model, meta = load_model(model)
        labels = labels or meta.get("labels")
        model_name = model_name or meta.get("model_name", "")
    rows = []
    for m in manifests:
        rep = evaluate(model, m, split, labels, model_name)
        rows.append((m.name, rep.accuracy, rep))
    return rows


def printer_id_experiment(manifests: Sequence[DatasetManifest], model_cfg: ModelConfig,
                          train_cfg: TrainConfig, checkpoint: Optional[Path] = None,
                          keep_label: str = "pr"):
    """Relabel pristine blocks by printer profile, train on them, evaluate on val.

    ``model_cfg.num_classes`` is replaced by the number of profiles.
    Returns ``(EvalReport, TrainResult)``.
    """
    if len(manifests) < 2:
        raise DataError("printer identification needs at least two printer manifests")
    data = relabel_by_source(manifests, keep_label)
    cfg = replace(model_cfg, num_classes=len(data.labels))
    result = train(cfg, data, train_cfg, checkpoint=checkpoint, model_name=f"{cfg.family}-printer-id")
    report = evaluate(result.model, data, labels=data.labels, model_name=f"{cfg.family}-printer-id")
    return report, result
