"""Segmentation metrics and the reflection-invariance report."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .canonical import canonicalize
from .data import reflect
from .errors import InvalidInputError
from .linalg import random_unit_vector

AXIS_TRANSFORMS = ("x", "y", "z", "xyz")
PLANE = "plane"
REPORT_COLUMNS = ("transform", "trial", "macc_base", "macc_t", "miou_base", "miou_t",
                  "dmacc_abs", "dmiou_abs", "dmacc_rel", "dmiou_rel")


def confusion(preds, labels, num_classes: int) -> np.ndarray:
    """C x C counts; rows are true classes, columns predicted classes."""
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if preds.shape != labels.shape:
        raise InvalidInputError("preds and labels differ in length")
    if preds.size and (min(preds.min(), labels.min()) < 0
                       or max(preds.max(), labels.max()) >= num_classes):
        raise InvalidInputError("class id out of range")
    return np.bincount(labels * num_classes + preds, minlength=num_classes ** 2) \
        .reshape(num_classes, num_classes)


def per_class_accuracy(cm) -> np.ndarray:
    """Recall per class; NaN where the class never occurs in the ground truth."""
    cm = np.asarray(cm)
    rows = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(rows > 0, np.diag(cm) / rows, np.nan)


def per_class_iou(cm) -> np.ndarray:
    """TP / (TP + FP + FN) per class; NaN for classes absent from truth and predictions."""
    cm = np.asarray(cm)
    tp = np.diag(cm)
    denom = cm.sum(axis=1) + cm.sum(axis=0) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, tp / denom, np.nan)


def macc(cm) -> float:
    """Mean class accuracy over classes present in the ground truth."""
    acc = per_class_accuracy(cm)
    acc = acc[~np.isnan(acc)]
    return float(np.mean(acc)) if acc.size else float("nan")


def miou(cm) -> float:
    """Mean IoU over classes present in the ground truth or the predictions."""
    iou = per_class_iou(cm)
    iou = iou[~np.isnan(iou)]
    return float(np.mean(iou)) if iou.size else float("nan")


def dataset_confusion(model, clouds, logits=None) -> np.ndarray:
    from .model import predict_many

    logits = predict_many(model, clouds) if logits is None else logits
    cm = np.zeros((model.num_classes, model.num_classes), dtype=np.int64)
    for lg, c in zip(logits, clouds):
        cm += confusion(np.argmax(lg, axis=1), c.labels, model.num_classes)
    return cm


@dataclass
class ReportRow:
    transform: str
    trial: int
    macc_base: float
    macc_t: float
    miou_base: float
    miou_t: float
    max_logit_diff: float

    @property
    def dmacc_abs(self) -> float:
        """Drop in percentage points."""
        return 100.0 * (self.macc_base - self.macc_t)

    @property
    def dmiou_abs(self) -> float:
        return 100.0 * (self.miou_base - self.miou_t)

    @property
    def dmacc_rel(self) -> float:
        """Drop as a percentage of the baseline score."""
        return 100.0 * (self.macc_base - self.macc_t) / self.macc_base if self.macc_base else 0.0

    @property
    def dmiou_rel(self) -> float:
        return 100.0 * (self.miou_base - self.miou_t) / self.miou_base if self.miou_base else 0.0


@dataclass
class InvarianceReport:
    rows: list[ReportRow] = field(default_factory=list)
    n_clouds: int = 0
    n_degenerate: int = 0

    def for_transform(self, name) -> list[ReportRow]:
        return [r for r in self.rows if r.transform == name]

    def summary(self) -> dict[str, dict]:
        """Mean and standard deviation of the drops for each transform."""
        out = {}
        for name in dict.fromkeys(r.transform for r in self.rows):
            rows = self.for_transform(name)
            stats = {"n_trials": len(rows)}
            for key in ("dmacc_abs", "dmiou_abs", "dmacc_rel", "dmiou_rel"):
                vals = np.array([getattr(r, key) for r in rows])
                stats[key] = float(vals.mean())
                stats[key + "_std"] = float(vals.std())
            stats["max_logit_diff"] = max(r.max_logit_diff for r in rows)
            out[name] = stats
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([r.transform, r.trial] + ["%.17g" % getattr(r, c) for c in REPORT_COLUMNS[2:]])
        return buf.getvalue()


def invariance_report(model, dataset, transforms=AXIS_TRANSFORMS + (PLANE,), n_trials: int = 5,
                      seed: int = 0) -> InvarianceReport:
    """Score ``model`` on ``dataset`` before and after reflecting every cloud.

    Axis transforms are deterministic and reported as a single trial. The
    ``"plane"`` transform draws one random plane normal per trial, uniform
    on the sphere, and reflects every cloud across the plane through its
    own centroid. When the model canonicalizes its input, clouds with
    degenerate covariance spectra are left out and counted.
    """
    from .model import predict_many

    clouds = list(dataset)
    if not clouds:
        raise InvalidInputError("empty evaluation set")
    n_degenerate = 0
    if getattr(model, "canonicalize", False):
        keep = [not canonicalize(c).degenerate for c in clouds]
        n_degenerate = len(clouds) - sum(keep)
        clouds = [c for c, k in zip(clouds, keep) if k]
        if not clouds:
            raise InvalidInputError("every evaluation cloud is degenerate")
    rng = np.random.default_rng(seed)
    base_logits = predict_many(model, clouds)
    base_cm = dataset_confusion(model, clouds, base_logits)
    base_acc, base_iou = macc(base_cm), miou(base_cm)
    report = InvarianceReport(n_clouds=len(clouds), n_degenerate=n_degenerate)
    for name in transforms:
        if name in AXIS_TRANSFORMS:
            modes = [name]
        elif name == PLANE:
            modes = [random_unit_vector(rng) for _ in range(n_trials)]
        else:
            raise InvalidInputError(f"unknown transform {name!r}")
        for trial, mode in enumerate(modes):
            moved = [reflect(c, mode) for c in clouds]
            logits = predict_many(model, moved)
            cm = dataset_confusion(model, moved, logits)
            diff = max(float(np.max(np.abs(a - b))) for a, b in zip(logits, base_logits))
            report.rows.append(ReportRow(name, trial, base_acc, macc(cm), base_iou, miou(cm), diff))
    return report
