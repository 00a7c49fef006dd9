"""Pose accuracy metrics: mean end-point error, PCK curves and their AUC.

All metrics take predicted and ground-truth joint arrays of matching shape
(..., J, D) and pool over every joint of every frame.  PCK counts a joint as
correct when its Euclidean error is strictly below the threshold; AUC is the
trapezoidal integral of the PCK curve normalized by the threshold span.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_THRESHOLDS = np.linspace(20.0, 50.0, 100)
FULL_RANGE_THRESHOLDS = np.linspace(0.0, 50.0, 100)


def _joint_errors(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if pred.ndim < 2:
        raise ValueError("need at least (joints, dims) arrays")
    if not (np.isfinite(pred).all() and np.isfinite(gt).all()):
        raise ValueError("metric inputs must be finite")
    return np.sqrt(((pred - gt) ** 2).sum(axis=-1)).reshape(-1)


def epe(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean Euclidean distance per joint (end-point error)."""
    return float(_joint_errors(pred, gt).mean())


def pck(pred: np.ndarray, gt: np.ndarray, threshold: float,
        per_frame: bool = False) -> float:
    """Fraction of joints with error strictly below ``threshold``.

    ``per_frame`` averages per-frame fractions instead of pooling all
    joints; the two coincide when every frame has the same joint count.
    """
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    errs = np.sqrt(((np.asarray(pred, dtype=np.float64)
                     - np.asarray(gt, dtype=np.float64)) ** 2).sum(axis=-1))
    if per_frame:
        flat = errs.reshape(-1, errs.shape[-1])
        return float((flat < threshold).mean(axis=1).mean())
    return float((errs < threshold).mean())


@dataclass
class PckCurve:
    """PCK values sampled on an ascending threshold grid."""
    thresholds: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.thresholds.ndim != 1 or self.thresholds.shape != self.values.shape:
            raise ValueError("thresholds and values must be matching 1-d arrays")
        if self.thresholds.size < 2:
            raise ValueError("a curve needs at least two thresholds")
        if (np.diff(self.thresholds) <= 0).any():
            raise ValueError("thresholds must be strictly ascending")
        if (self.values < 0).any() or (self.values > 1).any():
            raise ValueError("pck values must lie in [0, 1]")

    def to_csv(self, path):
        """Write ``threshold,pck`` rows with six decimal places."""
        lines = ["threshold,pck"]
        for t, v in zip(self.thresholds, self.values):
            lines.append(f"{t:.6f},{v:.6f}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "PckCurve":
        rows = Path(path).read_text().strip().splitlines()
        if not rows or rows[0] != "threshold,pck":
            raise ValueError("missing 'threshold,pck' header")
        pairs = [tuple(float(x) for x in r.split(",")) for r in rows[1:]]
        arr = np.asarray(pairs, dtype=np.float64)
        return cls(thresholds=arr[:, 0], values=arr[:, 1])


def pck_curve(pred: np.ndarray, gt: np.ndarray,
              thresholds: np.ndarray | None = None,
              per_frame: bool = False) -> PckCurve:
    """Evaluate PCK on a threshold grid (defaults to 100 steps over 20..50)."""
    thresholds = DEFAULT_THRESHOLDS if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    errs = _joint_errors(pred, gt)
    if per_frame:
        values = np.array([pck(pred, gt, float(t), per_frame=True) for t in thresholds])
    else:
        values = (errs[None, :] < thresholds[:, None]).mean(axis=1)
    return PckCurve(thresholds=thresholds, values=values)


def auc(curve: PckCurve) -> float:
    """Trapezoidal area under the curve, normalized by the threshold span.

    A constant curve at 1 integrates to exactly 1.
    """
    span = curve.thresholds[-1] - curve.thresholds[0]
    return float(np.trapezoid(curve.values, curve.thresholds) / span)
