"""Signal-level and lesion-level evaluation metrics.

Signal metrics (time to peak, FWHM, peak-to-baseline) treat the first
``baseline_frames`` samples as the pre-contrast window. Lesion metrics
operate on binary volumes and score vectors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateSignalError, ValidationError
from .types import VascularFunction, Volume3D


@dataclass(frozen=True)
class SignalMetrics:
    tpeak_s: float
    fwhm_s: float
    ptb_hu: float
    baseline_hu: float
    fwhm_truncated: bool = False


@dataclass(frozen=True)
class LesionReport:
    """Cohort-level lesion agreement (volume_corr is across cases)."""

    dice: float
    volume_error_ml: float
    abs_volume_error_ml: float
    volume_corr: float


def pearson_r(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError(f"equal-length 1D vectors required, got {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ValidationError("need at least 2 samples")
    ac = a - a.mean()
    bc = b - b.mean()
    ssa = float(ac @ ac)
    ssb = float(bc @ bc)
    if ssa == 0.0 or ssb == 0.0:
        raise DegenerateSignalError("zero variance input to Pearson correlation")
    return float((ac @ bc) / np.sqrt(ssa * ssb))


def spearman_r(a, b) -> float:
    """Pearson correlation on average-ranked data (ties get the mean rank)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return pearson_r(rankdata(a), rankdata(b))


def tpeak(f: VascularFunction) -> float:
    """Time of the curve maximum; ties resolve to the earliest sample."""
    return float(int(np.argmax(f.values)) * f.dt_seconds)


def ptb(f: VascularFunction, baseline_frames: int = 3) -> tuple[float, float]:
    """Peak-to-baseline and the baseline itself.

    Baseline is the mean of the first ``baseline_frames`` samples.
    """
    n = len(f)
    if not (1 <= baseline_frames < n):
        raise ValidationError(
            f"baseline_frames must be in [1, {n - 1}], got {baseline_frames}")
    baseline = float(f.values[:baseline_frames].mean())
    return float(f.values.max() - baseline), baseline


def ptb_volume(data4d: np.ndarray, baseline_frames: int = 3) -> np.ndarray:
    """Voxelwise peak-to-baseline of a (T, Z, Y, X) series, as float64."""
    d = np.asarray(data4d, dtype=np.float64)
    if d.ndim != 4:
        raise ValidationError("4D (t, z, y, x) array required")
    if not (1 <= baseline_frames < d.shape[0]):
        raise ValidationError(f"baseline_frames out of range: {baseline_frames}")
    return d.max(axis=0) - d[:baseline_frames].mean(axis=0)


@dataclass(frozen=True)
class FwhmResult:
    width_s: float
    left_s: float
    right_s: float
    truncated: bool


def fwhm(f: VascularFunction, baseline_frames: int = 3) -> FwhmResult:
    """Full width at half maximum above baseline, by linear interpolation.

    If the curve never re-crosses the half level after the peak (missing
    offset) the right crossing clamps to the last sample and the result is
    flagged truncated; a missing onset clamps the left side symmetrically.
    """
    peak_to_base, baseline = ptb(f, baseline_frames)
    if peak_to_base <= 0:
        raise DegenerateSignalError("flat curve: peak-to-baseline <= 0")
    v = f.values
    dt = f.dt_seconds
    level = baseline + peak_to_base / 2.0
    p = int(np.argmax(v))
    truncated = False

    below = np.nonzero(v[: p + 1] < level)[0]
    if below.size:
        i = int(below[-1])
        left = dt * (i + (level - v[i]) / (v[i + 1] - v[i]))
    else:
        left = 0.0
        truncated = True

    after = np.nonzero(v[p:] < level)[0]
    if after.size:
        j = p + int(after[0])
        right = dt * (j - 1 + (v[j - 1] - level) / (v[j - 1] - v[j]))
    else:
        right = dt * (len(f) - 1)
        truncated = True

    return FwhmResult(width_s=float(right - left), left_s=float(left),
                      right_s=float(right), truncated=truncated)


def signal_metrics(f: VascularFunction, baseline_frames: int = 3) -> SignalMetrics:
    p, baseline = ptb(f, baseline_frames)
    w = fwhm(f, baseline_frames)
    return SignalMetrics(tpeak_s=tpeak(f), fwhm_s=w.width_s, ptb_hu=p,
                         baseline_hu=baseline, fwhm_truncated=w.truncated)


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def dice(a: Volume3D, b: Volume3D) -> float:
    """Dice overlap of two binary volumes; defined as 1 when both are empty."""
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    am = a.as_bool()
    bm = b.as_bool()
    na, nb = int(am.sum()), int(bm.sum())
    if na + nb == 0:
        return 1.0
    return 2.0 * int((am & bm).sum()) / (na + nb)


def volume_error(pred: Volume3D, truth: Volume3D, voxel_ml: float) -> tuple[float, float]:
    """Signed and absolute volume error (pred - truth) in milliliters."""
    if pred.shape != truth.shape:
        raise ValidationError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    err = (int(pred.as_bool().sum()) - int(truth.as_bool().sum())) * voxel_ml
    return float(err), float(abs(err))


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via the rank statistic, with tie correction."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValidationError("scores and labels must be equal-length 1D vectors")
    pos = labels.astype(bool)
    n_pos = int(pos.sum())
    n_neg = scores.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("ROC-AUC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))
