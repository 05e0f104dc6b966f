"""Evaluation metrics for aerial and resist images.

Aerial metrics: MSE, PSNR (peak taken from the ground-truth grid),
maximum absolute error. Resist metrics over the two classes
{background, resist}: mean intersection-over-union and mean pixel
accuracy. Conventions for degenerate classes are explicit: a class
absent from both grids counts as IOU 1.0 (perfect agreement), while
mPA averages only over classes present in the ground truth.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError

PSNR_SENTINEL_DB = 200.0


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"grid shapes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise DimensionError("grids must be non-empty")
    return a, b


def _binary_pair(a, b):
    a, b = _pair(a, b)
    for name, g in (("first", a), ("second", b)):
        if not np.all((g == 0) | (g == 1)):
            raise DataError(f"{name} grid is not binary")
    return a, b


def mse(a, b):
    """Mean squared pixel difference."""
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b):
    """Peak signal-to-noise ratio in dB, peak from the ground truth a.

    10 * log10(max(a)^2 / MSE). Exact agreement clamps to the +200 dB
    sentinel; a zero-peak ground truth with nonzero error gives -inf.
    """
    a, b = _pair(a, b)
    err = float(np.mean((a - b) ** 2))
    if err == 0.0:
        return PSNR_SENTINEL_DB
    peak = float(a.max())
    if peak == 0.0:
        return -math.inf
    return 10.0 * math.log10(peak * peak / err)


def max_error(a, b):
    """Largest absolute pixel difference."""
    a, b = _pair(a, b)
    return float(np.max(np.abs(a - b)))


def miou(z, z_hat):
    """Mean IOU over the two classes of binary grids.

    A class with empty union (absent from both grids) contributes 1.0.
    """
    z, z_hat = _binary_pair(z, z_hat)
    scores = []
    for c in (0.0, 1.0):
        in_z = z == c
        in_hat = z_hat == c
        union = int(np.sum(in_z | in_hat))
        if union == 0:
            scores.append(1.0)
        else:
            scores.append(int(np.sum(in_z & in_hat)) / union)
    return float(np.mean(scores))


def mpa(z, z_hat):
    """Mean per-class pixel accuracy (recall against z).

    Classes with no pixels in the ground truth z are skipped from the
    average; z always contains at least one class.
    """
    z, z_hat = _binary_pair(z, z_hat)
    scores = []
    for c in (0.0, 1.0):
        in_z = z == c
        total = int(np.sum(in_z))
        if total == 0:
            continue
        scores.append(int(np.sum(in_z & (z_hat == c))) / total)
    return float(np.mean(scores))


@dataclass(frozen=True)
class EvalReport:
    """Per-sample metric rows plus their arithmetic means."""

    rows: list  # dicts with keys: sample, mse, psnr_db, max_error, miou, mpa
    means: dict
    count: int

    _FIELDS = ("mse", "psnr_db", "max_error", "miou", "mpa")

    def to_json_obj(self):
        return {"count": self.count, "samples": self.rows, "means": self.means}

    def to_csv_rows(self):
        header = ["sample"] + list(self._FIELDS)
        out = [header]
        for row in self.rows:
            out.append([row["sample"]] + [repr(row[k]) for k in self._FIELDS])
        out.append(["mean"] + [repr(self.means[k]) for k in self._FIELDS])
        return out


def evaluate(samples):
    """Build an EvalReport from (aerial_truth, aerial_pred, resist_truth, resist_pred).

    Aerial grids feed mse/psnr/max_error, resist grids feed miou/mpa.
    """
    if not samples:
        raise DataError("cannot evaluate an empty sample list")
    rows = []
    for idx, (at, ap, zt, zp) in enumerate(samples):
        rows.append({
            "sample": idx,
            "mse": mse(at, ap),
            "psnr_db": psnr(at, ap),
            "max_error": max_error(at, ap),
            "miou": miou(zt, zp),
            "mpa": mpa(zt, zp),
        })
    means = {k: float(np.mean([r[k] for r in rows])) for k in EvalReport._FIELDS}
    return EvalReport(rows=rows, means=means, count=len(rows))
