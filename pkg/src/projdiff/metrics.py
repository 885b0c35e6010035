"""Evaluation metrics: satisfaction curves, path statistics and sliced Wasserstein distance.

The sliced Wasserstein distance on raw sample vectors stands in for image
FID, which needs pretrained vision features that mean nothing for 2-D points
or 16x16 toy frames.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .core import ConfigurationError, DimensionError, RngStream
from .projections import ConstraintSet

SUCCESS_TOL = 1e-6


@dataclass(frozen=True)
class SatisfactionCurve:
    tolerances: tuple
    fraction_satisfied: tuple

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("tolerance", "fraction"))
            for tol, frac in zip(self.tolerances, self.fraction_satisfied):
                w.writerow((repr(float(tol)), repr(float(frac))))

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in asdict(self).items()}


def satisfaction_curve(samples, constraint: ConstraintSet, tolerances) -> SatisfactionCurve:
    """Fraction of samples within Euclidean distance ``tol`` of the feasible set, per tolerance.

    A sample counts at tolerance 0 only when ``constraint.is_feasible`` accepts
    it exactly, which avoids rounding in the distance computation.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if X.shape[0] == 0:
        raise ConfigurationError("need at least one sample")
    tols = np.sort(np.asarray(tolerances, dtype=np.float64))
    if np.any(tols < 0):
        raise ConfigurationError("tolerances must be non-negative")
    dist = np.sqrt(constraint.distance_sq(X))
    exact = np.asarray(constraint.is_feasible(X, 0.0))
    dist = np.where(exact, 0.0, np.maximum(dist, np.finfo(float).tiny))
    frac = tuple(float(np.mean(dist <= t)) for t in tols)
    return SatisfactionCurve(tuple(float(t) for t in tols), frac)


def path_length(path) -> float:
    """Sum of segment lengths of an ``(N, 2)`` path (a flat vector is reshaped)."""
    P = np.asarray(path, dtype=np.float64)
    if P.ndim == 1:
        P = P.reshape(-1, 2)
    if P.shape[0] < 2:
        raise ConfigurationError("a path needs at least two points")
    return float(np.sum(np.linalg.norm(np.diff(P, axis=0), axis=1)))


def success_rate(paths, constraint: ConstraintSet, tol: float = SUCCESS_TOL) -> float:
    X = np.atleast_2d(np.asarray(paths, dtype=np.float64).reshape(len(paths), -1))
    if X.shape[0] == 0:
        raise ConfigurationError("need at least one path")
    return float(np.mean(constraint.is_feasible(X, tol)))


def _w1_sorted(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column-wise W1 between empirical 1-D distributions given as sorted columns."""
    if a.shape[0] == b.shape[0]:
        return np.mean(np.abs(a - b), axis=0)
    # integrate |F_a^-1(q) - F_b^-1(q)| over the merged quantile grid
    na, nb = a.shape[0], b.shape[0]
    q = np.union1d(np.arange(1, na + 1) / na, np.arange(1, nb + 1) / nb)
    widths = np.diff(np.concatenate(([0.0], q)))
    ia = np.minimum(np.ceil(q * na - 1e-9).astype(int) - 1, na - 1)
    ib = np.minimum(np.ceil(q * nb - 1e-9).astype(int) - 1, nb - 1)
    return widths @ np.abs(a[ia] - b[ib])


def sliced_wasserstein(samples_a, samples_b, n_projections: int = 100,
                       rng: Optional[RngStream] = None) -> float:
    """Mean 1-D Wasserstein-1 distance over ``n_projections`` random unit directions."""
    A = np.asarray(samples_a, dtype=np.float64)
    B = np.asarray(samples_b, dtype=np.float64)
    A = A[:, None] if A.ndim == 1 else A
    B = B[:, None] if B.ndim == 1 else B
    if A.shape[1] != B.shape[1]:
        raise DimensionError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if len(A) == 0 or len(B) == 0:
        raise ConfigurationError("both sample sets must be nonempty")
    rng = RngStream(0, 0) if rng is None else rng
    dirs = rng.normal((A.shape[1], n_projections))
    dirs /= np.linalg.norm(dirs, axis=0, keepdims=True)
    pa = np.sort(A @ dirs, axis=0)
    pb = np.sort(B @ dirs, axis=0)
    return float(np.mean(_w1_sorted(pa, pb)))


def porosity_measure(image, threshold: float = 0.0) -> int:
    """Count of entries strictly below ``threshold``."""
    return int(np.count_nonzero(np.asarray(image) < threshold))


def write_json(record: dict, path) -> None:
    """Write a metrics record with sorted keys, so equal records give equal bytes."""
    with open(path, "w") as fh:
        json.dump(_plain(record), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
