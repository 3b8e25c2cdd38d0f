"""Robust normality-transform outlier screen.

Each metric's cross-session sample is robustly standardised, passed through a
Yeo-Johnson transform whose shape is fitted on the central 90% of the data,
and re-standardised with the median and scaled MAD. Values beyond 4 on the
quality-worse side are flagged.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import optimize

from .errors import DegenerateSample, TooFewValues
from .iqm import HIGHER, LOWER, MAD_SCALE

logger = logging.getLogger(__name__)

Z_CUT = 4.0
LAMBDA_BOUNDS = (-3.0, 5.0)


def yeo_johnson(x, lmbda: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    if abs(lmbda) < 1e-12:
        out[pos] = np.log1p(x[pos])
    else:
        out[pos] = np.expm1(lmbda * np.log1p(x[pos])) / lmbda
    if abs(lmbda - 2.0) < 1e-12:
        out[~pos] = -np.log1p(-x[~pos])
    else:
        out[~pos] = -np.expm1((2.0 - lmbda) * np.log1p(-x[~pos])) / (2.0 - lmbda)
    return out


def yeo_johnson_inverse(y, lmbda: float) -> np.ndarray:
    """Inverse transform; values outside the transform's range map to +/-inf."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    out = np.empty_like(y)
    pos = y >= 0
    yp, yn = y[pos], y[~pos]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if abs(lmbda) < 1e-12:
            out[pos] = np.expm1(yp)
        else:
            base = lmbda * yp
            # for lambda < 0 the positive branch is bounded above by -1/lambda
            xp = np.expm1(np.log1p(base) / lmbda)
            out[pos] = np.where(base <= -1.0, np.inf, xp)
        if abs(lmbda - 2.0) < 1e-12:
            out[~pos] = -np.expm1(-yn)
        else:
            c = 2.0 - lmbda
            base = -c * yn
            xn = -np.expm1(np.log1p(base) / c)
            out[~pos] = np.where(base <= -1.0, -np.inf, xn)
    return out


def _neg_loglik(lmbda: float, x: np.ndarray) -> float:
    y = yeo_johnson(x, lmbda)
    var = y.var()
    if not np.isfinite(var) or var <= 0:
        return np.inf
    jac = (lmbda - 1.0) * np.sum(np.sign(x) * np.log1p(np.abs(x)))
    return 0.5 * x.size * math.log(var) - jac


def _mad(x: np.ndarray) -> tuple[float, float]:
    med = float(np.median(x))
    return med, MAD_SCALE * float(np.median(np.abs(x - med)))


@dataclass(frozen=True)
class TransformFit:
    """Fitted robust Yeo-Johnson standardisation for one metric."""

    metric: str
    lmbda: float
    robust_location: float
    robust_scale: float
    n: int
    pre_center: float = 0.0
    pre_scale: float = 1.0
    family: str = "YeoJohnson"

    def forward(self, x) -> np.ndarray:
        return yeo_johnson((np.asarray(x, dtype=float) - self.pre_center) / self.pre_scale,
                           self.lmbda)

    def inverse(self, y) -> np.ndarray:
        return yeo_johnson_inverse(y, self.lmbda) * self.pre_scale + self.pre_center

    def z(self, x) -> np.ndarray:
        return (self.forward(x) - self.robust_location) / self.robust_scale

    def threshold(self, direction: str, cut: float = Z_CUT) -> float:
        """Cutoff on the original scale for the quality-worse side."""
        zc = -cut if direction == HIGHER else cut
        return float(self.inverse(self.robust_location + zc * self.robust_scale)[0])


def fit_transform(values, metric: str = "", min_n: int = 20, trim: float = 0.05) -> TransformFit:
    """Fit the robust transform to a metric's sample.

    Parameters
    ----------
    values : array_like
        Finite metric values across sessions.
    metric : str
        Name carried on the fit.
    min_n : int
        Smallest sample accepted.
    trim : float
        Fraction removed from each tail (by rank) before the shape fit.
    """
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if x.size < min_n:
        raise TooFewValues(f"{metric}: {x.size} finite values, need >= {min_n}")
    center, scale = _mad(x)
    if scale == 0:
        raise DegenerateSample(f"{metric}: median absolute deviation is zero")
    u = (x - center) / scale
    k = int(math.ceil(trim * u.size))
    core = np.sort(u)[k:u.size - k] if u.size - 2 * k >= 3 else np.sort(u)
    res = optimize.minimize_scalar(_neg_loglik, bounds=LAMBDA_BOUNDS, args=(core,),
                                   method="bounded", options={"xatol": 1e-8})
    lmbda = float(res.x)
    y = yeo_johnson(u, lmbda)
    loc, sc = _mad(y)
    if sc == 0:
        raise DegenerateSample(f"{metric}: transformed sample has zero MAD")
    return TransformFit(metric, lmbda, loc, sc, int(x.size), center, scale)


@dataclass(frozen=True)
class OutlierFlag:
    key: tuple[str, str]
    metric: str
    value: float
    z: float
    threshold_original_scale: float
    flagged: bool
    direction: str


def flag_outliers(fit: TransformFit, rows: Iterable[tuple[tuple[str, str], float]],
                  direction: str, cut: float = Z_CUT) -> list[OutlierFlag]:
    """One-sided flags: low tail for HigherBetter metrics, high tail for LowerBetter."""
    if direction not in (HIGHER, LOWER):
        raise ValueError(f"metric {fit.metric!r} has no quality direction")
    rows = list(rows)
    thr = fit.threshold(direction, cut)
    zs = fit.z([v for _, v in rows]) if rows else np.array([])
    out = []
    for (key, value), z in zip(rows, zs):
        z = float(z)
        flagged = z < -cut if direction == HIGHER else z > cut
        out.append(OutlierFlag(key, fit.metric, float(value), z, thr, flagged, direction))
    return out


def screen_metric(rows: Sequence[tuple[tuple[str, str], float]], metric: str, direction: str,
                  min_n: int = 20, cut: float = Z_CUT):
    """Fit and flag one metric; returns ``(fit or None, flags)``.

    Samples too small or degenerate are left unscreened with a warning.
    """
    rows = [(k, v) for k, v in rows if v is not None and math.isfinite(v)]
    try:
        fit = fit_transform([v for _, v in rows], metric, min_n=min_n)
    except (TooFewValues, DegenerateSample) as exc:
        logger.warning("%s left unscreened: %s", metric, exc)
        return None, []
    return fit, flag_outliers(fit, rows, direction, cut)


@dataclass(frozen=True)
class SessionVerdict:
    key: tuple[str, str]
    outcome: str
    reasons: tuple[str, ...]


def propagate_and_summarize(flags_by_modality: Mapping[str, Iterable[OutlierFlag]],
                            keys: Iterable[tuple[str, str]] | None = None) -> dict:
    """Session verdicts: fail if any flag is set; T1 flags also exclude the BOLD run."""
    from .reasons import T1_OUTLIER_PROPAGATED, iqm_outlier_code

    reasons: dict[tuple[str, str], list[str]] = {}
    for k in keys or ():
        reasons.setdefault(k, [])
    for modality in ("T1w", "bold"):
        for f in flags_by_modality.get(modality, ()):
            reasons.setdefault(f.key, [])
            if f.flagged:
                reasons[f.key].append(iqm_outlier_code(modality, f.metric))
    verdicts = {}
    for key, codes in reasons.items():
        if any(c.startswith("IQM_OUTLIER_T1_") for c in codes):
            codes.append(T1_OUTLIER_PROPAGATED)
        verdicts[key] = SessionVerdict(key, "FAIL" if codes else "PASS", tuple(codes))
    return verdicts
