"""Framewise displacement, DVARS, censoring and the motion exclusion rules."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import AllConstantVoxels, MetricError

logger = logging.getLogger(__name__)

CONFOUND_COLUMNS = ("trans_x", "trans_y", "trans_z", "rot_x", "rot_y", "rot_z")


def _check_params(params) -> np.ndarray:
    p = np.asarray(params, dtype=float)
    if p.ndim != 2 or p.shape[1] != 6:
        raise ValueError(f"motion parameters must be T x 6, got {p.shape}")
    if p.shape[0] and np.abs(p[:, 3:]).max() > math.pi:
        logger.warning("rotation above pi; are rotations in degrees rather than radians?")
    return p


def fd_power(params, radius: float = 50.0) -> np.ndarray:
    """Sum of absolute backward differences, rotations as arc length on a sphere."""
    p = _check_params(params)
    fd = np.zeros(p.shape[0])
    if p.shape[0] > 1:
        d = np.abs(np.diff(p, axis=0))
        fd[1:] = d[:, :3].sum(axis=1) + radius * d[:, 3:].sum(axis=1)
    return fd


def rigid_affine(row) -> np.ndarray:
    """4x4 rigid transform with R = Rx(a) @ Ry(b) @ Rz(c)."""
    tx, ty, tz, a, b, c = row
    ca, sa, cb, sb, cc, sc = (math.cos(a), math.sin(a), math.cos(b), math.sin(b),
                              math.cos(c), math.sin(c))
    rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    rz = np.array([[cc, -sc, 0], [sc, cc, 0], [0, 0, 1]])
    m = np.eye(4)
    m[:3, :3] = rx @ ry @ rz
    m[:3, 3] = (tx, ty, tz)
    return m


def fd_jenkinson(params, radius: float = 50.0) -> np.ndarray:
    """RMS displacement of the relative affine over a sphere of ``radius``."""
    p = _check_params(params)
    fd = np.zeros(p.shape[0])
    prev = None
    for t, row in enumerate(p):
        m = rigid_affine(row)
        if prev is not None:
            d = m @ np.linalg.inv(prev) - np.eye(4)
            a, tv = d[:3, :3], d[:3, 3]
            fd[t] = math.sqrt(radius ** 2 / 5.0 * float(np.trace(a.T @ a)) + float(tv @ tv))
        prev = m
    return fd


def dvars(series, mask) -> tuple[np.ndarray, np.ndarray | None]:
    """Raw and standardised DVARS; first frame is 0.

    The standardised trace divides each voxel's differences by its temporal
    std and by sqrt(2), so white noise gives values near 1. It is None when
    every in-mask voxel is constant.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 4 or x.shape[-1] < 2:
        raise MetricError("DVARS needs a 4D series with at least 2 volumes")
    v = x[np.asarray(mask, dtype=bool)]
    if v.size == 0:
        raise MetricError("DVARS mask is empty")
    d = np.diff(v, axis=1)
    raw = np.zeros(x.shape[-1])
    raw[1:] = np.sqrt(np.mean(d * d, axis=0))
    sd = v.std(axis=1)
    keep = sd > 0
    if not keep.any():
        return raw, None
    z = d[keep] / sd[keep, None]
    std = np.zeros(x.shape[-1])
    std[1:] = np.sqrt(np.mean(z * z, axis=0)) / math.sqrt(2.0)
    return raw, std


def standardized_dvars(series, mask) -> np.ndarray:
    _, std = dvars(series, mask)
    if std is None:
        raise AllConstantVoxels("every in-mask voxel is constant over time")
    return std


@dataclass
class MotionTrace:
    key: tuple[str, str]
    params: np.ndarray
    fd_power: np.ndarray
    fd_jenkinson: np.ndarray
    tr: float
    fd_threshold: float = 0.5
    dvars: np.ndarray | None = None
    std_dvars: np.ndarray | None = None
    formulation: str = "power"

    @property
    def n_volumes(self) -> int:
        return int(self.params.shape[0])

    @property
    def fd(self) -> np.ndarray:
        return self.fd_power if self.formulation == "power" else self.fd_jenkinson

    @property
    def censor(self) -> np.ndarray:
        return self.fd > self.fd_threshold

    def dvars_outliers(self, limit: float = 1.5) -> np.ndarray:
        """Frames annotated as outliers by standardised DVARS (annotation only)."""
        if self.std_dvars is None:
            return np.zeros(self.n_volumes, dtype=bool)
        return self.std_dvars > limit


def build_trace(key, params, tr: float, series=None, mask=None, radius: float = 50.0,
                fd_threshold: float = 0.5, formulation: str = "power") -> MotionTrace:
    if formulation not in ("power", "jenkinson"):
        raise ValueError(f"unknown FD formulation {formulation!r}")
    p = _check_params(params)
    raw = std = None
    if series is not None:
        if np.asarray(series).shape[-1] != p.shape[0]:
            raise ValueError("confounds length does not match BOLD volume count")
        raw, std = dvars(series, mask)
    return MotionTrace(key, p, fd_power(p, radius), fd_jenkinson(p, radius), float(tr),
                       fd_threshold, raw, std, formulation)


def frame_mean(values) -> float:
    """Mean over frames 2..T (the first frame has no predecessor)."""
    v = np.asarray(values, dtype=float)
    return float(v[1:].mean()) if v.size > 1 else 0.0


@dataclass(frozen=True)
class MotionSummary:
    key: tuple[str, str]
    meanFD: float
    pct_censored: float
    good_time: float
    mean_dvars: float
    n_volumes: int
    n_censored: int


def apply_motion_rules(trace: MotionTrace, fd_threshold: float | None = None,
                       max_pct: float = 30.0, min_good_time: float = 300.0):
    """Summarise a trace and decide the motion verdict.

    Fails with MOTION_PCT_CENSORED when more than ``max_pct`` percent of
    frames exceed the FD threshold, and with MOTION_GOOD_TIME when less than
    ``min_good_time`` seconds of uncensored data remain.
    """
    thr = trace.fd_threshold if fd_threshold is None else fd_threshold
    censor = trace.fd > thr
    n = trace.n_volumes
    n_cens = int(censor.sum())
    pct = 100.0 * n_cens / n if n else 0.0
    good = (n - n_cens) * trace.tr
    summary = MotionSummary(trace.key, frame_mean(trace.fd), pct, good,
                            frame_mean(trace.dvars) if trace.dvars is not None else math.nan,
                            n, n_cens)
    reasons = []
    if pct > max_pct:
        reasons.append("MOTION_PCT_CENSORED")
    if good < min_good_time:
        reasons.append("MOTION_GOOD_TIME")
    return summary, ("FAIL" if reasons else "PASS"), tuple(reasons)


def read_confounds(path) -> np.ndarray:
    """Six rigid parameters from a confounds TSV with a mandatory header row."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    if not rows:
        raise ValueError(f"{path}: empty confounds table")
    missing = [c for c in CONFOUND_COLUMNS if c not in rows[0]]
    if missing:
        raise ValueError(f"{path}: missing confound columns {missing}")

    def num(s):
        return 0.0 if s in ("", "n/a") else float(s)

    return np.array([[num(r[c]) for c in CONFOUND_COLUMNS] for r in rows])
