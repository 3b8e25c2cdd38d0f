"""Native image-quality metrics for T1 and BOLD images.

All standard deviations are population (ddof=0) estimates.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, stats

from .errors import (AllConstantVoxels, AllZeroImage, EmptyMask, EmptyUnion, GridMismatch,
                     MetricError, NoValidAxis, ZeroAirVariance, ZeroDenominator,
                     ZeroRankVariance)

logger = logging.getLogger(__name__)

HIGHER, LOWER = "HigherBetter", "LowerBetter"

T1_METRICS = ("CNR", "SNR", "TPM_CSF", "TPM_GM", "TPM_WM", "CJV", "EFC", "FWHM")
BOLD_METRICS = ("SNR", "TSNR", "AQI", "AOR", "EFC", "meanFD", "FWHM", "DVARS")

DIRECTIONS = {
    "T1w": {"CNR": HIGHER, "SNR": HIGHER, "TPM_CSF": HIGHER, "TPM_GM": HIGHER,
            "TPM_WM": HIGHER, "CJV": LOWER, "EFC": LOWER, "FWHM": LOWER},
    "bold": {"SNR": HIGHER, "TSNR": HIGHER, "AQI": LOWER, "AOR": LOWER, "EFC": LOWER,
             "meanFD": LOWER, "FWHM": LOWER, "DVARS": LOWER},
}
assert set(DIRECTIONS["T1w"]) == set(T1_METRICS)
assert set(DIRECTIONS["bold"]) == set(BOLD_METRICS)

MAD_SCALE = 1.4826


def _masked(img, mask, name="mask") -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.shape[:mask.ndim]:
        raise GridMismatch(f"{name} shape {mask.shape} does not match image {img.shape}")
    vals = img[mask]
    if vals.size == 0:
        raise EmptyMask(f"{name} is empty")
    return vals


def snr(img, gm, air) -> float:
    """Mean intensity in gray matter over the standard deviation of air."""
    img = np.asarray(img, dtype=float)
    signal = _masked(img, gm, "gm").mean()
    noise = _masked(img, air, "air").std()
    if noise == 0:
        raise ZeroAirVariance("air region has zero variance")
    return float(signal / noise)


def cnr(img, gm, wm, air) -> float:
    """|mu_WM - mu_GM| / sqrt(sd_air^2 + sd_GM^2 + sd_WM^2)."""
    img = np.asarray(img, dtype=float)
    g, w, a = _masked(img, gm, "gm"), _masked(img, wm, "wm"), _masked(img, air, "air")
    denom = math.sqrt(a.var() + g.var() + w.var())
    if denom == 0:
        raise ZeroDenominator("CNR denominator is zero")
    return float(abs(w.mean() - g.mean()) / denom)


def cjv(img, gm, wm) -> float:
    """Coefficient of joint variation, (sd_WM + sd_GM) / |mu_WM - mu_GM|."""
    img = np.asarray(img, dtype=float)
    g, w = _masked(img, gm, "gm"), _masked(img, wm, "wm")
    delta = abs(w.mean() - g.mean())
    if delta == 0:
        raise ZeroDenominator("GM and WM means coincide")
    return float((w.std() + g.std()) / delta)


def efc(img) -> float:
    """Entropy focus criterion normalised to [0, 1].

    Notes
    -----
    Not shift invariant: adding a constant changes the value.
    """
    x = np.abs(np.asarray(img, dtype=float)).ravel()
    n = x.size
    x_max = math.sqrt(float(np.dot(x, x)))
    if x_max == 0:
        raise AllZeroImage("EFC undefined for an all-zero image")
    if n < 2:
        return 0.0
    r = x[x > 0] / x_max
    entropy = 0.0 - float(np.sum(r * np.log(r)))
    e_max = math.sqrt(n) * math.log(n) / 2.0
    return entropy / e_max


def _lag1_rho(resid, mask, axis) -> float | None:
    """Lag-1 autocorrelation along ``axis`` over voxel pairs both in mask."""
    n = resid.shape[axis]
    if n < 2:
        return None
    lo = [slice(None)] * resid.ndim
    hi = [slice(None)] * resid.ndim
    lo[axis], hi[axis] = slice(0, n - 1), slice(1, n)
    m = mask.ndim
    pair = mask[tuple(lo[:m])] & mask[tuple(hi[:m])]
    if pair.sum() < 2:
        return None
    a, b = resid[tuple(lo)], resid[tuple(hi)]
    if resid.ndim > mask.ndim:
        pair = np.broadcast_to(pair[..., None], a.shape)
    a, b = a[pair], b[pair]
    denom = math.sqrt(float(np.dot(a, a)) * float(np.dot(b, b)))
    if denom == 0:
        return None
    return float(np.dot(a, b)) / denom


def fwhm_estimate(img, mask, zooms, max_fwhm: float = 50.0) -> float:
    """Smoothness estimate (mm) from per-axis lag-1 autocorrelation.

    Parameters
    ----------
    img : ndarray
        3D image, or 4D series. 4D input is linearly detrended per voxel and
        the autocorrelation pools every volume.
    mask : ndarray of bool
        3D region over which neighbour pairs are taken.
    zooms : sequence of float
        Voxel size per spatial axis in mm.
    max_fwhm : float
        Axes whose estimate exceeds this are capped at it (with a warning).

    Returns
    -------
    float
        Mean FWHM over the axes with 0 < rho < 1.
    """
    img = np.asarray(img, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    _masked(img, mask)
    if img.ndim == 4:
        resid = detrend(img)
    else:
        resid = img - img[mask].mean()
    resid = np.where(mask if img.ndim == 3 else mask[..., None], resid, 0.0)
    widths = []
    for axis in range(3):
        rho = _lag1_rho(resid, mask, axis)
        if rho is None or not (0.0 < rho < 1.0):
            continue
        fw = float(zooms[axis]) * math.sqrt(-2.0 * math.log(2.0) / math.log(rho))
        if fw > max_fwhm:
            logger.warning("FWHM along axis %d (%.1f mm) capped at %.1f mm", axis, fw, max_fwhm)
            fw = max_fwhm
        widths.append(fw)
    if not widths:
        raise NoValidAxis("no axis has a lag-1 autocorrelation in (0, 1)")
    return float(np.mean(widths))


def tpm_overlap(seg_prob, template_prob) -> float:
    """Fuzzy Jaccard overlap, sum(min) / sum(max)."""
    p = np.asarray(seg_prob, dtype=float)
    q = np.asarray(template_prob, dtype=float)
    if p.shape != q.shape:
        raise GridMismatch(f"segmentation {p.shape} vs template {q.shape}")
    union = np.maximum(p, q).sum()
    if union == 0:
        raise EmptyUnion("both probability maps are empty")
    return float(np.minimum(p, q).sum() / union)


def _voxels_by_time(series, mask) -> np.ndarray:
    series = np.asarray(series, dtype=float)
    if series.ndim != 4:
        raise MetricError(f"expected a 4D series, got shape {series.shape}")
    return _masked(series, mask)  # (V, T)


def tsnr(series, mask) -> float:
    """Median over in-mask voxels of temporal mean / temporal std."""
    x = _voxels_by_time(series, mask)
    sd = x.std(axis=1)
    keep = sd > 0
    if not keep.any():
        raise AllConstantVoxels("every in-mask voxel is constant over time")
    return float(np.median(x[keep].mean(axis=1) / sd[keep]))


def aqi(series, mask) -> float:
    """Mean over volumes of 1 - Spearman(volume, median volume)."""
    x = _voxels_by_time(series, mask)
    if x.shape[0] < 3:
        raise EmptyMask("AQI needs at least 3 in-mask voxels")
    ranks = stats.rankdata(x, axis=0)
    ref = stats.rankdata(np.median(x, axis=1))
    ref = ref - ref.mean()
    ranks = ranks - ranks.mean(axis=0)
    ref_norm = math.sqrt(float(np.dot(ref, ref)))
    col_norm = np.sqrt(np.einsum("vt,vt->t", ranks, ranks))
    if ref_norm == 0 or np.any(col_norm == 0):
        raise ZeroRankVariance("a volume or the median volume is constant in-mask")
    rho = (ref @ ranks) / (ref_norm * col_norm)
    return float(np.mean(1.0 - rho))


def detrend(series) -> np.ndarray:
    """Remove a per-voxel linear trend over the last axis (closed form)."""
    x = np.asarray(series, dtype=float)
    t = np.arange(x.shape[-1], dtype=float)
    t -= t.mean()
    denom = float(np.dot(t, t))
    centred = x - x.mean(axis=-1, keepdims=True)
    if denom == 0:
        return centred
    slope = (centred @ t) / denom
    return centred - slope[..., None] * t


def aor(series, mask, k: float = 3.5, rel_tol: float = 1e-10) -> float:
    """Mean fraction of in-mask voxels flagged as outliers per volume.

    A voxel-timepoint is an outlier when its detrended value is more than
    ``k`` scaled MADs from the voxel's median residual. Voxels whose MAD is
    zero (up to ``rel_tol`` of their mean magnitude) never contribute.
    """
    x = _voxels_by_time(series, mask)
    if x.shape[1] < 3:
        raise MetricError("AOR needs at least 3 volumes")
    r = detrend(x)
    med = np.median(r, axis=1, keepdims=True)
    dev = np.abs(r - med)
    mad = MAD_SCALE * np.median(dev, axis=1, keepdims=True)
    floor = rel_tol * np.maximum(np.abs(x).mean(axis=1, keepdims=True), 1.0)
    valid = mad > floor
    out = (dev > k * mad) & valid
    return float(np.mean(out.sum(axis=0) / x.shape[0]))


# -- masks and fallback segmentation ------------------------------------------

def _kmeans_1d(values, init, n_iter: int = 50) -> tuple[np.ndarray, np.ndarray]:
    centres = np.asarray(init, dtype=float).copy()
    labels = np.zeros(values.size, dtype=int)
    for _ in range(n_iter):
        labels = np.argmin(np.abs(values[:, None] - centres[None, :]), axis=1)
        new = np.array([values[labels == j].mean() if np.any(labels == j) else centres[j]
                        for j in range(centres.size)])
        if np.allclose(new, centres):
            break
        centres = new
    order = np.argsort(centres)
    remap = np.empty_like(order)
    remap[order] = np.arange(order.size)
    return remap[labels], centres[order]


def brain_mask_fallback(img) -> np.ndarray:
    """Two-class intensity split, largest bright connected component."""
    img = np.asarray(img, dtype=float)
    vals = img.ravel()
    labels, _ = _kmeans_1d(vals, np.percentile(vals, [10, 90]))
    bright = (labels == 1).reshape(img.shape)
    comp, n = ndimage.label(bright)
    if n > 1:
        sizes = ndimage.sum(bright, comp, index=range(1, n + 1))
        bright = comp == (int(np.argmax(sizes)) + 1)
    return ndimage.binary_fill_holes(bright)


def segment_fallback(img, brain) -> dict[str, np.ndarray]:
    """Hard three-class k-means inside the brain: CSF < GM < WM by mean."""
    img = np.asarray(img, dtype=float)
    brain = np.asarray(brain, dtype=bool)
    vals = img[brain]
    if vals.size < 3:
        raise EmptyMask("brain mask too small to segment")
    labels, _ = _kmeans_1d(vals, np.percentile(vals, [25, 50, 75]))
    maps = {}
    for j, name in enumerate(("csf", "gm", "wm")):
        m = np.zeros(img.shape, dtype=float)
        m[brain] = labels == j
        maps[name] = m
    return maps


def air_mask(brain, image=None, dilation: int = 2) -> np.ndarray:
    """Complement of the brain mask dilated by ``dilation`` voxels (26-connected).

    Voxels that are exactly zero in ``image`` (padding) are dropped.
    """
    brain = np.asarray(brain, dtype=bool)
    struct = ndimage.generate_binary_structure(3, 3)
    # iterations=0 would mean "until stable" in ndimage
    grown = ndimage.binary_dilation(brain, structure=struct, iterations=dilation) if dilation > 0 else brain
    air = ~grown
    if image is not None:
        air &= np.asarray(image) != 0
    return air


@dataclass
class TissueMaps:
    gm: np.ndarray
    wm: np.ndarray
    csf: np.ndarray
    brain_mask: np.ndarray
    air_mask: np.ndarray

    def __post_init__(self):
        shape = self.brain_mask.shape
        for name in ("gm", "wm", "csf", "air_mask"):
            if getattr(self, name).shape != shape:
                raise GridMismatch(f"{name} grid differs from brain mask")
        if np.any(self.brain_mask.astype(bool) & self.air_mask.astype(bool)):
            raise ValueError("brain and air masks overlap")

    def hard(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, name)) > 0.5


def tissue_maps(img, gm=None, wm=None, csf=None, brain=None, fallback: bool = True) -> TissueMaps:
    """Assemble tissue maps from supplied probabilities, segmenting what is missing."""
    img = np.asarray(img, dtype=float)
    if brain is None:
        if gm is not None and wm is not None and csf is not None:
            brain = (np.asarray(gm) + np.asarray(wm) + np.asarray(csf)) > 0.5
        elif fallback:
            brain = brain_mask_fallback(img)
        else:
            raise EmptyMask("no brain mask supplied and fallback disabled")
    brain = np.asarray(brain, dtype=bool)
    if gm is None or wm is None or csf is None:
        if not fallback:
            raise EmptyMask("tissue maps missing and fallback disabled")
        seg = segment_fallback(img, brain)
        gm, wm, csf = seg["gm"], seg["wm"], seg["csf"]
    return TissueMaps(np.asarray(gm, float), np.asarray(wm, float), np.asarray(csf, float),
                      brain, air_mask(brain, img))


# -- per-session rows ---------------------------------------------------------

@dataclass
class IqmRow:
    key: tuple[str, str]
    modality: str
    metrics: dict[str, float] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)

    @property
    def directions(self) -> dict[str, str]:
        return DIRECTIONS[self.modality]

    @property
    def names(self) -> tuple[str, ...]:
        return T1_METRICS if self.modality == "T1w" else BOLD_METRICS

    @property
    def missing(self) -> list[str]:
        return [m for m in self.names if m not in self.metrics]


def _record(row: IqmRow, name: str, fn, *args, **kw) -> None:
    try:
        value = float(fn(*args, **kw))
    except (MetricError, ValueError) as exc:
        row.errors[name] = f"{type(exc).__name__}: {exc}"
        return
    if not math.isfinite(value):
        row.errors[name] = "non-finite value"
        return
    row.metrics[name] = value


def _tissue_residual(img, maps: TissueMaps) -> np.ndarray:
    """Image minus the mean of each hard tissue class (structure removed)."""
    resid = np.asarray(img, dtype=float).copy()
    for name in ("csf", "gm", "wm"):
        m = maps.hard(name)
        if m.any():
            resid[m] -= resid[m].mean()
    return resid


def _confident(maps: TissueMaps, level: float = 0.8) -> np.ndarray:
    """Brain voxels whose most likely tissue has probability above ``level``.

    Partial-volume voxels at tissue borders leave step residuals that look
    like white noise and bias the smoothness estimate low, so they are left
    out. Falls back to the whole brain mask when too few voxels qualify.
    """
    brain = maps.brain_mask.astype(bool)
    probs = np.stack([np.asarray(maps.csf), np.asarray(maps.gm), np.asarray(maps.wm)])
    sure = brain & (probs.max(axis=0) > level)
    return sure if sure.sum() >= 27 else brain


def compute_t1_row(key, img, zooms, maps: TissueMaps | None, templates=None,
                   max_fwhm: float = 50.0) -> IqmRow:
    """T1 metrics. Mask-dependent metrics are recorded as missing when ``maps`` is None.

    ``templates`` maps ``csf/gm/wm`` to template probability volumes on the T1
    grid; without it the TPM metrics are skipped rather than failed.
    """
    row = IqmRow(key, "T1w")
    img = np.asarray(img, dtype=float)
    _record(row, "EFC", efc, img)
    if maps is None:
        for m in ("CNR", "SNR", "TPM_CSF", "TPM_GM", "TPM_WM", "CJV"):
            row.errors[m] = "tissue maps unavailable"
        brain = brain_mask_fallback(img)
        _record(row, "FWHM", fwhm_estimate, img, brain, zooms, max_fwhm)
        return row
    gm, wm = maps.hard("gm"), maps.hard("wm")
    _record(row, "CNR", cnr, img, gm, wm, maps.air_mask)
    _record(row, "SNR", snr, img, gm, maps.air_mask)
    _record(row, "CJV", cjv, img, gm, wm)
    if templates is not None:
        for tissue in ("csf", "gm", "wm"):
            _record(row, f"TPM_{tissue.upper()}", tpm_overlap, getattr(maps, tissue),
                    templates[tissue])
    _record(row, "FWHM", fwhm_estimate, _tissue_residual(img, maps), _confident(maps),
            zooms, max_fwhm)
    return row


def compute_bold_row(key, series, zooms, maps: TissueMaps, mean_fd: float | None,
                     mean_dvars: float | None, aor_k: float = 3.5,
                     max_fwhm: float = 50.0) -> IqmRow:
    """BOLD metrics; spatial ones on the temporal mean, temporal ones in the brain mask."""
    row = IqmRow(key, "bold")
    series = np.asarray(series, dtype=float)
    mean_vol = series.mean(axis=-1)
    brain = maps.brain_mask.astype(bool)
    _record(row, "SNR", snr, mean_vol, maps.hard("gm"), maps.air_mask)
    _record(row, "TSNR", tsnr, series, brain)
    _record(row, "AQI", aqi, series, brain)
    _record(row, "AOR", aor, series, brain, aor_k)
    _record(row, "EFC", efc, mean_vol)
    _record(row, "FWHM", fwhm_estimate, series, brain, zooms, max_fwhm)
    for name, value in (("meanFD", mean_fd), ("DVARS", mean_dvars)):
        if value is None or not math.isfinite(value):
            row.errors[name] = "motion summary unavailable"
        else:
            row.metrics[name] = float(value)
    return row
