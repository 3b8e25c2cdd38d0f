import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcforge import iqm, synth
from qcforge.errors import AllConstantVoxels, AllZeroImage, EmptyMask, GridMismatch, ZeroAirVariance


@pytest.fixture
def phantom(rng):
    labels = synth.phantom_labels((20, 20, 16), (3, 3, 2), 1, 2)
    means = np.array([10.0, 40.0, 70.0, 100.0])
    img = means[labels] + rng.normal(0, 4, labels.shape)
    return img, labels


def test_efc_hand_value():
    # x = [3, 4]: r = [0.6, 0.8], E = -(0.6 ln 0.6 + 0.8 ln 0.8), Emax = sqrt(2) ln 2 / 2
    expected = -(0.6 * math.log(0.6) + 0.8 * math.log(0.8)) / (math.sqrt(2) * math.log(2) / 2)
    assert iqm.efc(np.array([3.0, 4.0])) == pytest.approx(expected, abs=1e-12)
    assert iqm.efc(np.array([3.0, 4.0])) == pytest.approx(0.98956, abs=1e-5)


def test_efc_extremes():
    assert iqm.efc(np.ones(64)) == pytest.approx(1.0)
    spike = np.zeros(64)
    spike[5] = 3.0
    assert iqm.efc(spike) == 0.0
    with pytest.raises(AllZeroImage):
        iqm.efc(np.zeros(8))


def test_efc_not_shift_invariant(phantom):
    img, _ = phantom
    assert iqm.efc(img + 50.0) != pytest.approx(iqm.efc(img), abs=1e-6)


def test_hand_values_small():
    img = np.array([1.0, 3.0, 10.0, 14.0, 0.0, 2.0])
    gm = np.array([1, 1, 0, 0, 0, 0], bool)
    wm = np.array([0, 0, 1, 1, 0, 0], bool)
    air = np.array([0, 0, 0, 0, 1, 1], bool)
    # population std: gm 1, wm 2, air 1
    assert iqm.snr(img, gm, air) == pytest.approx(2.0)
    assert iqm.cnr(img, gm, wm, air) == pytest.approx(10.0 / math.sqrt(6.0))
    assert iqm.cjv(img, gm, wm) == pytest.approx(3.0 / 10.0)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 1000.0))
def test_scale_invariance(c):
    rng = np.random.default_rng(7)
    labels = synth.phantom_labels((14, 14, 12), (2, 2, 2), 1, 2)
    img = np.array([10.0, 40.0, 70.0, 100.0])[labels] + rng.normal(0, 4, labels.shape)
    gm, wm, air = labels == 2, labels == 3, labels == 0
    series = img[..., None] + rng.normal(0, 3, labels.shape + (12,))
    brain = labels > 0
    for fn, args in ((iqm.snr, (gm, air)), (iqm.cnr, (gm, wm, air)), (iqm.cjv, (gm, wm))):
        assert fn(c * img, *args) == pytest.approx(fn(img, *args), rel=1e-9)
    assert iqm.efc(c * img) == pytest.approx(iqm.efc(img), rel=1e-9)
    assert iqm.fwhm_estimate(c * img, brain, (1, 1, 1)) == pytest.approx(
        iqm.fwhm_estimate(img, brain, (1, 1, 1)), rel=1e-9)
    for fn in (iqm.tsnr, iqm.aqi, iqm.aor):
        assert fn(c * series, brain) == pytest.approx(fn(series, brain), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("fwhm", [4.0, 6.0, 8.0])
def test_fwhm_recovers_kernel(fwhm):
    rng = np.random.default_rng(3)
    zooms = (2.0, 2.0, 2.5)
    noise = synth.smooth_noise(rng, (40, 40, 32), fwhm, zooms)
    mask = np.ones(noise.shape, bool)
    assert iqm.fwhm_estimate(noise, mask, zooms) == pytest.approx(fwhm, rel=0.1)


def test_fwhm_4d_uses_every_volume():
    rng = np.random.default_rng(4)
    series = synth.smooth_noise(rng, (24, 24, 20, 10), 6.0, (3.0, 3.0, 3.0)) + 100.0
    mask = np.ones((24, 24, 20), bool)
    assert iqm.fwhm_estimate(series, mask, (3.0, 3.0, 3.0)) == pytest.approx(6.0, rel=0.1)


def test_tsnr_matches_definition(rng):
    series = 100 + rng.normal(0, 5, (4, 4, 4, 50))
    mask = np.ones((4, 4, 4), bool)
    v = series.reshape(-1, 50)
    assert iqm.tsnr(series, mask) == pytest.approx(np.median(v.mean(1) / v.std(1)))
    with pytest.raises(AllConstantVoxels):
        iqm.tsnr(np.ones((2, 2, 2, 5)), np.ones((2, 2, 2), bool))


def test_aqi_zero_for_identical_volumes(rng):
    vol = rng.normal(100, 10, (5, 5, 5))
    series = np.repeat(vol[..., None], 8, axis=-1) * np.linspace(1, 2, 8)
    assert iqm.aqi(series, np.ones((5, 5, 5), bool)) == pytest.approx(0.0, abs=1e-12)


def test_aor_counts_spikes(rng):
    series = 100 + rng.normal(0, 1, (6, 6, 6, 40))
    clean = iqm.aor(series, np.ones((6, 6, 6), bool))
    series[:, :, :, 10] += 50.0
    spiked = iqm.aor(series, np.ones((6, 6, 6), bool))
    assert spiked == pytest.approx(clean + 1.0 / 40, abs=0.01)


def test_tpm_overlap():
    p = np.array([0.2, 0.5, 1.0])
    assert iqm.tpm_overlap(p, p) == 1.0
    assert iqm.tpm_overlap(p, np.zeros(3)) == 0.0
    with pytest.raises(GridMismatch):
        iqm.tpm_overlap(p, np.zeros(4))


def test_air_mask_monotone_in_dilation():
    brain = synth.phantom_labels((16, 16, 16), (5, 5, 5), 1, 1) > 0
    masks = [iqm.air_mask(brain, dilation=d) for d in range(4)]
    for a, b in zip(masks, masks[1:]):
        assert np.all(b <= a) and b.sum() < a.sum()
    assert not np.any(masks[0] & brain)


def test_air_mask_drops_padding():
    brain = np.zeros((8, 8, 8), bool)
    brain[3:5, 3:5, 3:5] = True
    img = np.ones((8, 8, 8))
    img[0] = 0
    assert not iqm.air_mask(brain, img, dilation=1)[0].any()


def test_errors(phantom):
    img, labels = phantom
    with pytest.raises(EmptyMask):
        iqm.snr(img, labels == 9, labels == 0)
    with pytest.raises(ZeroAirVariance):
        iqm.snr(np.where(labels == 0, 1.0, img), labels == 2, labels == 0)


def test_fallback_segmentation_recovers_classes(phantom):
    img, labels = phantom
    maps = iqm.tissue_maps(img)
    agree = np.mean(maps.hard("wm")[labels > 0] == (labels == 3)[labels > 0])
    assert agree > 0.95
    assert not np.any(maps.air_mask & maps.brain_mask)


def test_t1_row_deterministic_and_records_failures(phantom):
    img, labels = phantom
    maps = iqm.tissue_maps(img, (labels == 2).astype(float), (labels == 3).astype(float),
                           (labels == 1).astype(float))
    a = iqm.compute_t1_row(("s", "t"), img, (1, 1, 1), maps)
    b = iqm.compute_t1_row(("s", "t"), img.copy(), (1, 1, 1), maps)
    assert a.metrics == b.metrics
    assert {"CNR", "SNR", "CJV", "EFC"} <= set(a.metrics)
    # white noise has no positive neighbour correlation
    assert a.errors["FWHM"].startswith("NoValidAxis")
    flat = np.where(labels == 0, 10.0, img)
    c = iqm.compute_t1_row(("s", "t"), flat, (1, 1, 1), iqm.tissue_maps(
        flat, (labels == 2).astype(float), (labels == 3).astype(float), (labels == 1).astype(float)))
    assert "SNR" in c.errors and "SNR" in c.missing


def test_every_metric_has_a_direction():
    for modality, names in (("T1w", iqm.T1_METRICS), ("bold", iqm.BOLD_METRICS)):
        for name in names:
            assert iqm.DIRECTIONS[modality][name] in (iqm.HIGHER, iqm.LOWER)


def _aor_brute(series, mask, k=3.5):
    vox = series[mask]
    v, t = vox.shape
    tt = np.arange(t) - (t - 1) / 2
    count = np.zeros(t)
    for i in range(v):
        y = vox[i] - vox[i].mean()
        r = y - (y @ tt) / (tt @ tt) * tt
        med = np.median(r)
        mad = 1.4826 * np.median(np.abs(r - med))
        if mad <= 1e-10 * max(np.abs(vox[i]).mean(), 1.0):
            continue
        for j in range(t):
            count[j] += abs(r[j] - med) > k * mad
    return float(np.mean(count / v))


@pytest.mark.parametrize("seed", range(5))
def test_aor_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    series = 50 + rng.standard_t(3, (4, 4, 3, 25)) + np.linspace(0, 5, 25)
    mask = rng.random((4, 4, 3)) > 0.3
    assert iqm.aor(series, mask) == pytest.approx(_aor_brute(series, mask), abs=1e-12)


def test_t1_row_without_maps_keeps_efc_and_fwhm():
    rng = np.random.default_rng(9)
    labels = synth.phantom_labels((24, 24, 24), (4, 4, 4), 2, 3)
    img = np.array([10.0, 40.0, 100.0, 150.0])[labels] + 5 * synth.smooth_noise(
        rng, labels.shape, 3.0, (1, 1, 1))
    row = iqm.compute_t1_row(("s", "t"), img, (1, 1, 1), None)
    assert set(row.metrics) == {"EFC", "FWHM"}
    assert set(row.missing) == {"CNR", "SNR", "TPM_CSF", "TPM_GM", "TPM_WM", "CJV"}
