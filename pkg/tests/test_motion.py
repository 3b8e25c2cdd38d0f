import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from qcforge import motion, synth

params_arrays = hnp.arrays(np.float64, st.tuples(st.integers(1, 40), st.just(6)),
                           elements=st.floats(-0.3, 0.3))


@settings(max_examples=50)
@given(params_arrays, st.floats(10, 100))
def test_fd_nonnegative_first_zero(p, radius):
    for fn in (motion.fd_power, motion.fd_jenkinson):
        fd = fn(p, radius)
        assert fd.shape == (p.shape[0],)
        assert fd[0] == 0.0 and np.all(fd >= 0)


@settings(max_examples=50)
@given(params_arrays, st.permutations([0, 1, 2]))
def test_axis_permutation(p, perm):
    q = p.copy()
    q[:, :3] = p[:, perm]
    q[:, 3:] = p[:, [3 + i for i in perm]]
    np.testing.assert_allclose(motion.fd_power(q), motion.fd_power(p), rtol=1e-12)
    # pure translations: Jenkinson FD is the Euclidean step
    t = p.copy()
    t[:, 3:] = 0
    u = t.copy()
    u[:, :3] = t[:, perm]
    np.testing.assert_allclose(motion.fd_jenkinson(u), motion.fd_jenkinson(t), atol=1e-12)
    np.testing.assert_allclose(motion.fd_jenkinson(t)[1:],
                               np.linalg.norm(np.diff(t[:, :3], axis=0), axis=1), atol=1e-12)


def test_power_hand_value():
    p = np.zeros((2, 6))
    p[1] = (0.1, -0.2, 0.3, 0.001, -0.002, 0.0)
    assert motion.fd_power(p)[1] == pytest.approx(0.6 + 50 * 0.003)


@pytest.mark.parametrize("axis", [3, 4, 5])
def test_jenkinson_single_rotation(axis):
    theta = 0.01
    p = np.zeros((2, 6))
    p[1, axis] = theta
    # R - I for a single-axis rotation has Frobenius norm^2 = 4 (1 - cos theta)
    expected = 50 * math.sqrt(4 * (1 - math.cos(theta)) / 5)
    assert motion.fd_jenkinson(p)[1] == pytest.approx(expected, rel=1e-12)
    ratio = motion.fd_jenkinson(p)[1] / motion.fd_power(p)[1]
    assert ratio == pytest.approx(math.sqrt(2 / 5), rel=1e-4)


@settings(max_examples=60)
@given(st.lists(st.floats(0, 1.5), min_size=1, max_size=200), st.floats(0.5, 3.0),
       st.floats(0.1, 1.0))
def test_censor_identity(fd, tr, thr):
    params = synth.params_from_fd(np.array([0.0] + fd[1:]), np.random.default_rng(0))
    trace = motion.build_trace(("s", "t"), params, tr, fd_threshold=thr)
    summary, verdict, reasons = motion.apply_motion_rules(trace)
    t = trace.n_volumes
    assert summary.good_time + summary.n_censored * tr == pytest.approx(t * tr)
    assert summary.pct_censored == pytest.approx(100 * summary.n_censored / t)
    assert (verdict == "FAIL") == bool(reasons)


def test_motion_rules_boundaries():
    fd = np.zeros(200)
    fd[1:61] = 0.6  # 60 of 200 = 30%: not above the limit
    params = synth.params_from_fd(fd, np.random.default_rng(1))
    trace = motion.build_trace(("s", "t"), params, 3.0)
    summary, verdict, reasons = motion.apply_motion_rules(trace)
    assert summary.n_censored == 60 and summary.pct_censored == pytest.approx(30.0)
    assert verdict == "PASS"  # 140 x 3 s = 420 s of good data
    _, verdict, reasons = motion.apply_motion_rules(trace, min_good_time=421)
    assert reasons == ("MOTION_GOOD_TIME",)
    _, _, reasons = motion.apply_motion_rules(trace, fd_threshold=0.1, max_pct=10)
    assert reasons == ("MOTION_PCT_CENSORED",)


def test_params_from_fd_realises_trace(rng):
    fd = np.concatenate([[0.0], rng.uniform(0, 1, 99)])
    p = synth.params_from_fd(fd, rng)
    np.testing.assert_allclose(motion.fd_power(p), fd, atol=1e-9)


def test_dvars(rng):
    series = 100 + rng.normal(0, 1, (6, 6, 6, 300))
    raw, std = motion.dvars(series, np.ones((6, 6, 6), bool))
    assert raw[0] == 0 and std[0] == 0
    assert np.mean(std[1:]) == pytest.approx(1.0, abs=0.05)
    assert np.mean(raw[1:]) == pytest.approx(math.sqrt(2), abs=0.05)
    _, none = motion.dvars(np.ones((2, 2, 2, 4)), np.ones((2, 2, 2), bool))
    assert none is None


def test_read_confounds(tmp_path):
    path = tmp_path / "c.tsv"
    cols = list(motion.CONFOUND_COLUMNS) + ["framewise_displacement"]
    lines = ["\t".join(cols), "\t".join(["0"] * 6 + ["n/a"]), "\t".join(["0.1"] * 6 + ["0.3"])]
    path.write_text("\n".join(lines) + "\n")
    p = motion.read_confounds(path)
    assert p.shape == (2, 6) and p[1, 0] == 0.1
    (tmp_path / "bad.tsv").write_text("trans_x\n0\n")
    with pytest.raises(ValueError):
        motion.read_confounds(tmp_path / "bad.tsv")


def test_fixture_confounds_match_truth(fixture_root):
    manifest = json.loads((fixture_root / "manifest.json").read_text())
    checked = 0
    for s in manifest["sessions"]:
        truth = s["truth"].get("fd_power")
        sub, ses = s["subject"], s["session"]
        path = (fixture_root / "bids" / "derivatives" / "fmriprep" / f"sub-{sub}" / f"ses-{ses}"
                / "func" / f"sub-{sub}_ses-{ses}_task-rest_desc-confounds_timeseries.tsv")
        if truth is None or not path.exists():
            continue
        np.testing.assert_allclose(motion.fd_power(motion.read_confounds(path)), truth, atol=1e-5)
        checked += 1
    assert checked >= 10
