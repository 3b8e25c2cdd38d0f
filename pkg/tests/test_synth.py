import json
import shutil

import numpy as np
import pytest

from qcforge import iqm, nifti_io, synth
from qcforge.config import load_config
from qcforge.pipeline import run_all


def _session_paths(root, sub, ses):
    b = root / "bids" / f"sub-{sub}" / f"ses-{ses}"
    tm = root / "bids" / "derivatives" / "tissue_maps" / f"sub-{sub}" / f"ses-{ses}" / "anat"
    return (b / "anat" / f"sub-{sub}_ses-{ses}_T1w.nii.gz",
            b / "func" / f"sub-{sub}_ses-{ses}_task-rest_bold.nii.gz",
            {t: tm / f"sub-{sub}_ses-{ses}_label-{t.upper()}_probseg.nii.gz" for t in ("gm", "wm", "csf")})


def test_spec_roundtrip():
    spec = synth.FixtureSpec(seed=7, n_subjects=4, faults={(0, 1): "MOTION"})
    back = synth.FixtureSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert back == spec


def test_generation_is_deterministic(tmp_path, fixture_root):
    synth.generate(synth.FixtureSpec(), tmp_path / "again")
    assert synth.tree_digest(tmp_path / "again") == synth.tree_digest(fixture_root)


def test_manifest_lists_every_file(fixture_root):
    manifest = json.loads((fixture_root / "manifest.json").read_text())
    on_disk = synth.file_digests(fixture_root, exclude=("manifest.json",))
    on_disk = {k: v for k, v in on_disk.items() if not k.startswith("qc/")}
    assert manifest["files"] == on_disk
    assert manifest["stage_counts"] == synth.expected_stage_counts(manifest["sessions"])


def test_image_truth_recovered(fixture_root):
    manifest = json.loads((fixture_root / "manifest.json").read_text())
    sessions = [s for s in manifest["sessions"] if s["expected_verdict"] == "INCLUDE"]
    assert sessions
    for s in sessions:
        t1_path, bold_path, probs = _session_paths(fixture_root, s["subject"], s["session"])
        t1 = nifti_io.read_series(t1_path)
        p = {k: nifti_io.load(v) for k, v in probs.items()}
        maps = iqm.tissue_maps(t1.voxels, p["gm"], p["wm"], p["csf"])
        row = iqm.compute_t1_row((s["subject"], s["session"]), t1.voxels, t1.zooms, maps)
        assert row.metrics["FWHM"] == pytest.approx(s["truth"]["t1"]["fwhm_mm"], rel=0.15)

        bold = nifti_io.read_series(bold_path)
        brain = np.ones(bold.shape[:3], bool)
        assert iqm.fwhm_estimate(bold.voxels, brain, bold.zooms) == pytest.approx(
            s["truth"]["bold"]["fwhm_mm"], rel=0.15)
        gm = synth.phantom_labels(bold.shape[:3], (2, 2, 3), 1, 2) == 2
        assert iqm.tsnr(bold.voxels, gm) == pytest.approx(
            s["truth"]["bold"]["tsnr_gm"], rel=0.1)


def test_jobs_do_not_change_outputs(fixture_root, tmp_path):
    outs = []
    for jobs in (1, 2):
        root = tmp_path / f"j{jobs}"
        shutil.copytree(fixture_root, root, ignore=shutil.ignore_patterns("qc"))
        cfg = load_config(root / "config.yaml", {"jobs": jobs})
        run_all(cfg)
        outs.append({k: v for k, v in synth.file_digests(root / "qc").items()
                     if k.endswith(".tsv") or k.endswith(".csv")})
    assert outs[0] == outs[1] and len(outs[0]) > 10
