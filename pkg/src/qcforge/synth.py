"""Seeded synthetic BIDS datasets with engineered faults and known ground truth.

Phantoms are nested cuboids (CSF shell around GM shell around a WM core) on an
air background with Gaussian noise, optionally smoothed by a separable
Gaussian kernel truncated at 4 sigma.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import NormalDist

import numpy as np
from scipy import ndimage

from . import nifti_io
from .bids import EntityKey, render_path
from .errors import IoFailure
from .motion import CONFOUND_COLUMNS
from .tables import write_tsv

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

# fault -> (stage where it is caught, reason codes, stamps)
FAULTS = {
    "CLEAN": (None, (), ()),
    "KNOWN_ERROR": ("clinica", ("CLINICA_KNOWN_ERROR",), ()),
    "MISSING_SIDECAR": ("clinica", ("MISSING_FILES",), ()),
    "MISSING_T1W": ("clinica", ("MISSING_T1W",), ()),
    "SCAN_DEPTH": ("post_clinica_qc", ("SCAN_DEPTH",), ()),
    "TR": ("post_clinica_qc", ("TR_RANGE",), ()),
    "DURATION": ("post_clinica_qc", ("DURATION",), ()),
    "PHASE_FOV": ("post_clinica_qc", ("PHASE_FOV",), ()),
    "COIL": ("post_clinica_qc", ("COIL",), ()),
    "IQM_MISSING": ("mriqc", ("IQM_MISSING",), ()),
    # lowering WM contrast also flattens the intensity histogram (EFC)
    "T1_LOW_CNR": ("post_mriqc_qc", ("IQM_OUTLIER_T1_CNR", "IQM_OUTLIER_T1_CJV",
                                     "IQM_OUTLIER_T1_EFC", "T1_OUTLIER_PROPAGATED"), ()),
    # a slow gain drift inflates temporal variance and decorrelates volume ranks
    "BOLD_DRIFT": ("post_mriqc_qc", ("IQM_OUTLIER_BOLD_TSNR", "IQM_OUTLIER_BOLD_AQI"), ()),
    "LOG_MISSING_BOLD": ("fmriprep", ("FMRIPREP_MISSING_BOLD",), ()),
    "LOG_TEMPLATEFLOW_MEMORY": ("fmriprep", ("FMRIPREP_TEMPLATEFLOW", "FMRIPREP_MEMORY"), ()),
    "LOG_RECONALL": ("fmriprep", ("FMRIPREP_RECONALL",), ()),
    "LOG_SYNSDC": ("fmriprep", ("FMRIPREP_SYNSDC",), ()),
    "LOG_UNKNOWN": ("fmriprep", ("FMRIPREP_UNKNOWN",), ()),
    "EULER": ("final_qc", ("EULER_OUTLIER",), ()),
    "MOTION": ("final_qc", ("MOTION_PCT_CENSORED", "MOTION_GOOD_TIME"), ()),
    "SYNSDC_RESOLVED": (None, (), ("SDC_DISABLED",)),
}

# (subject index, session index) -> fault; every reachable reason code appears.
DEFAULT_PLAN = {
    (9, 0): "KNOWN_ERROR", (9, 1): "MISSING_SIDECAR",
    (0, 0): "LOG_RECONALL", (0, 1): "MISSING_T1W",
    (1, 0): "SCAN_DEPTH", (1, 1): "TR",
    (2, 0): "DURATION", (2, 1): "PHASE_FOV",
    (3, 0): "COIL", (3, 1): "IQM_MISSING",
    (4, 0): "T1_LOW_CNR", (4, 1): "BOLD_DRIFT",
    (5, 0): "LOG_MISSING_BOLD", (5, 1): "LOG_TEMPLATEFLOW_MEMORY",
    (6, 0): "LOG_SYNSDC", (6, 1): "LOG_UNKNOWN",
    (7, 0): "EULER", (7, 1): "MOTION",
    (8, 0): "SYNSDC_RESOLVED", (8, 1): "CLEAN",
}

MANUFACTURERS = ("Siemens", "GE", "Philips")


@dataclass
class FixtureSpec:
    n_subjects: int = 10
    sessions_per_subject: int = 2
    seed: int = 20240817
    bold_shape: tuple = (16, 16, 24)
    bold_zooms: tuple = (4.0, 4.0, 7.0)
    t1_shape: tuple = (32, 32, 32)
    t1_zooms: tuple = (1.0, 1.0, 1.0)
    tr: float = 3.0
    n_volumes: int = 110
    t1_noise: float = 5.0
    bold_noise: float = 5.0
    t1_means: tuple = (10.0, 40.0, 100.0, 150.0)  # air, CSF, GM, WM
    bold_means: tuple = (5.0, 60.0, 100.0, 130.0)
    t1_fwhm: float = 2.0
    bold_fwhm: float = 6.0
    fd_amplitude: float = 0.2
    euler_center: float = -30.0
    main_site: str = "114"
    small_site: str = "099"
    faults: dict = field(default_factory=lambda: dict(DEFAULT_PLAN))

    @classmethod
    def from_dict(cls, doc) -> "FixtureSpec":
        doc = dict(doc)
        if "faults" in doc:
            doc["faults"] = {tuple(int(i) for i in k.split(",")): v
                             for k, v in doc["faults"].items()}
        for k in ("bold_shape", "bold_zooms", "t1_shape", "t1_zooms", "t1_means", "bold_means"):
            if k in doc:
                doc[k] = tuple(doc[k])
        return cls(**doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["faults"] = {f"{i},{j}": v for (i, j), v in sorted(self.faults.items())}
        return d

    def subject_label(self, i: int) -> str:
        site = self.small_site if i == self.n_subjects - 1 and self.n_subjects > 1 else self.main_site
        return f"ADNI{site}S{4000 + i}"

    def session_label(self, j: int) -> str:
        return f"M{24 * j:03d}"


# -- geometry and noise -------------------------------------------------------

def phantom_labels(shape, margin, csf: int, gm: int) -> np.ndarray:
    """0 air, 1 CSF, 2 GM, 3 WM as nested cuboids."""
    shape = tuple(shape)
    depth = np.full(shape, -1, dtype=int)
    grids = np.meshgrid(*[np.arange(n) for n in shape], indexing="ij")
    inside = np.ones(shape, dtype=bool)
    d = np.full(shape, np.iinfo(int).max)
    for g, n, m in zip(grids, shape, margin):
        inside &= (g >= m) & (g < n - m)
        d = np.minimum(d, np.minimum(g - m, n - m - 1 - g))
    depth[inside] = d[inside]
    labels = np.zeros(shape, dtype=int)
    labels[inside & (depth < csf)] = 1
    labels[inside & (depth >= csf) & (depth < csf + gm)] = 2
    labels[inside & (depth >= csf + gm)] = 3
    return labels


def smooth_noise(rng, shape, fwhm_mm: float, zooms) -> np.ndarray:
    """Unit-variance Gaussian noise smoothed by a kernel of ``fwhm_mm``.

    The last axis is treated as time (never smoothed) when ``shape`` has more
    dimensions than ``zooms``.
    """
    white = rng.standard_normal(shape)
    if fwhm_mm <= 0:
        return white
    sig = [fwhm_mm / FWHM_PER_SIGMA / z for z in zooms] + [0.0] * (len(shape) - len(zooms))
    sm = ndimage.gaussian_filter(white, sig, mode="wrap", truncate=4.0)
    delta = np.zeros(tuple(shape[:len(zooms)]))
    delta[tuple(n // 2 for n in delta.shape)] = 1.0
    k = ndimage.gaussian_filter(delta, sig[:len(zooms)], mode="wrap", truncate=4.0)
    return sm / math.sqrt(float(np.sum(k * k)))


def _grid(n: int, rng) -> np.ndarray:
    """Normal quantiles of a regular grid, shuffled."""
    q = np.array([NormalDist().inv_cdf((i + 0.5) / n) for i in range(n)])
    return rng.permutation(q)


# -- per-session content -------------------------------------------------------

@dataclass
class SessionPlan:
    i: int
    j: int
    subject: str
    session: str
    site: str
    fault: str
    q: dict


IMAGE_QUALITY = ("t1_noise", "t1_contrast", "t1_fwhm", "tpm_blur", "bold_noise", "bold_fwhm",
                 "bold_air", "fd_amp")
_PRE_SCREEN = ("clinica", "post_clinica_qc", "mriqc")


def _plans(spec: FixtureSpec) -> list[SessionPlan]:
    """Per-session quality quantiles.

    Image-quality parameters are spread on an evenly spaced normal-quantile
    grid over the clean sessions that reach the outlier screen; sessions with
    an IQM fault, and sessions dropped earlier, sit at the median so that only
    the injected fault sets them apart. Euler numbers use a grid over all
    sessions since that screen is per site.
    """
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    cells = [(i, j) for i in range(spec.n_subjects) for j in range(spec.sessions_per_subject)]
    fault = {c: spec.faults.get(c, "CLEAN") for c in cells}
    spread = [c for c in cells if FAULTS[fault[c]][0] not in _PRE_SCREEN + ("post_mriqc_qc",)]
    q = {c: dict.fromkeys(IMAGE_QUALITY, 0.0) for c in cells}
    for name in IMAGE_QUALITY:
        for c, v in zip(spread, _grid(len(spread), rng)):
            q[c][name] = float(v)
    for c, v in zip(cells, _grid(len(cells), rng)):
        q[c]["euler"] = float(v)
    plans = []
    for i, j in cells:
        sub = spec.subject_label(i)
        plans.append(SessionPlan(i, j, sub, spec.session_label(j), sub[4:7], fault[(i, j)],
                                 q[(i, j)]))
    return plans


def _session_rng(spec: FixtureSpec, p: SessionPlan, stream: int):
    return np.random.default_rng(np.random.SeedSequence([spec.seed, 1 + p.i, p.j, stream]))



def _t1_volume(spec, p: SessionPlan, labels) -> tuple[np.ndarray, dict]:
    rng = _session_rng(spec, p, 1)
    means = list(spec.t1_means)
    means[3] = spec.t1_means[3] + 5.0 * p.q["t1_contrast"]
    if p.fault == "T1_LOW_CNR":
        means[3] = spec.t1_means[2] + 8.0
    sigma = spec.t1_noise * (1 + 0.15 * p.q["t1_noise"])
    fwhm = spec.t1_fwhm * (1 + 0.1 * p.q["t1_fwhm"])
    img = np.asarray(means)[labels] + sigma * smooth_noise(rng, labels.shape, fwhm, spec.t1_zooms)
    if p.fault == "IQM_MISSING":
        # flat background: zero air variance makes SNR undefined
        img[labels == 0] = spec.t1_means[0]
    return img, {"noise_sigma": sigma, "fwhm_mm": fwhm, "means": means}


def _bold_series(spec, p: SessionPlan, labels, n_vol: int) -> tuple[np.ndarray, dict]:
    rng = _session_rng(spec, p, 2)
    means = list(spec.bold_means)
    means[0] = spec.bold_means[0] * (1 + 0.3 * p.q["bold_air"])
    base = np.asarray(means)[labels]
    sigma = spec.bold_noise * (1 + 0.15 * p.q["bold_noise"])
    fwhm = spec.bold_fwhm * (1 + 0.1 * p.q["bold_fwhm"])
    noise = smooth_noise(rng, tuple(labels.shape) + (n_vol,), fwhm, spec.bold_zooms)
    gain = np.ones(n_vol)
    if p.fault == "BOLD_DRIFT":
        tau = np.arange(n_vol) / (n_vol - 1) - 0.5
        gain = 1.0 + 0.67 * tau
    series = base[..., None] * np.where(labels[..., None] > 0, gain, 1.0) + sigma * noise
    truth = {"noise_sigma": sigma, "fwhm_mm": fwhm,
             "tsnr_gm": float(spec.bold_means[2] / math.sqrt(
                 sigma ** 2 + (spec.bold_means[2] * gain).var()))}
    return series, truth


def _fd_series(spec, p: SessionPlan, n_vol: int) -> np.ndarray:
    rng = _session_rng(spec, p, 3)
    amp = spec.fd_amplitude * (1 + 0.4 * p.q["fd_amp"])
    fd = amp * (0.6 + 0.6 * rng.random(n_vol))
    if p.fault == "MOTION":
        fd = np.full(n_vol, 0.1)
        hot = rng.choice(np.arange(1, n_vol), size=40, replace=False)
        fd[hot] = 0.55 + 0.1 * rng.random(40)
    fd[0] = 0.0
    return fd


def params_from_fd(fd, rng, radius: float = 50.0) -> np.ndarray:
    """Rigid parameters whose Power FD reproduces ``fd``."""
    fd = np.asarray(fd, dtype=float)
    w = rng.dirichlet(np.ones(6), size=fd.size)
    sign = rng.choice([-1.0, 1.0], size=(fd.size, 6))
    steps = w * fd[:, None] * sign
    steps[:, 3:] /= radius
    steps[0] = 0.0
    return np.cumsum(steps, axis=0)


def _euler(spec, p: SessionPlan) -> tuple[int, int]:
    avg = spec.euler_center * (1 + 0.3 * p.q["euler"])
    if p.fault == "EULER":
        return -900, -900
    lh = 2 * int(round(avg / 2))
    return lh, lh - 2


# -- logs -----------------------------------------------------------------------

LOG_TEMPLATES = {
    "SUCCESS": ("fMRIPrep started for participant {sub}",
                "Running anatomical workflow",
                "Running functional workflow for session {ses}",
                "fMRIPrep finished successfully!"),
    "MISSING_BOLD": ("fMRIPrep started for participant {sub}",
                     "ValueError: No BOLD images found for participant {sub} and session {ses}",
                     "Exit code: 1"),
    "TEMPLATEFLOW": ("fMRIPrep started for participant {sub}",
                     "OSError: [Errno 30] Read-only file system: "
                     "'/home/fmriprep/.cache/templateflow/tpl-MNI152NLin2009cAsym'",),
    "MEMORY": ("slurmstepd: error: Detected 1 oom-kill event(s) in StepId=81234.batch",
               "exit status: 137"),
    "RECONALL": ("Running surface reconstruction for {sub}",
                 "recon-all -s sub-{sub} exited with ERRORS at Mon Mar 11 04:12:55 UTC 2024",
                 "Exit code: 1"),
    "SYNSDC": ("fMRIPrep started for participant {sub}",
               "RuntimeError: fieldmap-less SDC (--use-syn-sdc) cannot run: "
               "PhaseEncodingDirection is missing for sub-{sub}_ses-{ses}_task-rest_bold.nii.gz",
               "Exit code: 1"),
    "UNKNOWN": ("fMRIPrep started for participant {sub}",
                "Traceback (most recent call last):",
                "  File \"/opt/conda/lib/python3.10/site-packages/nipype/pipeline/plugins/multiproc.py\", line 67, in run_node",
                "nipype.pipeline.engine.nodes.NodeExecutionError: Exception raised while executing Node bold_to_std.",
                "Exit code: 1"),
}


def render_log(kinds, sub: str, ses: str) -> str:
    lines = []
    for kind in kinds:
        lines.extend(LOG_TEMPLATES[kind])
    return "\n".join(line.format(sub=sub, ses=ses) for line in lines) + "\n"


def _session_logs(p: SessionPlan) -> dict[str, str]:
    """File name -> content for one session's injected logs."""
    base = f"log_sub-{p.subject}_ses-{p.session}"
    sub, ses = p.subject, p.session
    fault = p.fault
    if fault == "LOG_RECONALL":
        return {f"log_sub-{sub}.err": render_log(["RECONALL"], sub, ses)}
    if fault == "LOG_MISSING_BOLD":
        return {f"{base}.err": render_log(["MISSING_BOLD"], sub, ses)}
    if fault == "LOG_TEMPLATEFLOW_MEMORY":
        return {f"{base}.err": render_log(["TEMPLATEFLOW", "MEMORY"], sub, ses)}
    if fault == "LOG_SYNSDC":
        return {f"{base}.err": render_log(["SYNSDC"], sub, ses)}
    if fault == "LOG_UNKNOWN":
        return {f"{base}.err": render_log(["UNKNOWN"], sub, ses)}
    if fault == "SYNSDC_RESOLVED":
        return {f"{base}_attempt-1.err": render_log(["SYNSDC"], sub, ses),
                f"{base}_attempt-2.out": render_log(["SUCCESS"], sub, ses)}
    return {f"{base}.out": render_log(["SUCCESS"], sub, ses)}


# -- writers ---------------------------------------------------------------------

def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def _save(path: Path, array, zooms, tr=None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    nifti_io.save(array, path, zooms, tr)


def _bold_sidecar(spec, p: SessionPlan) -> dict:
    tr = 2.0 if p.fault == "TR" else spec.tr
    doc = {
        "RepetitionTime": tr,
        "TaskName": "rest",
        "Manufacturer": MANUFACTURERS[p.i % len(MANUFACTURERS)],
        "MagneticFieldStrength": 3,
        "EchoTime": 0.03,
        "FlipAngle": 90,
        "PhaseEncodingDirection": "j-",
        "PercentPhaseFOV": 65.0 if p.fault == "PHASE_FOV" else 100.0,
        "CoilString": "q-body" if p.fault == "COIL" else "HeadMatrix",
        "SliceThickness": spec.bold_zooms[2],
    }
    return doc


def _tpm(labels, tissue: int, sigma: float) -> np.ndarray:
    return np.clip(ndimage.gaussian_filter((labels == tissue).astype(float), sigma), 0.0, 1.0)


def generate(spec: FixtureSpec, out) -> dict:
    """Write a complete fixture under ``out`` and return its manifest.

    Layout: ``out/bids`` (raw tree plus ``derivatives``), ``out/config.yaml``,
    ``out/known_errors.csv``, ``out/clinical.csv`` and ``out/manifest.json``.
    """
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    root = out / "bids"
    deriv = root / "derivatives"
    plans = _plans(spec)

    t1_labels = phantom_labels(spec.t1_shape, (5, 5, 5), 2, 3)
    bold_labels = phantom_labels(spec.bold_shape, (2, 2, 3), 1, 2)
    for tissue, code in (("CSF", 1), ("GM", 2), ("WM", 3)):
        _save(deriv / "templates" / f"tpl_label-{tissue}_probseg.nii.gz",
              _tpm(t1_labels, code, 0.5), spec.t1_zooms)

    _write_json(root / "dataset_description.json",
                {"Name": "qcforge synthetic fixture", "BIDSVersion": "1.8.0"})
    sessions_out, euler_rows, known, clinical = [], [], [], []
    subject_dates: dict[str, list[dict]] = {}
    for p in plans:
        fault = p.fault
        stage, reasons, stamps = FAULTS[fault]
        truth: dict = {}
        n_vol = 90 if fault == "DURATION" else spec.n_volumes
        bold_zooms = list(spec.bold_zooms)
        if fault == "SCAN_DEPTH":
            bold_zooms[2] = 6.25
        tr = 2.0 if fault == "TR" else spec.tr

        if fault != "MISSING_T1W":
            t1, t1_truth = _t1_volume(spec, p, t1_labels)
            truth["t1"] = t1_truth
            rel = render_path(EntityKey(p.subject, p.session, "T1w"))
            _save(root / rel, t1, spec.t1_zooms)
            _write_json(root / rel.replace(".nii.gz", ".json"),
                        {"Manufacturer": MANUFACTURERS[p.i % len(MANUFACTURERS)],
                         "MagneticFieldStrength": 3})
            blur = 1.0 * (1 + 0.05 * p.q["tpm_blur"])
            for tissue, code in (("CSF", 1), ("GM", 2), ("WM", 3)):
                _save(deriv / "tissue_maps" / f"sub-{p.subject}" / f"ses-{p.session}" / "anat"
                      / f"sub-{p.subject}_ses-{p.session}_label-{tissue}_probseg.nii.gz",
                      _tpm(t1_labels, code, blur), spec.t1_zooms)

        series, bold_truth = _bold_series(spec, p, bold_labels, n_vol)
        truth["bold"] = bold_truth
        rel = render_path(EntityKey(p.subject, p.session, "bold", (("task", "rest"),)))
        _save(root / rel, series, bold_zooms, tr)
        if fault != "MISSING_SIDECAR":
            _write_json(root / rel.replace(".nii.gz", ".json"), _bold_sidecar(spec, p))

        fd = _fd_series(spec, p, n_vol)
        params = params_from_fd(fd, _session_rng(spec, p, 4))
        truth["fd_power"] = [float(v) for v in fd]
        conf = (deriv / "fmriprep" / f"sub-{p.subject}" / f"ses-{p.session}" / "func"
                / f"sub-{p.subject}_ses-{p.session}_task-rest_desc-confounds_timeseries.tsv")
        write_tsv(conf, [dict(zip(CONFOUND_COLUMNS, map(float, row))) for row in params],
                  list(CONFOUND_COLUMNS))

        for name, text in _session_logs(p).items():
            _write_text(deriv / "logs" / name, text)

        lh, rh = _euler(spec, p)
        euler_rows.append({"subject": p.subject, "session": p.session, "lh_euler": lh,
                           "rh_euler": rh, "avg_euler": (lh + rh) / 2, "site": p.site})
        if fault == "KNOWN_ERROR":
            known.append({"subject": p.subject, "session": p.session,
                          "error_type": "dcm2niix_conversion"})

        scan_date = f"20{12 + p.i % 8:02d}-{3 + 4 * p.j:02d}-{10 + p.i:02d}"
        subject_dates.setdefault(p.subject, []).append(
            {"session_id": f"ses-{p.session}", "acq_time": scan_date})
        code = p.session if p.j == 0 else f"V{p.j}"
        clinical.append({"subject": p.subject, "visit_code": code,
                         "exam_date": scan_date[:8] + f"{int(scan_date[8:]) + 5:02d}",
                         "MMSE": 30 - (p.i + p.j) % 5})

        sessions_out.append({
            "subject": p.subject, "session": p.session, "site": p.site, "fault": fault,
            "expected_verdict": "EXCLUDE" if stage else "INCLUDE",
            "expected_stage": stage, "expected_reasons": list(reasons),
            "expected_stamps": list(stamps), "truth": truth,
        })

    for sub, rows in subject_dates.items():
        write_tsv(root / f"sub-{sub}" / f"sub-{sub}_sessions.tsv", rows, ["session_id", "acq_time"])
    write_tsv(deriv / "freesurfer" / "euler_summary.tsv", euler_rows,
              ["subject", "session", "lh_euler", "rh_euler", "avg_euler", "site"])
    write_tsv(out / "known_errors.csv", known, ["subject", "session", "error_type"], ",")
    write_tsv(out / "clinical.csv", clinical, ["subject", "visit_code", "exam_date", "MMSE"], ",")
    _write_text(out / "config.yaml", FIXTURE_CONFIG)

    manifest = {
        "spec": spec.to_dict(),
        "sessions": sessions_out,
        "stage_counts": expected_stage_counts(sessions_out),
        "files": file_digests(out, exclude=("manifest.json",)),
    }
    _write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


FIXTURE_CONFIG = """\
# qcforge run configuration for the synthetic fixture
bids_root: bids
output_dir: qc
known_errors: known_errors.csv
clinical_csv: clinical.csv
iqm:
  tissue_maps_dir: bids/derivatives/tissue_maps
  template_maps:
    csf: bids/derivatives/templates/tpl_label-CSF_probseg.nii.gz
    gm: bids/derivatives/templates/tpl_label-GM_probseg.nii.gz
    wm: bids/derivatives/templates/tpl_label-WM_probseg.nii.gz
outliers:
  min_n: 10
"""


def expected_stage_counts(sessions) -> list[dict]:
    """Earliest-failure counts implied by the engineered faults."""
    from .reasons import STAGES

    alive = {(s["subject"], s["session"]) for s in sessions}
    stage_of = {(s["subject"], s["session"]): s["expected_stage"] for s in sessions}
    rows = [{"stage": STAGES[0].id, "remaining_subjects": len({k[0] for k in alive}),
             "remaining_sessions": len(alive)}]
    for st in STAGES[1:]:
        subs = {k[0] for k in alive}
        dropped = {k for k in alive if stage_of[k] == st.id}
        alive -= dropped
        left = {k[0] for k in alive}
        rows.append({"stage": st.id, "dropped_subjects": len(subs) - len(left),
                     "dropped_sessions": len(dropped), "remaining_subjects": len(left),
                     "remaining_sessions": len(alive)})
    return rows


def file_digests(root, exclude=()) -> dict[str, str]:
    root = Path(root)
    out = {}
    for p in sorted(root.rglob("*")):
        rel = p.relative_to(root).as_posix()
        if p.is_file() and rel not in exclude:
            out[rel] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def tree_digest(root) -> str:
    h = hashlib.sha256()
    for rel, digest in file_digests(root).items():
        h.update(f"{rel}\0{digest}\n".encode())
    return h.hexdigest()


# -- scanner-gate fixture --------------------------------------------------------

# name, bold (nz, pz, n_vol, pixdim TR), sidecar overrides (None drops the key),
# flags, expected failing rule or None
GATE_CASES = [
    ("clean", (52, 3.25, 197, 3.0), {}, (), None),
    ("depth_155", (62, 2.5, 110, 3.0), {}, (), None),
    ("depth_180", (72, 2.5, 110, 3.0), {}, (), None),
    ("depth_180_coarse", (45, 4.0, 110, 3.0), {}, (), None),
    ("depth_152_5", (61, 2.5, 110, 3.0), {}, (), "SCAN_DEPTH"),
    ("depth_182_5", (73, 2.5, 110, 3.0), {}, (), "SCAN_DEPTH"),
    ("depth_150", (24, 6.25, 110, 3.0), {}, (), "SCAN_DEPTH"),
    ("tr_0_5", (52, 3.25, 600, 0.5), {"RepetitionTime": 0.5}, (), None),
    ("tr_1_0", (52, 3.25, 300, 1.0), {"RepetitionTime": 1.0}, (), None),
    ("tr_2_9", (52, 3.25, 104, 2.9), {"RepetitionTime": 2.9}, (), None),
    ("tr_3_1", (52, 3.25, 100, 3.1), {"RepetitionTime": 3.1}, (), None),
    ("tr_0_49", (52, 3.25, 700, 0.49), {"RepetitionTime": 0.49}, (), "TR_RANGE"),
    ("tr_1_01", (52, 3.25, 300, 1.01), {"RepetitionTime": 1.01}, (), "TR_RANGE"),
    ("tr_2_89", (52, 3.25, 110, 2.89), {"RepetitionTime": 2.89}, (), "TR_RANGE"),
    ("tr_3_11", (52, 3.25, 110, 3.11), {"RepetitionTime": 3.11}, (), "TR_RANGE"),
    ("tr_2_0", (52, 3.25, 200, 2.0), {"RepetitionTime": 2.0}, (), "TR_RANGE"),
    ("tr_pixdim_fallback", (52, 3.25, 110, 3.0), {"RepetitionTime": None}, (), None),
    ("tr_absent", (52, 3.25, 110, 0.0), {"RepetitionTime": None}, (), "MISSING_FILES"),
    ("duration_300", (52, 3.25, 100, 3.0), {}, (), None),
    ("duration_297", (52, 3.25, 99, 3.0), {}, (), "DURATION"),
    ("duration_299_5", (52, 3.25, 599, 0.5), {"RepetitionTime": 0.5}, (), "DURATION"),
    ("fov_72", (52, 3.25, 110, 3.0), {"PercentPhaseFOV": 72}, (), None),
    ("fov_71_9", (52, 3.25, 110, 3.0), {"PercentPhaseFOV": 71.9}, (), "PHASE_FOV"),
    ("fov_65", (52, 3.25, 110, 3.0), {"PercentPhaseFOV": 65}, (), "PHASE_FOV"),
    ("fov_absent", (52, 3.25, 110, 3.0), {"PercentPhaseFOV": None}, (), None),
    ("coil_q_body_lower", (52, 3.25, 110, 3.0), {"CoilString": "q-body"}, (), "COIL"),
    ("coil_q_body", (52, 3.25, 110, 3.0), {"CoilString": "Q-BODY"}, (), "COIL"),
    ("coil_body_padded", (52, 3.25, 110, 3.0), {"CoilString": "  Body "}, (), "COIL"),
    ("coil_head", (52, 3.25, 110, 3.0), {"CoilString": "HeadNeck_64"}, (), None),
    ("coil_absent", (52, 3.25, 110, 3.0), {"CoilString": None}, (), None),
    ("known_error", (52, 3.25, 110, 3.0), {}, ("known_error",), "CLINICA_KNOWN_ERROR"),
    ("missing_bold_sidecar", (52, 3.25, 110, 3.0), {}, ("no_bold_sidecar",), "MISSING_FILES"),
    ("bad_sidecar", (52, 3.25, 110, 3.0), {"RepetitionTime": "3.0"}, (), "MISSING_FILES"),
    ("missing_bold", (52, 3.25, 110, 3.0), {}, ("no_bold",), "MISSING_FILES"),
    ("missing_t1w", (52, 3.25, 110, 3.0), {}, ("no_t1w",), "MISSING_T1W"),
    ("missing_t1_sidecar", (52, 3.25, 110, 3.0), {}, ("no_t1_sidecar",), "MISSING_FILES"),
    ("depth_and_coil", (61, 2.5, 110, 3.0), {"CoilString": "BODY"}, (), "SCAN_DEPTH"),
    ("tr_and_fov", (52, 3.25, 200, 2.0), {"RepetitionTime": 2.0, "PercentPhaseFOV": 50}, (),
     "TR_RANGE"),
    ("duration_and_coil", (52, 3.25, 90, 3.0), {"CoilString": "body"}, (), "DURATION"),
    ("known_and_depth", (24, 6.25, 110, 3.0), {}, ("known_error",), "CLINICA_KNOWN_ERROR"),
]


def gate_fixture(out) -> dict[tuple[str, str], str | None]:
    """Write the boundary-case gate dataset; returns key -> expected failing rule.

    Images use a 2 x 2 in-plane grid since the gate reads headers only.
    """
    out = Path(out)
    root = out / "bids"
    expected, known = {}, []
    for n, (name, (nz, pz, n_vol, tr), overrides, flags, rule) in enumerate(GATE_CASES):
        sub, ses = f"G{n:02d}", "M000"
        expected[(sub, ses)] = rule
        if "known_error" in flags:
            known.append({"subject": sub, "session": ses, "error_type": name})
        if "no_t1w" not in flags:
            rel = render_path(EntityKey(sub, ses, "T1w"))
            _save(root / rel, np.ones((2, 2, 2)), (1.0, 1.0, 1.0))
            if "no_t1_sidecar" not in flags:
                _write_json(root / rel.replace(".nii.gz", ".json"), {"Manufacturer": "Siemens"})
        if "no_bold" in flags:
            continue
        rel = render_path(EntityKey(sub, ses, "bold", (("task", "rest"),)))
        _save(root / rel, np.ones((2, 2, nz, n_vol), dtype=np.float32), (3.0, 3.0, pz), tr)
        if "no_bold_sidecar" in flags:
            continue
        doc = {"RepetitionTime": tr, "PercentPhaseFOV": 100.0, "CoilString": "HeadMatrix",
               "Manufacturer": "Siemens", "PhaseEncodingDirection": "j-"}
        for k, v in overrides.items():
            if v is None:
                doc.pop(k, None)
            else:
                doc[k] = v
        _write_json(root / rel.replace(".nii.gz", ".json"), doc)
    write_tsv(out / "known_errors.csv", known, ["subject", "session", "error_type"], ",")
    return expected
