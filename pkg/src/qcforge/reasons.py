"""Stable exclusion reason codes and the stage order they belong to."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Stage:
    id: str
    name: str
    folder: str
    description: str


STAGES = (
    Stage("organize", "Unzip & organize DICOMs", "s3_organize", "Clean directory tree; check integrity"),
    Stage("clinica", "BIDS-convert via Clinica", "s4_clinica", "NIfTI + JSON + sidecars"),
    Stage("post_clinica_qc", "Post-Clinica QC", "s5_post_clinica_qc", "TR/coverage/duration checks"),
    Stage("mriqc", "MRIQC", "s6_mriqc", "All IQMs present"),
    Stage("post_mriqc_qc", "Post-MRIQC QC", "s6_mriqc", "Robust outlier detection"),
    Stage("fmriprep", "fMRIPrep", "s7_fmriprep", "Volumetric, surface, grayordinates outputs"),
    Stage("final_qc", "Final QC passed", "s8_final_qc", "Euler number, motion, >= 5 min usable data"),
)
STAGE_INDEX = {s.id: i for i, s in enumerate(STAGES)}

PHASE0_CODES = ("CLINICA_KNOWN_ERROR", "MISSING_FILES", "MISSING_T1W")
GATE_CODES = ("SCAN_DEPTH", "TR_RANGE", "DURATION", "PHASE_FOV", "COIL")
FMRIPREP_CODES = (
    "FMRIPREP_MISSING_BOLD",
    "FMRIPREP_TEMPLATEFLOW",
    "FMRIPREP_MEMORY",
    "FMRIPREP_RECONALL",
    "FMRIPREP_SYNSDC",
    "FMRIPREP_UNKNOWN",
)
FINAL_CODES = ("EULER_OUTLIER", "MOTION_PCT_CENSORED", "MOTION_GOOD_TIME")
IQM_MISSING = "IQM_MISSING"
IQM_OUTLIER_PREFIX = "IQM_OUTLIER_"
T1_OUTLIER_PROPAGATED = "T1_OUTLIER_PROPAGATED"

# non-exclusion stamp carried on included sessions
SDC_DISABLED = "SDC_DISABLED"


def stage_of(code: str) -> str:
    if code in PHASE0_CODES:
        return "clinica"
    if code in GATE_CODES:
        return "post_clinica_qc"
    if code == IQM_MISSING:
        return "mriqc"
    if code.startswith(IQM_OUTLIER_PREFIX) or code == T1_OUTLIER_PROPAGATED:
        return "post_mriqc_qc"
    if code in FMRIPREP_CODES:
        return "fmriprep"
    if code in FINAL_CODES:
        return "final_qc"
    raise KeyError(f"unknown reason code {code!r}")


def iqm_outlier_code(modality: str, metric: str) -> str:
    prefix = "T1" if modality == "T1w" else "BOLD"
    return f"{IQM_OUTLIER_PREFIX}{prefix}_{metric.upper()}"
