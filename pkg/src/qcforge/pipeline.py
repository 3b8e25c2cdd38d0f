"""Stage runners. Files on disk are the only interface between stages."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import bids, final_qc, heuristics, iqm, logs, motion, nifti_io, outliers
from .config import RunConfig
from .errors import ConfigError, MetricError, MissingStageInput, NiftiError, QCError
from .reasons import IQM_MISSING, STAGES
from .tables import (LEDGER_COLUMNS, ExclusionLedger, LedgerEntry, parse_float, read_tsv,
                     write_meta, write_tsv)

logger = logging.getLogger(__name__)

FOLDERS = {s.id: s.folder for s in STAGES}

# ledger files read by finalize, in stage order
LEDGERS = (
    ("s5_post_clinica_qc", "exclusions_gate.tsv"),
    ("s6_mriqc", "exclusions_mriqc.tsv"),
    ("s6_mriqc", "exclusions_post_mriqc_qc.tsv"),
    ("s7_fmriprep", "exclusions_fmriprep.tsv"),
    ("s8_final_qc", "exclusions_final_qc_euler.tsv"),
    ("s8_final_qc", "exclusions_final_qc_motion.tsv"),
)


class Stage:
    """Small helper bundling the output folder, config echo and input tracking."""

    def __init__(self, cfg: RunConfig, folder: str):
        self.cfg = cfg
        self.dir = Path(cfg.output_dir) / folder
        self.inputs: list[Path] = []

    def path(self, folder: str, name: str) -> Path:
        return Path(self.cfg.output_dir) / folder / name

    def read(self, folder: str, name: str) -> list[dict[str, str]]:
        p = self.path(folder, name)
        rows = read_tsv(p)
        self.inputs.append(p)
        return rows

    def write(self, name: str, rows, columns, delimiter="\t") -> Path:
        p = write_tsv(self.dir / name, rows, columns, delimiter)
        write_meta(p, self.cfg.to_dict(), self.inputs)
        return p

    def write_ledger(self, name: str, entries) -> Path:
        return self.write(name, (e.as_row() for e in entries), LEDGER_COLUMNS)


def _require_root(cfg: RunConfig) -> Path:
    if not cfg.bids_root:
        raise ConfigError("bids_root is not set (use --bids-root or the config key)")
    return Path(cfg.bids_root)


def _keys(rows) -> list[tuple[str, str]]:
    return [(r["subject"], r["session"]) for r in rows]


def _pmap(fn, items, jobs: int):
    if jobs <= 1 or len(items) < 2:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _load_records(st: Stage) -> list[bids.SessionRecord]:
    idx = st.read("s4_clinica", "dataset_index.tsv")
    issues = st.read("s4_clinica", "index_issues.tsv")
    return bids.records_from_rows(idx, issues)


# -- s4: index ----------------------------------------------------------------

def run_index(cfg: RunConfig) -> dict:
    root = _require_root(cfg)
    st = Stage(cfg, "s4_clinica")
    overrides = bids.load_site_table(cfg.site_table) if cfg.site_table else None
    if cfg.site_table:
        st.inputs.append(Path(cfg.site_table))
    records, issues = bids.index_dataset(root, overrides)
    st.write("dataset_index.tsv", bids.records_to_rows(records), bids.INDEX_COLUMNS)
    st.write("index_issues.tsv", bids.issues_to_rows(issues), bids.ISSUE_COLUMNS)
    if cfg.clinical_csv:
        st.inputs.append(Path(cfg.clinical_csv))
        visits = bids.load_clinical_csv(cfg.clinical_csv)
        joined = bids.join_clinical(records, visits, cfg.clinical_window_days)
        extra = sorted({k for r in joined for k in r.clinical} - {"match", "visit_code", "exam_date"})
        cols = ["subject", "session", "scan_date", "match", "visit_code", "exam_date"] + extra
        rows = [{"subject": r.subject, "session": r.session, "scan_date": r.scan_date or "",
                 **{k: r.clinical.get(k, "") for k in cols[3:]}} for r in joined]
        st.write("clinical_data.tsv", rows, cols)
    return {"sessions": len(records), "issues": len(issues)}


# -- s5: gate -----------------------------------------------------------------

def load_known_errors(path) -> frozenset:
    if not path:
        return frozenset()
    rows = bids.read_delimited(path)
    return frozenset((r["subject"].removeprefix("sub-"), r["session"].removeprefix("ses-"))
                     for r in rows)


GATE_PASS_COLUMNS = ["subject", "session", "site", "tr", "n_volumes", "duration", "scan_depth",
                     "percent_phase_fov", "coil", "manufacturer"]


def run_gate(cfg: RunConfig) -> dict:
    st = Stage(cfg, "s5_post_clinica_qc")
    records = _load_records(st)
    if cfg.known_errors:
        st.inputs.append(Path(cfg.known_errors))
    gcfg = cfg.gate_config(load_known_errors(cfg.known_errors))
    passing, entries, table, _ = heuristics.run_gate(records, gcfg)
    rows = [{"subject": r.subject, "session": r.session, "site": r.site, "tr": r.tr,
             "n_volumes": r.n_volumes, "duration": r.duration, "scan_depth": r.scan_depth,
             "percent_phase_fov": r.bold.meta.PercentPhaseFOV, "coil": r.bold.meta.CoilString,
             "manufacturer": r.bold.meta.Manufacturer} for r in passing]
    st.write("final_heuristics.tsv", rows, GATE_PASS_COLUMNS)
    st.write("heuristics_phase_table.tsv", table.to_rows(), heuristics.PHASE_COLUMNS)
    miss_rows, miss_cols = heuristics.missing_parameter_report(passing)
    st.write("missing_params.tsv", miss_rows, miss_cols)
    st.write_ledger("exclusions_gate.tsv", entries)
    return {"passed": len(passing), "dropped": len(entries)}


# -- s6: IQMs -----------------------------------------------------------------

def _find_one(directory: Path, pattern: str) -> Path | None:
    hits = sorted(directory.glob(pattern)) if directory.is_dir() else []
    return hits[0] if hits else None


def _load_t1_maps(cfg: RunConfig, key, img) -> iqm.TissueMaps | None:
    sub, ses = key
    probs = {}
    if cfg.iqm.tissue_maps_dir:
        d = Path(cfg.iqm.tissue_maps_dir) / f"sub-{sub}" / f"ses-{ses}" / "anat"
        for tissue in ("CSF", "GM", "WM"):
            p = _find_one(d, f"sub-{sub}_ses-{ses}*_label-{tissue}_probseg.nii*")
            if p is not None:
                probs[tissue.lower()] = nifti_io.load(p)
        mask = _find_one(d, f"sub-{sub}_ses-{ses}*_desc-brain_mask.nii*")
        brain = nifti_io.load(mask) > 0.5 if mask is not None else None
    else:
        brain = None
    try:
        return iqm.tissue_maps(img, probs.get("gm"), probs.get("wm"), probs.get("csf"), brain,
                               fallback=cfg.iqm.segmentation_fallback)
    except (MetricError, ValueError) as exc:
        logger.warning("%s/%s: no usable tissue maps (%s)", sub, ses, exc)
        return None


def _confounds_path(cfg: RunConfig, key) -> Path | None:
    sub, ses = key
    base = Path(cfg.motion.confounds_dir) if cfg.motion.confounds_dir else \
        Path(cfg.bids_root) / "derivatives" / "fmriprep"
    return _find_one(base / f"sub-{sub}" / f"ses-{ses}" / "func",
                     f"sub-{sub}_ses-{ses}*desc-confounds_timeseries.tsv")


def session_trace(cfg: RunConfig, key, bold_path: Path, tr: float, series=None):
    """Motion trace from the confounds table plus DVARS from the BOLD image."""
    conf = _confounds_path(cfg, key)
    if conf is None:
        raise MissingStageInput(f"no confounds table for {key[0]}/{key[1]}")
    params = motion.read_confounds(conf)
    if series is None:
        series = nifti_io.read_series(bold_path).voxels
    mask = iqm.brain_mask_fallback(series.mean(axis=-1))
    m = cfg.motion
    return motion.build_trace(key, params, tr, series, mask, m.fd_radius, m.fd_threshold,
                              m.fd_formulation), conf


def _iqm_worker(job):
    cfg, key, t1_path, bold_path, tr = job
    t1_row = iqm.IqmRow(key, "T1w")
    bold_row = iqm.IqmRow(key, "bold")
    inputs = [t1_path, bold_path]
    try:
        t1 = nifti_io.read_series(t1_path)
        maps = _load_t1_maps(cfg, key, t1.voxels)
        templates = None
        if cfg.iqm.template_maps:
            templates = {k: nifti_io.load(v) for k, v in cfg.iqm.template_maps.items()}
        t1_row = iqm.compute_t1_row(key, t1.voxels, t1.zooms[:3], maps, templates,
                                    cfg.iqm.max_fwhm)
    except (NiftiError, OSError) as exc:
        t1_row.errors["*"] = f"{type(exc).__name__}: {exc}"
    try:
        bold = nifti_io.read_series(bold_path)
        mean_vol = bold.voxels.mean(axis=-1)
        maps = iqm.tissue_maps(mean_vol, fallback=cfg.iqm.segmentation_fallback)
        mean_fd = mean_dvars = None
        try:
            trace, conf = session_trace(cfg, key, bold_path, tr, bold.voxels)
            inputs.append(conf)
            mean_fd = motion.frame_mean(trace.fd_power)
            mean_dvars = motion.frame_mean(trace.dvars)
        except (QCError, ValueError) as exc:
            logger.warning("%s/%s: motion summary unavailable (%s)", key[0], key[1], exc)
        bold_row = iqm.compute_bold_row(key, bold.voxels, bold.zooms[:3], maps, mean_fd,
                                        mean_dvars, cfg.iqm.aor_k, cfg.iqm.max_fwhm)
    except (NiftiError, MetricError, OSError, ValueError) as exc:
        bold_row.errors["*"] = f"{type(exc).__name__}: {exc}"
    return t1_row, bold_row, [str(p) for p in inputs]


def _iqm_rows(rows_by_mod, metrics, modality):
    out = []
    for r in rows_by_mod:
        missing = [m for m in metrics if m not in r.metrics]
        errs = [f"{m}={r.errors[m]}" for m in sorted(r.errors)]
        out.append({"subject": r.key[0], "session": r.key[1],
                    **{m: r.metrics.get(m) for m in metrics},
                    "missing": missing, "errors": errs})
    return out


def required_metrics(cfg: RunConfig, modality: str) -> tuple[str, ...]:
    if modality == "T1w":
        names = iqm.T1_METRICS
        if not cfg.iqm.template_maps:
            names = tuple(m for m in names if not m.startswith("TPM_"))
        return names
    return iqm.BOLD_METRICS


def run_iqm(cfg: RunConfig) -> dict:
    root = _require_root(cfg)
    st = Stage(cfg, "s6_mriqc")
    records = {r.key: r for r in _load_records(st)}
    keys = _keys(st.read("s5_post_clinica_qc", "final_heuristics.tsv"))
    if not cfg.iqm.template_maps:
        logger.warning("no template maps configured; TPM overlaps are not computed")
    jobs = []
    for key in keys:
        rec = records[key]
        jobs.append((cfg, key, root / rec.files["T1w"].path, root / rec.bold.path, rec.tr))
    results = _pmap(_iqm_worker, jobs, cfg.jobs)
    for _, _, inputs in results:
        st.inputs.extend(Path(p) for p in inputs)
    t1_rows = [r[0] for r in results]
    bold_rows = [r[1] for r in results]
    extra = ["missing", "errors"]
    st.write("iqm_t1.tsv", _iqm_rows(t1_rows, iqm.T1_METRICS, "T1w"),
             ["subject", "session", *iqm.T1_METRICS, *extra])
    st.write("iqm_bold.tsv", _iqm_rows(bold_rows, iqm.BOLD_METRICS, "bold"),
             ["subject", "session", *iqm.BOLD_METRICS, *extra])
    merged, entries, complete = [], [], []
    req_t1, req_bold = required_metrics(cfg, "T1w"), required_metrics(cfg, "bold")
    for t1r, br in zip(t1_rows, bold_rows):
        row = {"subject": t1r.key[0], "session": t1r.key[1]}
        row.update({f"T1_{m}": t1r.metrics.get(m) for m in iqm.T1_METRICS})
        row.update({f"BOLD_{m}": br.metrics.get(m) for m in iqm.BOLD_METRICS})
        merged.append(row)
        missing = ([f"T1_{m}" for m in req_t1 if m not in t1r.metrics]
                   + [f"BOLD_{m}" for m in req_bold if m not in br.metrics])
        if missing:
            detail = "; ".join(
                [f"{m}" for m in missing]
                + [f"T1_{k}: {v}" for k, v in sorted(t1r.errors.items())]
                + [f"BOLD_{k}: {v}" for k, v in sorted(br.errors.items())])
            entries.append(LedgerEntry(t1r.key[0], t1r.key[1], "mriqc", IQM_MISSING, detail))
        else:
            complete.append({"subject": t1r.key[0], "session": t1r.key[1]})
    cols = (["subject", "session"] + [f"T1_{m}" for m in iqm.T1_METRICS]
            + [f"BOLD_{m}" for m in iqm.BOLD_METRICS])
    st.write("All_IQMs.tsv", merged, cols)
    st.write_ledger("exclusions_mriqc.tsv", entries)
    st.write("sessions_iqm_complete.tsv", complete, ["subject", "session"])
    return {"sessions": len(keys), "incomplete": len(entries)}


# -- s6: outliers ---------------------------------------------------------------

def run_outliers(cfg: RunConfig) -> dict:
    st = Stage(cfg, "s6_mriqc")
    merged = st.read("s6_mriqc", "All_IQMs.tsv")
    keep = set(_keys(st.read("s6_mriqc", "sessions_iqm_complete.tsv")))
    rows = [r for r in merged if (r["subject"], r["session"]) in keep]
    keys = _keys(rows)
    oc = cfg.outliers
    flags_by_mod: dict[str, list] = {"T1w": [], "bold": []}
    thresholds, per_key = [], {k: {} for k in keys}
    for modality, prefix in (("T1w", "T1"), ("bold", "BOLD")):
        for metric in required_metrics(cfg, modality):
            col = f"{prefix}_{metric}"
            direction = iqm.DIRECTIONS[modality][metric]
            values = [(k, parse_float(r[col])) for k, r in zip(keys, rows)]
            fit, flags = outliers.screen_metric(values, metric, direction, oc.min_n, oc.z_cut)
            flags_by_mod[modality].extend(flags)
            for f in flags:
                per_key[f.key][col] = f
            thresholds.append({
                "modality": modality, "metric": metric, "direction": direction,
                "n": fit.n if fit else len(values),
                "lambda": fit.lmbda if fit else None,
                "location": fit.robust_location if fit else None,
                "scale": fit.robust_scale if fit else None,
                "threshold_original_scale": fit.threshold(direction, oc.z_cut) if fit else None,
                "screened": fit is not None,
            })
    verdicts = outliers.propagate_and_summarize(flags_by_mod, keys)
    cols = ["subject", "session"]
    metric_cols = [f"{p}_{m}" for mod, p in (("T1w", "T1"), ("bold", "BOLD"))
                   for m in required_metrics(cfg, mod)]
    for c in metric_cols:
        cols += [c, f"{c}_z", f"{c}_flag"]
    cols += ["include", "reasons"]
    out, entries, passed = [], [], []
    for k, r in zip(keys, rows):
        v = verdicts[k]
        row = {"subject": k[0], "session": k[1], "include": v.outcome == "PASS",
               "reasons": list(v.reasons)}
        for c in metric_cols:
            f = per_key[k].get(c)
            row[c] = parse_float(r[c])
            row[f"{c}_z"] = f.z if f else None
            row[f"{c}_flag"] = f.flagged if f else False
        out.append(row)
        for code in v.reasons:
            entries.append(LedgerEntry(k[0], k[1], "post_mriqc_qc", code))
        if v.outcome == "PASS":
            passed.append({"subject": k[0], "session": k[1]})
    st.write("All_IQMs_with_QC_flags_clean.tsv", out, cols)
    st.write("iqm_thresholds.tsv", thresholds,
             ["modality", "metric", "direction", "n", "lambda", "location", "scale",
              "threshold_original_scale", "screened"])
    st.write_ledger("exclusions_post_mriqc_qc.tsv", entries)
    st.write("sessions_passed.tsv", passed, ["subject", "session"])
    return {"sessions": len(keys), "failed": len(keys) - len(passed)}


# -- s7: logs -----------------------------------------------------------------

def _log_root(cfg: RunConfig) -> Path:
    if cfg.logs.root:
        return Path(cfg.logs.root)
    return _require_root(cfg) / "derivatives" / "logs"


def run_classify_logs(cfg: RunConfig) -> dict:
    st = Stage(cfg, "s7_fmriprep")
    keys = _keys(st.read("s6_mriqc", "sessions_passed.tsv"))
    root = _log_root(cfg)
    table = logs.PatternTable.load(cfg.logs.patterns)
    files = logs.find_logs(root, cfg.logs.globs)
    st.inputs.extend(files)
    if cfg.logs.patterns:
        st.inputs.append(Path(cfg.logs.patterns))
    parsed = logs.scan_logs(files, table)
    relevant = [l for l in parsed if any(l.subject == k[0] for k in keys)]
    status = logs.session_status(relevant, keys)
    st.write(cfg.logs.report_name, logs.error_report_rows(relevant, root), logs.REPORT_COLUMNS,
             delimiter="," if cfg.logs.report_name.endswith(".csv") else "\t")
    st.write("rerun_plan.tsv", logs.plan_from_logs(relevant, keys), logs.PLAN_COLUMNS)
    entries, passed, stamps = [], [], []
    for k in keys:
        s = status[k]
        for cat in s.categories:
            entries.append(LedgerEntry(k[0], k[1], "fmriprep", f"FMRIPREP_{cat}",
                                       f"attempt {s.attempts}"))
        if s.outcome == "PASS":
            passed.append({"subject": k[0], "session": k[1]})
        for stamp in s.stamps:
            stamps.append({"subject": k[0], "session": k[1], "stamp": stamp})
    st.write_ledger("exclusions_fmriprep.tsv", entries)
    st.write("session_stamps.tsv", stamps, ["subject", "session", "stamp"])
    st.write("sessions_passed.tsv", passed, ["subject", "session"])
    return {"sessions": len(keys), "failed": len(keys) - len(passed), "logs": len(files)}


# -- s8: motion and euler ------------------------------------------------------

MOTION_SUMMARY_COLUMNS = ["subject", "session", "meanFD", "pct_censored", "good_time",
                          "mean_dvars", "n_volumes", "n_censored", "verdict", "reasons"]
MOTION_TS_COLUMNS = ["subject", "session", "t", "fd_power", "fd_jenkinson", "dvars",
                     "std_dvars", "censored", "motion_outlier"]


def _motion_worker(job):
    cfg, key, bold_path, tr = job
    trace, conf = session_trace(cfg, key, bold_path, tr)
    return trace, str(conf)


def run_motion(cfg: RunConfig) -> dict:
    root = _require_root(cfg)
    st = Stage(cfg, "s8_final_qc")
    records = {r.key: r for r in _load_records(st)}
    keys = _keys(st.read("s7_fmriprep", "sessions_passed.tsv"))
    jobs = [(cfg, k, root / records[k].bold.path, records[k].tr) for k in keys]
    results = _pmap(_motion_worker, jobs, cfg.jobs)
    m = cfg.motion
    summary, series, entries = [], [], []
    for trace, conf in results:
        st.inputs.append(Path(conf))
        s, verdict, reasons = motion.apply_motion_rules(trace, m.fd_threshold,
                                                        m.max_pct_censored, m.min_good_time)
        k = trace.key
        summary.append({"subject": k[0], "session": k[1], "meanFD": s.meanFD,
                        "pct_censored": s.pct_censored, "good_time": s.good_time,
                        "mean_dvars": s.mean_dvars, "n_volumes": s.n_volumes,
                        "n_censored": s.n_censored, "verdict": verdict, "reasons": list(reasons)})
        for code in reasons:
            entries.append(LedgerEntry(k[0], k[1], "final_qc", code,
                                       f"pct={s.pct_censored:.2f} good_time={s.good_time:g}"))
        censor = trace.censor
        dv_out = trace.dvars_outliers(m.dvars_threshold)
        std = trace.std_dvars if trace.std_dvars is not None else [math.nan] * trace.n_volumes
        for t in range(trace.n_volumes):
            series.append({"subject": k[0], "session": k[1], "t": t,
                           "fd_power": float(trace.fd_power[t]),
                           "fd_jenkinson": float(trace.fd_jenkinson[t]),
                           "dvars": float(trace.dvars[t]), "std_dvars": float(std[t]),
                           "censored": bool(censor[t]),
                           "motion_outlier": bool(censor[t] or dv_out[t])})
    st.write("motion_summary.tsv", summary, MOTION_SUMMARY_COLUMNS)
    st.write("motion_timeseries.tsv", series, MOTION_TS_COLUMNS)
    st.write_ledger("exclusions_final_qc_motion.tsv", entries)
    return {"sessions": len(keys), "failed": len({e.key for e in entries})}


EULER_COLUMNS = ["subject", "session", "site", "lh_euler", "rh_euler", "avg_euler", "z",
                 "threshold", "screened", "flagged", "evaluated"]


def run_euler(cfg: RunConfig) -> dict:
    st = Stage(cfg, "s8_final_qc")
    keys = set(_keys(st.read("s7_fmriprep", "sessions_passed.tsv")))
    table = Path(cfg.euler.table) if cfg.euler.table else \
        _require_root(cfg) / "derivatives" / "freesurfer" / "euler_summary.tsv"
    overrides = bids.load_site_table(cfg.site_table) if cfg.site_table else None
    records = final_qc.euler_from_rows(read_tsv(table), overrides)
    st.inputs.append(table)
    flags, fits = final_qc.euler_screen(records, cfg.euler.min_site_n, cfg.outliers.z_cut)
    by_key = {f.key: f for f in flags}
    rows, entries = [], []
    for r in sorted(records, key=lambda r: r.key):
        f = by_key.get(r.key)
        fit = fits.get(r.site)
        rows.append({"subject": r.key[0], "session": r.key[1], "site": r.site,
                     "lh_euler": r.lh_euler, "rh_euler": r.rh_euler, "avg_euler": r.avg_euler,
                     "z": f.z if f else None,
                     "threshold": f.threshold_original_scale if f else None,
                     "screened": fit is not None, "flagged": bool(f and f.flagged),
                     "evaluated": r.key in keys})
        if f and f.flagged and r.key in keys:
            entries.append(LedgerEntry(r.key[0], r.key[1], "final_qc", "EULER_OUTLIER",
                                       f"avg_euler={r.avg_euler:g} threshold={f.threshold_original_scale:.4g}"))
    missing = sorted(keys - {r.key for r in records})
    for k in missing:
        logger.warning("%s/%s: no Euler record; not screened", *k)
    st.write("euler_summary.tsv", rows, EULER_COLUMNS)
    st.write_ledger("exclusions_final_qc_euler.tsv", entries)
    return {"records": len(records), "flagged": len(entries)}


# -- s8: finalize ----------------------------------------------------------------

def run_finalize(cfg: RunConfig) -> dict:
    st = Stage(cfg, "s8_final_qc")
    records = _load_records(st)
    sessions = {r.key: r.site for r in records}
    entries = []
    for folder, name in LEDGERS:
        p = st.path(folder, name)
        if not p.exists():
            raise MissingStageInput(f"required input {p} does not exist; run the producing stage first")
        entries.extend(ExclusionLedger.read(p))
        st.inputs.append(p)
    stamps: dict[tuple[str, str], list[str]] = {}
    for row in st.read("s7_fmriprep", "session_stamps.tsv"):
        stamps.setdefault((row["subject"], row["session"]), []).append(row["stamp"])
    result = final_qc.finalize(sessions, entries, stamps)
    st.write("included_sessions.tsv", result.included, final_qc.INCLUDED_COLUMNS)
    st.write("excluded_sessions.tsv", result.excluded, final_qc.EXCLUDED_COLUMNS)
    st.write("stage_counts.tsv", [r.as_row() for r in result.stage_counts],
             final_qc.STAGE_COLUMNS)
    problems = final_qc.validate_stage_counts(result.stage_counts)
    if problems:
        raise QCError("stage counts inconsistent: " + "; ".join(problems))
    return {"included": len(result.included), "excluded": len(result.excluded)}


STAGE_RUNNERS = {
    "index": run_index,
    "gate": run_gate,
    "iqm": run_iqm,
    "outliers": run_outliers,
    "classify-logs": run_classify_logs,
    "motion": run_motion,
    "euler": run_euler,
    "finalize": run_finalize,
}
CHAIN = ("index", "gate", "iqm", "outliers", "classify-logs", "motion", "euler", "finalize")


def run_all(cfg: RunConfig, start: str | None = None) -> dict:
    """Run the chain, optionally resuming at ``start``."""
    names = CHAIN[CHAIN.index(start):] if start else CHAIN
    summary = {}
    for name in names:
        logger.info("stage %s", name)
        summary[name] = STAGE_RUNNERS[name](cfg)
    return summary

