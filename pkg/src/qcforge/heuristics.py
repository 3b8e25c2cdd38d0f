"""Scanner-parameter gate: phase 0/1/2 session exclusion rules."""
from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .bids import PHASE0_ISSUES, SessionRecord
from .errors import MissingCoreParam
from .tables import LedgerEntry

logger = logging.getLogger(__name__)

PASS, FAIL = "PASS", "FAIL"


@dataclass(frozen=True)
class GateConfig:
    scan_depth_min: float = 155.0
    scan_depth_max: float = 180.0
    tr_ranges: tuple[tuple[float, float], ...] = ((0.5, 1.0), (2.9, 3.1))
    min_duration: float = 300.0
    min_phase_fov: float = 72.0
    phase_fov_boundary: str = "exclusive"  # exclusive: fail < min; inclusive: fail <= min
    banned_coils: tuple[str, ...] = ("Q-BODY", "BODY")
    known_errors: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.phase_fov_boundary not in ("exclusive", "inclusive"):
            raise ValueError(f"phase_fov_boundary must be exclusive|inclusive, "
                             f"got {self.phase_fov_boundary!r}")


@dataclass(frozen=True)
class HeuristicRule:
    id: str
    phase: int
    parameter: str
    criteria: Callable[[GateConfig], str]
    check: Callable[[SessionRecord, GateConfig], tuple[bool, str]]


@dataclass(frozen=True)
class GateDecision:
    key: tuple[str, str]
    outcome: str
    failed_rule: str | None = None
    observed_value: str = ""


def _num(x: float) -> str:
    return f"{x:g}"


def _require_bold(rec: SessionRecord):
    if rec.bold is None:
        raise MissingCoreParam(f"{rec.subject}/{rec.session}: no usable BOLD header")
    return rec.bold


def _require_tr(rec: SessionRecord) -> float:
    _require_bold(rec)
    if rec.tr is None:
        raise MissingCoreParam(f"{rec.subject}/{rec.session}: no RepetitionTime")
    return rec.tr


def _check_known(rec, cfg):
    hit = (rec.subject, rec.session) in cfg.known_errors
    return hit, "listed in known conversion errors" if hit else ""


def _check_files(rec, cfg):
    bad = sorted({i.kind for i in rec.issues if i.kind in PHASE0_ISSUES})
    if bad:
        return True, ",".join(bad)
    try:
        _require_tr(rec)
    except MissingCoreParam as exc:
        return True, f"MissingCoreParam: {exc}"
    return False, ""


def _check_t1w(rec, cfg):
    hit = any(i.kind == "MissingT1w" for i in rec.issues) or "T1w" not in rec.files
    return hit, "no T1w" if hit else ""


def _check_depth(rec, cfg):
    _require_bold(rec)
    depth = rec.scan_depth
    return not (cfg.scan_depth_min <= depth <= cfg.scan_depth_max), _num(depth)


def _check_tr(rec, cfg):
    tr = _require_tr(rec)
    ok = any(lo <= tr <= hi for lo, hi in cfg.tr_ranges)
    return not ok, _num(tr)


def _check_duration(rec, cfg):
    _require_tr(rec)
    duration = rec.duration
    return duration < cfg.min_duration, _num(duration)


def _check_fov(rec, cfg):
    fov = _require_bold(rec).meta.PercentPhaseFOV
    if fov is None:
        return False, "missing"
    if cfg.phase_fov_boundary == "inclusive":
        return fov <= cfg.min_phase_fov, _num(fov)
    return fov < cfg.min_phase_fov, _num(fov)


def _normalise_coil(value: str) -> str:
    return value.strip().upper()


def _check_coil(rec, cfg):
    coil = _require_bold(rec).meta.CoilString
    if coil is None:
        return False, "missing"
    banned = {_normalise_coil(c) for c in cfg.banned_coils}
    return _normalise_coil(coil) in banned, coil


def _fov_text(cfg):
    op = "<=" if cfg.phase_fov_boundary == "inclusive" else "<"
    return f"PercentPhaseFOV {op} {_num(cfg.min_phase_fov)}"


RULES: tuple[HeuristicRule, ...] = (
    HeuristicRule("CLINICA_KNOWN_ERROR", 0, "BIDS",
                  lambda c: "Sessions flagged due to known errors in BIDS conversion.",
                  _check_known),
    HeuristicRule("MISSING_FILES", 0, "Missing Data",
                  lambda c: "Sessions where required NIfTI or JSON files are missing.",
                  _check_files),
    HeuristicRule("MISSING_T1W", 0, "T1w Image Missing",
                  lambda c: "Session does not have a T1-weighted image.",
                  _check_t1w),
    HeuristicRule("SCAN_DEPTH", 1, "ScanDepth (dim3*pixdim3)",
                  lambda c: f"ScanDepth outside [{_num(c.scan_depth_min)}, {_num(c.scan_depth_max)}] mm",
                  _check_depth),
    HeuristicRule("TR_RANGE", 1, "RepetitionTime (TR)",
                  lambda c: "TR outside " + " or ".join(
                      f"[{_num(lo)}, {_num(hi)}]" for lo, hi in c.tr_ranges) + " s",
                  _check_tr),
    HeuristicRule("DURATION", 1, "Scan Duration",
                  lambda c: f"TR x volumes < {_num(c.min_duration)} s",
                  _check_duration),
    HeuristicRule("PHASE_FOV", 2, "PercentPhaseFOV", _fov_text, _check_fov),
    HeuristicRule("COIL", 2, "CoilString",
                  lambda c: "CoilString in {" + ", ".join(c.banned_coils) + "}",
                  _check_coil),
)
RULES_BY_ID = {r.id: r for r in RULES}


def evaluate_session(record: SessionRecord, config: GateConfig,
                     rules: Sequence[HeuristicRule] = RULES) -> GateDecision:
    """First failing rule wins; missing core parameters count as MISSING_FILES."""
    for rule in rules:
        try:
            failed, observed = rule.check(record, config)
        except MissingCoreParam as exc:
            return GateDecision(record.key, FAIL, "MISSING_FILES", f"MissingCoreParam: {exc}")
        if failed:
            return GateDecision(record.key, FAIL, rule.id, observed)
    return GateDecision(record.key, PASS)


@dataclass(frozen=True)
class PhaseRow:
    phase: int
    rule: str
    parameter: str
    criteria: str
    rows_dropped: int
    remaining_rows: int


@dataclass
class PhaseTable:
    initial_rows: int
    initial_subjects: int
    rows: list[PhaseRow]
    final_subjects: int

    @property
    def total_dropped(self) -> int:
        return sum(r.rows_dropped for r in self.rows)

    @property
    def final_rows(self) -> int:
        return self.rows[-1].remaining_rows if self.rows else self.initial_rows

    def consistent(self) -> bool:
        remaining = self.initial_rows
        for r in self.rows:
            remaining -= r.rows_dropped
            if r.remaining_rows != remaining:
                return False
        return self.total_dropped + self.final_rows == self.initial_rows

    def to_rows(self) -> list[dict[str, object]]:
        out = [{"phase": "", "rule": "INITIAL", "parameter": "", "criteria": "Initial session count",
                "rows_dropped": "", "remaining_rows": self.initial_rows}]
        for r in self.rows:
            out.append({"phase": f"Phase {r.phase}", "rule": r.rule, "parameter": r.parameter,
                        "criteria": r.criteria, "rows_dropped": r.rows_dropped,
                        "remaining_rows": r.remaining_rows})
        out.append({"phase": "TOTAL", "rule": "", "parameter": "", "criteria": "",
                    "rows_dropped": self.total_dropped, "remaining_rows": self.final_rows})
        return out


PHASE_COLUMNS = ["phase", "rule", "parameter", "criteria", "rows_dropped", "remaining_rows"]


def build_phase_table(initial_rows: int, drops: Sequence[tuple[HeuristicRule | str, int]],
                      config: GateConfig | None = None, initial_subjects: int = 0,
                      final_subjects: int = 0) -> PhaseTable:
    """Assemble a phase table from per-rule drop counts (also used for published counts)."""
    config = config or GateConfig()
    rows, remaining = [], initial_rows
    for rule, dropped in drops:
        if isinstance(rule, str):
            rule = RULES_BY_ID[rule]
        remaining -= dropped
        rows.append(PhaseRow(rule.phase, rule.id, rule.parameter, rule.criteria(config),
                             dropped, remaining))
    return PhaseTable(initial_rows, initial_subjects, rows, final_subjects)


def run_gate(records: Sequence[SessionRecord], config: GateConfig,
             rules: Sequence[HeuristicRule] = RULES):
    """Evaluate every record; return ``(passing, ledger_entries, phase_table, decisions)``."""
    rules = sorted(rules, key=lambda r: r.phase) if rules is RULES else list(rules)
    decisions = [evaluate_session(rec, config, rules) for rec in records]
    dropped = Counter(d.failed_rule for d in decisions if d.outcome == FAIL)
    passing = [rec for rec, d in zip(records, decisions) if d.outcome == PASS]
    ledger = [
        LedgerEntry(d.key[0], d.key[1],
                    "clinica" if RULES_BY_ID[d.failed_rule].phase == 0 else "post_clinica_qc",
                    d.failed_rule, d.observed_value)
        for d in decisions if d.outcome == FAIL
    ]
    table = build_phase_table(
        len(records), [(r, dropped.get(r.id, 0)) for r in rules], config,
        initial_subjects=len({r.subject for r in records}),
        final_subjects=len({r.subject for r in passing}),
    )
    return passing, ledger, table, decisions


# parameters tallied in the missing-parameter report, in report order
REPORTED_PARAMETERS = (
    "RepetitionTime", "MagneticFieldStrength", "ManufacturersModelName", "InstitutionName",
    "MRAcquisitionType", "SliceThickness", "SpacingBetweenSlices", "EchoTime", "FlipAngle",
    "PercentPhaseFOV", "PercentSampling", "EchoTrainLength", "AcquisitionMatrixPE",
    "PhaseEncodingDirection", "CoilString", "MRAcquisitionFrequencyEncodingSteps",
    "PhaseEncodingAxis", "ScanDepth",
)


def missing_parameter_report(records: Sequence[SessionRecord]) -> tuple[list[dict], list[str]]:
    """Count BOLD sessions lacking each parameter, per manufacturer."""
    counts: dict[str, Counter] = defaultdict(Counter)
    manufacturers: set[str] = set()
    for rec in records:
        bold = rec.bold
        maker = (bold.meta.Manufacturer if bold and bold.meta.Manufacturer else "Unknown")
        manufacturers.add(maker)
        for param in REPORTED_PARAMETERS:
            if bold is None:
                missing = True
            elif param == "ScanDepth":
                missing = False
            else:
                missing = bold.meta.get(param) is None
            counts[param][maker] += int(missing)
    makers = sorted(manufacturers)
    rows = [{"parameter": p, **{m: counts[p][m] for m in makers}} for p in REPORTED_PARAMETERS]
    return rows, ["parameter"] + makers
