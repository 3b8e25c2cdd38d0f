"""End-stage QC: per-site Euler screening, verdict fusion and stage counts."""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .bids import site_from_subject
from .errors import InconsistentLedger
from .iqm import HIGHER
from .outliers import Z_CUT, screen_metric
from .reasons import STAGE_INDEX, STAGES
from .tables import LedgerEntry, parse_float

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EulerRecord:
    key: tuple[str, str]
    lh_euler: int
    rh_euler: int
    avg_euler: float
    site: str


def euler_from_rows(rows: Iterable[Mapping[str, str]], overrides=None) -> list[EulerRecord]:
    """Parse an Euler summary table (subject, session, lh_euler, rh_euler[, avg_euler, site])."""
    out = []
    for row in rows:
        sub = row["subject"].removeprefix("sub-")
        ses = row["session"].removeprefix("ses-")
        lh, rh = int(float(row["lh_euler"])), int(float(row["rh_euler"]))
        avg = (lh + rh) / 2.0
        given = parse_float(row.get("avg_euler"))
        if math.isfinite(given) and abs(given - avg) > 1e-9:
            logger.warning("%s/%s: avg_euler %.3f differs from (lh + rh) / 2 = %.3f; using the latter",
                           sub, ses, given, avg)
        if lh % 2 or rh % 2:
            logger.warning("%s/%s: odd Euler number (lh=%d, rh=%d)", sub, ses, lh, rh)
        site = row.get("site") or site_from_subject(sub, overrides)
        out.append(EulerRecord((sub, ses), lh, rh, avg, site))
    return out


def euler_screen(records: Sequence[EulerRecord], min_n: int = 10, cut: float = Z_CUT):
    """Per-site robust screen of avg_euler, low tail only.

    Sites with fewer than ``min_n`` records, or a degenerate spread, are left
    unscreened with a warning. Returns ``(flags, fits)`` where ``fits`` maps a
    site to its TransformFit (or None).
    """
    by_site: dict[str, list[EulerRecord]] = defaultdict(list)
    for r in records:
        by_site[r.site].append(r)
    flags, fits = [], {}
    for site in sorted(by_site):
        group = by_site[site]
        if len(group) < min_n:
            logger.warning("site %s has %d Euler records (< %d); left unscreened",
                           site, len(group), min_n)
            fits[site] = None
            continue
        fit, site_flags = screen_metric([(r.key, r.avg_euler) for r in group],
                                        f"euler_site-{site}", HIGHER, min_n=min_n, cut=cut)
        fits[site] = fit
        flags.extend(site_flags)
    return flags, fits


# -- fusion -------------------------------------------------------------------

def _stage_rank(entry: LedgerEntry) -> int:
    return STAGE_INDEX[entry.stage]


@dataclass
class FinalResult:
    included: list[dict]
    excluded: list[dict]
    stage_counts: list["StageCount"]


INCLUDED_COLUMNS = ["subject", "session", "site", "stamps"]
EXCLUDED_COLUMNS = ["subject", "session", "site", "stage", "reasons", "details"]


def finalize(sessions: Mapping[tuple[str, str], str], entries: Iterable[LedgerEntry],
             stamps: Mapping[tuple[str, str], Sequence[str]] | None = None) -> FinalResult:
    """Fuse every stage's ledger entries into included/excluded lists.

    Parameters
    ----------
    sessions : mapping
        Every indexed session key to its site.
    entries : iterable of LedgerEntry
        Exclusion decisions from all stages.
    stamps : mapping, optional
        Non-exclusion annotations carried on included sessions.
    """
    stamps = stamps or {}
    by_key: dict[tuple[str, str], list[LedgerEntry]] = defaultdict(list)
    for e in entries:
        if e.key not in sessions:
            raise InconsistentLedger(f"ledger entry for unindexed session {e.key}")
        by_key[e.key].append(e)
    included, excluded = [], []
    earliest: dict[tuple[str, str], str] = {}
    for key in sorted(sessions):
        es = sorted(by_key.get(key, ()), key=_stage_rank)
        if es:
            earliest[key] = es[0].stage
            reasons = []
            for e in es:
                if e.reason not in reasons:
                    reasons.append(e.reason)
            excluded.append({"subject": key[0], "session": key[1], "site": sessions[key],
                             "stage": es[0].stage, "reasons": reasons,
                             "details": [e.detail for e in es if e.detail]})
        else:
            included.append({"subject": key[0], "session": key[1], "site": sessions[key],
                             "stamps": list(stamps.get(key, ()))})
    inc = {(r["subject"], r["session"]) for r in included}
    exc = {(r["subject"], r["session"]) for r in excluded}
    if inc & exc or (inc | exc) != set(sessions):
        raise InconsistentLedger("included and excluded sets do not partition the sessions")
    return FinalResult(included, excluded, stage_counts(sessions, earliest))


# -- stage counts -------------------------------------------------------------

@dataclass(frozen=True)
class StageCount:
    stage: str
    folder: str
    description: str
    dropped_subjects: int | None
    dropped_sessions: int | None
    remaining_subjects: int
    remaining_sessions: int

    def as_row(self) -> dict[str, object]:
        dropped = ("-" if self.dropped_sessions is None
                   else f"{self.dropped_subjects}/{self.dropped_sessions}")
        return {"stage": self.stage, "folder": self.folder + "/", "description": self.description,
                "dropped_subjects": "-" if self.dropped_subjects is None else self.dropped_subjects,
                "dropped_sessions": "-" if self.dropped_sessions is None else self.dropped_sessions,
                "remaining_subjects": self.remaining_subjects,
                "remaining_sessions": self.remaining_sessions,
                "dropped": dropped,
                "remaining": f"{self.remaining_subjects}/{self.remaining_sessions}"}


STAGE_COLUMNS = ["stage", "folder", "description", "dropped_subjects", "dropped_sessions",
                 "remaining_subjects", "remaining_sessions", "dropped", "remaining"]


def stage_counts(sessions: Iterable[tuple[str, str]],
                 earliest_failure: Mapping[tuple[str, str], str]) -> list[StageCount]:
    """Earliest-failure accounting in stage order; the first stage is the initial count."""
    remaining = set(sessions)
    subjects = {k[0] for k in remaining}
    first = STAGES[0]
    rows = [StageCount(first.name, first.folder, first.description, None, None,
                       len(subjects), len(remaining))]
    for stage in STAGES:
        dropped = {k for k in remaining if earliest_failure.get(k) == stage.id}
        if stage is first:
            if dropped:
                raise InconsistentLedger("sessions dropped before the initial count")
            continue
        remaining -= dropped
        left = {k[0] for k in remaining}
        rows.append(StageCount(stage.name, stage.folder, stage.description,
                               len(subjects) - len(left), len(dropped), len(left),
                               len(remaining)))
        subjects = left
    return rows


def render_stage_counts(initial: tuple[int, int],
                        published: Sequence[tuple[int, int, int, int]]) -> list[StageCount]:
    """Build stage rows from externally reported figures.

    ``initial`` is ``(subjects, sessions)``; each entry of ``published`` is
    ``(dropped_subjects, dropped_sessions, remaining_subjects, remaining_sessions)``
    for the stages after the first, in stage order. Values are taken verbatim so
    that :func:`validate_stage_counts` can audit them.
    """
    if len(published) != len(STAGES) - 1:
        raise ValueError(f"expected {len(STAGES) - 1} stage rows, got {len(published)}")
    first = STAGES[0]
    rows = [StageCount(first.name, first.folder, first.description, None, None, *initial)]
    for stage, (dsub, dses, rsub, rses) in zip(STAGES[1:], published):
        rows.append(StageCount(stage.name, stage.folder, stage.description, dsub, dses, rsub, rses))
    return rows


def validate_stage_counts(rows: Sequence[StageCount]) -> list[str]:
    """List every arithmetic or monotonicity inconsistency in a stage table."""
    problems = []
    for prev, row in zip(rows, rows[1:]):
        for unit, p, d, r in (
            ("subjects", prev.remaining_subjects, row.dropped_subjects, row.remaining_subjects),
            ("sessions", prev.remaining_sessions, row.dropped_sessions, row.remaining_sessions),
        ):
            if d is not None and p - d != r:
                problems.append(f"{row.stage}: {unit} {p} - {d} = {p - d}, table says {r}")
            if r > p:
                problems.append(f"{row.stage}: remaining {unit} increased from {p} to {r}")
        if row.remaining_subjects > row.remaining_sessions:
            problems.append(f"{row.stage}: more subjects than sessions remain")
    return problems
