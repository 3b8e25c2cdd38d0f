import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcforge import final_qc
from qcforge.errors import InconsistentLedger
from qcforge.reasons import STAGES
from qcforge.tables import LedgerEntry
from test_acceptance import PUBLISHED_STAGE_COUNTS

DROP_STAGES = [s.id for s in STAGES[1:]]


@st.composite
def ledgers(draw):
    n_sub = draw(st.integers(1, 12))
    sessions = {(f"S{i:02d}", ses): "002" for i in range(n_sub)
                for ses in draw(st.lists(st.sampled_from(["M000", "M024", "M048"]),
                                         min_size=1, max_size=3, unique=True))}
    keys = sorted(sessions)
    entries = draw(st.lists(st.tuples(st.sampled_from(keys), st.sampled_from(DROP_STAGES),
                                      st.sampled_from(["A", "B", "C"])), max_size=25))
    return sessions, [LedgerEntry(k[0], k[1], s, r) for k, s, r in entries]


@settings(max_examples=80, deadline=None)
@given(ledgers())
def test_partition_and_monotone_counts(data):
    sessions, entries = data
    res = final_qc.finalize(sessions, entries)
    inc = {(r["subject"], r["session"]) for r in res.included}
    exc = {(r["subject"], r["session"]) for r in res.excluded}
    assert inc | exc == set(sessions) and not inc & exc
    assert exc == {e.key for e in entries}
    rows = res.stage_counts
    assert final_qc.validate_stage_counts(rows) == []
    assert rows[0].remaining_sessions == len(sessions)
    assert rows[-1].remaining_sessions == len(inc)
    assert sum(r.dropped_sessions for r in rows[1:]) == len(exc)
    for a, b in zip(rows, rows[1:]):
        assert b.remaining_sessions <= a.remaining_sessions
        assert b.remaining_subjects <= a.remaining_subjects
    # earliest stage wins regardless of entry order
    for r in res.excluded:
        stages = [e.stage for e in entries if e.key == (r["subject"], r["session"])]
        assert r["stage"] == min(stages, key=DROP_STAGES.index)


def test_reasons_deduplicated_in_stage_order():
    sessions = {("A", "1"): "x"}
    entries = [LedgerEntry("A", "1", "final_qc", "EULER_OUTLIER"),
               LedgerEntry("A", "1", "mriqc", "IQM_MISSING", "SNR"),
               LedgerEntry("A", "1", "final_qc", "EULER_OUTLIER")]
    res = final_qc.finalize(sessions, entries)
    assert res.excluded[0]["stage"] == "mriqc"
    assert res.excluded[0]["reasons"] == ["IQM_MISSING", "EULER_OUTLIER"]


def test_unknown_session_rejected():
    with pytest.raises(InconsistentLedger):
        final_qc.finalize({("A", "1"): "x"}, [LedgerEntry("B", "1", "mriqc", "X")])


def test_validator_finds_the_published_slips():
    rows = final_qc.render_stage_counts((1153, 2893), PUBLISHED_STAGE_COUNTS)
    problems = final_qc.validate_stage_counts(rows)
    assert len(problems) == 2
    assert "2621 - 12 = 2609, table says 2611" in problems[0]
    assert "2248 - 202 = 2046, table says 2026" in problems[1]
    # subject columns are consistent throughout
    assert not any("subjects" in p for p in problems)


def test_render_requires_every_stage():
    with pytest.raises(ValueError):
        final_qc.render_stage_counts((1, 1), PUBLISHED_STAGE_COUNTS[:-1])


def _euler_rows(values, site="002"):
    return [{"subject": f"sub-S{i}", "session": "ses-M000", "lh_euler": str(v),
             "rh_euler": str(v), "site": site} for i, v in enumerate(values)]


def test_euler_screen(rng):
    vals = list((-2 * np.round(rng.normal(20, 3, 30))).astype(int)) + [-400, 0]
    recs = final_qc.euler_from_rows(_euler_rows(vals))
    flags, fits = final_qc.euler_screen(recs)
    flagged = {f.key[0] for f in flags if f.flagged}
    assert flagged == {"S30"}  # only the very negative (worse) surface
    small = final_qc.euler_from_rows(_euler_rows(vals[:5], site="009"))
    flags, fits = final_qc.euler_screen(small)
    assert flags == [] and fits == {"009": None}


def test_euler_average_recomputed():
    rows = [{"subject": "S1", "session": "M000", "lh_euler": "-10", "rh_euler": "-20",
             "avg_euler": "-99"}]
    rec = final_qc.euler_from_rows(rows)[0]
    assert rec.avg_euler == -15.0
    assert rec.site == final_qc.site_from_subject("S1")
