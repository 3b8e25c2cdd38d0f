from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from qcforge import logs
from qcforge.synth import LOG_TEMPLATES, render_log

kinds = st.lists(st.sampled_from(sorted(LOG_TEMPLATES)), min_size=1, max_size=4)
noise = st.lists(st.text(st.characters(blacklist_categories=("Cs",)), max_size=40), max_size=8)


@settings(max_examples=80)
@given(kinds, noise)
def test_classification_deterministic_and_unknown_exclusive(ks, junk):
    text = render_log(ks, "ADNI002S4001", "M000") + "\n".join(junk)
    a = logs.classify_log(text)
    assert a == logs.classify_log(text.encode("utf-8"))
    cats = {m.category for m in a}
    if "UNKNOWN" in cats:
        assert cats == {"UNKNOWN"}
    expected = {k for k in ks if k not in ("SUCCESS", "UNKNOWN")}
    assert expected <= cats


@settings(max_examples=40)
@given(st.permutations(list(LOG_TEMPLATES["TEMPLATEFLOW"] + LOG_TEMPLATES["MEMORY"]
                            + LOG_TEMPLATES["SYNSDC"])))
def test_category_set_ignores_line_order(lines):
    cats = {m.category for m in logs.classify_log("\n".join(lines))}
    assert cats == {"TEMPLATEFLOW", "MEMORY", "SYNSDC"}


def test_unknown_needs_exit_marker():
    assert logs.classify_log("all good\nfinished\n") == []
    got = logs.classify_log("x\nTraceback (most recent call last):\nExit code: 1\n")
    assert [(m.category, m.line_number) for m in got] == [("UNKNOWN", 2)]


def test_non_utf8_bytes_do_not_crash():
    got = logs.classify_log(b"\xff\xfe garbage\nslurmstepd: error: oom-kill event\n")
    assert [m.category for m in got] == ["MEMORY"]


def test_first_section_wins_per_line():
    # mentions both templateflow and memory; TEMPLATEFLOW is listed first
    got = logs.classify_log("templateflow fetch failed: cannot allocate memory")
    assert [m.category for m in got] == ["TEMPLATEFLOW"]


def test_pattern_table_errors():
    with pytest.raises(ValueError):
        logs.PatternTable.parse("[NOPE]\nfoo\n")
    with pytest.raises(ValueError):
        logs.PatternTable.parse("foo\n[MEMORY]\n")
    table = logs.PatternTable.parse("# c\n[MEMORY]\nbanana\n")
    assert [m.category for m in logs.classify_log("BANANA split", table)] == ["MEMORY"]


def test_log_names():
    assert logs.parse_log_name("log_sub-A1_ses-M000_attempt-2.err") == ("A1", "M000", 2)
    assert logs.parse_log_name("log_sub-A1.out") == ("A1", None, 1)
    assert logs.parse_log_name("notes_sub-A1.txt") is None


def _write(tmp: Path, name: str, kinds, sub="S1", ses="M000") -> Path:
    p = tmp / name
    p.write_text(render_log(kinds, sub, ses))
    return p


def test_session_status_rules(tmp_path):
    _write(tmp_path, "log_sub-S1_ses-M000_attempt-1.err", ["SYNSDC"])
    _write(tmp_path, "log_sub-S1_ses-M000_attempt-2.out", ["SUCCESS"])
    _write(tmp_path, "log_sub-S2.err", ["RECONALL"], sub="S2")
    _write(tmp_path, "log_sub-S3_ses-M024.err", ["TEMPLATEFLOW", "MEMORY"], sub="S3", ses="M024")
    scanned = logs.scan_logs(logs.find_logs(tmp_path))
    keys = [("S1", "M000"), ("S2", "M000"), ("S2", "M024"), ("S3", "M024"), ("S4", "M000")]
    st_ = logs.session_status(scanned, keys)
    assert st_[("S1", "M000")].outcome == "PASS"
    assert st_[("S1", "M000")].stamps == ("SDC_DISABLED",)
    assert st_[("S1", "M000")].attempts == 2
    assert st_[("S2", "M000")].categories == st_[("S2", "M024")].categories == ("RECONALL",)
    assert st_[("S3", "M024")].categories == ("TEMPLATEFLOW", "MEMORY")
    assert st_[("S4", "M000")].outcome == "PASS" and st_[("S4", "M000")].attempts == 0

    plan = logs.plan_from_logs(scanned, keys)
    s1 = [r for r in plan if r["subject"] == "S1"]
    assert s1 == [{"subject": "S1", "session": "M000", "category": "SYNSDC",
                   "action": "RERUN_WITHOUT_SYNSDC", "flag_delta": "remove --use-syn-sdc",
                   "stamp": "SDC_DISABLED"}]
    assert {r["action"] for r in plan if r["subject"] == "S3"} == {"REBIND_TEMPLATEFLOW",
                                                                  "RAISE_MEMORY"}
    rows = logs.error_report_rows(scanned, tmp_path)
    assert {r["log_file"] for r in rows} >= {"log_sub-S2.err"}
