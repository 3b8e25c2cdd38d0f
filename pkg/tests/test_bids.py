import datetime as dt
import json

import pytest
from hypothesis import given, strategies as st

from qcforge import bids
from qcforge.errors import MalformedPath

labels = st.text("abcdefghijkLMNOP0123456789", min_size=1, max_size=8)
extras = st.dictionaries(st.sampled_from(bids.ENTITY_ORDER), labels, max_size=4)


@given(labels, labels, st.sampled_from(bids.MODALITIES), extras, st.sampled_from([".nii", ".nii.gz", ".json"]))
def test_parse_render_roundtrip(sub, ses, mod, ex, ext):
    key = bids.EntityKey(sub, ses, mod, bids._canonical_extras(ex.items()))
    path = bids.render_path(key, ext)
    assert bids.parse_entities(path) == key
    assert bids.render_path(bids.parse_entities(path), ext) == path


def test_entity_order_is_canonical():
    key = bids.parse_entities("sub-01_ses-A_run-2_task-rest_bold.nii.gz")
    assert key.extras == (("task", "rest"), ("run", "2"))


@pytest.mark.parametrize("name", [
    "sub-01_task-rest_bold.nii.gz",          # no session
    "ses-A_sub-01_bold.nii.gz",              # wrong order
    "sub-01_ses-A_run-1_run-2_bold.nii.gz",  # repeated entity
    "sub-01_ses-A_dwi.nii.gz",               # unknown suffix
    "sub-01_ses-A_bold.txt",
    "sub-02/ses-A/func/sub-01_ses-A_bold.nii",
])
def test_malformed_paths(name):
    with pytest.raises(MalformedPath):
        bids.parse_entities(name)


def test_sidecar_validation():
    meta = bids.SidecarMeta.from_dict({"RepetitionTime": 3, "CoilString": "HEAD", "Foo": 1})
    assert meta.RepetitionTime == 3.0 and meta.get("Foo") == 1
    with pytest.raises(bids.SidecarError):
        bids.SidecarMeta.from_dict({"RepetitionTime": "3"})
    with pytest.raises(bids.SidecarError):
        bids.SidecarMeta.from_dict({"RepetitionTime": 0})


def test_index_is_complete(fixture_root):
    root = fixture_root / "bids"
    records, issues = bids.index_dataset(root)
    placed = {f.path for r in records for f in r.files.values()}
    placed_issues = [i.path for i in issues if i.path]
    every = {p.relative_to(root).as_posix() for p in root.glob("sub-*/**/*.nii*")}
    assert placed | set(placed_issues) == every
    assert not placed & set(placed_issues)
    assert len(placed_issues) == len(set(placed_issues))
    manifest = json.loads((fixture_root / "manifest.json").read_text())
    assert {r.key for r in records} == {(s["subject"], s["session"]) for s in manifest["sessions"]}


def test_missing_sidecar_reported(tmp_path):
    from qcforge import nifti_io
    import numpy as np
    func = tmp_path / "sub-01" / "ses-A" / "func"
    func.mkdir(parents=True)
    nifti_io.save(np.zeros((2, 2, 2, 2)), func / "sub-01_ses-A_bold.nii.gz", tr=3.0)
    records, issues = bids.index_dataset(tmp_path)
    kinds = {i.kind for i in issues}
    assert {"MissingSidecar", "MissingT1w"} <= kinds
    assert records[0].key == ("01", "A")


def test_site_from_subject():
    assert bids.site_from_subject("ADNI002S4229") == "002"
    assert bids.site_from_subject("ADNI002S4229", {"ADNI002S4229": "777"}) == "777"


def _rec(sub, ses, date):
    return bids.SessionRecord(sub, ses, scan_date=date)


def _visit(sub, code, date):
    return bids.ClinicalVisit(sub, code, dt.date.fromisoformat(date), {"MMSE": "29"})


def test_join_clinical_rules():
    visits = [_visit("S1", "M000", "2012-01-10"), _visit("S1", "M024", "2014-01-01"),
              _visit("S2", "bl", "2012-03-01"), _visit("S2", "m06", "2012-03-21")]
    recs = [_rec("S1", "M000", None), _rec("S2", "X", "2012-03-11"), _rec("S3", "X", "2012-01-01"),
            _rec("S1", "X", "2015-06-01")]
    out = bids.join_clinical(recs, visits)
    assert out[0].clinical["match"] == "exact" and out[0].clinical["MMSE"] == "29"
    # 10 days either side: the earlier visit wins
    assert out[1].clinical["match"] == "nearest" and out[1].clinical["visit_code"] == "bl"
    assert out[2].clinical == {"match": "unmatched"}
    assert out[3].clinical == {"match": "unmatched"}
    again = bids.join_clinical(out, visits)
    assert [r.clinical for r in again] == [r.clinical for r in out]


def test_index_rows_roundtrip(fixture_root):
    records, issues = bids.index_dataset(fixture_root / "bids")
    back = bids.records_from_rows(bids.records_to_rows(records), bids.issues_to_rows(issues))
    assert [r.key for r in back] == [r.key for r in records]
    assert [r.tr for r in back] == pytest.approx([r.tr for r in records])
    assert [r.scan_depth for r in back] == [r.scan_depth for r in records]
