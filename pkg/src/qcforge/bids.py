"""BIDS-tree indexing, sidecar loading and clinical-visit alignment."""
from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
import os
import re
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

from . import nifti_io
from .errors import MalformedPath, NiftiError, QCError, RootUnreadable, SidecarError

logger = logging.getLogger(__name__)

MODALITIES = ("T1w", "T2w", "FLAIR", "bold")
MODALITY_DIR = {"T1w": "anat", "T2w": "anat", "FLAIR": "anat", "bold": "func"}
# canonical key order when rendering filenames; unknown keys follow alphabetically
ENTITY_ORDER = ("task", "acq", "ce", "rec", "dir", "run", "echo")
NIFTI_EXTS = (".nii.gz", ".nii")

_LABEL = re.compile(r"^[A-Za-z0-9]+$")
_PAIR = re.compile(r"^([A-Za-z]+)-([A-Za-z0-9]+)$")

TR_MISMATCH_TOL = 1e-3


@dataclass(frozen=True)
class EntityKey:
    subject: str
    session: str
    modality: str
    extras: tuple[tuple[str, str], ...] = ()

    @property
    def extras_dict(self) -> dict[str, str]:
        return dict(self.extras)


def _split_ext(name: str) -> tuple[str, str]:
    for ext in NIFTI_EXTS + (".json",):
        if name.endswith(ext):
            return name[: -len(ext)], ext
    raise MalformedPath(f"{name}: not a NIfTI or JSON file")


def parse_entities(path) -> EntityKey:
    """Parse ``sub-<s>_ses-<t>[_key-val...]_<suffix>.<ext>`` from a path."""
    path = str(path).replace(os.sep, "/")
    name = path.rsplit("/", 1)[-1]
    stem, _ = _split_ext(name)
    parts = stem.split("_")
    if len(parts) < 3:
        raise MalformedPath(f"{path}: expected sub-, ses- and a suffix")
    suffix = parts[-1]
    if suffix not in MODALITIES:
        raise MalformedPath(f"{path}: unknown suffix {suffix!r}")
    pairs = []
    for part in parts[:-1]:
        m = _PAIR.match(part)
        if not m:
            raise MalformedPath(f"{path}: malformed entity {part!r}")
        pairs.append((m.group(1), m.group(2)))
    if pairs[0][0] != "sub":
        raise MalformedPath(f"{path}: filename must start with sub-")
    if len(pairs) < 2 or pairs[1][0] != "ses":
        raise MalformedPath(f"{path}: missing ses- entity")
    subject, session = pairs[0][1], pairs[1][1]
    extras = pairs[2:]
    keys = [k for k, _ in extras]
    if len(set(keys)) != len(keys) or {"sub", "ses"} & set(keys):
        raise MalformedPath(f"{path}: repeated entity")
    # directory components, when present, must agree with the filename
    dirs = path.split("/")[:-1]
    for d in dirs:
        if d.startswith("sub-") and d != f"sub-{subject}":
            raise MalformedPath(f"{path}: directory {d} disagrees with filename")
        if d.startswith("ses-") and d != f"ses-{session}":
            raise MalformedPath(f"{path}: directory {d} disagrees with filename")
    return EntityKey(subject, session, suffix, _canonical_extras(extras))


def _canonical_extras(extras: Iterable[tuple[str, str]]) -> tuple[tuple[str, str], ...]:
    def rank(item):
        key = item[0]
        return (ENTITY_ORDER.index(key), "") if key in ENTITY_ORDER else (len(ENTITY_ORDER), key)

    return tuple(sorted(extras, key=rank))


def render_path(key: EntityKey, ext: str = ".nii.gz") -> str:
    """Canonical relative path for ``key`` (inverse of :func:`parse_entities`)."""
    for label in (key.subject, key.session):
        if not _LABEL.match(label):
            raise MalformedPath(f"invalid label {label!r}")
    parts = [f"sub-{key.subject}", f"ses-{key.session}"]
    parts += [f"{k}-{v}" for k, v in _canonical_extras(key.extras)]
    parts.append(key.modality)
    folder = MODALITY_DIR[key.modality]
    return f"sub-{key.subject}/ses-{key.session}/{folder}/{'_'.join(parts)}{ext}"


# -- sidecars ----------------------------------------------------------------

_NUMERIC_KEYS = ("RepetitionTime", "PercentPhaseFOV")
_STRING_KEYS = ("PhaseEncodingDirection", "CoilString", "Manufacturer")


@dataclass(frozen=True)
class SidecarMeta:
    RepetitionTime: float | None = None
    PhaseEncodingDirection: str | None = None
    PercentPhaseFOV: float | None = None
    CoilString: str | None = None
    Manufacturer: str | None = None
    extra: Mapping[str, object] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: Mapping[str, object], source="<sidecar>") -> "SidecarMeta":
        if not isinstance(doc, Mapping):
            raise SidecarError(f"{source}: sidecar is not a JSON object")
        values: dict[str, object] = {}
        for key in _NUMERIC_KEYS:
            if key in doc and doc[key] is not None:
                v = doc[key]
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise SidecarError(f"{source}: {key} must be numeric, got {v!r}")
                if not math.isfinite(v):
                    raise SidecarError(f"{source}: {key} is not finite")
                values[key] = float(v)
        for key in _STRING_KEYS:
            if key in doc and doc[key] is not None:
                v = doc[key]
                if not isinstance(v, str):
                    raise SidecarError(f"{source}: {key} must be a string, got {v!r}")
                values[key] = v
        tr = values.get("RepetitionTime")
        if tr is not None and tr <= 0:
            raise SidecarError(f"{source}: RepetitionTime must be > 0")
        extra = {k: v for k, v in doc.items() if k not in _NUMERIC_KEYS + _STRING_KEYS}
        return cls(**values, extra=extra)

    def to_dict(self) -> dict[str, object]:
        out = dict(self.extra)
        for key in _NUMERIC_KEYS + _STRING_KEYS:
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return dict(sorted(out.items()))

    def get(self, key: str):
        if key in _NUMERIC_KEYS + _STRING_KEYS:
            return getattr(self, key)
        return self.extra.get(key)


def load_sidecar(path) -> SidecarMeta:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise SidecarError(f"{path}: unreadable sidecar ({exc})") from exc
    return SidecarMeta.from_dict(doc, source=path)


# -- records -----------------------------------------------------------------


@dataclass(frozen=True)
class HeaderSummary:
    dim: tuple[int, ...]
    pixdim: tuple[float, ...]
    tr: float | None = None

    @classmethod
    def from_header(cls, header: nifti_io.NiftiHeader) -> "HeaderSummary":
        return cls(dim=tuple(header.dim), pixdim=tuple(header.pixdim), tr=header.tr)

    @property
    def n_volumes(self) -> int:
        return self.dim[4] if self.dim[0] >= 4 else 1

    @property
    def scan_depth(self) -> float:
        # rounded so float32 pixdim noise cannot flip an inclusive boundary
        return round(float(self.dim[3]) * float(self.pixdim[3]), 4)


@dataclass(frozen=True)
class SessionFile:
    path: str
    meta: SidecarMeta
    header: HeaderSummary
    entities: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class IndexIssue:
    kind: str  # MissingSidecar, MissingT1w, MissingBold, DuplicateEntity, ...
    subject: str | None
    session: str | None
    path: str | None
    detail: str = ""


PHASE0_ISSUES = {
    "MissingSidecar",
    "BadSidecar",
    "HeaderUnreadable",
    "MissingBold",
    "DuplicateEntity",
}


@dataclass(frozen=True)
class SessionRecord:
    subject: str
    session: str
    files: Mapping[str, SessionFile] = field(default_factory=dict)
    site: str = ""
    issues: tuple[IndexIssue, ...] = ()
    clinical: Mapping[str, object] = field(default_factory=dict)
    scan_date: str | None = None

    @property
    def key(self) -> tuple[str, str]:
        return (self.subject, self.session)

    @property
    def bold(self) -> SessionFile | None:
        return self.files.get("bold")

    @property
    def tr(self) -> float | None:
        bold = self.bold
        if bold is None:
            return None
        if bold.meta.RepetitionTime is not None:
            return bold.meta.RepetitionTime
        return bold.header.tr

    @property
    def n_volumes(self) -> int | None:
        return self.bold.header.n_volumes if self.bold else None

    @property
    def duration(self) -> float | None:
        if self.tr is None or self.n_volumes is None:
            return None
        return round(self.tr * self.n_volumes, 6)

    @property
    def scan_depth(self) -> float | None:
        return self.bold.header.scan_depth if self.bold else None


def site_from_subject(label: str, overrides: Mapping[str, str] | None = None) -> str:
    """ADNI labels embed the site as the first digit run (ADNI114S6347 -> 114)."""
    if overrides and label in overrides:
        return str(overrides[label])
    m = re.search(r"\d+", label)
    return m.group(0) if m else ""


def load_site_table(path) -> dict[str, str]:
    rows = read_delimited(path)
    out = {}
    for row in rows:
        subject = _strip_prefix(row.get("subject") or row.get("participant_id") or "", "sub-")
        if subject:
            out[subject] = row["site"]
    return out


def _strip_prefix(value: str, prefix: str) -> str:
    return value[len(prefix) :] if value.startswith(prefix) else value


def read_delimited(path) -> list[dict[str, str]]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    delimiter = "\t" if path.suffix in (".tsv", ".txt") else ","
    return list(csv.DictReader(text.splitlines(), delimiter=delimiter))


def _scan_dates(root: Path, subject: str) -> dict[str, str]:
    """Session acquisition dates from ``sub-X/sub-X_sessions.tsv``."""
    table = root / f"sub-{subject}" / f"sub-{subject}_sessions.tsv"
    if not table.exists():
        return {}
    dates = {}
    for row in read_delimited(table):
        ses = _strip_prefix(row.get("session_id", ""), "ses-")
        when = row.get("acq_time") or row.get("scan_date") or ""
        if ses and when:
            dates[ses] = when[:10]
    return dates


def _nifti_files(root: Path) -> list[Path]:
    found = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames[:] = sorted(d for d in dirnames if d != "derivatives" and not d.startswith("."))
        for name in sorted(filenames):
            if name.endswith(NIFTI_EXTS):
                found.append(Path(dirpath) / name)
    return found


def _sidecar_for(nii: Path) -> Path:
    name = nii.name
    for ext in NIFTI_EXTS:
        if name.endswith(ext):
            return nii.with_name(name[: -len(ext)] + ".json")
    raise MalformedPath(str(nii))


def index_dataset(root, site_overrides: Mapping[str, str] | None = None):
    """Index every NIfTI under ``root``.

    Returns ``(records, issues)``. Each image lands either in exactly one
    record's ``files`` or in exactly one path-bearing issue; session-level
    problems (no T1w, no bold) are issues without a path. Records carry the
    issues of their own session so the gate can apply phase-0 rules.
    """
    root = Path(root)
    if not root.is_dir():
        raise RootUnreadable(f"{root}: not a readable directory")
    try:
        files = _nifti_files(root)
    except OSError as exc:
        raise RootUnreadable(f"{root}: {exc}") from exc

    issues: list[IndexIssue] = []
    by_key: dict[EntityKey, list[Path]] = defaultdict(list)
    sessions: set[tuple[str, str]] = set()
    for path in files:
        rel = path.relative_to(root).as_posix()
        try:
            key = parse_entities(rel)
        except MalformedPath as exc:
            issues.append(IndexIssue("MalformedPath", None, None, rel, str(exc)))
            continue
        by_key[key].append(path)
        sessions.add((key.subject, key.session))

    session_files: dict[tuple[str, str], dict[str, SessionFile]] = defaultdict(dict)
    for key in sorted(by_key, key=lambda k: (k.subject, k.session, k.modality, k.extras)):
        paths = by_key[key]
        rel_paths = [p.relative_to(root).as_posix() for p in paths]
        if len(paths) > 1:
            for rel in rel_paths:
                issues.append(IndexIssue("DuplicateEntity", key.subject, key.session, rel,
                                         f"{len(paths)} files share one entity set"))
            continue
        path, rel = paths[0], rel_paths[0]
        sidecar = _sidecar_for(path)
        if not sidecar.exists():
            issues.append(IndexIssue("MissingSidecar", key.subject, key.session, rel,
                                     f"no {sidecar.name}"))
            continue
        try:
            meta = load_sidecar(sidecar)
        except SidecarError as exc:
            issues.append(IndexIssue("BadSidecar", key.subject, key.session, rel, str(exc)))
            continue
        try:
            header = nifti_io.read_header(path)
        except (NiftiError, QCError) as exc:
            issues.append(IndexIssue("HeaderUnreadable", key.subject, key.session, rel,
                                     f"{type(exc).__name__}: {exc}"))
            continue
        summary = HeaderSummary.from_header(header)
        if (key.modality == "bold" and meta.RepetitionTime is not None and summary.tr
                and abs(meta.RepetitionTime - summary.tr) > TR_MISMATCH_TOL):
            logger.warning("%s: sidecar TR %.4f differs from pixdim[4] %.4f; using sidecar",
                           rel, meta.RepetitionTime, summary.tr)
        slot = session_files[(key.subject, key.session)]
        if key.modality in slot:
            issues.append(IndexIssue("ExtraRun", key.subject, key.session, rel,
                                     f"additional {key.modality} run ignored"))
            continue
        slot[key.modality] = SessionFile(rel, meta, summary, key.extras)

    dates: dict[str, dict[str, str]] = {}
    records = []
    for subject, session in sorted(sessions):
        slot = session_files.get((subject, session), {})
        own = [i for i in issues if (i.subject, i.session) == (subject, session)]
        kinds = {key.modality for key in by_key if (key.subject, key.session) == (subject, session)}
        if "bold" in kinds and "T1w" not in kinds:
            own.append(IndexIssue("MissingT1w", subject, session, None,
                                  "session has bold but no T1w"))
            issues.append(own[-1])
        if "bold" not in kinds:
            own.append(IndexIssue("MissingBold", subject, session, None,
                                  "session has no bold image"))
            issues.append(own[-1])
        if subject not in dates:
            dates[subject] = _scan_dates(root, subject)
        records.append(SessionRecord(
            subject=subject,
            session=session,
            files=dict(sorted(slot.items())),
            site=site_from_subject(subject, site_overrides),
            issues=tuple(own),
            scan_date=dates[subject].get(session),
        ))
    return records, issues


# -- clinical alignment ------------------------------------------------------


@dataclass(frozen=True)
class ClinicalVisit:
    subject: str
    visit_code: str
    exam_date: dt.date
    measures: Mapping[str, str] = field(default_factory=dict)


def load_clinical_csv(path) -> list[ClinicalVisit]:
    visits = []
    for row in read_delimited(path):
        subject = _strip_prefix(row.pop("subject"), "sub-")
        code = row.pop("visit_code")
        try:
            when = dt.date.fromisoformat(row.pop("exam_date").strip()[:10])
        except ValueError as exc:
            raise QCError(f"{path}: bad exam_date for {subject}/{code}: {exc}") from exc
        visits.append(ClinicalVisit(subject, code, when, dict(row)))
    return visits


def join_clinical(records, visits, window_days: int = 90):
    """Attach a clinical visit to every record.

    Exact visit-code match first; otherwise the nearest exam date within
    ``window_days`` of the scan date (ties go to the earlier visit); else
    the record is annotated ``unmatched``.
    """
    by_subject: dict[str, list[ClinicalVisit]] = defaultdict(list)
    for v in visits:
        by_subject[v.subject].append(v)
    out = []
    for rec in records:
        candidates = by_subject.get(rec.subject, [])
        match, how = None, "unmatched"
        exact = [v for v in candidates if v.visit_code == rec.session]
        if exact:
            match, how = min(exact, key=lambda v: v.exam_date), "exact"
        elif rec.scan_date:
            scan = dt.date.fromisoformat(rec.scan_date[:10])
            near = [v for v in candidates if abs((v.exam_date - scan).days) <= window_days]
            if near:
                match = min(near, key=lambda v: (abs((v.exam_date - scan).days), v.exam_date))
                how = "nearest"
        clinical: dict[str, object] = {"match": how}
        if match is not None:
            clinical.update(visit_code=match.visit_code, exam_date=match.exam_date.isoformat())
            clinical.update(match.measures)
        out.append(replace(rec, clinical=clinical))
    return out


# -- serialisation of the index (inter-stage interface) ----------------------

INDEX_COLUMNS = [
    "subject", "session", "site", "modality", "entities", "path", "scan_date",
    "dim", "pixdim", "n_volumes", "tr", "scan_depth", "sidecar",
]


def records_to_rows(records) -> list[dict[str, object]]:
    rows = []
    for rec in records:
        for modality, f in rec.files.items():
            rows.append({
                "subject": rec.subject,
                "session": rec.session,
                "site": rec.site,
                "modality": modality,
                "entities": "_".join(f"{k}-{v}" for k, v in f.entities),
                "path": f.path,
                "scan_date": rec.scan_date or "",
                "dim": ",".join(str(d) for d in f.header.dim),
                "pixdim": ",".join(repr(float(p)) for p in f.header.pixdim),
                "n_volumes": f.header.n_volumes,
                "tr": "" if f.header.tr is None else repr(f.header.tr),
                "scan_depth": repr(f.header.scan_depth),
                "sidecar": json.dumps(f.meta.to_dict(), sort_keys=True, separators=(",", ":")),
            })
    return rows


ISSUE_COLUMNS = ["subject", "session", "kind", "path", "detail"]


def issues_to_rows(issues) -> list[dict[str, object]]:
    return [
        {"subject": i.subject or "", "session": i.session or "", "kind": i.kind,
         "path": i.path or "", "detail": i.detail}
        for i in issues
    ]


def records_from_rows(index_rows, issue_rows=()) -> list[SessionRecord]:
    """Rebuild records from ``dataset_index.tsv`` / ``index_issues.tsv`` rows."""
    files: dict[tuple[str, str], dict[str, SessionFile]] = defaultdict(dict)
    sites, dates = {}, {}
    for row in index_rows:
        key = (row["subject"], row["session"])
        header = HeaderSummary(
            dim=tuple(int(d) for d in row["dim"].split(",")),
            pixdim=tuple(float(p) for p in row["pixdim"].split(",")),
            tr=float(row["tr"]) if row.get("tr") else None,
        )
        entities = tuple(tuple(p.split("-", 1)) for p in row["entities"].split("_") if p)
        meta = SidecarMeta.from_dict(json.loads(row["sidecar"]), source=row["path"])
        files[key][row["modality"]] = SessionFile(row["path"], meta, header, entities)
        sites[key] = row["site"]
        dates[key] = row.get("scan_date") or None
    issues: dict[tuple[str, str], list[IndexIssue]] = defaultdict(list)
    for row in issue_rows:
        if not row["subject"]:
            continue
        key = (row["subject"], row["session"])
        issues[key].append(IndexIssue(row["kind"], row["subject"], row["session"],
                                      row["path"] or None, row["detail"]))
        sites.setdefault(key, site_from_subject(row["subject"]))
    keys = sorted(set(files) | set(issues))
    return [
        SessionRecord(subject=s, session=t, files=dict(sorted(files.get((s, t), {}).items())),
                      site=sites.get((s, t), ""), issues=tuple(issues.get((s, t), ())),
                      scan_date=dates.get((s, t)))
        for s, t in keys
    ]
