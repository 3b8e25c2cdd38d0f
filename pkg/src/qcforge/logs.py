"""Classify preprocessing logs into error categories and plan reruns."""
from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .reasons import SDC_DISABLED

CATEGORY_ORDER = ("MISSING_BOLD", "TEMPLATEFLOW", "MEMORY", "RECONALL", "SYNSDC", "UNKNOWN")
EXIT_MARKER = "EXIT_MARKER"


@dataclass(frozen=True)
class ErrorCategory:
    name: str
    recoverable: bool
    recommendation: str


CATEGORIES = {
    "MISSING_BOLD": ErrorCategory("MISSING_BOLD", False, "SKIP_SESSION"),
    "TEMPLATEFLOW": ErrorCategory("TEMPLATEFLOW", True, "REBIND_TEMPLATEFLOW"),
    "MEMORY": ErrorCategory("MEMORY", True, "RAISE_MEMORY"),
    "RECONALL": ErrorCategory("RECONALL", False, "EXCLUDE_SUBJECT"),
    "SYNSDC": ErrorCategory("SYNSDC", True, "RERUN_WITHOUT_SYNSDC"),
    "UNKNOWN": ErrorCategory("UNKNOWN", False, "MANUAL"),
}
FLAG_DELTA = {
    "SYNSDC": "remove --use-syn-sdc",
    "MEMORY": "increase --mem-mb",
    "TEMPLATEFLOW": "bind TEMPLATEFLOW_HOME",
}


@dataclass(frozen=True)
class PatternTable:
    sections: tuple[tuple[str, tuple[re.Pattern, ...]], ...]

    @classmethod
    def parse(cls, text: str) -> "PatternTable":
        sections: list[tuple[str, list[re.Pattern]]] = []
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                name = line[1:-1]
                if name not in CATEGORIES and name != EXIT_MARKER:
                    raise ValueError(f"pattern table line {n}: unknown section {name!r}")
                sections.append((name, []))
                continue
            if not sections:
                raise ValueError(f"pattern table line {n}: pattern before any section")
            sections[-1][1].append(re.compile(line, re.IGNORECASE))
        return cls(tuple((name, tuple(p)) for name, p in sections))

    @classmethod
    def load(cls, path=None) -> "PatternTable":
        if path is None:
            text = resources.files("qcforge").joinpath("data/log_patterns.txt").read_text("utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls.parse(text)

    def match_line(self, line: str) -> str | None:
        for name, patterns in self.sections:
            if any(p.search(line) for p in patterns):
                return name
        return None


@dataclass(frozen=True)
class LogMatch:
    category: str
    line: str
    line_number: int


_DEFAULT: PatternTable | None = None


def default_patterns() -> PatternTable:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = PatternTable.load()
    return _DEFAULT


def classify_log(text: str | bytes, patterns: PatternTable | None = None) -> list[LogMatch]:
    """Scan every line; first matching section wins per line.

    A log with no categorised line but an exit marker yields a single UNKNOWN
    match on the first marker line.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    patterns = patterns or default_patterns()
    found, marker = [], None
    for n, line in enumerate(text.splitlines(), 1):
        cat = patterns.match_line(line)
        if cat == EXIT_MARKER:
            if marker is None:
                marker = LogMatch("UNKNOWN", line.strip(), n)
        elif cat is not None:
            found.append(LogMatch(cat, line.strip(), n))
    if not found and marker is not None:
        return [marker]
    return found


# -- log files and sessions ---------------------------------------------------

_LOG_NAME = re.compile(
    r"^log_sub-(?P<sub>[A-Za-z0-9]+)(?:_ses-(?P<ses>[A-Za-z0-9]+))?"
    r"(?:_attempt-(?P<att>\d+))?\.(?P<ext>err|out)$")


@dataclass(frozen=True)
class LogFile:
    path: Path
    subject: str
    session: str | None
    attempt: int
    matches: tuple[LogMatch, ...]

    @property
    def categories(self) -> tuple[str, ...]:
        seen = {m.category for m in self.matches}
        return tuple(c for c in CATEGORY_ORDER if c in seen)


def parse_log_name(name: str):
    m = _LOG_NAME.match(name)
    if not m:
        return None
    return m["sub"], m["ses"], int(m["att"] or 1)


def scan_logs(paths: Iterable, patterns: PatternTable | None = None) -> list[LogFile]:
    out = []
    for p in sorted(Path(p) for p in paths):
        parsed = parse_log_name(p.name)
        if parsed is None:
            continue
        sub, ses, att = parsed
        matches = classify_log(p.read_bytes(), patterns)
        out.append(LogFile(p, sub, ses, att, tuple(matches)))
    return out


def find_logs(root, globs: Sequence[str] = ("**/log_*.err", "**/log_*.out")) -> list[Path]:
    root = Path(root)
    if not root.exists():
        return []
    found = set()
    for g in globs:
        found.update(p for p in root.glob(g) if p.is_file())
    return sorted(found)


@dataclass(frozen=True)
class SessionLogStatus:
    key: tuple[str, str]
    outcome: str
    categories: tuple[str, ...]
    stamps: tuple[str, ...]
    attempts: int


def _applies(log: LogFile, key) -> bool:
    return log.subject == key[0] and (log.session is None or log.session == key[1])


def session_status(logs: Sequence[LogFile], keys: Iterable[tuple[str, str]]) -> dict:
    """Per-session outcome from the latest attempt's logs.

    A recon-all failure excludes every session of the subject. A session whose
    latest attempt is clean after an earlier syn-sdc failure passes with the
    SDC_DISABLED stamp.
    """
    keys = list(keys)
    per_key: dict[tuple[str, str], list[LogFile]] = {k: [l for l in logs if _applies(l, k)]
                                                    for k in keys}
    latest_cats: dict[tuple[str, str], set[str]] = {}
    for k, ls in per_key.items():
        if not ls:
            latest_cats[k] = set()
            continue
        last = max(l.attempt for l in ls)
        latest_cats[k] = {c for l in ls if l.attempt == last for c in l.categories}
    reconall_subjects = {k[0] for k, cats in latest_cats.items() if "RECONALL" in cats}

    out = {}
    for k in keys:
        ls = per_key[k]
        cats = set(latest_cats[k])
        if k[0] in reconall_subjects:
            cats.add("RECONALL")
        ordered = tuple(c for c in CATEGORY_ORDER if c in cats)
        stamps: tuple[str, ...] = ()
        if not ordered and any("SYNSDC" in l.categories for l in ls):
            stamps = (SDC_DISABLED,)
        attempts = max((l.attempt for l in ls), default=0)
        out[k] = SessionLogStatus(k, "FAIL" if ordered else "PASS", ordered, stamps, attempts)
    return out


REPORT_COLUMNS = ["subject", "session", "attempt", "log_file", "category", "line_number",
                  "line"]
PLAN_COLUMNS = ["subject", "session", "category", "action", "flag_delta", "stamp"]


def error_report_rows(logs: Sequence[LogFile], root=None) -> list[dict]:
    rows = []
    for log in logs:
        name = str(log.path.relative_to(root)) if root is not None else log.path.name
        for m in log.matches:
            rows.append({"subject": log.subject, "session": log.session or "",
                         "attempt": log.attempt, "log_file": name, "category": m.category,
                         "line_number": m.line_number, "line": m.line})
    return rows


def rerun_plan(classifications: Mapping[tuple[str, str], Sequence[str]]) -> list[dict]:
    """One row per affected session and category, with the recommended action."""
    rows = []
    for key in sorted(classifications):
        for cat in classifications[key]:
            info = CATEGORIES[cat]
            rows.append({"subject": key[0], "session": key[1], "category": cat,
                         "action": info.recommendation, "flag_delta": FLAG_DELTA.get(cat, ""),
                         "stamp": SDC_DISABLED if cat == "SYNSDC" else ""})
    return rows


def plan_from_logs(logs: Sequence[LogFile], keys: Iterable[tuple[str, str]]) -> list[dict]:
    """Rerun plan over every category seen in any attempt of each session."""
    cls = {}
    for k in keys:
        seen = {c for l in logs if _applies(l, k) for c in l.categories}
        if seen:
            cls[k] = [c for c in CATEGORY_ORDER if c in seen]
    return rerun_plan(cls)
