"""TSV I/O, the exclusion ledger, and provenance sidecars."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import __version__
from .errors import MissingStageInput

NA = "n/a"


def fmt(value) -> str:
    if value is None:
        return NA
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return NA
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ";".join(fmt(v) for v in value)
    return str(value)


def render_tsv(rows: Iterable[Mapping[str, object]], columns: Sequence[str],
               delimiter: str = "\t") -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n",
                        quoting=csv.QUOTE_MINIMAL)
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def write_tsv(path, rows, columns, delimiter: str = "\t") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(render_tsv(rows, columns, delimiter))
    return path


def read_tsv(path, delimiter: str | None = None) -> list[dict[str, str]]:
    path = Path(path)
    if not path.exists():
        raise MissingStageInput(f"required input {path} does not exist; run the producing stage first")
    if delimiter is None:
        delimiter = "," if path.suffix == ".csv" else "\t"
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh, delimiter=delimiter))


def parse_float(value: str | None) -> float:
    if value is None or value in ("", NA):
        return math.nan
    return float(value)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_meta(path, config: Mapping[str, object], inputs: Iterable = ()) -> Path:
    """Companion ``<file>.meta`` recording version, config hash and input hashes."""
    path = Path(path)
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    doc = {
        "tool": "qcforge",
        "version": __version__,
        "config_sha256": hashlib.sha256(canon.encode()).hexdigest(),
        "config": json.loads(canon),
        "inputs": {str(p): sha256_file(p) for p in sorted(set(map(str, inputs)))
                   if Path(p).is_file()},
    }
    meta = path.with_name(path.name + ".meta")
    meta.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return meta


# -- ledger ------------------------------------------------------------------

LEDGER_COLUMNS = ["subject", "session", "stage", "reason", "detail"]


@dataclass(frozen=True)
class LedgerEntry:
    subject: str
    session: str
    stage: str
    reason: str
    detail: str = ""

    @property
    def key(self) -> tuple[str, str]:
        return (self.subject, self.session)

    def as_row(self) -> dict[str, str]:
        return {c: getattr(self, c) for c in LEDGER_COLUMNS}


class ExclusionLedger:
    """Append-only list of exclusion decisions."""

    def __init__(self, entries: Iterable[LedgerEntry] = ()):
        self._entries: list[LedgerEntry] = list(entries)

    def append(self, entry: LedgerEntry) -> None:
        self._entries.append(entry)

    def extend(self, entries: Iterable[LedgerEntry]) -> None:
        self._entries.extend(entries)

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        return tuple(self._entries)

    def keys(self) -> set[tuple[str, str]]:
        return {e.key for e in self._entries}

    def write(self, path) -> Path:
        return write_tsv(path, (e.as_row() for e in self._entries), LEDGER_COLUMNS)

    @classmethod
    def read(cls, path) -> "ExclusionLedger":
        return cls(LedgerEntry(**{c: row[c] for c in LEDGER_COLUMNS}) for row in read_tsv(path))
