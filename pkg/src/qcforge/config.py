"""Run configuration: one YAML document, defaults, strict key checking."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError
from .heuristics import GateConfig

ENV_VAR = "QCFORGE_CONFIG"


@dataclass
class GateSection:
    scan_depth_min: float = 155.0
    scan_depth_max: float = 180.0
    tr_ranges: list = field(default_factory=lambda: [[0.5, 1.0], [2.9, 3.1]])
    min_duration: float = 300.0
    min_phase_fov: float = 72.0
    phase_fov_boundary: str = "exclusive"
    banned_coils: list = field(default_factory=lambda: ["Q-BODY", "BODY"])


@dataclass
class IqmSection:
    segmentation_fallback: bool = True
    tissue_maps_dir: str | None = None
    template_maps: dict | None = None
    aor_k: float = 3.5
    max_fwhm: float = 50.0


@dataclass
class OutlierSection:
    z_cut: float = 4.0
    min_n: int = 20


@dataclass
class MotionSection:
    confounds_dir: str | None = None
    fd_formulation: str = "power"
    fd_radius: float = 50.0
    fd_threshold: float = 0.5
    max_pct_censored: float = 30.0
    min_good_time: float = 300.0
    dvars_threshold: float = 1.5


@dataclass
class EulerSection:
    table: str | None = None
    min_site_n: int = 10


@dataclass
class LogSection:
    root: str | None = None
    globs: list = field(default_factory=lambda: ["**/log_*.err", "**/log_*.out"])
    patterns: str | None = None
    report_name: str = "fmriprep_error_report.csv"


@dataclass
class RunConfig:
    bids_root: str | None = None
    output_dir: str = "qc_output"
    site_table: str | None = None
    known_errors: str | None = None
    clinical_csv: str | None = None
    clinical_window_days: int = 90
    jobs: int = 1
    gate: GateSection = field(default_factory=GateSection)
    iqm: IqmSection = field(default_factory=IqmSection)
    outliers: OutlierSection = field(default_factory=OutlierSection)
    motion: MotionSection = field(default_factory=MotionSection)
    euler: EulerSection = field(default_factory=EulerSection)
    logs: LogSection = field(default_factory=LogSection)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def gate_config(self, known_errors=frozenset()) -> GateConfig:
        g = self.gate
        return GateConfig(
            scan_depth_min=float(g.scan_depth_min), scan_depth_max=float(g.scan_depth_max),
            tr_ranges=tuple((float(lo), float(hi)) for lo, hi in g.tr_ranges),
            min_duration=float(g.min_duration), min_phase_fov=float(g.min_phase_fov),
            phase_fov_boundary=g.phase_fov_boundary, banned_coils=tuple(g.banned_coils),
            known_errors=frozenset(known_errors),
        )


_SECTION_TYPES = {"gate": GateSection, "iqm": IqmSection, "outliers": OutlierSection,
                  "motion": MotionSection, "euler": EulerSection, "logs": LogSection}
_PATH_KEYS = {("bids_root",), ("output_dir",), ("site_table",), ("known_errors",),
              ("clinical_csv",), ("iqm", "tissue_maps_dir"), ("motion", "confounds_dir"),
              ("euler", "table"), ("logs", "root"), ("logs", "patterns")}


def _build(cls, data: Mapping[str, Any], where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join((where + '.' if where else '') + k for k in unknown)}")
    kwargs = {}
    for k, v in data.items():
        if cls is RunConfig and k in _SECTION_TYPES:
            kwargs[k] = _build(_SECTION_TYPES[k], v or {}, k)
        else:
            kwargs[k] = v
    return cls(**kwargs)


def _resolve(path: str | None, base: Path) -> str | None:
    if path is None:
        return None
    p = Path(os.path.expanduser(str(path)))
    return str(p if p.is_absolute() else (base / p))


def _validate(cfg: RunConfig) -> None:
    if cfg.gate.phase_fov_boundary not in ("exclusive", "inclusive"):
        raise ConfigError("gate.phase_fov_boundary must be 'exclusive' or 'inclusive'")
    if cfg.motion.fd_formulation not in ("power", "jenkinson"):
        raise ConfigError("motion.fd_formulation must be 'power' or 'jenkinson'")
    for pair in cfg.gate.tr_ranges:
        if len(pair) != 2 or float(pair[0]) > float(pair[1]):
            raise ConfigError(f"gate.tr_ranges entry {pair!r} is not a [low, high] pair")
    if cfg.iqm.template_maps is not None:
        missing = {"csf", "gm", "wm"} - set(cfg.iqm.template_maps)
        if missing:
            raise ConfigError(f"iqm.template_maps lacks {sorted(missing)}")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be >= 1")


def load_config(path=None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Read a YAML (or JSON) config; relative paths resolve against its directory.

    Without ``path`` the ``QCFORGE_CONFIG`` environment variable is consulted,
    and failing that the defaults are used.
    """
    path = path or os.environ.get(ENV_VAR)
    data: dict[str, Any] = {}
    base = Path.cwd()
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        try:
            loaded = yaml.safe_load(p.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
        data = loaded or {}
        base = p.resolve().parent
    cfg = _build(RunConfig, data, "")
    for k, v in (overrides or {}).items():
        if v is not None:
            setattr(cfg, k, v)
    for keys in _PATH_KEYS:
        obj = cfg
        for k in keys[:-1]:
            obj = getattr(obj, k)
        setattr(obj, keys[-1], _resolve(getattr(obj, keys[-1]), base))
    if cfg.iqm.template_maps is not None:
        cfg.iqm.template_maps = {k: _resolve(v, base) for k, v in cfg.iqm.template_maps.items()}
    _validate(cfg)
    return cfg


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
