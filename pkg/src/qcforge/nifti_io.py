"""Minimal NIfTI-1 reader/writer.

Only what the QC stages need: the 348-byte header, the voxel payload and
the intensity rescale. Extensions are skipped, NIfTI-2 is rejected, and the
writer always emits single-file ``n+1`` images with float32 storage.
"""
from __future__ import annotations

import gzip
import io
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    BadDim,
    IoFailure,
    NonFiniteVoxel,
    NotNifti,
    TruncatedHeader,
    TruncatedPayload,
    UnsupportedDatatype,
)

logger = logging.getLogger(__name__)

HEADER_SIZE = 348
SINGLE_FILE_OFFSET = 352  # header + 4-byte extension flag

HEADER_FIELDS = [
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
]

_LE = np.dtype(HEADER_FIELDS).newbyteorder("<")
_BE = np.dtype(HEADER_FIELDS).newbyteorder(">")
assert _LE.itemsize == HEADER_SIZE

# NIfTI datatype code -> numpy dtype string (byte order applied at read time)
DATATYPES = {
    2: "u1",
    4: "i2",
    8: "i4",
    16: "f4",
    64: "f8",
}

# xyzt_units time bits -> seconds multiplier
_TIME_UNITS = {8: 1.0, 16: 1e-3, 24: 1e-6}

MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"


@dataclass(frozen=True)
class NiftiHeader:
    sizeof_hdr: int
    dim: tuple[int, ...]
    pixdim: tuple[float, ...]
    datatype_code: int
    bitpix: int
    vox_offset: float
    scl_slope: float
    scl_inter: float
    magic: bytes
    xyzt_units: int = 10  # mm + s
    descrip: str = ""
    byteorder: str = "<"

    @property
    def ndim(self) -> int:
        return self.dim[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.dim[1 : self.ndim + 1])

    @property
    def zooms(self) -> tuple[float, ...]:
        return tuple(self.pixdim[1 : self.ndim + 1])

    @property
    def n_volumes(self) -> int:
        return self.dim[4] if self.ndim >= 4 else 1

    @property
    def scan_depth(self) -> float:
        """Slice-axis coverage in mm (``dim[3] * pixdim[3]``)."""
        return float(self.dim[3]) * float(self.pixdim[3])

    @property
    def tr(self) -> float | None:
        """Repetition time from ``pixdim[4]`` in seconds, if encoded."""
        if self.ndim < 4 or self.pixdim[4] <= 0:
            return None
        scale = _TIME_UNITS.get(self.xyzt_units & 0x38, 1.0)
        return float(self.pixdim[4]) * scale

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(DATATYPES[self.datatype_code]).newbyteorder(self.byteorder)


@dataclass
class VolumeSeries:
    header: NiftiHeader
    voxels: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.voxels.shape

    @property
    def zooms(self) -> tuple[float, ...]:
        return self.header.zooms[:3]


def _open(path: Path):
    try:
        with open(path, "rb") as fh:
            lead = fh.read(2)
    except OSError as exc:
        raise IoFailure(f"cannot open {path}: {exc}") from exc
    if lead == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _decode(raw: bytes, path) -> NiftiHeader:
    if len(raw) < HEADER_SIZE:
        raise TruncatedHeader(f"{path}: header is {len(raw)} bytes, expected {HEADER_SIZE}")
    raw = raw[:HEADER_SIZE]
    rec = np.frombuffer(raw, dtype=_LE, count=1)[0]
    byteorder = "<"
    if int(rec["sizeof_hdr"]) != HEADER_SIZE:
        rec = np.frombuffer(raw, dtype=_BE, count=1)[0]
        byteorder = ">"
        if int(rec["sizeof_hdr"]) != HEADER_SIZE:
            raise NotNifti(f"{path}: sizeof_hdr is not 348 in either byte order")
    magic = bytes(rec["magic"]).ljust(4, b"\x00")
    if magic not in (MAGIC_SINGLE, MAGIC_PAIR):
        raise NotNifti(f"{path}: bad magic {magic!r}")

    dim = tuple(int(d) for d in rec["dim"])
    if not 1 <= dim[0] <= 7:
        raise BadDim(f"{path}: dim[0]={dim[0]} outside 1..7")
    if any(d < 1 for d in dim[1 : dim[0] + 1]):
        raise BadDim(f"{path}: non-positive extent in dim={dim}")
    pixdim = tuple(float(p) for p in rec["pixdim"])
    if any(p <= 0 for p in pixdim[1 : min(dim[0], 3) + 1]):
        raise BadDim(f"{path}: non-positive spatial pixdim {pixdim[1:4]}")

    code = int(rec["datatype"])
    if code not in DATATYPES:
        raise UnsupportedDatatype(f"{path}: datatype code {code} is not supported")

    return NiftiHeader(
        sizeof_hdr=HEADER_SIZE,
        dim=dim,
        pixdim=pixdim,
        datatype_code=code,
        bitpix=int(rec["bitpix"]),
        vox_offset=float(rec["vox_offset"]),
        scl_slope=float(rec["scl_slope"]),
        scl_inter=float(rec["scl_inter"]),
        magic=magic,
        xyzt_units=int(rec["xyzt_units"]),
        descrip=bytes(rec["descrip"]).split(b"\x00")[0].decode("latin-1"),
        byteorder=byteorder,
    )


def read_header(path) -> NiftiHeader:
    path = Path(path)
    with _open(path) as fh:
        raw = fh.read(HEADER_SIZE)
    return _decode(raw, path)


def _paired_image(path: Path) -> Path:
    name = path.name
    for hdr, img in ((".hdr.gz", ".img.gz"), (".hdr", ".img")):
        if name.endswith(hdr):
            return path.with_name(name[: -len(hdr)] + img)
    raise IoFailure(f"{path}: paired-file header without a .hdr extension")


def read_series(path) -> VolumeSeries:
    """Read header and voxels; voxels come back as float64, rescaled."""
    path = Path(path)
    with _open(path) as fh:
        blob = fh.read()
    header = _decode(blob, path)
    if header.ndim > 4:
        raise BadDim(f"{path}: rank {header.ndim} series are not supported")

    if header.magic == MAGIC_PAIR:
        with _open(_paired_image(path)) as fh:
            payload = fh.read()
        offset = int(header.vox_offset)
    else:
        payload = blob
        offset = max(int(header.vox_offset), SINGLE_FILE_OFFSET)

    shape = header.shape
    if len(shape) < 3:
        shape = shape + (1,) * (3 - len(shape))
    count = int(np.prod(shape))
    nbytes = count * header.dtype.itemsize
    if len(payload) < offset + nbytes:
        raise TruncatedPayload(
            f"{path}: payload has {max(len(payload) - offset, 0)} bytes, expected {nbytes}"
        )
    raw = np.frombuffer(payload, dtype=header.dtype, count=count, offset=offset)
    data = raw.reshape(shape, order="F").astype(np.float64)
    if header.scl_slope != 0 and np.isfinite(header.scl_slope):
        if header.scl_slope != 1 or header.scl_inter != 0:
            data = data * header.scl_slope + header.scl_inter
    if not np.all(np.isfinite(data)):
        raise NonFiniteVoxel(f"{path}: payload contains NaN or Inf")
    return VolumeSeries(header=header, voxels=data)


def make_header(shape, zooms, tr: float | None = None, descrip: str = "") -> NiftiHeader:
    """Build a float32 single-file header for an array of ``shape``."""
    shape = tuple(int(s) for s in shape)
    if len(shape) not in (3, 4):
        raise BadDim(f"only ranks 3 and 4 can be written, got shape {shape}")
    dim = (len(shape),) + shape + (1,) * (7 - len(shape))
    zooms = tuple(float(z) for z in zooms)[: len(shape)]
    if len(shape) == 4 and len(zooms) == 3:
        zooms = zooms + (float(tr) if tr else 0.0,)
    pixdim = (1.0,) + zooms + (0.0,) * (7 - len(zooms))
    return NiftiHeader(
        sizeof_hdr=HEADER_SIZE,
        dim=dim,
        pixdim=pixdim,
        datatype_code=16,
        bitpix=32,
        vox_offset=float(SINGLE_FILE_OFFSET),
        scl_slope=1.0,
        scl_inter=0.0,
        magic=MAGIC_SINGLE,
        descrip=descrip,
    )


def encode_header(header: NiftiHeader, byteorder: str = "<") -> bytes:
    rec = np.zeros(1, dtype=_LE if byteorder == "<" else _BE)
    rec["sizeof_hdr"] = HEADER_SIZE
    rec["regular"] = b"r"
    rec["dim"] = header.dim
    rec["datatype"] = header.datatype_code
    rec["bitpix"] = header.bitpix
    rec["pixdim"] = header.pixdim
    rec["vox_offset"] = header.vox_offset
    rec["scl_slope"] = header.scl_slope
    rec["scl_inter"] = header.scl_inter
    rec["xyzt_units"] = header.xyzt_units
    rec["descrip"] = header.descrip.encode("latin-1")[:79]
    rec["qform_code"] = 0
    rec["sform_code"] = 1
    zooms = header.pixdim[1:4]
    rec["srow_x"] = (zooms[0], 0, 0, 0)
    rec["srow_y"] = (0, zooms[1], 0, 0)
    rec["srow_z"] = (0, 0, zooms[2], 0)
    rec["magic"] = header.magic
    return rec.tobytes()


def write_series(series: VolumeSeries, path, byteorder: str = "<") -> None:
    """Write ``series`` as float32 ``n+1``; gzip when the name ends in ``.gz``.

    Compressed output uses a zero mtime so identical inputs give identical
    bytes.
    """
    path = Path(path)
    data = np.asarray(series.voxels)
    if data.ndim not in (3, 4):
        raise BadDim(f"only ranks 3 and 4 can be written, got rank {data.ndim}")
    if not np.all(np.isfinite(data)):
        raise NonFiniteVoxel("refusing to write NaN or Inf voxels")
    src = series.header
    header = make_header(data.shape, src.zooms[:3] if src else (1, 1, 1))
    if src is not None:
        pixdim = list(header.pixdim)
        for i in range(1, data.ndim + 1):
            pixdim[i] = src.pixdim[i]
        header = replace(header, pixdim=tuple(pixdim), xyzt_units=src.xyzt_units,
                         descrip=src.descrip)
    header = replace(header, byteorder=byteorder)

    buf = io.BytesIO()
    buf.write(encode_header(header, byteorder))
    buf.write(b"\x00" * (SINGLE_FILE_OFFSET - HEADER_SIZE))
    dt = np.dtype("f4").newbyteorder(byteorder)
    buf.write(np.asarray(data, dtype=dt).tobytes(order="F"))
    try:
        if path.name.endswith(".gz"):
            with open(path, "wb") as raw, gzip.GzipFile(
                filename="", mode="wb", fileobj=raw, mtime=0, compresslevel=6
            ) as gz:
                gz.write(buf.getvalue())
        else:
            path.write_bytes(buf.getvalue())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def save(array, path, zooms=(1.0, 1.0, 1.0), tr: float | None = None) -> None:
    """Convenience wrapper: write a bare array with the given voxel sizes."""
    array = np.asarray(array, dtype=np.float64)
    write_series(VolumeSeries(make_header(array.shape, zooms, tr=tr), array), path)


def load(path) -> np.ndarray:
    return read_series(path).voxels
