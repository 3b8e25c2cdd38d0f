import gzip
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from qcforge import nifti_io
from qcforge.errors import BadDim, NonFiniteVoxel, NotNifti, TruncatedHeader, TruncatedPayload


def _raw_image(path, header, payload: bytes, byteorder="<"):
    blob = nifti_io.encode_header(header, byteorder) + b"\x00" * 4 + payload
    path.write_bytes(blob)
    return path


def test_int16_rescale(tmp_path):
    hdr = replace(nifti_io.make_header((2, 2, 2), (1, 1, 1)), datatype_code=4, bitpix=16,
                  scl_slope=2.0, scl_inter=1.0)
    payload = np.full(8, 7, dtype="<i2").tobytes()
    img = nifti_io.read_series(_raw_image(tmp_path / "a.nii", hdr, payload))
    assert img.voxels.shape == (2, 2, 2)
    assert np.all(img.voxels == 15.0)


def test_zero_slope_means_raw(tmp_path):
    hdr = replace(nifti_io.make_header((2, 2, 2), (1, 1, 1)), datatype_code=4, bitpix=16,
                  scl_slope=0.0, scl_inter=5.0)
    payload = np.arange(8, dtype="<i2").tobytes()
    img = nifti_io.read_series(_raw_image(tmp_path / "a.nii", hdr, payload))
    np.testing.assert_array_equal(np.sort(img.voxels.ravel()), np.arange(8))


def test_big_endian_header_and_payload(tmp_path):
    hdr = nifti_io.make_header((3, 2, 2), (2, 2, 3))
    data = np.arange(12, dtype=">f4")
    img = nifti_io.read_series(_raw_image(tmp_path / "be.nii", hdr, data.tobytes(), ">"))
    assert img.header.byteorder == ">"
    assert img.header.zooms == (2.0, 2.0, 3.0)
    np.testing.assert_array_equal(img.voxels.ravel(order="F"), np.arange(12))


def test_rank5_rejected(tmp_path):
    hdr = nifti_io.make_header((2, 2, 2, 2), (1, 1, 1), tr=2.0)
    hdr = replace(hdr, dim=(5, 2, 2, 2, 2, 2, 1, 1))
    path = _raw_image(tmp_path / "r5.nii", hdr, b"\x00" * 4 * 32)
    with pytest.raises(BadDim):
        nifti_io.read_series(path)


def test_payload_size_arithmetic(tmp_path):
    hdr = nifti_io.make_header((4, 4, 3, 5), (1, 1, 1), tr=2.0)
    nbytes = 4 * 4 * 3 * 5 * 4
    _raw_image(tmp_path / "ok.nii", hdr, b"\x00" * nbytes)
    assert nifti_io.read_series(tmp_path / "ok.nii").shape == (4, 4, 3, 5)
    _raw_image(tmp_path / "short.nii", hdr, b"\x00" * (nbytes - 1))
    with pytest.raises(TruncatedPayload):
        nifti_io.read_series(tmp_path / "short.nii")


def test_not_nifti_and_truncated(tmp_path):
    (tmp_path / "junk.nii").write_bytes(b"\x01" * 400)
    with pytest.raises(NotNifti):
        nifti_io.read_header(tmp_path / "junk.nii")
    (tmp_path / "short.nii").write_bytes(b"\x00" * 100)
    with pytest.raises(TruncatedHeader):
        nifti_io.read_header(tmp_path / "short.nii")


def test_bad_magic(tmp_path):
    hdr = replace(nifti_io.make_header((2, 2, 2), (1, 1, 1)), magic=b"xyz\x00")
    path = _raw_image(tmp_path / "m.nii", hdr, b"\x00" * 32)
    with pytest.raises(NotNifti):
        nifti_io.read_header(path)


def test_tr_from_pixdim(tmp_path):
    nifti_io.save(np.zeros((2, 2, 2, 3)), tmp_path / "b.nii.gz", zooms=(3, 3, 3), tr=0.8)
    hdr = nifti_io.read_header(tmp_path / "b.nii.gz")
    assert hdr.tr == pytest.approx(0.8)
    assert hdr.n_volumes == 3
    assert hdr.scan_depth == pytest.approx(6.0)


def test_refuses_nonfinite(tmp_path):
    arr = np.zeros((2, 2, 2))
    arr[0, 0, 0] = np.nan
    with pytest.raises(NonFiniteVoxel):
        nifti_io.save(arr, tmp_path / "x.nii")


def test_gzip_output_is_deterministic(tmp_path):
    arr = np.arange(24.0).reshape(2, 3, 4)
    nifti_io.save(arr, tmp_path / "a.nii.gz")
    nifti_io.save(arr, tmp_path / "b.nii.gz")
    assert (tmp_path / "a.nii.gz").read_bytes() == (tmp_path / "b.nii.gz").read_bytes()
    assert gzip.decompress((tmp_path / "a.nii.gz").read_bytes())[344:348] == b"n+1\x00"


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=3, max_dims=4, max_side=5),
                  elements=st.floats(-1e6, 1e6, width=32)),
       st.sampled_from(["<", ">"]))
def test_roundtrip_is_bit_exact(tmp_path_factory, arr, order):
    path = tmp_path_factory.mktemp("rt") / "x.nii"
    hdr = nifti_io.make_header(arr.shape, (1.5, 1.5, 2.0), tr=1.0)
    nifti_io.write_series(nifti_io.VolumeSeries(hdr, arr), path, byteorder=order)
    back = nifti_io.read_series(path)
    assert back.shape == arr.shape
    assert np.array_equal(back.voxels.astype(np.float32).view(np.uint32), arr.view(np.uint32))
