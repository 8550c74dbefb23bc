"""Tensor blob persistence: bit-exact round trips and corruption detection."""

import numpy as np
import pytest

from dtam.errors import CorruptionError, DataError
from dtam.numcore import load_tensor_blob, save_tensor_blob


def _sample_arrays(rng):
    return {
        "alpha": rng.normal(size=(4, 3)),
        "bias": rng.normal(size=7),
        "scalar": np.float64(rng.normal()),
        "single.f32": rng.normal(size=(2, 2)).astype(np.float32),
    }


def test_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = _sample_arrays(rng)
    meta = {"kind": "test", "topics": "12"}
    stem = tmp_path / "ckpt"
    save_tensor_blob(stem, arrays, meta)
    back, meta_back = load_tensor_blob(stem)
    assert meta_back == meta
    assert set(back) == set(arrays)
    for name, arr in arrays.items():
        got = back[name]
        assert got.dtype == np.asarray(arr).dtype
        assert got.shape == np.asarray(arr).shape
        # bit-exact, not just approximately equal
        assert np.asarray(arr).tobytes() == got.tobytes()


def test_roundtrip_special_values(tmp_path):
    # persistence must not normalize away signed zeros or subnormals
    arrays = {"edge": np.array([0.0, -0.0, 5e-324, 1e308, -1e-308])}
    stem = tmp_path / "edge"
    save_tensor_blob(stem, arrays)
    back, _ = load_tensor_blob(stem)
    assert arrays["edge"].tobytes() == back["edge"].tobytes()


def test_payload_corruption_detected(tmp_path):
    rng = np.random.default_rng(1)
    stem = tmp_path / "c"
    save_tensor_blob(stem, _sample_arrays(rng))
    raw = bytearray((tmp_path / "c.bin").read_bytes())
    raw[5] ^= 0xFF
    (tmp_path / "c.bin").write_bytes(bytes(raw))
    with pytest.raises(CorruptionError):
        load_tensor_blob(stem)


def test_truncated_payload_detected(tmp_path):
    rng = np.random.default_rng(2)
    stem = tmp_path / "t"
    save_tensor_blob(stem, _sample_arrays(rng))
    raw = (tmp_path / "t.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-8])
    with pytest.raises(CorruptionError):
        load_tensor_blob(stem)


def test_manifest_tampering_detected(tmp_path):
    rng = np.random.default_rng(3)
    stem = tmp_path / "m"
    save_tensor_blob(stem, {"w": rng.normal(size=(2, 2))})
    manifest = (tmp_path / "m.manifest").read_text()
    (tmp_path / "m.manifest").write_text(manifest.replace("2,2", "4,2"))
    with pytest.raises(CorruptionError):
        load_tensor_blob(stem)


def test_missing_digest_line_rejected(tmp_path):
    rng = np.random.default_rng(4)
    stem = tmp_path / "d"
    save_tensor_blob(stem, {"w": rng.normal(size=3)})
    lines = (tmp_path / "d.manifest").read_text().splitlines()
    (tmp_path / "d.manifest").write_text(
        "\n".join(l for l in lines if not l.startswith("sha256")) + "\n"
    )
    with pytest.raises(CorruptionError):
        load_tensor_blob(stem)


def test_missing_files_and_bad_names(tmp_path):
    with pytest.raises(DataError):
        load_tensor_blob(tmp_path / "nope")
    with pytest.raises(DataError):
        save_tensor_blob(tmp_path / "x", {"bad name": np.zeros(1)})
    with pytest.raises(DataError):
        save_tensor_blob(tmp_path / "y", {"w": np.zeros(1)}, meta={"k": "a\nb"})


def test_unknown_header_rejected(tmp_path):
    stem = tmp_path / "h"
    save_tensor_blob(stem, {"w": np.zeros(2)})
    text = (tmp_path / "h.manifest").read_text()
    (tmp_path / "h.manifest").write_text(text.replace("blob-format 1", "blob-format 9"))
    with pytest.raises(CorruptionError):
        load_tensor_blob(stem)


def test_empty_meta_and_many_tensors(tmp_path):
    rng = np.random.default_rng(5)
    arrays = {f"t{i:03d}": rng.normal(size=(i + 1,)) for i in range(40)}
    stem = tmp_path / "many"
    save_tensor_blob(stem, arrays)
    back, meta = load_tensor_blob(stem)
    assert meta == {}
    assert len(back) == 40
    for k in arrays:
        np.testing.assert_array_equal(arrays[k], back[k])
