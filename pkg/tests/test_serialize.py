"""Weight serialization round trips and corruption detection."""

import numpy as np
import pytest

from causax.serialize import SerializationError, load_tensors, save_tensors


def _sample_weights(rng):
    return {
        "layer.w": rng.standard_normal((3, 4)),
        "layer.b": rng.standard_normal(4),
        "scalar": np.array(2.5),
    }


def test_round_trip_f64(tmp_path):
    rng = np.random.default_rng(0)
    weights = _sample_weights(rng)
    save_tensors(tmp_path / "w.bin", tmp_path / "w.manifest", weights, dtype="f64")
    back = load_tensors(tmp_path / "w.bin", tmp_path / "w.manifest")
    assert list(back) == list(weights)
    for name in weights:
        np.testing.assert_array_equal(back[name], weights[name])


def test_round_trip_f32_quantizes(tmp_path):
    rng = np.random.default_rng(1)
    weights = _sample_weights(rng)
    save_tensors(tmp_path / "w.bin", tmp_path / "w.manifest", weights, dtype="f32")
    back = load_tensors(tmp_path / "w.bin", tmp_path / "w.manifest")
    for name in weights:
        np.testing.assert_array_equal(back[name], weights[name].astype(np.float32))
        np.testing.assert_allclose(back[name], weights[name], atol=1e-6)


def test_truncated_file_detected(tmp_path):
    rng = np.random.default_rng(2)
    save_tensors(tmp_path / "w.bin", tmp_path / "w.manifest", _sample_weights(rng))
    blob = (tmp_path / "w.bin").read_bytes()
    (tmp_path / "w.bin").write_bytes(blob[:-5])
    with pytest.raises(SerializationError, match="truncated"):
        load_tensors(tmp_path / "w.bin", tmp_path / "w.manifest")


def test_manifest_order_mismatch_detected(tmp_path):
    rng = np.random.default_rng(3)
    save_tensors(tmp_path / "w.bin", tmp_path / "w.manifest", _sample_weights(rng))
    lines = (tmp_path / "w.manifest").read_text().splitlines()
    (tmp_path / "w.manifest").write_text("\n".join(reversed(lines)) + "\n")
    with pytest.raises(SerializationError, match="mismatch"):
        load_tensors(tmp_path / "w.bin", tmp_path / "w.manifest")
