"""Tests for helper utility functions.

Hashing and seeds, image I/O and preprocessing, and the sidecar files
written next to every artifact.
"""
import json

import numpy as np
import pytest

from app.helpers import (canonical_json, derive_seed, file_sha256, load_batch, preprocess, read_image,
                         sidecar_path, unit_hash, write_image, write_sidecar)


class TestCanonicalJson:

    def test_key_order_does_not_matter(self):
        assert canonical_json({"b": 1, "a": [1, 2]}) == canonical_json({"a": [1, 2], "b": 1})

    def test_compact(self):
        assert canonical_json({"a": 1, "b": "x"}) == b'{"a":1,"b":"x"}'


class TestSeeds:
    """Per-item seeds depend only on (seed, key)."""

    def test_stable(self):
        assert derive_seed(3, "id001_004") == derive_seed(3, "id001_004")

    def test_key_and_seed_both_matter(self):
        assert derive_seed(3, "a") != derive_seed(3, "b")
        assert derive_seed(3, "a") != derive_seed(4, "a")

    def test_fits_in_64_bits(self):
        assert 0 <= derive_seed(0, "x") < 1 << 64

    def test_unit_hash_range(self):
        values = [unit_hash(1, f"k{i}") for i in range(200)]
        assert all(0.0 <= v < 1.0 for v in values)
        assert 0.3 < np.mean(values) < 0.7


class TestImages:

    def test_png_round_trip_is_exact(self, tmp_path, face_image):
        path = write_image(tmp_path / "nested" / "face.png", face_image)
        np.testing.assert_array_equal(read_image(path), face_image)

    def test_jpeg_is_lossy(self, tmp_path, face_image):
        path = write_image(tmp_path / "face.jpg", face_image, jpeg_quality=20)
        out = read_image(path)
        assert out.shape == face_image.shape
        assert not np.array_equal(out, face_image)

    def test_unreadable(self, tmp_path):
        path = tmp_path / "junk.png"
        path.write_bytes(b"not an image")
        with pytest.raises(ValueError, match="unreadable image"):
            read_image(path)

    def test_preprocess_layout_and_range(self, face_image):
        x = preprocess(face_image, mean=[0.5] * 3, std=[0.5] * 3, size=32)
        assert x.shape == (3, 32, 32)
        assert x.dtype == np.float32
        assert x.min() >= -1.0 and x.max() <= 1.0

    def test_preprocess_swaps_to_rgb(self):
        image = np.zeros((8, 8, 3), dtype=np.uint8)
        image[..., 0] = 255  # blue in BGR
        x = preprocess(image, mean=[0.0] * 3, std=[1.0] * 3, size=8)
        assert x[2].min() == 1.0
        assert x[0].max() == 0.0

    def test_load_batch_skips_unreadable(self, tmp_path, face_image):
        good = write_image(tmp_path / "good.png", face_image)
        batch, kept = load_batch([tmp_path / "missing.png", good], [0.5] * 3, [0.5] * 3, size=16, jobs=2)
        assert batch.shape == (1, 3, 16, 16)
        assert kept == [1]

    def test_load_batch_abort(self, tmp_path):
        with pytest.raises(ValueError):
            load_batch([tmp_path / "missing.png"], [0.5] * 3, [0.5] * 3, on_unreadable="abort")

    def test_load_batch_empty(self, tmp_path):
        batch, kept = load_batch([tmp_path / "missing.png"], [0.5] * 3, [0.5] * 3, size=16)
        assert batch.shape == (0, 3, 16, 16)
        assert kept == []


class TestSidecar:

    def test_records_version_config_and_hashes(self, tmp_path):
        source = tmp_path / "manifest.jsonl"
        source.write_text("{}\n")
        out = tmp_path / "scores.jsonl"
        meta_path = write_sidecar(out, "1.2.3", {"seed": 4}, {"manifest": source, "model": None},
                                  extra={"rows": 1})
        assert meta_path == sidecar_path(out) == tmp_path / "scores.jsonl.meta.json"
        meta = json.loads(meta_path.read_text())
        assert meta["version"] == "1.2.3"
        assert meta["config"] == {"seed": 4}
        assert meta["inputs"] == {"manifest": {"path": str(source), "sha256": file_sha256(source)}}
        assert meta["rows"] == 1

    def test_same_inputs_same_bytes(self, tmp_path):
        source = tmp_path / "a.txt"
        source.write_text("x")
        first = write_sidecar(tmp_path / "one", "1", {"b": 1, "a": 2}, {"src": source}).read_bytes()
        second = write_sidecar(tmp_path / "two", "1", {"a": 2, "b": 1}, {"src": source}).read_bytes()
        assert first == second

    def test_input_digest_and_missing_inputs(self, tmp_path):
        source = tmp_path / "a.txt"
        source.write_text("x")
        meta = json.loads(write_sidecar(tmp_path / "out", "1", {}, {"src": source, "pairs": None}).read_text())
        assert meta["inputs"] == {"src": {"path": str(source), "sha256":
                                          "2d711642b726b04401627ca9fbac32f5c8530fb1903cc4db02258717921a4881"}}
