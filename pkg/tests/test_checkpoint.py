import json
import struct

import numpy as np
import pytest

from app.helpers import canonical_json
from app.model import (CheckpointError, build_recognizer, build_tinyfqnet, load_checkpoint, read_header,
                       save_checkpoint)
from app.model.checkpoint import ALIGNMENT, MAGIC, checkpoint_bytes, checkpoint_from_bytes


def rewrite(raw, edit_header):
    """Rebuild checkpoint bytes after editing the header dict in place."""
    (length,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + length])
    end = 12 + length
    old_blob = raw[end + (-end % ALIGNMENT):]
    edit_header(header)
    body = canonical_json(header)
    prefix = raw[:8] + struct.pack("<I", len(body)) + body
    return prefix + b"\x00" * (-len(prefix) % ALIGNMENT) + old_blob


@pytest.fixture
def trained_like(rng):
    """A network whose tensors differ from a fresh build."""
    network = build_tinyfqnet(input_size=32, seed=2)
    for p in network.parameters():
        p.data += rng.normal(scale=0.01, size=p.shape).astype(p.dtype)
    for bn in network.batchnorms():
        bn.running_mean += 0.5
        bn.running_var *= 2.0
    network.metadata = {"loss_mode": "squared", "metrics": {"final_loss": 0.01}}
    return network


class TestRoundTrip:

    def test_tensors_and_outputs_survive(self, tmp_path, trained_like, rng):
        path = save_checkpoint(trained_like, tmp_path / "fq.ckpt")
        loaded = load_checkpoint(path)
        for a, b in zip(trained_like.parameters(), loaded.parameters()):
            assert a.name == b.name
            np.testing.assert_array_equal(a.data, b.data)
        for name, value in trained_like.buffers().items():
            np.testing.assert_array_equal(value, loaded.buffers()[name])
        x = rng.normal(size=(2, 3, 32, 32))
        np.testing.assert_array_equal(trained_like(x).numpy(), loaded(x).numpy())

    def test_save_load_save_is_byte_identical(self, tmp_path, trained_like):
        first = save_checkpoint(trained_like, tmp_path / "a.ckpt")
        second = save_checkpoint(load_checkpoint(first), tmp_path / "b.ckpt")
        assert first.read_bytes() == second.read_bytes()

    def test_header_carries_spec_and_metadata(self, tmp_path, trained_like):
        header = read_header(save_checkpoint(trained_like, tmp_path / "fq.ckpt"))
        assert header["spec"]["kind"] == "quality"
        assert header["spec"]["input_size"] == 32
        assert header["metadata"]["loss_mode"] == "squared"
        names = [t["name"] for t in header["tensors"]]
        assert names == sorted(names)

    def test_recognizer_keeps_class_ids(self):
        network = build_recognizer(embedding_dim=8, num_classes=3, class_ids=["x", "y", "z"], input_size=32)
        loaded = checkpoint_from_bytes(checkpoint_bytes(network))
        assert loaded.kind == "recognizer"
        assert loaded.class_ids == ["x", "y", "z"]
        np.testing.assert_array_equal(loaded.classifier.weight.data, network.classifier.weight.data)

    def test_blob_is_aligned(self, trained_like):
        raw = checkpoint_bytes(trained_like)
        (length,) = struct.unpack("<I", raw[8:12])
        blob = len(raw) - (12 + length + (-(12 + length) % ALIGNMENT))
        assert blob == 4 * (sum(p.data.size for p in trained_like.parameters())
                            + sum(b.size for b in trained_like.buffers().values()))


class TestRejects:
    """Damaged files fail with a message naming what is wrong."""

    def test_bad_magic(self, trained_like):
        raw = checkpoint_bytes(trained_like)
        with pytest.raises(CheckpointError, match="bad magic"):
            checkpoint_from_bytes(b"XXXX" + raw[4:])

    def test_unknown_version(self, trained_like):
        raw = checkpoint_bytes(trained_like)
        with pytest.raises(CheckpointError, match="unknown checkpoint version 9"):
            checkpoint_from_bytes(MAGIC + struct.pack("<I", 9) + raw[8:])

    def test_corrupted_header(self, trained_like):
        raw = bytearray(checkpoint_bytes(trained_like))
        raw[12] = ord("!")
        with pytest.raises(CheckpointError, match="corrupted header"):
            checkpoint_from_bytes(bytes(raw))

    def test_truncated_blob_names_tensor(self, trained_like):
        raw = checkpoint_bytes(trained_like)
        with pytest.raises(CheckpointError, match="tensor .* out of range"):
            checkpoint_from_bytes(raw[:-64])

    def test_shape_mismatch_names_tensor(self, trained_like):
        def edit(header):
            entry = next(t for t in header["tensors"] if t["name"] == "head.fc.weight")
            entry["shape"] = [1, 128]
        with pytest.raises(CheckpointError, match="head.fc.weight has shape"):
            checkpoint_from_bytes(rewrite(checkpoint_bytes(trained_like), edit))

    def test_unknown_tensor_name(self, trained_like):
        def edit(header):
            header["tensors"][0]["name"] = "block9.conv1.weight"
        with pytest.raises(CheckpointError, match="unknown tensor 'block9.conv1.weight'"):
            checkpoint_from_bytes(rewrite(checkpoint_bytes(trained_like), edit))

    def test_missing_tensor(self, trained_like):
        def edit(header):
            header["tensors"] = [t for t in header["tensors"] if t["name"] != "stem.bn.gamma"]
        with pytest.raises(CheckpointError, match="stem.bn.gamma is missing"):
            checkpoint_from_bytes(rewrite(checkpoint_bytes(trained_like), edit))

    def test_invalid_spec(self, trained_like):
        def edit(header):
            header["spec"]["blocks"][0]["in_channels"] = 7
        with pytest.raises(CheckpointError, match="header spec is invalid"):
            checkpoint_from_bytes(rewrite(checkpoint_bytes(trained_like), edit))

    def test_is_a_value_error(self, tmp_path):
        path = tmp_path / "empty.ckpt"
        path.write_bytes(b"")
        with pytest.raises(ValueError):
            load_checkpoint(path)
