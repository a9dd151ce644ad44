"""Checkpoint files.

Layout: b"FQCK", version (u32 LE), header length (u32 LE), canonical JSON
header, zero padding to a 16-byte boundary, then the little-endian float32
blob. Tensor offsets in the header are byte offsets from the blob start.
The header holds the NetworkSpec, the input normalization, the tensor index
and free-form metadata; nothing time-dependent, so save -> load -> save is
byte-identical.
"""
from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from pydantic import ValidationError

from ..helpers import canonical_json
from .network import Network
from .specs import NetworkSpec, Normalization

logger = logging.getLogger(__name__)

MAGIC = b"FQCK"
FORMAT_VERSION = 1
ALIGNMENT = 16
BLOB_DTYPE = np.dtype("<f4")

PathLike = Union[str, Path]


class CheckpointError(ValueError):
    """A checkpoint file that cannot be turned back into a network."""


def _named_tensors(network: Network) -> List[Tuple[str, str, np.ndarray]]:
    tensors = [("parameter", p.name, p.data) for p in network.parameters()]
    tensors += [("buffer", name, value) for name, value in network.buffers().items()]
    return [(kind, name, array) for kind, name, array in sorted(tensors, key=lambda t: t[1])]


def checkpoint_bytes(network: Network) -> bytes:
    index, chunks, offset = [], [], 0
    for kind, name, array in _named_tensors(network):
        data = np.ascontiguousarray(array, dtype=BLOB_DTYPE).tobytes()
        index.append({"name": name, "kind": kind, "shape": list(array.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)
    header = canonical_json({
        "version": FORMAT_VERSION,
        "spec": network.spec.model_dump(mode="json"),
        "normalization": network.normalization.model_dump(mode="json"),
        "tensors": index,
        "metadata": network.metadata,
    })
    prefix = MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header
    padding = b"\x00" * (-len(prefix) % ALIGNMENT)
    return prefix + padding + b"".join(chunks)


def save_checkpoint(network: Network, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(network))
    logger.info(f"Saved {network.kind} checkpoint to {path}")
    return path


def _split(raw: bytes, source: str) -> Tuple[dict, memoryview]:
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source}: unknown checkpoint version {version} "
                              f"(this build reads version {FORMAT_VERSION})")
    header_end = 12 + header_len
    if header_end > len(raw):
        raise CheckpointError(f"{source}: header length {header_len} exceeds file size")
    try:
        header = json.loads(raw[12:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{source}: corrupted header: {e}") from e
    if not isinstance(header, dict) or not isinstance(header.get("tensors"), list):
        raise CheckpointError(f"{source}: corrupted header: missing tensor index")
    blob_start = header_end + (-header_end % ALIGNMENT)
    return header, memoryview(raw)[blob_start:]


def read_header(path: PathLike) -> dict:
    path = Path(path)
    header, _ = _split(path.read_bytes(), str(path))
    return header


def load_checkpoint(path: PathLike) -> Network:
    path = Path(path)
    return checkpoint_from_bytes(path.read_bytes(), str(path))


def checkpoint_from_bytes(raw: bytes, source: str = "<bytes>") -> Network:
    header, blob = _split(raw, source)
    try:
        spec = NetworkSpec.model_validate(header.get("spec"))
        normalization = Normalization.model_validate(header.get("normalization") or {})
    except ValidationError as e:
        raise CheckpointError(f"{source}: header spec is invalid: {e}") from e
    network = Network(spec, normalization, metadata=header.get("metadata") or {})

    expected = {name: array for _, name, array in _named_tensors(network)}
    seen = set()
    for entry in header["tensors"]:
        name = entry.get("name") if isinstance(entry, dict) else None
        if name not in expected:
            raise CheckpointError(f"{source}: index names unknown tensor {name!r}")
        if name in seen:
            raise CheckpointError(f"{source}: tensor {name} appears twice in the index")
        seen.add(name)
        target = expected[name]
        shape = tuple(entry.get("shape") or ())
        if shape != target.shape:
            raise CheckpointError(f"{source}: tensor {name} has shape {shape}, "
                                  f"network expects {target.shape}")
        offset = entry.get("offset")
        nbytes = target.size * BLOB_DTYPE.itemsize
        if not isinstance(offset, int) or offset < 0 or offset + nbytes > len(blob):
            raise CheckpointError(f"{source}: tensor {name} is out of range of the "
                                  f"{len(blob)}-byte blob (truncated or corrupted)")
        target[...] = np.frombuffer(blob, dtype=BLOB_DTYPE, count=target.size,
                                    offset=offset).reshape(shape)
    missing = sorted(set(expected) - seen)
    if missing:
        raise CheckpointError(f"{source}: tensor {missing[0]} is missing from the index")
    return network
