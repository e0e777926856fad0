"""Binary tensor containers shared by datasets and checkpoints.

Layout: 8-byte ASCII magic, uint64 little-endian header length, UTF-8 JSON
header, zero padding to a 64-byte boundary, then raw little-endian arrays
back to back, each starting on a 64-byte boundary.
"""

import json
import os
from typing import Any

import numpy as np

ALIGN = 64

DATASET_MAGIC = b"STEMVLA1"
GEOMETRY_MAGIC = b"STEMGEO1"
POLICY_MAGIC = b"STEMPOL1"


class ContainerFormatError(Exception):
    """Bad magic, version, or header in a container file."""


class ContainerCorruptionError(Exception):
    """File is shorter than its header promises."""


def _align(offset: int) -> int:
    return (offset + ALIGN - 1) // ALIGN * ALIGN


def write_container(path, magic: bytes, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write `arrays` (name -> ndarray) plus a JSON `meta` blob to `path`."""
    assert len(magic) == 8, "magic must be 8 bytes"
    entries = []
    offset = 0  # relative to the start of the data section
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        offset = _align(offset)
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": arr.dtype.str.lstrip("<=|"),
            "offset": offset,
            "nbytes": arr.nbytes,
        })
        blobs.append((offset, arr.tobytes()))
        offset += arr.nbytes
    header = {"meta": meta, "arrays": entries}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    data_start = _align(8 + 8 + len(header_bytes))
    with open(path, "wb") as f:
        f.write(magic)
        f.write(np.uint64(len(header_bytes)).tobytes())
        f.write(header_bytes)
        f.write(b"\x00" * (data_start - (16 + len(header_bytes))))
        pos = 0
        for off, blob in blobs:
            f.write(b"\x00" * (off - pos))
            f.write(blob)
            pos = off + len(blob)


def read_container(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container written by `write_container`. Returns (meta, arrays)."""
    size = os.path.getsize(path)
    with open(path, "rb") as f:
        got = f.read(8)
        if got != magic:
            raise ContainerFormatError(
                f"{path}: expected magic {magic!r}, found {got!r}")
        (hlen,) = np.frombuffer(f.read(8), dtype="<u8")
        hlen = int(hlen)
        if 16 + hlen > size:
            raise ContainerCorruptionError(f"{path}: truncated header")
        try:
            header = json.loads(f.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ContainerFormatError(f"{path}: bad header: {e}") from e
        data_start = _align(16 + hlen)
        arrays = {}
        for ent in header["arrays"]:
            start = data_start + ent["offset"]
            end = start + ent["nbytes"]
            if end > size:
                raise ContainerCorruptionError(
                    f"{path}: array {ent['name']!r} extends past end of file")
            f.seek(start)
            buf = f.read(ent["nbytes"])
            arr = np.frombuffer(buf, dtype="<" + ent["dtype"]).reshape(ent["shape"])
            arrays[ent["name"]] = arr.copy()
    return header["meta"], arrays


def state_dict_to_arrays(state_dict) -> dict[str, np.ndarray]:
    """Flatten a torch state dict into numpy arrays (float tensors as float32)."""
    out = {}
    for k, v in state_dict.items():
        a = v.detach().cpu().numpy()
        out[k] = a
    return out


def arrays_to_state_dict(arrays: dict[str, np.ndarray]) -> "dict[str, Any]":
    import torch
    return {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in arrays.items()}
