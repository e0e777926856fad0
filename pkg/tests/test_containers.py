"""Binary container format and dataset serialization."""

import numpy as np
import pytest
import torch

from stemvla.containers import (ContainerCorruptionError, ContainerFormatError,
                                DATASET_MAGIC, arrays_to_state_dict,
                                read_container, state_dict_to_arrays,
                                write_container)
from stemvla.world import generate_episode, read_dataset, write_dataset


def test_round_trip(tmp_path):
    arrays = {
        "a": np.arange(12, dtype=np.float32).reshape(3, 4),
        "b": np.random.default_rng(0).normal(size=(5,)).astype(np.float64),
        "c": np.array([1, 2, 3], dtype=np.int64),
    }
    meta = {"hello": "world", "n": 3}
    path = tmp_path / "x.bin"
    write_container(path, b"STEMTST1", meta, arrays)
    got_meta, got = read_container(path, b"STEMTST1")
    assert got_meta == meta
    for k in arrays:
        assert got[k].dtype == arrays[k].dtype
        assert np.array_equal(got[k], arrays[k])


def test_arrays_are_64_byte_aligned(tmp_path):
    path = tmp_path / "x.bin"
    write_container(path, b"STEMTST1", {}, {"a": np.zeros(3, np.float32),
                                            "b": np.zeros(7, np.float64)})
    import json
    with open(path, "rb") as f:
        f.seek(8)
        hlen = int(np.frombuffer(f.read(8), "<u8")[0])
        header = json.loads(f.read(hlen))
    for ent in header["arrays"]:
        assert ent["offset"] % 64 == 0


def test_wrong_magic(tmp_path):
    path = tmp_path / "x.bin"
    write_container(path, b"STEMTST1", {}, {"a": np.zeros(2, np.float32)})
    with pytest.raises(ContainerFormatError):
        read_container(path, b"OTHERMGC")


def test_truncated_file(tmp_path):
    path = tmp_path / "x.bin"
    write_container(path, b"STEMTST1", {}, {"a": np.zeros(100, np.float64)})
    data = path.read_bytes()
    path.write_bytes(data[:len(data) - 64])
    with pytest.raises(ContainerCorruptionError):
        read_container(path, b"STEMTST1")


def test_garbage_header(tmp_path):
    path = tmp_path / "x.bin"
    blob = b"STEMTST1" + np.uint64(8).tobytes() + b"\xff" * 8
    path.write_bytes(blob)
    with pytest.raises(ContainerFormatError):
        read_container(path, b"STEMTST1")


def test_state_dict_round_trip():
    model = torch.nn.Sequential(torch.nn.Linear(3, 5), torch.nn.LayerNorm(5))
    arrays = state_dict_to_arrays(model.state_dict())
    back = arrays_to_state_dict(arrays)
    for k, v in model.state_dict().items():
        assert torch.equal(back[k], v)


def test_dataset_round_trip(tmp_path):
    episodes = [generate_episode(s, t)
                for s, t in ((0, "lift_block"), (1, "stack_blocks"))]
    path = tmp_path / "data.bin"
    write_dataset(episodes, path)
    back = read_dataset(path)
    assert len(back) == len(episodes)
    for a, b in zip(episodes, back):
        assert np.array_equal(a.frames, b.frames)
        assert np.array_equal(a.depths, b.depths)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.actions, b.actions)
        assert a.instruction == b.instruction
        assert a.task_id == b.task_id


def test_dataset_wrong_magic(tmp_path):
    path = tmp_path / "data.bin"
    write_container(path, b"STEMTST1", {}, {})
    with pytest.raises(ContainerFormatError):
        read_dataset(path)
    assert DATASET_MAGIC == b"STEMVLA1"
