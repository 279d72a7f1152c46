"""Container format round-trips and failure modes."""

import numpy as np
import pytest

from changedet import checkpoint as ckpt
from changedet.autodiff import Module, Parameter


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    entries = {
        "a.kernel": rng.standard_normal((2, 3, 3, 3)).astype(np.float32),
        "a.bias": rng.standard_normal(4).astype(np.float64),
        "blob": np.frombuffer(b"hello", dtype=np.uint8).copy(),
    }
    path = str(tmp_path / "model.ckpt")
    ckpt.save_arrays(path, entries)
    loaded = ckpt.load_arrays(path)
    assert set(loaded) == set(entries)
    for key in entries:
        assert loaded[key].dtype == entries[key].dtype
        assert loaded[key].shape == entries[key].shape
        assert (loaded[key].view(np.uint8) == entries[key].view(np.uint8)).all()


def test_double_round_trip_identical_bytes(tmp_path):
    entries = {"w": np.linspace(0, 1, 17, dtype=np.float32)}
    p1 = str(tmp_path / "one.ckpt")
    p2 = str(tmp_path / "two.ckpt")
    ckpt.save_arrays(p1, entries)
    ckpt.save_arrays(p2, ckpt.load_arrays(p1))
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
    with pytest.raises(ckpt.CheckpointError, match="not a checkpoint"):
        ckpt.load_arrays(str(path))


def test_truncated_payload_rejected(tmp_path):
    path = str(tmp_path / "model.ckpt")
    ckpt.save_arrays(path, {"w": np.ones(8, dtype=np.float64)})
    blob = open(path, "rb").read()
    open(path, "wb").write(blob[:-4])
    with pytest.raises(ckpt.CheckpointError, match="truncated"):
        ckpt.load_arrays(path)


class Leaf(Module):
    def __init__(self, seed):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.w = Parameter(rng.standard_normal((3, 3)).astype(np.float32))
        self.b = Parameter(np.zeros(3, dtype=np.float32))


class Tree(Module):
    def __init__(self):
        super().__init__()
        self.left = Leaf(1)
        self.right = Leaf(2)


def test_model_save_load(tmp_path):
    src = Tree()
    src.assign_names()
    names = [name for name, _ in src.named_parameters()]
    assert names == ["left.w", "left.b", "right.w", "right.b"]

    path = str(tmp_path / "tree.ckpt")
    ckpt.save_model(path, src, extra={"config": ckpt.pack_text("lr = 0.05")})

    dst = Tree()
    dst.assign_names()
    dst.left.w.data[:] = 0
    leftover = ckpt.load_model(path, dst)
    np.testing.assert_array_equal(dst.left.w.data, src.left.w.data)
    assert ckpt.unpack_text(leftover["config"]) == "lr = 0.05"


def test_missing_parameter_rejected(tmp_path):
    src = Leaf(3)
    src.assign_names()
    path = str(tmp_path / "leaf.ckpt")
    ckpt.save_arrays(path, {"w": src.w.data})
    with pytest.raises(ckpt.CheckpointError, match="missing parameter 'b'"):
        ckpt.load_model(path, src)
