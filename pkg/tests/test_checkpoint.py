import struct

import numpy as np
import pytest

from dualbind.checkpoint import (
    MAGIC,
    decode_tensors,
    encode_tensors,
    load_checkpoint,
    quantize_weights,
    read_tensors,
    save_checkpoint,
    tensors_to_weights,
    weights_to_tensors,
    write_tensors,
)
from dualbind.data.text import VOCAB
from dualbind.errors import FormatError
from dualbind.nets import init_weights, table_checksum


@pytest.fixture(scope="module")
def weights():
    return quantize_weights(init_weights(5))


def test_layout_of_a_single_tensor():
    buf = encode_tensors({"ab": np.array([[1.0, 2.0, 3.0]])})
    expected = (
        b"SFCK" + struct.pack("<II", 1, 1) + struct.pack("<H", 2) + b"ab" + struct.pack("<B", 1 + 1)
        + struct.pack("<QQ", 1, 3) + np.array([1, 2, 3], dtype="<f4").tobytes()
    )
    assert buf == expected
    back = decode_tensors(buf)
    np.testing.assert_array_equal(back["ab"], [[1.0, 2.0, 3.0]])


def test_scalar_tensor_has_rank_zero():
    buf = encode_tensors({"s": np.float64(2.5)})
    assert buf[12 + 2 + 1] == 0
    assert decode_tensors(buf)["s"] == 2.5


def test_save_load_save_identical_bytes(tmp_path, weights):
    save_checkpoint(tmp_path / "a.sfck", weights)
    back = load_checkpoint(tmp_path / "a.sfck")
    save_checkpoint(tmp_path / "b.sfck", back)
    assert (tmp_path / "a.sfck").read_bytes() == (tmp_path / "b.sfck").read_bytes()
    assert table_checksum(back.theta) == table_checksum(weights.theta)
    assert table_checksum(back.frozen_autoencoder) == table_checksum(weights.frozen_autoencoder)
    np.testing.assert_array_equal(back.schedule.alphas, weights.schedule.alphas)


def test_checkpoint_contains_everything(weights):
    names = set(weights_to_tensors(weights))
    assert {"schedule.T", "schedule.beta_start", "schedule.beta_end", "meta.version"} <= names
    assert {f"vocab.{w}" for w in VOCAB} <= names
    assert set(weights.theta) <= names and set(weights.phi) <= names and set(weights.frozen_autoencoder) <= names


def test_float32_rounding_is_the_only_loss():
    w = init_weights(6)
    q = quantize_weights(w)
    for k, v in w.theta.items():
        np.testing.assert_array_equal(q.theta[k], v.astype(np.float32).astype(np.float64))


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda b: b"XXXX" + b[4:], "bad magic at offset 0"),
        (lambda b: b[:4] + struct.pack("<I", 9) + b[8:], "version 9 at offset 4"),
        (lambda b: b[:-3], "truncated"),
        (lambda b: b + b"\x00", "trailing bytes at offset"),
    ],
)
def test_corrupt_files_name_the_offset(mutate, fragment):
    buf = encode_tensors({"x": np.arange(4.0), "y": np.ones((2, 2))})
    with pytest.raises(FormatError, match=fragment):
        decode_tensors(mutate(buf))


def test_duplicate_and_vocab_mismatch(tmp_path, weights):
    one = encode_tensors({"x": np.zeros(1)})
    dup = one[:8] + struct.pack("<I", 2) + one[12:] + one[12:]
    with pytest.raises(FormatError, match="duplicate"):
        decode_tensors(dup)
    t = weights_to_tensors(weights)
    t["vocab.style"] = np.float64(0)
    with pytest.raises(FormatError, match="vocabulary"):
        tensors_to_weights(t)
    del t["schedule.T"]
    t["vocab.style"] = np.float64(VOCAB.index("style"))
    with pytest.raises(FormatError, match="schedule.T"):
        tensors_to_weights(t)


def test_raw_tensor_files(tmp_path):
    write_tensors(tmp_path / "t.sfck", {"a": np.eye(3)})
    assert (tmp_path / "t.sfck").read_bytes()[:4] == MAGIC
    np.testing.assert_array_equal(read_tensors(tmp_path / "t.sfck")["a"], np.eye(3))
