"""SFCK binary checkpoint format.

Layout (all little-endian)::

    b"SFCK"  u32 version  u32 tensor_count
    per tensor: u16 name_len, utf-8 name, u8 rank, rank x u64 dims,
                f32 row-major data

A weights checkpoint holds ``unet.*`` (theta), ``text.*`` (phi), ``ae.*``
(frozen autoencoder), ``schedule.*`` scalars, ``meta.version`` and one
``vocab.<word>`` scalar per vocabulary entry holding its id.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .data.text import VOCAB
from .diffusion import make_schedule
from .errors import FormatError
from .nets import TrainableWeights

MAGIC = b"SFCK"
VERSION = 1


def encode_tensors(tensors: dict) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f4")  # tobytes() is C-order; keeps rank 0
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_tensors(buf: bytes, source="<bytes>") -> dict:
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"{source}: truncated while reading {what} at offset {pos}")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise FormatError(f"{source}: bad magic at offset 0 (expected {MAGIC!r})")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version} at offset 4")
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    out = {}
    for _ in range(count):
        start = pos
        (nlen,) = struct.unpack("<H", take(2, "name length"))
        try:
            name = take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{source}: invalid utf-8 name at offset {start + 2}") from exc
        (rank,) = struct.unpack("<B", take(1, "rank"))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, "dims"))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(4 * n, f"data of {name!r}"), dtype="<f4")
        if name in out:
            raise FormatError(f"{source}: duplicate tensor {name!r} at offset {start}")
        out[name] = data.reshape(dims).astype(np.float64)
    if pos != len(buf):
        raise FormatError(f"{source}: {len(buf) - pos} trailing bytes at offset {pos}")
    return out


def write_tensors(path, tensors: dict):
    Path(path).write_bytes(encode_tensors(tensors))


def read_tensors(path) -> dict:
    return decode_tensors(Path(path).read_bytes(), str(path))


def weights_to_tensors(weights: TrainableWeights) -> dict:
    out = {}
    out.update(weights.theta)
    out.update(weights.phi)
    out.update(weights.frozen_autoencoder)
    s = weights.schedule
    out["schedule.T"] = np.float64(s.T)
    out["schedule.beta_start"] = np.float64(s.beta_start)
    out["schedule.beta_end"] = np.float64(s.beta_end)
    out["meta.version"] = np.float64(weights.version)
    for i, word in enumerate(VOCAB):
        out[f"vocab.{word}"] = np.float64(i)
    return out


def tensors_to_weights(tensors: dict, source="<tensors>") -> TrainableWeights:
    vocab = {k[len("vocab.") :]: int(v) for k, v in tensors.items() if k.startswith("vocab.")}
    if vocab != {w: i for i, w in enumerate(VOCAB)}:
        raise FormatError(f"{source}: vocabulary does not match this build")
    try:
        schedule = make_schedule(
            int(tensors["schedule.T"]), float(tensors["schedule.beta_start"]), float(tensors["schedule.beta_end"])
        )
        version = int(tensors["meta.version"])
    except KeyError as exc:
        raise FormatError(f"{source}: missing tensor {exc.args[0]!r}") from exc
    pick = lambda prefix: {k: v for k, v in tensors.items() if k.startswith(prefix)}  # noqa: E731
    return TrainableWeights(pick("unet."), pick("text."), pick("ae."), schedule, version)


def save_checkpoint(path, weights: TrainableWeights):
    write_tensors(path, weights_to_tensors(weights))


def load_checkpoint(path) -> TrainableWeights:
    return tensors_to_weights(read_tensors(path), str(path))


def quantize_weights(weights: TrainableWeights) -> TrainableWeights:
    """Round every table through f32, i.e. what a save/load cycle yields."""
    return tensors_to_weights(decode_tensors(encode_tensors(weights_to_tensors(weights))))
