"""
Binary checkpoint format (all integers little-endian).

  header   b"SOLR" | version u32 | step u64
  tensors  count u32, then per tensor:
             name_len u16 | name (utf-8) | rank u8 | dims u32 x rank |
             crc32 u32 of the data | data (float32)
  buffer   policy_len u8 | policy | seen u64 | n u32 | d u32 | d_f u32 |
             uids i64[n] | inputs f32[n*d] | losses f64[n] |
             mean_features f64[n*d_f] | mean_angles f64[n] | counts u32[n] |
             crc32 u32 of the section
  rng      json_len u32 | JSON object of bit-generator states

Model parameters, batch-norm running statistics and momentum buffers are
float32 tensors, so a float32 run resumes bit-exactly.
"""

import json
import logging
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b"SOLR"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    step: int
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    buffer: Optional[Dict[str, Any]] = None
    rng_states: Dict[str, Any] = field(default_factory=dict)
    version: int = FORMAT_VERSION


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------

def _pack_tensor(name: str, value: np.ndarray) -> bytes:
    raw_name = name.encode("utf-8")
    data = np.ascontiguousarray(value, dtype="<f4").tobytes()
    dims = value.shape
    parts = [struct.pack("<H", len(raw_name)), raw_name, struct.pack("<B", len(dims))]
    parts += [struct.pack("<I", d) for d in dims]
    parts += [struct.pack("<I", zlib.crc32(data)), data]
    return b"".join(parts)


def _pack_buffer(state: Optional[Dict[str, Any]]) -> bytes:
    if state is None:
        state = {"policy": "", "seen": 0, "uids": np.zeros(0), "inputs": None,
                 "losses": np.zeros(0), "mean_features": None, "mean_angles": np.zeros(0),
                 "counts": np.zeros(0)}
    n = len(state["uids"])
    inputs = state["inputs"] if state["inputs"] is not None else np.zeros((n, 0))
    features = state["mean_features"] if state["mean_features"] is not None else np.zeros((n, 0))
    policy = state["policy"].encode("utf-8")
    body = b"".join([
        struct.pack("<B", len(policy)), policy,
        struct.pack("<QIII", int(state["seen"]), n, inputs.shape[1], features.shape[1]),
        np.ascontiguousarray(state["uids"], dtype="<i8").tobytes(),
        np.ascontiguousarray(inputs, dtype="<f4").tobytes(),
        np.ascontiguousarray(state["losses"], dtype="<f8").tobytes(),
        np.ascontiguousarray(features, dtype="<f8").tobytes(),
        np.ascontiguousarray(state["mean_angles"], dtype="<f8").tobytes(),
        np.ascontiguousarray(state["counts"], dtype="<u4").tobytes(),
    ])
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(path, checkpoint: Checkpoint) -> Path:
    """Write ``checkpoint`` atomically (temp file, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rng_json = json.dumps(checkpoint.rng_states, sort_keys=True).encode("utf-8")
    blob = b"".join(
        [MAGIC, struct.pack("<IQ", checkpoint.version, checkpoint.step),
         struct.pack("<I", len(checkpoint.tensors))]
        + [_pack_tensor(name, value) for name, value in checkpoint.tensors.items()]
        + [_pack_buffer(checkpoint.buffer), struct.pack("<I", len(rng_json)), rng_json]
    )
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)
    logger.info(f"Saved checkpoint at step {checkpoint.step}: {path}")
    return path


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------

class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.blob):
            raise CheckpointError(f"checkpoint truncated while reading {what}")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))

    def array(self, dtype: str, count: int, what: str) -> np.ndarray:
        width = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(count * width, what), dtype=dtype).copy()


def _read_tensor(reader: _Reader) -> tuple:
    (name_len,) = reader.unpack("<H", "tensor name length")
    name = reader.take(name_len, "tensor name").decode("utf-8")
    (rank,) = reader.unpack("<B", f"rank of tensor '{name}'")
    dims = reader.unpack(f"<{rank}I", f"dims of tensor '{name}'") if rank else ()
    (crc,) = reader.unpack("<I", f"checksum of tensor '{name}'")
    count = int(np.prod(dims)) if dims else 1
    if count * 4 > len(reader.blob) - reader.pos:
        raise CheckpointError(f"tensor '{name}' declares dims {tuple(dims)} "
                              "larger than the remaining file")
    data = reader.take(count * 4, f"data of tensor '{name}'")
    if zlib.crc32(data) != crc:
        raise CheckpointError(f"tensor '{name}' is corrupt (dims {tuple(dims)}, checksum mismatch)")
    return name, np.frombuffer(data, dtype="<f4").reshape(dims).astype(np.float32)


def _read_buffer(reader: _Reader) -> Optional[Dict[str, Any]]:
    start = reader.pos
    (policy_len,) = reader.unpack("<B", "buffer policy length")
    policy = reader.take(policy_len, "buffer policy").decode("utf-8")
    seen, n, d, d_f = reader.unpack("<QIII", "buffer header")
    state = {
        "policy": policy,
        "seen": seen,
        "uids": reader.array("<i8", n, "buffer ids").astype(np.int64),
        "inputs": reader.array("<f4", n * d, "buffer inputs").reshape(n, d).astype(np.float32),
        "losses": reader.array("<f8", n, "buffer losses").astype(np.float64),
        "mean_features": reader.array("<f8", n * d_f, "buffer features").reshape(n, d_f)
                               .astype(np.float64),
        "mean_angles": reader.array("<f8", n, "buffer angles").astype(np.float64),
        "counts": reader.array("<u4", n, "buffer counts").astype(np.int64),
    }
    body = reader.blob[start:reader.pos]
    (crc,) = reader.unpack("<I", "buffer checksum")
    if zlib.crc32(body) != crc:
        raise CheckpointError("buffer section is corrupt (checksum mismatch)")
    if not policy:
        return None
    if n == 0 and d == 0:
        state["inputs"] = None
        state["mean_features"] = None
    return state


def load_checkpoint(path) -> Checkpoint:
    """
    Read a checkpoint written by ``save_checkpoint``.

    Raises:
        CheckpointError: bad magic, unsupported version (both versions are
            named), truncation or a corrupt tensor (named).
    """
    reader = _Reader(Path(path).read_bytes())
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}; expected {MAGIC!r}")
    version, step = reader.unpack("<IQ", "header")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported "
                              f"(this build reads version {FORMAT_VERSION})")
    (count,) = reader.unpack("<I", "tensor count")
    tensors = dict(_read_tensor(reader) for _ in range(count))
    buffer = _read_buffer(reader)
    (json_len,) = reader.unpack("<I", "rng state length")
    rng_states = json.loads(reader.take(json_len, "rng states").decode("utf-8"))
    logger.info(f"Loaded checkpoint at step {step} ({len(tensors)} tensors): {path}")
    return Checkpoint(step=step, tensors=tensors, buffer=buffer, rng_states=rng_states,
                      version=version)


# ---------------------------------------------------------------------------
# Trainer state
# ---------------------------------------------------------------------------

def capture_state(state) -> Checkpoint:
    """Snapshot a ``TrainerState`` (model, momentum, buffer and rng streams)."""
    tensors = dict(state.model.state_dict())
    tensors.update({f"momentum/{k}": v for k, v in state.optimizer.buffers.items()})
    buffer = state.buffer.state_dict()
    rng_states = {"augment": state.rng.bit_generator.state, "buffer": buffer.pop("rng")}
    return Checkpoint(step=state.step, tensors=tensors, buffer=buffer, rng_states=rng_states)


def restore_state(state, checkpoint: Checkpoint) -> None:
    """
    Load ``checkpoint`` into a freshly built ``TrainerState`` in place.

    Raises:
        CheckpointError: a tensor does not fit the model or the buffer policy differs.
    """
    model_tensors = {k: v for k, v in checkpoint.tensors.items() if not k.startswith("momentum/")}
    try:
        state.model.load_state_dict(model_tensors)
    except KeyError as e:
        raise CheckpointError(str(e)) from e
    for key, value in checkpoint.tensors.items():
        if not key.startswith("momentum/"):
            continue
        name = key.split("/", 1)[1]
        if name not in state.model.params or state.model.params[name].shape != value.shape:
            raise CheckpointError(f"momentum tensor '{key}' does not match the model")
        state.optimizer.buffers[name] = value.astype(state.model.params[name].dtype, copy=True)

    if checkpoint.buffer is not None:
        buffer_state = dict(checkpoint.buffer, rng=checkpoint.rng_states["buffer"])
        try:
            state.buffer.load_state_dict(buffer_state)
        except ValueError as e:
            raise CheckpointError(str(e)) from e
    if "augment" in checkpoint.rng_states:
        state.rng.bit_generator.state = checkpoint.rng_states["augment"]
    state.step = int(checkpoint.step)
