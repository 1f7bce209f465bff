"""Binary checkpoint format.

Layout (little-endian)::

    b"SGCK" | u32 version | u32 header_len | header JSON (UTF-8)
    | u32 n_tensors | n_tensors x tensor record | u32 CRC-32 of all prior bytes

    tensor record: u32 name_len | name | u32 rank | rank x u32 dims
                   | u8 dtype tag (1 = float32) | raw data

The header carries the variant, iteration, config digest, RNG state, the full
config and both model specs. Tensor names are ``generator/<name>`` and
``discriminator/<name>``.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig
from .nets import ModelSpec

MAGIC = b"SGCK"
VERSION = 1
DTYPE_F32 = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    variant: str
    iteration: int
    config: TrainConfig
    num_identities: int
    generator: ModelSpec
    discriminator: ModelSpec
    gen_params: dict
    disc_params: dict
    rng_state: dict

    def tensors(self) -> dict[str, torch.Tensor]:
        out = {f"generator/{k}": v for k, v in self.gen_params.items()}
        out.update({f"discriminator/{k}": v for k, v in self.disc_params.items()})
        return out

    def expected_names(self) -> set[str]:
        return {f"generator/{k}" for k in self.generator.param_names()} | {
            f"discriminator/{k}" for k in self.discriminator.param_names()
        }


def _header(ckpt: Checkpoint) -> bytes:
    header = {
        "variant": ckpt.variant,
        "iteration": ckpt.iteration,
        "config_digest": ckpt.config.digest(),
        "rng_state": ckpt.rng_state,
        "config": ckpt.config.to_dict(),
        "num_identities": ckpt.num_identities,
        "generator": ckpt.generator.to_dict(),
        "discriminator": ckpt.discriminator.to_dict(),
    }
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode()


def to_bytes(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    header = _header(ckpt)
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(header)))
    buf.write(header)
    tensors = ckpt.tensors()
    if set(tensors) != ckpt.expected_names():
        raise CheckpointError("parameter names do not match the model specs")
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name].detach().cpu().numpy(), dtype="<f4")
        raw = name.encode()
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        buf.write(struct.pack("<B", DTYPE_F32))
        buf.write(arr.tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    data = to_bytes(ckpt)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("corrupt checkpoint: truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def from_bytes(data: bytes) -> Checkpoint:
    if len(data) < 4 or data[:4] != MAGIC:
        raise CheckpointError("corrupt checkpoint: bad magic")
    r = _Reader(data)
    r.take(4)
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if len(data) < 12:
        raise CheckpointError("corrupt checkpoint: truncated")
    body, trailer = data[:-4], data[-4:]
    try:
        header = json.loads(r.take(r.u32()).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: bad header ({exc})") from None
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode(errors="replace")
        rank = r.u32()
        if rank > 8:
            raise CheckpointError(f"corrupt checkpoint: implausible rank {rank} for {name!r}")
        dims = [r.u32() for _ in range(rank)]
        if r.take(1)[0] != DTYPE_F32:
            raise CheckpointError(f"corrupt checkpoint: unknown dtype for {name!r}")
        count = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims)
        tensors[name] = torch.from_numpy(arr.astype(np.float32))
    if r.pos != len(body):
        raise CheckpointError("corrupt checkpoint: truncated or trailing bytes")
    if struct.unpack("<I", trailer)[0] != zlib.crc32(body):
        raise CheckpointError("corrupt checkpoint: checksum mismatch")

    try:
        config = TrainConfig(**header["config"])
        gen = ModelSpec.from_dict(header["generator"])
        disc = ModelSpec.from_dict(header["discriminator"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint: bad header ({exc})") from None
    if config.digest() != header.get("config_digest"):
        raise CheckpointError("corrupt checkpoint: config digest mismatch")
    ckpt = Checkpoint(
        variant=header["variant"],
        iteration=int(header["iteration"]),
        config=config,
        num_identities=int(header["num_identities"]),
        generator=gen,
        discriminator=disc,
        gen_params={k.split("/", 1)[1]: v for k, v in tensors.items() if k.startswith("generator/")},
        disc_params={k.split("/", 1)[1]: v for k, v in tensors.items() if k.startswith("discriminator/")},
        rng_state=header["rng_state"],
    )
    if set(tensors) != ckpt.expected_names():
        raise CheckpointError("corrupt checkpoint: tensor names do not match the model specs")
    for prefix, spec, params in (("generator", gen, ckpt.gen_params), ("discriminator", disc, ckpt.disc_params)):
        for name, shape in spec.param_shapes().items():
            if tuple(params[name].shape) != tuple(shape):
                raise CheckpointError(f"corrupt checkpoint: {prefix}/{name} has shape {tuple(params[name].shape)}")
    return ckpt


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
