"""Binary checkpoint format.

=======  =========  ============================================================
offset   size       content
=======  =========  ============================================================
0        8          magic ``b"PCKPT\\r\\n\\x1a"``
8        4          format version, uint32 little-endian
12       8          header length ``H``, uint64 little-endian
20       H          UTF-8 JSON header (sorted keys), see below
20+H     N          tensor payload; each tensor C-order, little-endian
20+H+N   4          CRC-32 of bytes ``[0, 20+H+N)``, uint32 little-endian
=======  =========  ============================================================

The header holds ``config`` (flat training config echo), ``kind``, ``rng``
(stream position and seed), ``adam`` (hyperparameters and step count, or
null), ``payload_bytes`` and ``tensors``: a directory of ``name``, ``dtype``
(numpy type string such as ``<f8``), ``shape`` and byte ``offset`` within the
payload. Hash seeds are the ``uint32`` tensor ``hash_seeds`` (PairConnect
only); Adam moments are ``adam.m/<param>`` and ``adam.v/<param>``.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attention import TransformerModel
from .layers import ModelConfig
from .pairmodel import PairConnectModel

MAGIC = b"PCKPT\r\n\x1a"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(Exception):
    pass


class MagicMismatchError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    model: PairConnectModel | TransformerModel
    config: dict
    adam: object | None  # training.AdamState
    rng: dict


def _le(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    return a.astype(a.dtype.newbyteorder("<"), copy=False)


def encode_checkpoint(model, config: dict, adam=None, rng: dict | None = None) -> bytes:
    tensors: list[tuple[str, np.ndarray]] = list(model.params.items())
    if isinstance(model, PairConnectModel):
        tensors.append(("hash_seeds", model.hash_seeds.astype(np.uint32)))
    adam_meta = None
    if adam is not None:
        adam_meta = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps, "t": adam.t}
        tensors += [(f"adam.m/{k}", v) for k, v in adam.m.items()]
        tensors += [(f"adam.v/{k}", v) for k, v in adam.v.items()]
    directory, chunks, offset = [], [], 0
    for name, arr in tensors:
        arr = _le(arr)
        raw = arr.tobytes()
        directory.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "adam": adam_meta,
        "config": config,
        "kind": model.config.kind,
        "payload_bytes": offset,
        "rng": rng or {},
        "tensors": directory,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = _PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(path, model, config: dict, adam=None, rng: dict | None = None) -> None:
    data = encode_checkpoint(model, config, adam, rng)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def decode_checkpoint(data: bytes) -> Checkpoint:
    from .training import AdamState

    if len(data) < len(MAGIC) and MAGIC.startswith(data):
        raise TruncatedCheckpointError("file ends inside the magic bytes")
    if data[:8] != MAGIC:
        raise MagicMismatchError("not a checkpoint file (bad magic bytes)")
    if len(data) < _PREFIX.size:
        raise TruncatedCheckpointError("file ends inside the fixed header")
    _, version, hlen = _PREFIX.unpack_from(data)
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint format version {version}, this build reads {VERSION}")
    hend = _PREFIX.size + hlen
    if len(data) < hend:
        raise TruncatedCheckpointError("file ends inside the JSON header")
    header = json.loads(data[_PREFIX.size:hend].decode("utf-8"))
    end = hend + header["payload_bytes"]
    if len(data) < end + 4:
        raise TruncatedCheckpointError(f"expected {end + 4} bytes, found {len(data)}")
    (crc,) = struct.unpack_from("<I", data, end)
    if crc != zlib.crc32(data[:end]):
        raise CorruptCheckpointError("checksum mismatch")

    arrays = {}
    for t in header["tensors"]:
        dt = np.dtype(t["dtype"])
        n = int(np.prod(t["shape"], dtype=np.int64))
        start = hend + t["offset"]
        arr = np.frombuffer(data, dtype=dt, count=n, offset=start).reshape(t["shape"])
        arrays[t["name"]] = arr.astype(dt.newbyteorder("="), copy=True)

    cfg = ModelConfig.from_dict(header["config"])
    params = {k: v for k, v in arrays.items() if k != "hash_seeds" and not k.startswith("adam.")}
    if header["kind"] == "pairconnect":
        model = PairConnectModel(cfg, params, arrays["hash_seeds"])
    else:
        model = TransformerModel(cfg, params)
    adam = None
    if header["adam"] is not None:
        a = header["adam"]
        adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], t=a["t"],
                         m={k[7:]: v for k, v in arrays.items() if k.startswith("adam.m/")},
                         v={k[7:]: v for k, v in arrays.items() if k.startswith("adam.v/")})
    return Checkpoint(model, header["config"], adam, header["rng"])


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
