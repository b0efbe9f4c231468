"""Model checkpoints and their binary container.

Layout (all integers little-endian)::

    8 bytes   magic b"TGANCKPT"
    uint32    format version
    uint64    header length H
    H bytes   UTF-8 JSON header: architecture, epoch, tag, parameter manifest
              (name, shape, byte offset relative to the payload start)
    ...       payload: concatenated little-endian float64 blocks
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

MAGIC = b"TGANCKPT"
FORMAT_VERSION = 1
TAGS = ("best-of-epoch", "end-of-epoch", "target-best", "target-epoch")
_PREAMBLE = struct.Struct("<8sIQ")


@dataclass
class ModelCheckpoint:
    params: dict
    architecture: dict
    epoch: int = 0
    tag: str = "end-of-epoch"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ConfigError(f"unknown checkpoint tag {self.tag!r}")


def capture(model, epoch, tag, meta=None):
    """Deep copy of ``model``'s state as a checkpoint."""
    return ModelCheckpoint(model.state_dict(), model.describe(), epoch, tag, dict(meta or {}))


def restore(model, ckpt):
    model.load_state_dict(ckpt.params)
    return model


def to_bytes(ckpt):
    manifest = []
    blocks = []
    offset = 0
    for name, value in ckpt.params.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blocks.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "version": FORMAT_VERSION,
        "architecture": ckpt.architecture,
        "epoch": ckpt.epoch,
        "tag": ckpt.tag,
        "meta": ckpt.meta,
        "parameters": manifest,
        "payload_bytes": offset,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    return _PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(raw)) + raw + b"".join(blocks)


def from_bytes(buf):
    if len(buf) < _PREAMBLE.size:
        raise FormatError("checkpoint truncated inside preamble", offset=len(buf))
    magic, version, hlen = _PREAMBLE.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", offset=0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=8)
    start = _PREAMBLE.size
    if len(buf) < start + hlen:
        raise FormatError("checkpoint truncated inside header", offset=len(buf))
    try:
        header = json.loads(buf[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint header: {exc}", offset=start) from exc
    payload = start + hlen
    if len(buf) != payload + header["payload_bytes"]:
        raise FormatError(
            f"payload is {len(buf) - payload} bytes, header declares {header['payload_bytes']}",
            offset=min(len(buf), payload + header["payload_bytes"]))
    params = {}
    for entry in header["parameters"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        pos = payload + entry["offset"]
        arr = np.frombuffer(buf, dtype="<f8", count=count, offset=pos)
        params[entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])
    return ModelCheckpoint(params, header["architecture"], header["epoch"], header["tag"],
                           header.get("meta", {}))


def save_checkpoint(path, ckpt):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(ckpt))
    return path


def load_checkpoint(path):
    return from_bytes(Path(path).read_bytes())
