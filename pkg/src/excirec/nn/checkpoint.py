"""Model checkpoint files.

Layout (little-endian)::

    b"EXNN" | u32 version | u64 json_length | JSON (config + extras)
    u64 n_params | float32 params[n_params]
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, InvalidConfigError
from .network import Network, NetworkConfig

MAGIC = b"EXNN"
VERSION = 1
HEAD = struct.Struct("<4sIQ")
U64 = struct.Struct("<Q")


def to_bytes(net: Network, extra: dict | None = None) -> bytes:
    doc = {"network": net.config.to_dict(), "extra": extra or {}}
    js = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    params = net.params.astype("<f4")
    return b"".join([HEAD.pack(MAGIC, VERSION, len(js)), js, U64.pack(params.size), params.tobytes()])


def save(net: Network, path, extra: dict | None = None) -> None:
    Path(path).write_bytes(to_bytes(net, extra))


def from_bytes(blob: bytes) -> tuple[Network, dict]:
    if len(blob) < HEAD.size:
        raise FormatError("file shorter than header", len(blob))
    magic, version, js_len = HEAD.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    off = HEAD.size
    if len(blob) < off + js_len + U64.size:
        raise FormatError("truncated config block", len(blob))
    try:
        doc = json.loads(blob[off:off + js_len].decode())
        config = NetworkConfig.from_dict(doc["network"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError,
            InvalidConfigError) as exc:
        raise FormatError(f"unreadable config block: {exc}", off) from exc
    off += js_len
    (n,) = U64.unpack_from(blob, off)
    off += U64.size
    if n != config.param_count():
        raise FormatError(f"{n} parameters stored, config needs {config.param_count()}", off - U64.size)
    if len(blob) != off + 4 * n:
        raise FormatError("parameter block size mismatch", off)
    params = np.frombuffer(blob, "<f4", n, off).astype(np.float32)
    return Network(config, params), doc.get("extra", {})


def load(path) -> tuple[Network, dict]:
    return from_bytes(Path(path).read_bytes())
