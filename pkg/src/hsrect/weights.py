"""SRW1 named-tensor weights container and its key=value metadata sidecar.

Layout (all integers little-endian u32):
    magic   4 bytes b"SRW1"
    count   u32
    per tensor: name_len u32, UTF-8 name, rank u32, extents rank x u32,
                payload float32 LE, row-major.

Tensor order is preserved, so writing the same mapping twice is
byte-identical.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SRW1"


class WeightsFormatError(ValueError):
    pass


def write_weights(tensors: dict[str, np.ndarray], path) -> None:
    path = Path(path)
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype=np.float64)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        parts.append(arr.astype("<f4").tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def read_weights(path) -> dict[str, np.ndarray]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise WeightsFormatError(f"{path}: not an SRW1 file")
    (count,) = struct.unpack_from("<I", raw, 4)
    off = 8
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (nlen,) = struct.unpack_from("<I", raw, off)
            off += 4
            name = raw[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", raw, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}I", raw, off)
            off += 4 * rank
            n = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(raw, dtype="<f4", count=n, offset=off).astype(np.float64)
            off += 4 * n
        except (struct.error, ValueError) as exc:
            raise WeightsFormatError(f"{path}: truncated tensor record") from exc
        out[name] = arr.reshape(shape)
    return out


def write_sidecar(meta: dict[str, str], path) -> None:
    path = Path(path)
    lines = [f"{k}={meta[k]}" for k in meta]
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def read_sidecar(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out
