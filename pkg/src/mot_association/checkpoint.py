"""Portable checkpoint files: a text manifest followed by little-endian float64 data.

Layout::

    MOTASSOC-CKPT 1
    count <n>
    <name> <ndim> <d0> ... <d(ndim-1)> <offset>     (n lines, offset in float64 elements)
    data
    <raw '<f8' values of every tensor, concatenated in manifest order>

Names are dotted and carry the ``affinity.`` or ``gnn.`` prefix.
"""
from __future__ import annotations

from pathlib import Path
from typing import Dict, Mapping

import numpy as np

from .tools import ArtifactParseError, LOGGER

MAGIC = "MOTASSOC-CKPT 1"
_DATA_MARKER = b"data\n"


def save_checkpoint(path: Path | str, tensors: Mapping[str, np.ndarray]) -> Path:
    """Write named tensors; names must not contain whitespace."""

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    lines = [MAGIC, f"count {len(tensors)}"]
    offset = 0
    payload = []
    for name, value in tensors.items():
        if not name or any(char.isspace() for char in name):
            raise ValueError(f"invalid tensor name {name!r}")
        array = np.ascontiguousarray(value, dtype="<f8")
        dims = " ".join(str(dim) for dim in array.shape)
        lines.append(f"{name} {array.ndim}{' ' + dims if dims else ''} {offset}")
        offset += array.size
        payload.append(array.tobytes(order="C"))
    header = ("\n".join(lines) + "\n").encode("utf-8")
    with target.open("wb") as handle:
        handle.write(header)
        handle.write(_DATA_MARKER)
        for chunk in payload:
            handle.write(chunk)
    LOGGER.info("[Checkpoint] saved | path=%s | tensors=%s | values=%s", target, len(tensors), offset)
    return target


def load_checkpoint(path: Path | str) -> Dict[str, np.ndarray]:
    source = Path(path)
    if not source.exists():
        raise FileNotFoundError(f"Checkpoint '{source}' was not found.")
    raw = source.read_bytes()
    marker = raw.find(b"\n" + _DATA_MARKER)
    if marker < 0:
        raise ArtifactParseError(source, None, "missing 'data' marker")
    header_lines = raw[:marker].decode("utf-8").split("\n")
    body = raw[marker + 1 + len(_DATA_MARKER):]
    if not header_lines or header_lines[0] != MAGIC:
        raise ArtifactParseError(source, 1, f"expected '{MAGIC}'")
    try:
        keyword, count_text = header_lines[1].split()
        count = int(count_text)
    except (IndexError, ValueError) as exc:
        raise ArtifactParseError(source, 2, "expected 'count <n>'") from exc
    if keyword != "count" or len(header_lines) != count + 2:
        raise ArtifactParseError(source, 2, f"manifest declares {count} tensors")
    if len(body) % 8:
        raise ArtifactParseError(
            source, None, f"data section holds {len(body)} bytes, not a whole number of float64 values"
        )
    values = np.frombuffer(body, dtype="<f8")
    tensors: Dict[str, np.ndarray] = {}
    for line_number, line in enumerate(header_lines[2:], start=3):
        fields = line.split()
        try:
            name = fields[0]
            ndim = int(fields[1])
            shape = tuple(int(dim) for dim in fields[2:2 + ndim])
            offset = int(fields[2 + ndim])
        except (IndexError, ValueError) as exc:
            raise ArtifactParseError(source, line_number, f"malformed manifest entry {line!r}") from exc
        size = int(np.prod(shape)) if shape else 1
        if offset + size > values.size:
            raise ArtifactParseError(source, line_number, f"tensor {name} runs past the data section")
        tensors[name] = values[offset:offset + size].reshape(shape).astype(np.float64)
    return tensors


__all__ = ["MAGIC", "load_checkpoint", "save_checkpoint"]
