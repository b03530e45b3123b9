"""Named-array container: a text manifest followed by float32 payload.

Used for network weights and per-cell output grids. The manifest lists
block names with their shapes; the payload is the blocks' data flattened
in manifest order as little-endian 32-bit reals.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np


class BlockFileError(ValueError):
    pass


def write_blocks(path: str | Path, magic: str, meta: dict[str, str], blocks: dict[str, np.ndarray]) -> None:
    lines = [f"{magic} v1"]
    for key, value in meta.items():
        lines.append(f"meta {key} {value}")
    for name, arr in blocks.items():
        dims = " ".join(str(d) for d in arr.shape)
        lines.append(f"block {name} {dims}")
    lines.append("end")
    manifest = ("\n".join(lines) + "\n").encode("ascii")
    payload = b"".join(
        np.ascontiguousarray(arr, dtype="<f4").tobytes() for arr in blocks.values()
    )
    with open(path, "wb") as f:
        f.write(manifest)
        f.write(payload)


def read_blocks(path: str | Path, magic: str) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    header_end = raw.find(b"\nend\n")
    if header_end < 0:
        raise BlockFileError(f"{path}: no manifest terminator")
    manifest = raw[:header_end].decode("ascii").splitlines()
    payload = raw[header_end + len(b"\nend\n"):]
    if not manifest or not manifest[0].startswith(magic + " "):
        raise BlockFileError(f"{path}: bad magic, expected {magic!r}")
    if manifest[0] != f"{magic} v1":
        raise BlockFileError(f"{path}: unsupported version {manifest[0]!r}")
    meta: dict[str, str] = {}
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for line in manifest[1:]:
        kind, _, rest = line.partition(" ")
        if kind == "meta":
            key, _, value = rest.partition(" ")
            meta[key] = value
        elif kind == "block":
            parts = rest.split()
            shapes.append((parts[0], tuple(int(d) for d in parts[1:])))
        else:
            raise BlockFileError(f"{path}: bad manifest line {line!r}")
    total = sum(int(np.prod(shape)) for _, shape in shapes)
    if len(payload) != 4 * total:
        raise BlockFileError(f"{path}: payload is {len(payload)} bytes, expected {4 * total}")
    blocks: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in shapes:
        n = int(np.prod(shape))
        flat = np.frombuffer(payload, dtype="<f4", count=n, offset=4 * offset)
        blocks[name] = flat.reshape(shape).astype(np.float64)
        offset += n
    return meta, blocks
