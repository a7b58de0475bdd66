"""Checkpoint container.

Layout: the 8-byte magic ``NAMCKPT1``, a little-endian uint64 header length,
a canonical JSON header (sorted keys, no whitespace), then each array listed
in the header as raw little-endian float64 in header order.  Nothing in the
file depends on wall-clock time, so identical runs give identical bytes.
A ``<path>.manifest.txt`` with ``key = value`` lines sits next to it.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CheckpointError

MAGIC = b"NAMCKPT1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    kind: str                      # "nam" or "sgwc"
    variant: str
    constraint: str
    grammar_digest: str
    config: dict
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    state: dict = field(default_factory=dict)

    def header(self) -> dict:
        return {
            "format": FORMAT_VERSION,
            "tool_version": __version__,
            "kind": self.kind,
            "variant": self.variant,
            "constraint": self.constraint,
            "grammar_digest": self.grammar_digest,
            "config": self.config,
            "state": self.state,
            "arrays": [[name, list(a.shape)] for name, a in self.arrays.items()],
        }


def to_bytes(ckpt: Checkpoint) -> bytes:
    head = json.dumps(ckpt.header(), sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<Q", len(head)), head]
    for a in ckpt.arrays.values():
        parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return b"".join(parts)


def from_bytes(blob: bytes) -> Checkpoint:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if len(blob) < 16:
        raise CheckpointError("truncated checkpoint header")
    (n,) = struct.unpack("<Q", blob[8:16])
    try:
        head = json.loads(blob[16:16 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    if head.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {head.get('format')!r}")
    pos = 16 + n
    arrays = {}
    for name, shape in head["arrays"]:
        size = int(np.prod(shape, dtype=np.int64)) * 8
        if pos + size > len(blob):
            raise CheckpointError(f"truncated array {name!r}")
        arrays[name] = np.frombuffer(blob[pos:pos + size], dtype="<f8").astype(np.float64).reshape(shape)
        pos += size
    if pos != len(blob):
        raise CheckpointError("trailing bytes after the last array")
    return Checkpoint(head["kind"], head["variant"], head["constraint"], head["grammar_digest"],
                      head["config"], arrays, head["state"])


def manifest_lines(ckpt: Checkpoint) -> list[str]:
    lines = [f"tool_version = {__version__}", f"format = {FORMAT_VERSION}", f"kind = {ckpt.kind}",
             f"variant = {ckpt.variant}", f"constraint = {ckpt.constraint}",
             f"grammar_hash = {ckpt.grammar_digest}", "blas_threads = 1 (recommended for bitwise reproducibility)"]
    lines += [f"config.{k} = {v}" for k, v in sorted(ckpt.config.items())]
    for k in ("epoch", "updates", "best_epoch", "best_legal_rate", "stopped"):
        if k in ckpt.state:
            lines.append(f"state.{k} = {ckpt.state[k]}")
    lines += [f"array.{name} = {'x'.join(map(str, a.shape)) or 'scalar'}" for name, a in ckpt.arrays.items()]
    return lines


def save_checkpoint(ckpt: Checkpoint, path: "str | Path") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(ckpt))
    Path(str(path) + ".manifest.txt").write_text("\n".join(manifest_lines(ckpt)) + "\n")
    return path


def load_checkpoint(path: "str | Path") -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return from_bytes(blob)
