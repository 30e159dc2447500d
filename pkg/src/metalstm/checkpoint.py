"""Versioned binary checkpoints for model parameters.

A checkpoint is a single file: a magic line, a JSON header describing the
payload (dims, array shapes, normalizer bounds, a role tag, and a config
digest), then the raw bytes of every parameter matrix as little-endian
8-byte floats in row-major order.  The format is deliberately free of
timestamps and platform-dependent encoding so that saving the same state
twice produces byte-identical files, and a round trip restores every
float bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError
from .flow_data import Normalizer
from .lstm import PARAM_FIELDS, ModelParams

MAGIC = b"flowckpt 1\n"

_DTYPE = np.dtype("<f8")


@dataclass(frozen=True)
class Checkpoint:
    """Parameters plus the context needed to reuse them.

    ``role`` records what the parameters are ("theta_0" for a meta-trained
    initialization, a model name for an adapted or baseline model).
    ``normalizers`` carries the per-station scaling the parameters were
    trained under; predictions are only meaningful with the same scaling.
    """

    params: ModelParams
    role: str
    config_digest: str = ""
    stations: tuple[str, ...] = ()
    normalizers: dict[str, Normalizer] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)


def digest_text(text: str) -> str:
    """Hex digest of a config's serialized form, stored in checkpoints."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _header(checkpoint: Checkpoint) -> dict:
    params = checkpoint.params
    return {
        "arrays": [
            [name, list(getattr(params, name).shape)] for name in PARAM_FIELDS
        ],
        "config_digest": checkpoint.config_digest,
        "dims": {
            "hidden_size": params.hidden_size,
            "input_size": params.input_size,
            "output_size": params.output_size,
        },
        "metadata": dict(sorted(checkpoint.metadata.items())),
        "normalizers": {
            sid: [norm.low, norm.high]
            for sid, norm in sorted(checkpoint.normalizers.items())
        },
        "role": checkpoint.role,
        "stations": list(checkpoint.stations),
    }


def save_checkpoint(path, checkpoint: Checkpoint) -> None:
    """Write a checkpoint; identical state always yields identical bytes."""
    if not checkpoint.role:
        raise ValidationError("checkpoint role must be a non-empty tag")
    header = json.dumps(_header(checkpoint), sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.encode("utf-8"))
        fh.write(b"\n")
        for name in PARAM_FIELDS:
            arr = np.ascontiguousarray(getattr(checkpoint.params, name), dtype=_DTYPE)
            fh.write(arr.tobytes())


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint back, restoring every parameter bit-exactly."""
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != MAGIC:
            raise ParseError(
                f"not a checkpoint file (bad magic {magic[:20]!r})", line_number=1
            )
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"corrupt checkpoint header: {exc}", line_number=2) from exc

    arrays = {}
    offset = 0
    for entry in header.get("arrays", []):
        name, shape = entry[0], tuple(int(n) for n in entry[1])
        size = int(np.prod(shape)) * _DTYPE.itemsize
        chunk = payload[offset : offset + size]
        if len(chunk) != size:
            raise ParseError(f"checkpoint payload truncated in array {name!r}")
        arrays[name] = np.frombuffer(chunk, dtype=_DTYPE).reshape(shape).copy()
        offset += size
    if offset != len(payload):
        raise ParseError(f"{len(payload) - offset} trailing bytes after last array")
    missing = [name for name in PARAM_FIELDS if name not in arrays]
    if missing:
        raise ParseError(f"checkpoint is missing arrays: {', '.join(missing)}")

    params = ModelParams(**{name: arrays[name] for name in PARAM_FIELDS})
    dims = header.get("dims", {})
    declared = (
        dims.get("hidden_size"),
        dims.get("input_size"),
        dims.get("output_size"),
    )
    actual = (params.hidden_size, params.input_size, params.output_size)
    if declared != actual:
        raise ParseError(
            f"declared dims {declared} do not match stored arrays {actual}"
        )
    return Checkpoint(
        params=params,
        role=header.get("role", ""),
        config_digest=header.get("config_digest", ""),
        stations=tuple(header.get("stations", [])),
        normalizers={
            sid: Normalizer(low=bounds[0], high=bounds[1])
            for sid, bounds in header.get("normalizers", {}).items()
        },
        metadata=dict(header.get("metadata", {})),
    )
