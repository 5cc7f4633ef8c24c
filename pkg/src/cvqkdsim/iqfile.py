"""Waveform export/import: interleaved little-endian I/Q float64 with a
32-byte header (magic "CVQK", version, sps, sample count, reserved pad).

Used both for archiving transmitted frames and for per-stage taps in
hardware co-simulation diffing.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CVQK"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ12x")  # magic, version, sps, length, pad to 32

assert _HEADER.size == 32


class IqFormatError(ValueError):
    pass


def write_iq(path, samples: np.ndarray, sps: int = 1) -> None:
    samples = np.asarray(samples, dtype=np.complex128)
    inter = np.empty(2 * len(samples))
    inter[0::2] = samples.real
    inter[1::2] = samples.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, sps, len(samples)))
        fh.write(inter.astype("<f8").tobytes())


def read_iq(path) -> tuple[np.ndarray, int]:
    """Returns (samples, sps)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise IqFormatError("file shorter than header")
    magic, version, sps, length = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise IqFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise IqFormatError(f"unsupported version {version}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if len(body) != 2 * length:
        raise IqFormatError("payload length does not match header")
    return body[0::2] + 1j * body[1::2], sps
