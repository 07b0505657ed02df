"""Shared on-disk format helpers: one UTF-8 JSON header line, then raw
little-endian float32 payloads. Used by the .emgs dataset and .emgm model
files."""

from __future__ import annotations

import json

import numpy as np


class FormatError(ValueError):
    """Base for malformed artifact files."""


class MagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


def write_file(path, header: dict, payloads: list[np.ndarray]):
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for arr in payloads:
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_header(f) -> dict:
    line = f.readline()
    if not line.endswith(b"\n"):
        raise TruncatedError("file ended before the header line terminator")
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not a JSON line: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object")
    return header


def check_magic_version(header: dict, magic: str, version: int):
    if header.get("magic") != magic:
        raise MagicError(f"expected magic {magic!r}, found {header.get('magic')!r}")
    if header.get("version") != version:
        raise VersionError(f"unsupported version {header.get('version')!r}, expected {version}")


def read_f32(f, count: int) -> np.ndarray:
    raw = f.read(count * 4)
    if len(raw) != count * 4:
        raise TruncatedError(f"payload truncated: wanted {count * 4} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f4").copy()
