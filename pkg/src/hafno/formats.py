"""Binary tensor records, FNV-1a checksums and canonical key=value text."""

from __future__ import annotations

import configparser
import dataclasses
import struct
import typing

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None


class FormatError(ValueError):
    """Malformed file. ``code`` is one of bad_magic, version, truncated, checksum, mismatch."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def _fnv1a_py(data: bytes, h: int = FNV_OFFSET) -> int:
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


if njit is not None:

    @njit(cache=True)
    def _fnv1a_jit(data, h):  # pragma: no cover - compiled
        prime = np.uint64(FNV_PRIME)
        for i in range(data.shape[0]):
            h = (h ^ np.uint64(data[i])) * prime
        return h


def fnv1a64(data: bytes, h: int = FNV_OFFSET) -> int:
    if njit is None or len(data) < 4096:
        return _fnv1a_py(data, h)
    return int(_fnv1a_jit(np.frombuffer(data, dtype=np.uint8), np.uint64(h)))


def tensor_bytes(name: str | None, arr: np.ndarray) -> bytes:
    """Record: [u16 name length, name]? u32 rank, u32 dims..., little-endian float64 data."""
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = b""
    if name is not None:
        nb = name.encode("utf-8")
        head = struct.pack("<H", len(nb)) + nb
    head += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


class Reader:
    """Bounds-checked cursor over an in-memory byte string."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("truncated", f"file truncated at byte {self.pos} (wanted {n} more)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def tensor(self, named: bool) -> tuple[str | None, np.ndarray]:
        name = None
        if named:
            (n,) = self.unpack("<H")
            name = self.take(n).decode("utf-8")
        (rank,) = self.unpack("<I")
        dims = self.unpack(f"<{rank}I") if rank else ()
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(dims)
        return name, arr

    def at_end(self) -> bool:
        return self.pos == len(self.data)


def read_file(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def write_file(path, chunks: list[bytes]) -> None:
    with open(path, "wb") as fh:
        for c in chunks:
            fh.write(c)


# ------------------------------------------------------------------ text

def manifest_text(entries: dict[str, object]) -> str:
    """Sorted ``key=value`` lines."""
    return "".join(f"{k}={format_value(entries[k])}\n" for k in sorted(entries))


def parse_manifest(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if not line:
            continue
        k, _, v = line.partition("=")
        out[k] = v
    return out


def sections_text(sections: dict[str, dict[str, object]]) -> str:
    """Canonical ``[section]`` / ``key = value`` text with sorted sections and keys."""
    parts = []
    for name in sorted(sections):
        body = sections[name]
        parts.append(f"[{name}]\n" + "".join(f"{k} = {format_value(body[k])}\n" for k in sorted(body)))
    return "\n".join(parts)


def parse_sections(text: str) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(text)
    return {s: dict(cp.items(s)) for s in cp.sections()}


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(format_value(x) for x in v)
    if v is None:
        return "none"
    return str(v)


def dataclass_to_dict(obj) -> dict[str, object]:
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}


def _parse_value(text: str, tp):
    text = text.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if text.lower() == "none":
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _parse_value(text, inner)
    if origin is tuple:
        if not text:
            return ()
        return tuple(_parse_value(t, args[0]) for t in text.split(","))
    if tp is bool:
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if tp is int:
        return int(text)
    if tp is float:
        return float(text)
    return text


def dataclass_from_dict(cls, values: dict[str, str], base=None):
    """Build ``cls`` from string values; unknown keys are rejected."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise KeyError(f"unknown {cls.__name__} keys: {', '.join(sorted(unknown))}")
    kwargs = {k: _parse_value(v, hints[k]) if isinstance(v, str) else v for k, v in values.items()}
    if base is not None:
        return dataclasses.replace(base, **kwargs)
    return cls(**kwargs)


def write_u16(v: int) -> bytes:
    return struct.pack("<H", v)


def write_u32(v: int) -> bytes:
    return struct.pack("<I", v)


def read_header(r: Reader, magic: bytes, version: int, what: str) -> None:
    got = r.take(len(magic)) if len(r.data) >= len(magic) else r.data
    if got != magic:
        raise FormatError("bad_magic", f"bad magic in {what}: {got!r}")
    (ver,) = r.unpack("<H")
    if ver != version:
        raise FormatError("version", f"{what} version {ver} unsupported (expected {version})")

