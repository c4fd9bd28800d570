"""Little-endian binary formats for datasets, codebooks, codebook sets and checkpoints.

========  ==============================================================
``CSID``  one dataset split: version, n_c, split tag, count, f32 pairs
``CSIC``  codebook: version, n_c, bits, kind, provenance, f32 pairs
``CSIS``  codebook set: count, then (env id, embedded ``CSIC``) records
``CSIP``  refiner checkpoint: version, JSON config, named f32 tensors
========  ==============================================================

Complex values are stored as interleaved (f32 real, f32 imag).  Codeword
indices are implicit in record order (0-based).  All writers go through
:func:`atomic_write`, which refuses to replace an existing file unless asked.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
import yaml

from .chansim import SPLIT_TAGS, SPLITS, ChannelDataset, ScenarioConfig
from .codebook import Codebook, CodebookKind, CodebookSet
from .errors import FormatError, InvalidInputError
from .refiner import RefinerConfig, param_shapes

__all__ = [
    "atomic_write",
    "encode_split", "decode_split", "save_split", "load_split",
    "save_dataset", "load_dataset",
    "encode_codebook", "decode_codebook", "save_codebook", "load_codebook",
    "encode_codebook_set", "decode_codebook_set", "save_codebook_set", "load_codebook_set",
    "encode_checkpoint", "decode_checkpoint", "save_checkpoint", "load_checkpoint",
]

VERSION = 1
_C64 = np.dtype("<c8")
_F32 = np.dtype("<f4")


def atomic_write(path, data: bytes, overwrite: bool = False) -> Path:
    """Write ``data`` via a temporary file and rename."""
    path = Path(path)
    if path.exists() and not overwrite:
        raise FileExistsError(f"{path} exists; pass overwrite to replace it")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = memoryview(data)
        self.pos = 0
        self.what = what

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated {self.what}: need {n} bytes, {len(self.data) - self.pos} left", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def magic(self, expected: bytes):
        got = bytes(self.take(4))
        if got != expected:
            raise FormatError(f"bad magic {got!r} for {self.what}, expected {expected!r}", self.pos - 4)

    def version(self):
        (v,) = self.unpack("<I")
        if v != VERSION:
            raise FormatError(f"unsupported {self.what} version {v}", self.pos - 4)

    def complex_block(self, rows: int, cols: int) -> np.ndarray:
        n = rows * cols
        if n and n * 8 > len(self.data) - self.pos:
            raise FormatError(f"truncated {self.what}: payload needs {n * 8} bytes", self.pos)
        raw = self.take(n * 8)
        return np.frombuffer(raw, dtype=_C64).astype(np.complex64).reshape(rows, cols)

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes after {self.what}", self.pos)


# ------------------------------------------------------------------ dataset

def encode_split(channels, split: str) -> bytes:
    H = np.asarray(channels, dtype=np.complex64)
    if H.ndim != 2:
        raise InvalidInputError("a split must be an (count, n_c) matrix")
    header = struct.pack("<4sIIBQ", b"CSID", VERSION, H.shape[1], SPLIT_TAGS[split], H.shape[0])
    return header + H.astype(_C64).tobytes()


def decode_split(data: bytes) -> tuple[np.ndarray, str]:
    r = _Reader(data, "dataset split")
    r.magic(b"CSID")
    r.version()
    n_c, tag, count = r.unpack("<IBQ")
    if tag > 2:
        raise FormatError(f"unknown split tag {tag}", r.pos - 9)
    H = r.complex_block(count, n_c)
    r.done()
    return H, SPLITS[tag]


def save_split(path, channels, split: str, overwrite: bool = False) -> Path:
    return atomic_write(path, encode_split(channels, split), overwrite)


def load_split(path) -> tuple[np.ndarray, str]:
    return decode_split(Path(path).read_bytes())


def dataset_paths(directory, stem: str) -> dict:
    directory = Path(directory)
    paths = {name: directory / f"{stem}_{name}.csid" for name in SPLITS}
    paths["sidecar"] = directory / f"{stem}.yaml"
    return paths


def save_dataset(ds: ChannelDataset, directory, stem: str, overwrite: bool = False) -> dict:
    """One ``CSID`` file per split plus a YAML sidecar with the scenario."""
    paths = dataset_paths(directory, stem)
    for name in SPLITS:
        save_split(paths[name], ds.split(name), name, overwrite)
    sidecar = {"scenario": _plain(ds.scenario.to_dict()), "n_sites": ds.n_sites, "counts": ds.counts}
    atomic_write(paths["sidecar"], yaml.safe_dump(sidecar, sort_keys=False).encode(), overwrite)
    return paths


def load_dataset(directory, stem: str) -> ChannelDataset:
    paths = dataset_paths(directory, stem)
    meta = yaml.safe_load(paths["sidecar"].read_text())
    splits = {}
    for name in SPLITS:
        H, tag = load_split(paths[name])
        if tag != name:
            raise FormatError(f"{paths[name]} holds split {tag!r}, expected {name!r}")
        splits[name] = H
    return ChannelDataset(ScenarioConfig.from_dict(meta["scenario"]), n_sites=int(meta.get("n_sites", 1)), **splits)


def _plain(obj):
    """Tuples to lists, numpy scalars to Python, for YAML/JSON output."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ----------------------------------------------------------------- codebook

def encode_codebook(cb: Codebook) -> bytes:
    prov = cb.provenance.encode("utf-8")
    header = struct.pack("<4sIIIBI", b"CSIC", VERSION, cb.n_c, cb.bits, int(cb.kind), len(prov))
    return header + prov + cb.raw.astype(_C64).tobytes()


def _read_codebook(r: _Reader) -> Codebook:
    r.magic(b"CSIC")
    r.version()
    n_c, bits, kind, plen = r.unpack("<IIBI")
    if not 1 <= bits <= 24:
        raise FormatError(f"codebook bits {bits} out of range", r.pos - 9)
    try:
        kind = CodebookKind(kind)
    except ValueError:
        raise FormatError(f"unknown codebook kind {kind}", r.pos - 5) from None
    try:
        provenance = bytes(r.take(plen)).decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError("provenance is not valid UTF-8", r.pos - plen) from None
    raw = r.complex_block(2**bits, n_c)
    return Codebook(raw, kind, provenance)


def decode_codebook(data: bytes) -> Codebook:
    r = _Reader(data, "codebook")
    cb = _read_codebook(r)
    r.done()
    return cb


def save_codebook(path, cb: Codebook, overwrite: bool = False) -> Path:
    return atomic_write(path, encode_codebook(cb), overwrite)


def load_codebook(path) -> Codebook:
    return decode_codebook(Path(path).read_bytes())


def encode_codebook_set(cbs: CodebookSet) -> bytes:
    parts = [struct.pack("<4sI", b"CSIS", len(cbs))]
    for env, cb in cbs.items():
        parts.append(struct.pack("<I", env))
        parts.append(encode_codebook(cb))
    return b"".join(parts)


def decode_codebook_set(data: bytes) -> CodebookSet:
    r = _Reader(data, "codebook set")
    r.magic(b"CSIS")
    (count,) = r.unpack("<I")
    items = []
    for _ in range(count):
        (env,) = r.unpack("<I")
        items.append((env, _read_codebook(r)))
    r.done()
    try:
        return CodebookSet(items)
    except InvalidInputError as exc:
        raise FormatError(f"invalid codebook set: {exc}") from None


def save_codebook_set(path, cbs: CodebookSet, overwrite: bool = False) -> Path:
    return atomic_write(path, encode_codebook_set(cbs), overwrite)


def load_codebook_set(path) -> CodebookSet:
    return decode_codebook_set(Path(path).read_bytes())


# --------------------------------------------------------------- checkpoint

def encode_checkpoint(params: dict, cfg: RefinerConfig) -> bytes:
    """Parameters are stored at single precision in canonical order."""
    meta = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    parts = [struct.pack("<4sII", b"CSIP", VERSION, len(meta)), meta]
    for name, shape in param_shapes(cfg).items():
        arr = np.asarray(params[name])
        if arr.shape != shape:
            raise InvalidInputError(f"parameter {name} has shape {arr.shape}, expected {shape}")
        key = name.encode("ascii")
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack(f"<I{len(shape)}I", len(shape), *shape))
        parts.append(arr.astype(_F32).tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> tuple[dict, RefinerConfig]:
    r = _Reader(data, "checkpoint")
    r.magic(b"CSIP")
    r.version()
    (mlen,) = r.unpack("<I")
    try:
        cfg = RefinerConfig(**json.loads(bytes(r.take(mlen)).decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise FormatError(f"unreadable refiner config: {exc}", r.pos - mlen) from None
    params = {}
    for name, shape in param_shapes(cfg).items():
        (nlen,) = r.unpack("<H")
        got = bytes(r.take(nlen)).decode("ascii", errors="replace")
        if got != name:
            raise FormatError(f"expected tensor {name!r}, found {got!r}", r.pos - nlen)
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}I")
        if tuple(dims) != shape:
            raise FormatError(f"tensor {name} has dims {dims}, expected {shape}", r.pos - 4 * rank)
        n = int(np.prod(shape))
        params[name] = np.frombuffer(r.take(4 * n), dtype=_F32).astype(np.float64).reshape(shape)
    r.done()
    return params, cfg


def save_checkpoint(path, params: dict, cfg: RefinerConfig, overwrite: bool = False) -> Path:
    return atomic_write(path, encode_checkpoint(params, cfg), overwrite)


def load_checkpoint(path) -> tuple[dict, RefinerConfig]:
    return decode_checkpoint(Path(path).read_bytes())
