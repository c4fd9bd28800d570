"""Codebooks and the online quantize / reconstruct primitives.

A :class:`Codebook` is canonically stored at single precision (the on-disk
representation).  The float64 ``entries`` used for all arithmetic are derived
from that representation by renormalization, so a codebook that is written to
disk and read back is bit-identical and every entry has unit norm to double
precision.

Codeword indices are 0-based throughout the Python API.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "CodebookKind",
    "Codebook",
    "QuantizationResult",
    "generate_rvq",
    "cosine_sim",
    "normalize",
    "quantize",
    "quantize_batch",
    "reconstruct",
    "CodebookSet",
]

_CHUNK = 4096
MAX_BITS = 24
# Similarities this close to the maximum count as tied.  BLAS kernels may
# round mathematically equal scores (e.g. phase-rotated codewords) an ulp
# apart, which would otherwise break the lowest-index rule.
TIE_RTOL = 1e-13


class CodebookKind(enum.IntEnum):
    CONVENTIONAL_RVQ = 0
    ENHANCED_SS = 1
    ENHANCED_DS = 2
    ORACLE_SS = 3
    ORACLE_DS = 4


@dataclass(frozen=True, eq=False)
class Codebook:
    """Ordered set of ``2**bits`` unit-norm complex codewords.

    Build instances with :meth:`from_vectors`; ``raw`` is the single-precision
    canonical form and ``entries`` its float64 renormalization.
    """

    raw: np.ndarray
    kind: CodebookKind = CodebookKind.CONVENTIONAL_RVQ
    provenance: str = ""
    entries: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        raw = np.ascontiguousarray(self.raw, dtype=np.complex64)
        if raw.ndim != 2 or raw.shape[0] < 2 or raw.shape[1] < 1:
            raise InvalidInputError(f"codebook must be a (2^B, n_c) matrix, got shape {raw.shape}")
        n = raw.shape[0]
        if n & (n - 1):
            raise InvalidInputError(f"codebook size {n} is not a power of two")
        if n > 2**MAX_BITS:
            raise InvalidInputError(f"codebook size {n} exceeds 2^{MAX_BITS}")
        wide = raw.astype(np.complex128)
        norms = np.linalg.norm(wide, axis=1)
        if not np.all(np.isfinite(wide)) or np.any(norms < 1e-6):
            raise InvalidInputError("codewords must be finite and nonzero")
        entries = wide / norms[:, None]
        raw.setflags(write=False)
        entries.setflags(write=False)
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "kind", CodebookKind(self.kind))
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_vectors(cls, vectors, kind=CodebookKind.CONVENTIONAL_RVQ, provenance: str = "") -> "Codebook":
        """Normalize arbitrary nonzero vectors and snap them to storage precision."""
        v = np.asarray(vectors, dtype=np.complex128)
        norms = np.linalg.norm(v, axis=-1, keepdims=True)
        if np.any(norms == 0) or not np.all(np.isfinite(v)):
            raise InvalidInputError("cannot build a codebook from zero or non-finite vectors")
        return cls((v / norms).astype(np.complex64), kind, provenance)

    @property
    def bits(self) -> int:
        return int(self.raw.shape[0]).bit_length() - 1

    @property
    def size(self) -> int:
        return self.raw.shape[0]

    @property
    def n_c(self) -> int:
        return self.raw.shape[1]

    def __len__(self):
        return self.size

    def __eq__(self, other):
        if not isinstance(other, Codebook):
            return NotImplemented
        return (self.kind == other.kind and self.provenance == other.provenance
                and self.raw.shape == other.raw.shape and self.raw.tobytes() == other.raw.tobytes())

    __hash__ = None

    def replace(self, **changes) -> "Codebook":
        args = {"raw": self.raw, "kind": self.kind, "provenance": self.provenance}
        args.update(changes)
        return Codebook(**args)


@dataclass(frozen=True)
class QuantizationResult:
    index: int
    similarity: float


def generate_rvq(bits: int, n_c: int, seed: int) -> Codebook:
    """Random vector quantization codebook: i.i.d. CN(0, I) codewords, normalized."""
    if not isinstance(bits, (int, np.integer)) or not 1 <= bits <= MAX_BITS:
        raise InvalidInputError(f"bits must be an integer in [1, {MAX_BITS}], got {bits!r}")
    if n_c < 1:
        raise InvalidInputError("n_c must be positive")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((2**bits, n_c)) + 1j * rng.standard_normal((2**bits, n_c))
    return Codebook.from_vectors(g, CodebookKind.CONVENTIONAL_RVQ, f"rvq bits={bits} n_c={n_c} seed={seed}")


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.complex128)
    n = np.linalg.norm(v)
    if not n > 0:
        raise InvalidInputError("cannot normalize a zero vector")
    return v / n


def cosine_sim(a, b) -> float:
    """``|a^H b| / (||a|| ||b||)``, clipped to [0, 1]."""
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if not (na > 0 and nb > 0):
        raise InvalidInputError("cosine similarity of a zero vector is undefined")
    return float(min(abs(np.vdot(a, b)) / (na * nb), 1.0))


def _similarities(h: np.ndarray, cb: Codebook) -> np.ndarray:
    # (n, 2^B) |c_j^H h| / ||h||; codeword norms are 1 by construction
    norms = np.linalg.norm(h, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise InvalidInputError("cannot quantize a zero channel")
    return np.abs(h @ cb.entries.conj().T) / norms


def _pick(s: np.ndarray) -> np.ndarray:
    """Row-wise lowest index among the (numerically) maximal entries of ``s``."""
    top = s.max(axis=-1, keepdims=True)
    return np.argmax(s >= top * (1.0 - TIE_RTOL), axis=-1)


def quantize(h, cb: Codebook) -> QuantizationResult:
    """Best-matching codeword for one channel; ties go to the lowest index."""
    h = np.asarray(h, dtype=np.complex128)
    if h.shape != (cb.n_c,):
        raise InvalidInputError(f"channel length {h.shape} does not match codebook n_c={cb.n_c}")
    idx = int(_pick(_similarities(h[None], cb))[0])
    return QuantizationResult(idx, cosine_sim(h, cb.entries[idx]))


def quantize_batch(H, cb: Codebook, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`quantize` over the rows of ``H``.

    Returns ``(indices, similarities)``.  Rows are processed in fixed-size
    chunks, so results do not depend on ``workers``.
    """
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[1] != cb.n_c:
        raise InvalidInputError(f"channel matrix shape {H.shape} incompatible with n_c={cb.n_c}")
    n = H.shape[0]
    idx = np.empty(n, dtype=np.int64)
    sim = np.empty(n)

    def run(start):
        block = H[start:start + _CHUNK].astype(np.complex128)
        s = _similarities(block, cb)
        k = _pick(s)
        idx[start:start + _CHUNK] = k
        sim[start:start + _CHUNK] = np.minimum(s[np.arange(len(k)), k], 1.0)

    starts = range(0, n, _CHUNK)
    if workers > 1 and n > _CHUNK:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)
    return idx, sim


def reconstruct(index: int, cb: Codebook) -> np.ndarray:
    if not isinstance(index, (int, np.integer)) or not 0 <= index < cb.size:
        raise InvalidInputError(f"codeword index {index!r} outside [0, {cb.size})")
    return cb.entries[int(index)].copy()


class CodebookSet:
    """Environment id -> codebook registry; all members share ``bits`` and ``n_c``."""

    def __init__(self, codebooks):
        items = list(codebooks.items()) if isinstance(codebooks, dict) else list(codebooks)
        if not items:
            raise InvalidInputError("a codebook set needs at least one codebook")
        ids = [int(env) for env, _ in items]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("duplicate environment id in codebook set")
        first = items[0][1]
        for env, cb in items:
            if cb.size != first.size or cb.n_c != first.n_c:
                raise InvalidInputError(f"codebook for environment {env} has inconsistent shape")
        self._books = dict(sorted(zip(ids, (cb for _, cb in items))))

    def __getitem__(self, env_id):
        return self._books[env_id]

    def __contains__(self, env_id):
        return env_id in self._books

    def __iter__(self):
        return iter(self._books)

    def __len__(self):
        return len(self._books)

    def items(self):
        return self._books.items()

    def __eq__(self, other):
        if not isinstance(other, CodebookSet):
            return NotImplemented
        return list(self._books) == list(other._books) and all(
            self._books[k] == other._books[k] for k in self._books)

    __hash__ = None

    def __repr__(self):
        return f"CodebookSet(envs={list(self._books)}, bits={next(iter(self._books.values())).bits})"
