"""Stratified locality sensitive hashing over fixed-length vectors.

Every vector goes into one bucket of each of ``L_out`` outer tables, keyed
by the concatenation of ``m_out`` hash bits.  A bucket holding more than
``alpha * N`` vectors is stratified: its members are re-hashed into
``L_in`` inner tables with ``m_in`` bits drawn from a second hash family.
A query collects the union of its matching plain buckets and matching
inner buckets, then scans that candidate set linearly.

Two families are available: sign random projections (cosine) and
coordinate-threshold bit sampling (L1 via its unary embedding).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ahe_slsh.errors import ConfigError, DataError

COSINE = "random_projection_cosine"
BIT_SAMPLING = "bit_sampling_l1"
KINDS = (COSINE, BIT_SAMPLING)
METRICS = ("euclidean", "l1", "cosine")

_OUTER, _INNER = 0, 1


@dataclass
class HashFamilyDescriptor:
    kind: str
    dim: int
    seed: object = 0
    # cosine: (count, dim) unit directions
    directions: np.ndarray | None = None
    # bit sampling: coordinate and threshold per function, plus (dim, 2) ranges
    coords: np.ndarray | None = None
    thresholds: np.ndarray | None = None
    ranges: np.ndarray | None = None

    @property
    def count(self) -> int:
        return len(self.directions) if self.kind == COSINE else len(self.coords)

    def bits(self, X: np.ndarray, functions=slice(None)) -> np.ndarray:
        """Hash bits of the rows of X (shape (N, dim)) for the selected functions."""
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.dim:
            raise ConfigError(f"vector dim {X.shape[-1]} != family dim {self.dim}")
        if self.kind == COSINE:
            return X @ self.directions[functions].T >= 0.0
        return X[..., self.coords[functions]] > self.thresholds[functions]


def make_family(kind: str, dim: int, count: int, ranges=None, seed=0) -> HashFamilyDescriptor:
    """Draw ``count`` hash functions of the given kind, deterministically from ``seed``.

    ``ranges`` is a (dim, 2) array of per-coordinate (min, max) and is
    required for bit sampling.  Coordinates with an empty range are
    resampled; if every range is empty the family cannot be built.
    """
    if kind not in KINDS:
        raise ConfigError(f"unknown hash family {kind!r}; choose from {KINDS}")
    if count < 1 or dim < 1:
        raise ConfigError("count and dim must be >= 1")
    rng = np.random.default_rng(seed)
    if kind == COSINE:
        d = rng.standard_normal((count, dim))
        norms = np.linalg.norm(d, axis=1, keepdims=True)
        # a zero draw has probability zero; guard anyway
        d = np.where(norms > 0, d / np.where(norms > 0, norms, 1.0), np.eye(1, dim))
        return HashFamilyDescriptor(COSINE, dim, seed, directions=d)
    if ranges is None:
        raise ConfigError("bit sampling needs per-coordinate ranges")
    ranges = np.asarray(ranges, dtype=np.float64)
    if ranges.shape != (dim, 2):
        raise ConfigError(f"ranges must have shape ({dim}, 2), got {ranges.shape}")
    usable = ranges[:, 1] > ranges[:, 0]
    if not usable.any():
        raise DataError("bit sampling: every coordinate has a degenerate (min == max) range")
    coords = np.empty(count, dtype=np.int64)
    for i in range(count):
        c = int(rng.integers(dim))
        while not usable[c]:
            c = int(rng.integers(dim))
        coords[i] = c
    lo, hi = ranges[coords, 0], ranges[coords, 1]
    thresholds = lo + rng.random(count) * (hi - lo)
    return HashFamilyDescriptor(BIT_SAMPLING, dim, seed, coords=coords, thresholds=thresholds,
                                ranges=ranges)


def _pack(bits: np.ndarray) -> list[bytes]:
    packed = np.packbits(bits, axis=-1)
    return [row.tobytes() for row in packed]


def signature(family: HashFamilyDescriptor, functions, v) -> bytes:
    """Packed bit string of ``v`` under the selected functions of ``family``."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ConfigError("signature takes a single vector")
    if isinstance(functions, range):
        functions = slice(functions.start, functions.stop, functions.step)
    return np.packbits(family.bits(v[None], functions)[0]).tobytes()


@dataclass
class SlshParams:
    L_out: int = 96
    m_out: int = 100
    L_in: int = 30
    m_in: int = 10
    alpha: float = 0.1
    k: int = 1
    outer_kind: str = COSINE
    inner_kind: str = BIT_SAMPLING
    metric: str = "euclidean"

    def __post_init__(self):
        for name in ("L_out", "m_out", "L_in", "m_in", "k"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
            setattr(self, name, int(getattr(self, name)))
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.outer_kind not in KINDS or self.inner_kind not in KINDS:
            raise ConfigError(f"hash family kinds must be among {KINDS}")
        if self.outer_kind == self.inner_kind:
            raise ConfigError("outer and inner tables must use different hash families")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown scan metric {self.metric!r}; choose from {METRICS}")


@dataclass
class Bucket:
    members: list[int]
    # inner tables of a stratified bucket: one (family, key -> members) per table
    inner: list[tuple[HashFamilyDescriptor, dict[bytes, list[int]]]] | None = None

    @property
    def stratified(self) -> bool:
        return self.inner is not None


@dataclass
class QueryResult:
    ids: list
    distances: list[float]
    candidate_count: int
    tables_touched: int
    fallback: bool


@dataclass
class SlshIndex:
    params: SlshParams
    seed: int
    ids: np.ndarray
    vectors: np.ndarray
    outer_families: list[HashFamilyDescriptor]
    tables: list[dict[bytes, Bucket]]
    _pos: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._pos = {int(i): p for p, i in enumerate(self.ids)}

    @property
    def N(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def _ranges(X: np.ndarray) -> np.ndarray:
    return np.stack([X.min(axis=0), X.max(axis=0)], axis=1)


def _inner_ranges(X: np.ndarray, global_ranges: np.ndarray) -> np.ndarray:
    r = _ranges(X)
    if (r[:, 1] > r[:, 0]).any():
        return r
    if (global_ranges[:, 1] > global_ranges[:, 0]).any():
        return global_ranges
    # every member identical: any threshold puts them all on one side
    return r + np.array([-0.5, 0.5])


def _family_for(kind, dim, count, ranges, seed):
    if kind == BIT_SAMPLING and not (ranges[:, 1] > ranges[:, 0]).any():
        ranges = ranges + np.array([-0.5, 0.5])
    return make_family(kind, dim, count, ranges, seed)


def build(vectors: Mapping[int, Sequence[float]] | np.ndarray, params: SlshParams = None,
          seed: int = 0) -> SlshIndex:
    """Build an index from an id -> vector mapping (or an (N, dim) array, ids 0..N-1).

    Table ``i`` draws its functions from its own seed stream, so a larger
    ``L_out`` with the same seed reproduces every smaller index's tables.
    """
    params = params or SlshParams()
    if isinstance(vectors, Mapping):
        ids = np.array([int(i) for i in vectors.keys()], dtype=np.int64)
        rows = [np.asarray(v, dtype=np.float64) for v in vectors.values()]
        if len({r.shape for r in rows}) > 1:
            raise ConfigError("all indexed vectors must have the same dimension")
        X = np.stack(rows) if rows else np.empty((0, 0))
    else:
        X = np.asarray(vectors, dtype=np.float64)
        ids = np.arange(len(X), dtype=np.int64)
    if X.ndim != 2 or len(X) < 1:
        raise ConfigError("build needs at least one vector of positive dimension")
    if len(np.unique(ids)) != len(ids):
        raise ConfigError("duplicate ids")
    if not np.isfinite(X).all():
        raise DataError("indexed vectors contain non-finite values")
    N, dim = X.shape
    limit = params.alpha * N
    global_ranges = _ranges(X)
    outer_families = []
    tables = []
    for t in range(params.L_out):
        fam = _family_for(params.outer_kind, dim, params.m_out, global_ranges, [seed, _OUTER, t])
        table: dict[bytes, Bucket] = {}
        for p, key in enumerate(_pack(fam.bits(X))):
            bucket = table.get(key)
            if bucket is None:
                table[key] = Bucket([p])
            else:
                bucket.members.append(p)
        for ordinal, bucket in enumerate(table.values()):
            if len(bucket.members) > limit:
                members = np.array(bucket.members)
                sub = X[members]
                rng_ = _inner_ranges(sub, global_ranges)
                bucket.inner = []
                for j in range(params.L_in):
                    ifam = _family_for(params.inner_kind, dim, params.m_in, rng_,
                                       [seed, _INNER, t, ordinal, j])
                    inner: dict[bytes, list[int]] = {}
                    for p, key in zip(members, _pack(ifam.bits(sub))):
                        inner.setdefault(key, []).append(int(p))
                    bucket.inner.append((ifam, inner))
        outer_families.append(fam)
        tables.append(table)
    return SlshIndex(params, seed, ids, X, outer_families, tables)


def _check_query(index: SlshIndex, q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (index.dim,):
        raise ConfigError(f"query has shape {q.shape}, index dim is {index.dim}")
    return q


def _candidate_positions(index: SlshIndex, q: np.ndarray) -> tuple[set[int], int]:
    found: set[int] = set()
    touched = 0
    for fam, table in zip(index.outer_families, index.tables):
        bucket = table.get(np.packbits(fam.bits(q[None])[0]).tobytes())
        if bucket is None:
            continue
        touched += 1
        if not bucket.stratified:
            found.update(bucket.members)
            continue
        for ifam, inner in bucket.inner:
            members = inner.get(np.packbits(ifam.bits(q[None])[0]).tobytes())
            if members is not None:
                touched += 1
                found.update(members)
    return found, touched


def candidates(index: SlshIndex, q) -> set[int]:
    """Ids of every stored vector sharing a (plain or inner) bucket with ``q``."""
    q = _check_query(index, q)
    found, _ = _candidate_positions(index, q)
    return {int(index.ids[p]) for p in found}


def distances(X: np.ndarray, q: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    if metric == "euclidean":
        return np.sqrt(np.sum((X - q) ** 2, axis=1))
    if metric == "l1":
        return np.sum(np.abs(X - q), axis=1)
    if metric == "cosine":
        nx = np.linalg.norm(X, axis=1)
        nq = np.linalg.norm(q)
        denom = np.where(nx * nq > 0, nx * nq, 1.0)
        return np.where(nx * nq > 0, 1.0 - (X @ q) / denom, 1.0)
    raise ConfigError(f"unknown metric {metric!r}")


def query(index: SlshIndex, q, k: int | None = None) -> QueryResult:
    """k nearest candidates of ``q``; ties go to the smaller id.

    With no candidate at all the whole index is scanned and the result
    carries ``fallback=True``.
    """
    k = index.params.k if k is None else int(k)
    if k < 1:
        raise ConfigError("k must be >= 1")
    q = _check_query(index, q)
    found, touched = _candidate_positions(index, q)
    fallback = not found
    pos = np.arange(index.N) if fallback else np.fromiter(found, dtype=np.int64, count=len(found))
    d = distances(index.vectors[pos], q, index.params.metric)
    ids = index.ids[pos]
    order = np.lexsort((ids, d))[:k]
    return QueryResult([int(i) for i in ids[order]], [float(x) for x in d[order]],
                       0 if fallback else len(found), touched, fallback)


def bucket_sizes(index: SlshIndex, table: int = 0) -> list[tuple[int, bool]]:
    """(size, stratified) for every bucket of one outer table, insertion order."""
    return [(len(b.members), b.stratified) for b in index.tables[table].values()]


# -- persistence ---------------------------------------------------------------

MAGIC = b"SLH1"
VERSION = 1


class _Writer:
    def __init__(self):
        self.buf = io.BytesIO()

    def u8(self, v):
        self.buf.write(struct.pack("<B", v))

    def u32(self, v):
        self.buf.write(struct.pack("<I", v))

    def i64(self, v):
        self.buf.write(struct.pack("<q", v))

    def f64(self, v):
        self.buf.write(struct.pack("<d", v))

    def blob(self, b: bytes):
        self.u32(len(b))
        self.buf.write(b)

    def array(self, a, dtype):
        self.buf.write(np.ascontiguousarray(a, dtype=dtype).tobytes())


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.off, self.path = data, 0, path

    def take(self, n):
        if self.off + n > len(self.data):
            raise DataError(f"{self.path}: truncated index file")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def u8(self):
        return struct.unpack("<B", self.take(1))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def i64(self):
        return struct.unpack("<q", self.take(8))[0]

    def f64(self):
        return struct.unpack("<d", self.take(8))[0]

    def blob(self):
        return self.take(self.u32())

    def array(self, count, dtype):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(count * dt.itemsize), dtype=dt).copy()


def _seed_list(seed) -> list[int]:
    return [int(s) for s in (seed if isinstance(seed, (list, tuple)) else [seed])]


def _write_family(w: _Writer, fam: HashFamilyDescriptor):
    w.u8(KINDS.index(fam.kind))
    w.u32(fam.dim)
    w.u32(fam.count)
    seeds = _seed_list(fam.seed)
    w.u32(len(seeds))
    for s in seeds:
        w.i64(s)
    if fam.kind == COSINE:
        w.array(fam.directions, "<f8")
    else:
        w.array(fam.coords, "<u4")
        w.array(fam.thresholds, "<f8")
        w.array(fam.ranges, "<f8")


def _read_family(r: _Reader) -> HashFamilyDescriptor:
    kind = KINDS[r.u8()]
    dim, count = r.u32(), r.u32()
    seed = [r.i64() for _ in range(r.u32())]
    if kind == COSINE:
        return HashFamilyDescriptor(kind, dim, seed, directions=r.array(count * dim, "<f8").reshape(count, dim))
    coords = r.array(count, "<u4").astype(np.int64)
    thresholds = r.array(count, "<f8")
    ranges = r.array(dim * 2, "<f8").reshape(dim, 2)
    return HashFamilyDescriptor(kind, dim, seed, coords=coords, thresholds=thresholds, ranges=ranges)


def _write_buckets(w: _Writer, table: dict):
    w.u32(len(table))
    for key, members in table.items():
        w.blob(key)
        w.u32(len(members))
        w.array(members, "<u4")


def _read_buckets(r: _Reader) -> dict[bytes, list[int]]:
    out = {}
    for _ in range(r.u32()):
        key = r.blob()
        out[key] = [int(x) for x in r.array(r.u32(), "<u4")]
    return out


def save_index(index: SlshIndex, path) -> None:
    p = index.params
    w = _Writer()
    w.buf.write(MAGIC)
    w.u32(VERSION)
    for v in (p.L_out, p.m_out, p.L_in, p.m_in):
        w.u32(v)
    w.f64(p.alpha)
    w.u32(p.k)
    w.u8(KINDS.index(p.outer_kind))
    w.u8(KINDS.index(p.inner_kind))
    w.u8(METRICS.index(p.metric))
    w.i64(index.seed)
    w.u32(index.N)
    w.u32(index.dim)
    w.array(index.ids, "<i8")
    w.array(index.vectors, "<f8")
    for fam, table in zip(index.outer_families, index.tables):
        _write_family(w, fam)
        w.u32(len(table))
        for key, bucket in table.items():
            w.blob(key)
            w.u32(len(bucket.members))
            w.array(bucket.members, "<u4")
            w.u8(1 if bucket.stratified else 0)
            if bucket.stratified:
                w.u32(len(bucket.inner))
                for ifam, inner in bucket.inner:
                    _write_family(w, ifam)
                    _write_buckets(w, inner)
    Path(path).write_bytes(w.buf.getvalue())


def load_index(path) -> SlshIndex:
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != MAGIC:
        raise DataError(f"{path}: not an SLSH index (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise DataError(f"{path}: unsupported index version {version}")
    L_out, m_out, L_in, m_in = (r.u32() for _ in range(4))
    alpha = r.f64()
    k = r.u32()
    outer_kind, inner_kind, metric = KINDS[r.u8()], KINDS[r.u8()], METRICS[r.u8()]
    params = SlshParams(L_out, m_out, L_in, m_in, alpha, k, outer_kind, inner_kind, metric)
    seed = r.i64()
    N, dim = r.u32(), r.u32()
    ids = r.array(N, "<i8")
    vectors = r.array(N * dim, "<f8").reshape(N, dim)
    families, tables = [], []
    for _ in range(L_out):
        families.append(_read_family(r))
        table = {}
        for _ in range(r.u32()):
            key = r.blob()
            members = [int(x) for x in r.array(r.u32(), "<u4")]
            bucket = Bucket(members)
            if r.u8():
                bucket.inner = [(_read_family(r), _read_buckets(r)) for _ in range(r.u32())]
            table[key] = bucket
        tables.append(table)
    if r.off != len(r.data):
        raise DataError(f"{path}: trailing bytes after index tables")
    return SlshIndex(params, seed, ids, vectors, families, tables)
