"""Training ensembles of (normalized spectrum, eigenvector) pairs and their file format.

Binary layout (little-endian)::

    b"EXDS" | u32 version | u32 n_samples | u32 n_tip | u32 n_sites | u32 flags
    float32 inputs  [n_samples, n_tip]   row-major
    float32 targets [n_samples, n_sites] row-major
    u64 meta_length | meta_length bytes of UTF-8 JSON
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .eigen import canonicalize_rows, diagonalize
from .errors import FormatError, InvalidConfigError, InvalidInputError
from .exciton import DisorderSpec, build_geometry, build_hamiltonian, sample_disorder
from .nearfield import build_scan, field_projections
from .seeding import derive_seed, make_rng

MAGIC = b"EXDS"
VERSION = 1
HEADER = struct.Struct("<4sIIIII")
U64 = struct.Struct("<Q")

FLAG_NOISY = 1
FLAG_DEGENERATE = 2

META_COLUMNS = {
    "sigma_d": np.float64,
    "sigma_od": np.float64,
    "realization": np.int64,
    "state": np.int64,
    "seed": np.uint64,
    "degenerate": np.bool_,
}


@dataclass
class EnsembleConfig:
    """Recipe for one ensemble.

    Each ``sigma_d`` entry is a tranche with diagonal disorder only and each
    ``sigma_od`` entry a tranche with off-diagonal disorder only; every
    tranche holds ``realizations`` Hamiltonians.
    """

    geometry: dict = field(default_factory=lambda: {"kind": "chain", "n": 20})
    scan: dict = field(default_factory=dict)
    sigma_d: list = field(default_factory=lambda: [0.02, 0.04, 0.06, 0.08])
    sigma_od: list = field(default_factory=list)
    realizations: int = 100
    noise_sigma: float = 0.0
    master_seed: int = 0
    split_fraction: float = 0.8

    def __post_init__(self):
        if int(self.realizations) != self.realizations or self.realizations < 1:
            raise InvalidConfigError("realizations must be a positive integer")
        if not 0 < self.split_fraction < 1:
            raise InvalidConfigError("split_fraction must lie in (0, 1)")
        if self.noise_sigma < 0:
            raise InvalidConfigError("noise_sigma must be non-negative")
        if not self.sigma_d and not self.sigma_od:
            raise InvalidConfigError("at least one disorder tranche is required")
        for s in list(self.sigma_d) + list(self.sigma_od):
            if not np.isfinite(s) or s < 0:
                raise InvalidConfigError(f"disorder strengths must be non-negative, got {s}")

    def tranches(self) -> list[tuple[float, float]]:
        return [(float(s), 0.0) for s in self.sigma_d] + [(0.0, float(s)) for s in self.sigma_od]

    def to_dict(self) -> dict:
        return {
            "geometry": dict(self.geometry), "scan": dict(self.scan),
            "sigma_d": list(self.sigma_d), "sigma_od": list(self.sigma_od),
            "realizations": int(self.realizations), "noise_sigma": float(self.noise_sigma),
            "master_seed": int(self.master_seed), "split_fraction": float(self.split_fraction),
        }


@dataclass
class DataSet:
    inputs: np.ndarray
    targets: np.ndarray
    meta: dict
    flags: int = 0

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float32)
        self.targets = np.ascontiguousarray(self.targets, dtype=np.float32)
        n = len(self.inputs)
        if not isinstance(self.meta, dict):
            raise InvalidInputError("meta must be a mapping of column name to values")
        if self.inputs.ndim != 2 or self.targets.ndim != 2 or len(self.targets) != n:
            raise InvalidInputError("inputs and targets must be 2D with matching sample counts")
        meta = {}
        for name, dtype in META_COLUMNS.items():
            col = np.asarray(self.meta.get(name, np.zeros(n)), dtype=dtype)
            if col.shape != (n,):
                raise InvalidInputError(f"meta column {name!r} has {col.size} entries for {n} samples")
            meta[name] = col
        self.meta = meta

    @property
    def n_samples(self) -> int:
        return len(self.inputs)

    @property
    def n_tip(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_sites(self) -> int:
        return self.targets.shape[1]

    def subset(self, idx) -> "DataSet":
        idx = np.asarray(idx)
        return DataSet(self.inputs[idx], self.targets[idx],
                       {k: v[idx] for k, v in self.meta.items()}, self.flags)

    def equals(self, other: "DataSet") -> bool:
        return (self.flags == other.flags
                and np.array_equal(self.inputs, other.inputs)
                and np.array_equal(self.targets, other.targets)
                and all(np.array_equal(self.meta[k], other.meta[k]) for k in META_COLUMNS))


def normalize_max(spectra: np.ndarray) -> np.ndarray:
    """Divide each row by its maximum."""
    peak = spectra.max(axis=-1, keepdims=True)
    if np.any(peak <= 0):
        raise InvalidInputError("spectrum with non-positive maximum cannot be normalized")
    return spectra / peak


def _realization(cfg: EnsembleConfig, geometry, projections, tranche: int, k: int):
    sigma_d, sigma_od = cfg.tranches()[tranche]
    seed = derive_seed(cfg.master_seed, tranche, k)
    disorder = sample_disorder(DisorderSpec(sigma_d, sigma_od, seed), geometry)
    es = diagonalize(build_hamiltonian(geometry, disorder))
    amp = es.coefficients @ projections.T
    spectra = amp * amp
    if cfg.noise_sigma > 0:
        rng = make_rng(derive_seed(cfg.master_seed, tranche, k, 1))
        peak = spectra.max(axis=1, keepdims=True)
        spectra = spectra + rng.standard_normal(spectra.shape) * (cfg.noise_sigma * peak)
    # canonicalize the stored float32 values so re-canonicalization is a no-op
    targets = canonicalize_rows(es.coefficients.astype(np.float32).astype(np.float64))
    return normalize_max(spectra), targets, seed, es.degenerate


def generate_ensemble(cfg: EnsembleConfig, order=None) -> DataSet:
    """Build the dataset for ``cfg``.

    Sample order is (tranche, realization, state) regardless of ``order``,
    an optional permutation of the flat realization index used to run the
    realizations in a different sequence.
    """
    geometry = build_geometry(cfg.geometry)
    scan = build_scan(geometry, cfg.scan)
    projections = field_projections(geometry, scan)
    n, n_tip = geometry.n, scan.n_tip
    jobs = [(t, k) for t in range(len(cfg.tranches())) for k in range(int(cfg.realizations))]
    total = len(jobs) * n
    inputs = np.empty((total, n_tip), dtype=np.float32)
    targets = np.empty((total, n), dtype=np.float32)
    meta = {name: np.zeros(total, dtype=dt) for name, dt in META_COLUMNS.items()}
    sequence = range(len(jobs)) if order is None else order
    for j in sequence:
        t, k = jobs[j]
        x, c, seed, degenerate = _realization(cfg, geometry, projections, t, k)
        rows = slice(j * n, (j + 1) * n)
        inputs[rows] = x
        targets[rows] = c
        sd, so = cfg.tranches()[t]
        meta["sigma_d"][rows] = sd
        meta["sigma_od"][rows] = so
        meta["realization"][rows] = k
        meta["state"][rows] = np.arange(n)
        meta["seed"][rows] = seed
        meta["degenerate"][rows] = degenerate
    flags = (FLAG_NOISY if cfg.noise_sigma > 0 else 0)
    if meta["degenerate"].any():
        flags |= FLAG_DEGENERATE
    return DataSet(inputs, targets, meta, flags)


def expected_sample_count(cfg: EnsembleConfig, n_sites: int) -> int:
    return len(cfg.tranches()) * int(cfg.realizations) * n_sites


def split(ds: DataSet, fraction: float, seed: int) -> tuple[DataSet, DataSet]:
    """Random disjoint partition into ``floor(fraction * n)`` and the remainder."""
    if not 0 < fraction < 1:
        raise InvalidConfigError("split fraction must lie in (0, 1)")
    n = ds.n_samples
    n_train = int(np.floor(fraction * n))
    if n_train == 0 or n_train == n:
        raise InvalidConfigError(f"split of {n} samples at {fraction} leaves an empty partition")
    perm = make_rng(seed).permutation(n)
    return ds.subset(np.sort(perm[:n_train])), ds.subset(np.sort(perm[n_train:]))


def _meta_json(ds: DataSet) -> bytes:
    cols = {}
    for name, col in ds.meta.items():
        cols[name] = col.tolist()
    return json.dumps({"columns": cols}, separators=(",", ":")).encode()


def to_bytes(ds: DataSet) -> bytes:
    meta = _meta_json(ds)
    return b"".join([
        HEADER.pack(MAGIC, VERSION, ds.n_samples, ds.n_tip, ds.n_sites, ds.flags),
        ds.inputs.astype("<f4").tobytes(),
        ds.targets.astype("<f4").tobytes(),
        U64.pack(len(meta)),
        meta,
    ])


def save(ds: DataSet, path) -> str:
    """Write ``ds`` and return the SHA-256 of the file contents."""
    blob = to_bytes(ds)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def from_bytes(blob: bytes) -> DataSet:
    if len(blob) < HEADER.size:
        raise FormatError("file shorter than header", len(blob))
    magic, version, n, n_tip, n_sites, flags = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    off = HEADER.size
    sizes = (n * n_tip * 4, n * n_sites * 4)
    if len(blob) < off + sum(sizes) + U64.size:
        raise FormatError("truncated array data", len(blob))
    inputs = np.frombuffer(blob, "<f4", n * n_tip, off).reshape(n, n_tip)
    off += sizes[0]
    targets = np.frombuffer(blob, "<f4", n * n_sites, off).reshape(n, n_sites)
    off += sizes[1]
    (meta_len,) = U64.unpack_from(blob, off)
    off += U64.size
    if len(blob) != off + meta_len:
        raise FormatError(f"meta block length {meta_len} inconsistent with file size", off - U64.size)
    try:
        meta = json.loads(blob[off:].decode())["columns"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"unreadable meta block: {exc}", off) from exc
    try:
        return DataSet(inputs.astype(np.float32), targets.astype(np.float32), meta, flags)
    except (InvalidInputError, TypeError, ValueError, OverflowError) as exc:
        raise FormatError(f"inconsistent meta block: {exc}", off) from exc


def load(path) -> DataSet:
    return from_bytes(Path(path).read_bytes())


def file_size(n_samples: int, n_tip: int, n_sites: int, meta_len: int) -> int:
    return HEADER.size + 4 * n_samples * (n_tip + n_sites) + U64.size + meta_len


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, config: dict, files: dict) -> None:
    """JSON manifest with the config echo and a checksum per dataset file."""
    from . import __version__

    entries = {}
    for name, p in files.items():
        ds_head = Path(p).read_bytes()[:HEADER.size]
        _, _, n, n_tip, n_sites, flags = HEADER.unpack(ds_head)
        entries[name] = {"path": Path(p).name, "sha256": sha256_file(p), "n_samples": n,
                         "n_tip": n_tip, "n_sites": n_sites, "flags": flags}
    doc = {"format": "EXDS", "format_version": VERSION, "excirec_version": __version__,
           "config": config, "files": entries}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
