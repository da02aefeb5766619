"""Training/test set generation, binary serialization, and batch streaming.

File layout (all little-endian):

    magic "COPL" | u32 version | u32 n_basis | u32 n_x | f64 x_grid[n_x]
    | u64 n_records | u64 seed | u32 n_steps | f64 t | f64 T
    | packed f64 records

Training records are [coeffs | targets] (version 1); test records are
[coeffs | truths | std_errors], flagged by bit 16 of the version field.
Targets are single-draw functional samples sharing one Brownian draw across
the x-grid; truths are Monte Carlo oracle estimates with their standard
errors.

Determinism contract: records are produced in contiguous ranges of
``RANGE_SIZE``; range r draws from ``default_rng([seed, 0, r])`` (coefficient
block first, then the increment block), and the oracle for test record i at
grid index j draws from ``default_rng([seed, 1, i, j])``.  Files are
therefore byte-identical for a given seed regardless of how ranges might be
scheduled.
"""

import dataclasses
import math
import os
import struct
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import ContractError, DataFormatError, SimulationError
from .sobolev_basis import CompactSetSpec, build_basis, evaluate_many
from .stochastic import (PathConfig, ProblemSpec, functional_from_values,
                         mc_solution)

MAGIC = b"COPL"
BASE_VERSION = 1
TEST_FLAG = 1 << 16
X_GRID_DEFAULT = (-1.0, -0.5, 0.0, 0.5, 1.0)
RANGE_SIZE = 4096

_HEAD = struct.Struct("<4sIII")    # magic, version, n_basis, n_x
_TAIL = struct.Struct("<QQIdd")    # n_records, seed, n_steps, t, T


@dataclass(frozen=True)
class DatasetHeader:
    version: int
    n_basis: int
    x_grid: Tuple[float, ...]
    n_records: int
    seed: int
    n_steps: int
    t: float
    T: float

    def __post_init__(self):
        object.__setattr__(self, "x_grid", tuple(float(x) for x in self.x_grid))
        if self.version & 0xFFFF != BASE_VERSION:
            raise ContractError(f"unsupported version {self.version}")
        if self.n_basis < 1 or self.n_records < 1 or self.n_steps < 1:
            raise ContractError("n_basis, n_records and n_steps must be >= 1")
        if len(self.x_grid) < 1 or any(
                b <= a for a, b in zip(self.x_grid, self.x_grid[1:])):
            raise ContractError("x_grid must be non-empty, strictly increasing")
        if not all(math.isfinite(x) for x in self.x_grid):
            raise ContractError("x_grid must be finite")
        if not 0 <= self.seed < 2**64:
            raise ContractError("seed must fit an unsigned 64-bit integer")
        if not self.t < self.T:
            raise ContractError("t must precede T")

    @property
    def n_x(self) -> int:
        return len(self.x_grid)

    @property
    def is_test(self) -> bool:
        return bool(self.version & TEST_FLAG)

    @property
    def record_width(self) -> int:
        """Number of f64 fields per record."""
        return self.n_basis + (2 if self.is_test else 1) * self.n_x

    @property
    def header_bytes(self) -> int:
        return _HEAD.size + 8 * self.n_x + _TAIL.size

    @property
    def record_bytes(self) -> int:
        return 8 * self.record_width


@dataclass
class SampleRecord:
    """One training example: potential coefficients and functional samples."""

    coeffs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if not (np.isfinite(self.coeffs).all()
                and np.isfinite(self.targets).all()):
            raise ContractError("record fields must be finite")


@dataclass
class OracleRecord:
    """One test example: coefficients, oracle truths and standard errors."""

    coeffs: np.ndarray
    truths: np.ndarray
    std_errors: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        self.truths = np.asarray(self.truths, dtype=np.float64)
        self.std_errors = np.asarray(self.std_errors, dtype=np.float64)
        if not (np.isfinite(self.coeffs).all()
                and np.isfinite(self.truths).all()):
            raise ContractError("record fields must be finite")
        if not np.all(self.std_errors > 0):
            raise ContractError("std_errors must be positive")


def pack_header(header: DatasetHeader) -> bytes:
    grid = np.ascontiguousarray(header.x_grid, dtype="<f8")
    return (_HEAD.pack(MAGIC, header.version, header.n_basis, header.n_x)
            + grid.tobytes()
            + _TAIL.pack(header.n_records, header.seed, header.n_steps,
                         header.t, header.T))


def read_header(fh) -> DatasetHeader:
    """Parse the header from an open binary file positioned at the start."""
    head = fh.read(_HEAD.size)
    if len(head) < _HEAD.size:
        raise DataFormatError("file too short for the fixed header", offset=0)
    magic, version, n_basis, n_x = _HEAD.unpack(head)
    if magic != MAGIC:
        raise DataFormatError(f"bad magic {magic!r}", offset=0)
    if version & 0xFFFF != BASE_VERSION:
        raise DataFormatError(f"unsupported version {version}", offset=4)
    if n_x == 0:
        raise DataFormatError("empty x-grid", offset=12)
    grid_bytes = fh.read(8 * n_x)
    if len(grid_bytes) < 8 * n_x:
        raise DataFormatError("truncated x-grid", offset=_HEAD.size)
    x_grid = np.frombuffer(grid_bytes, dtype="<f8")
    tail_off = _HEAD.size + 8 * n_x
    tail = fh.read(_TAIL.size)
    if len(tail) < _TAIL.size:
        raise DataFormatError("truncated header", offset=tail_off)
    n_records, seed, n_steps, t, T = _TAIL.unpack(tail)
    try:
        return DatasetHeader(version=version, n_basis=n_basis,
                             x_grid=tuple(x_grid), n_records=n_records,
                             seed=seed, n_steps=n_steps, t=t, T=T)
    except ContractError as exc:
        raise DataFormatError(f"inconsistent header: {exc}", offset=0)


def _check_payload_size(path, header: DatasetHeader):
    expected = header.header_bytes + header.n_records * header.record_bytes
    actual = os.path.getsize(path)
    if actual != expected:
        raise DataFormatError(
            f"file holds {actual} bytes, header implies {expected}",
            offset=min(actual, expected))


def _split_block(header: DatasetHeader, block: np.ndarray):
    nb, nx = header.n_basis, header.n_x
    coeffs = block[:, :nb]
    if header.is_test:
        return coeffs, block[:, nb:nb + nx], block[:, nb + nx:]
    return coeffs, block[:, nb:]


def _first_bad_record(block: np.ndarray) -> int:
    return int(np.where(~np.isfinite(block).all(axis=1))[0][0])


def generate_training_set(count, spec: ProblemSpec, compact: CompactSetSpec,
                          cfg: PathConfig, seed, out_path,
                          x_grid=X_GRID_DEFAULT) -> DatasetHeader:
    """Write ``count`` training records to ``out_path``.

    Each record draws one coefficient vector from the compact cube and one
    increment sequence; the functional sample at every grid point reuses the
    same increments with the start shifted to that x.  The shift trick
    requires the exact Brownian scheme, so ``spec`` must leave drift and
    diffusion at their defaults.  ``spec.c`` is ignored: each record's
    potential is its own sampled basis expansion.  ``cfg.x0`` is likewise
    unused — start points come from the x-grid.
    """
    if count < 1:
        raise ContractError("count must be >= 1")
    if spec.b is not None or spec.eta is not None:
        raise ContractError(
            "training generation shares one Brownian draw across the x-grid, "
            "which requires zero drift and unit diffusion")
    if cfg.t_end != spec.T:
        raise ContractError(
            f"cfg.t_end ({cfg.t_end}) must equal the horizon T ({spec.T})")
    basis = build_basis(compact.n_basis)
    header = DatasetHeader(version=BASE_VERSION, n_basis=compact.n_basis,
                           x_grid=tuple(x_grid), n_records=count, seed=seed,
                           n_steps=cfg.n_steps, t=cfg.t_start, T=cfg.t_end)
    xg = np.asarray(header.x_grid)
    dt = cfg.dt
    with open(out_path, "wb") as fh:
        fh.write(pack_header(header))
        for r0 in range(0, count, RANGE_SIZE):
            n_r = min(RANGE_SIZE, count - r0)
            rng = np.random.default_rng([seed, 0, r0 // RANGE_SIZE])
            coeffs = rng.uniform(-compact.bound, compact.bound,
                                 (n_r, compact.n_basis))
            dw = rng.normal(0.0, math.sqrt(dt), (n_r, cfg.n_steps))
            walk = np.concatenate(
                [np.zeros((n_r, 1)), np.cumsum(dw, axis=1)], axis=1)
            block = np.empty((n_r, header.record_width))
            block[:, :header.n_basis] = coeffs
            for j, x in enumerate(xg):
                states = x + walk
                cvals = evaluate_many(basis, coeffs, states[:, :-1])
                fvals = None
                if spec.f is not None:
                    fvals = np.asarray(spec.f(states[:, :-1]))
                phi_final = np.asarray(spec.phi(states[:, -1]))
                try:
                    block[:, header.n_basis + j] = functional_from_values(
                        phi_final, cvals, dt, fvals)
                except SimulationError as exc:
                    rec = r0 + (exc.record_index or 0)
                    raise SimulationError(str(exc), step_index=exc.step_index,
                                          record_index=rec) from None
            if not np.isfinite(block).all():
                raise SimulationError(
                    "non-finite record produced",
                    record_index=r0 + _first_bad_record(block))
            fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())
    return header


def generate_test_set(count, spec: ProblemSpec, compact: CompactSetSpec,
                      n_paths, n_steps, seed, out_path,
                      x_grid=X_GRID_DEFAULT, t=0.0) -> DatasetHeader:
    """Write ``count`` test records with Monte Carlo oracle truths.

    Coefficients are drawn exactly like the training generator (same range
    keying); the oracle for record i at grid index j runs ``n_paths``
    independent trajectories from its own stream, so truths are reproducible
    record by record.  ``spec.c`` is ignored as in training generation.
    """
    if count < 1:
        raise ContractError("count must be >= 1")
    basis = build_basis(compact.n_basis)
    header = DatasetHeader(version=BASE_VERSION | TEST_FLAG,
                           n_basis=compact.n_basis, x_grid=tuple(x_grid),
                           n_records=count, seed=seed, n_steps=n_steps,
                           t=t, T=spec.T)
    xg = np.asarray(header.x_grid)
    with open(out_path, "wb") as fh:
        fh.write(pack_header(header))
        for r0 in range(0, count, RANGE_SIZE):
            n_r = min(RANGE_SIZE, count - r0)
            rng = np.random.default_rng([seed, 0, r0 // RANGE_SIZE])
            coeffs = rng.uniform(-compact.bound, compact.bound,
                                 (n_r, compact.n_basis))
            truths = np.empty((n_r, header.n_x))
            errors = np.empty((n_r, header.n_x))
            for i in range(n_r):
                a = coeffs[i]
                pspec = dataclasses.replace(
                    spec, c=lambda y, a=a: evaluate_many(basis, a, y))
                for j, x in enumerate(xg):
                    oracle_rng = np.random.default_rng([seed, 1, r0 + i, j])
                    try:
                        est, se = mc_solution(float(x), t, pspec, n_paths,
                                              n_steps, oracle_rng)
                    except SimulationError as exc:
                        raise SimulationError(
                            str(exc), step_index=exc.step_index,
                            record_index=r0 + i) from None
                    truths[i, j] = est
                    errors[i, j] = se
            if not (np.isfinite(truths).all() and np.all(errors > 0)):
                raise SimulationError(
                    "degenerate oracle output",
                    record_index=r0 + _first_bad_record(
                        np.concatenate([truths, np.where(errors > 0, 0.0,
                                                         np.nan)], axis=1)))
            block = np.concatenate([coeffs, truths, errors], axis=1)
            fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())
    return header


def load_dataset(path):
    """Read a whole dataset file.

    Returns (header, coeffs, targets) for training files and
    (header, coeffs, truths, std_errors) for test files.
    """
    with open(path, "rb") as fh:
        header = read_header(fh)
        _check_payload_size(path, header)
        flat = np.fromfile(fh, dtype="<f8",
                           count=header.n_records * header.record_width)
    block = flat.reshape(header.n_records, header.record_width)
    if not np.isfinite(block).all():
        bad = _first_bad_record(block)
        raise DataFormatError(
            f"non-finite values in record {bad}",
            offset=header.header_bytes + bad * header.record_bytes)
    return (header,) + _split_block(header, block)


def stream_batches(path, batch_size, shuffle_seed, epoch):
    """Iterate one epoch of batches in a seed-and-epoch-determined order.

    Every record is visited exactly once; the final batch may be short.
    Yields (coeffs, targets) for training files, (coeffs, truths, std_errors)
    for test files.  Header and size validation happen eagerly; per-record
    finiteness is checked as batches are materialized.
    """
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    with open(path, "rb") as fh:
        header = read_header(fh)
    _check_payload_size(path, header)
    mm = np.memmap(path, dtype="<f8", mode="r", offset=header.header_bytes,
                   shape=(header.n_records, header.record_width))
    perm = np.random.default_rng([shuffle_seed, epoch]).permutation(
        header.n_records)

    def batches():
        for start in range(0, header.n_records, batch_size):
            idx = perm[start:start + batch_size]
            block = np.asarray(mm[idx], dtype=np.float64)
            if not np.isfinite(block).all():
                bad = int(idx[_first_bad_record(block)])
                raise DataFormatError(
                    f"non-finite values in record {bad}",
                    offset=header.header_bytes + bad * header.record_bytes)
            yield _split_block(header, block)

    return batches()
