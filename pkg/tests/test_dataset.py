"""Dataset generation and serialization checks."""

import math
import struct

import numpy as np
import pytest

from oplearn.dataset import (RANGE_SIZE, TEST_FLAG, X_GRID_DEFAULT,
                             DatasetHeader, OracleRecord, SampleRecord,
                             generate_test_set, generate_training_set,
                             load_dataset, pack_header, stream_batches)
from oplearn.errors import ContractError, DataFormatError
from oplearn.sobolev_basis import CompactSetSpec, build_basis, evaluate_many
from oplearn.stochastic import PathConfig, ProblemSpec, mc_solution


def square(y):
    return y * y


def identity(y):
    return y


def zero_potential(y):
    return np.zeros_like(np.asarray(y, dtype=float))


SPEC_SQ = ProblemSpec(phi=square, c=zero_potential)
CFG = PathConfig(t_start=0.0, t_end=1.0, n_steps=100, x0=0.0)
COMPACT = CompactSetSpec(n_basis=5, bound=5.0)


# ------------------------------------------------------------------ header

def test_header_validation():
    good = dict(version=1, n_basis=5, x_grid=X_GRID_DEFAULT, n_records=1,
                seed=0, n_steps=100, t=0.0, T=1.0)
    DatasetHeader(**good)
    for key, bad in [("x_grid", (0.0, 0.0)), ("x_grid", (1.0, -1.0)),
                     ("n_records", 0), ("n_steps", 0), ("t", 1.0),
                     ("seed", -1), ("version", 7)]:
        with pytest.raises(ContractError):
            DatasetHeader(**{**good, key: bad})


def test_record_validation():
    SampleRecord(np.zeros(5), np.zeros(5))
    with pytest.raises(ContractError):
        SampleRecord(np.zeros(5), np.array([1.0, np.inf]))
    OracleRecord(np.zeros(5), np.ones(5), np.full(5, 0.1))
    with pytest.raises(ContractError):
        OracleRecord(np.zeros(5), np.ones(5), np.zeros(5))


def test_header_sizes():
    h = DatasetHeader(version=1, n_basis=5, x_grid=X_GRID_DEFAULT,
                      n_records=3, seed=1, n_steps=10, t=0.0, T=1.0)
    assert h.header_bytes == 4 + 4 + 4 + 4 + 5 * 8 + 8 + 8 + 4 + 8 + 8
    assert h.record_bytes == 10 * 8
    ht = DatasetHeader(version=1 | TEST_FLAG, n_basis=5, x_grid=X_GRID_DEFAULT,
                       n_records=3, seed=1, n_steps=10, t=0.0, T=1.0)
    assert ht.is_test and ht.record_bytes == 15 * 8


# -------------------------------------------------------------- generation

def test_single_record_shared_draw_identity_phi(tmp_path):
    out = tmp_path / "train.bin"
    spec = ProblemSpec(phi=identity, c=zero_potential)
    generate_training_set(1, spec, CompactSetSpec(n_basis=5, bound=0.0),
                          CFG, seed=7, out_path=out)
    header, coeffs, targets = load_dataset(out)
    np.testing.assert_array_equal(coeffs, np.zeros((1, 5)))
    # zero potential, identity datum: target at x is x + W(1) for one shared W
    w = targets[0, 2]  # grid point x = 0
    np.testing.assert_allclose(targets[0], np.asarray(X_GRID_DEFAULT) + w,
                               rtol=1e-14, atol=1e-15)
    offsets = targets[0] - targets[0][0]
    np.testing.assert_allclose(
        offsets, np.asarray(X_GRID_DEFAULT) - X_GRID_DEFAULT[0],
        rtol=1e-13, atol=1e-14)


def test_single_record_shared_draw_square_phi(tmp_path):
    spec_id = ProblemSpec(phi=identity, c=zero_potential)
    out_id = tmp_path / "id.bin"
    generate_training_set(1, spec_id, CompactSetSpec(n_basis=5, bound=0.0),
                          CFG, seed=7, out_path=out_id)
    _, _, lin = load_dataset(out_id)
    out_sq = tmp_path / "sq.bin"
    generate_training_set(1, SPEC_SQ, CompactSetSpec(n_basis=5, bound=0.0),
                          CFG, seed=7, out_path=out_sq)
    _, _, sq = load_dataset(out_sq)
    # same seed, same draw stream: the squared targets are exactly the
    # squares of the linear ones
    np.testing.assert_array_equal(sq, lin * lin)


def test_generation_deterministic(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    cfg = PathConfig(t_start=0.0, t_end=1.0, n_steps=20, x0=0.0)
    for out in (a, b):
        generate_training_set(50, SPEC_SQ, COMPACT, cfg, seed=99,
                              out_path=out)
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.bin"
    generate_training_set(50, SPEC_SQ, COMPACT, cfg, seed=100, out_path=c)
    assert a.read_bytes() != c.read_bytes()


def test_coefficient_prefix_stability(tmp_path):
    # coefficients are drawn as the range's first block, so a shorter file
    # shares the coefficient prefix (targets shift with the increments block)
    cfg = PathConfig(t_start=0.0, t_end=1.0, n_steps=10, x0=0.0)
    small, large = tmp_path / "s.bin", tmp_path / "l.bin"
    generate_training_set(10, SPEC_SQ, COMPACT, cfg, seed=3, out_path=small)
    generate_training_set(40, SPEC_SQ, COMPACT, cfg, seed=3, out_path=large)
    _, cs, _ = load_dataset(small)
    _, cl, _ = load_dataset(large)
    np.testing.assert_array_equal(cs, cl[:10])


def test_first_coefficients_follow_stream(tmp_path):
    out = tmp_path / "t.bin"
    cfg = PathConfig(t_start=0.0, t_end=1.0, n_steps=10, x0=0.0)
    generate_training_set(3, SPEC_SQ, COMPACT, cfg, seed=11, out_path=out)
    _, coeffs, _ = load_dataset(out)
    expected = np.random.default_rng([11, 0, 0]).uniform(-5.0, 5.0, 5)
    np.testing.assert_array_equal(coeffs[0], expected)
    assert np.all(np.abs(coeffs) <= 5.0)


def test_training_requires_exact_scheme(tmp_path):
    spec = ProblemSpec(phi=square, c=zero_potential,
                       eta=lambda y: np.ones_like(y))
    with pytest.raises(ContractError):
        generate_training_set(1, spec, COMPACT, CFG, 0,
                              tmp_path / "x.bin")


def test_training_horizon_consistency(tmp_path):
    spec = ProblemSpec(phi=square, c=zero_potential, T=2.0)
    with pytest.raises(ContractError):
        generate_training_set(1, spec, COMPACT, CFG, 0, tmp_path / "x.bin")


def test_test_set_zero_coeff_truths(tmp_path):
    out = tmp_path / "test.bin"
    generate_test_set(1, SPEC_SQ, CompactSetSpec(n_basis=5, bound=0.0),
                      n_paths=4000, n_steps=50, seed=21, out_path=out)
    header, coeffs, truths, errs = load_dataset(out)
    assert header.is_test
    np.testing.assert_array_equal(coeffs, np.zeros((1, 5)))
    assert np.all(errs > 0)
    # zero potential: u(x, 0) = x^2 + 1
    for j, x in enumerate(X_GRID_DEFAULT):
        assert abs(truths[0, j] - (x * x + 1.0)) <= 3.0 * errs[0, j]


def test_test_set_deterministic(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    for out in (a, b):
        generate_test_set(3, SPEC_SQ, COMPACT, n_paths=200, n_steps=10,
                          seed=5, out_path=out)
    assert a.read_bytes() == b.read_bytes()


def test_test_set_oracle_reproducible_per_record(tmp_path):
    out = tmp_path / "t.bin"
    generate_test_set(2, SPEC_SQ, COMPACT, n_paths=300, n_steps=10, seed=17,
                      out_path=out)
    _, coeffs, truths, errs = load_dataset(out)
    basis = build_basis(5)
    i, j = 1, 3
    pspec = ProblemSpec(
        phi=square, c=lambda y: evaluate_many(basis, coeffs[i], y))
    est, se = mc_solution(X_GRID_DEFAULT[j], 0.0, pspec, 300, 10,
                          np.random.default_rng([17, 1, i, j]))
    assert truths[i, j] == est
    assert errs[i, j] == se


def test_mean_targets_match_independent_oracle(tmp_path):
    # two estimators of E_a[u(x, 0; c_a)] over the cube: the per-x average
    # of single-draw targets vs an average of per-sample MC oracles.  Both
    # use the same step count, so the shared quadrature bias cancels.
    out = tmp_path / "big.bin"
    n_steps, count = 50, 20000
    cfg = PathConfig(t_start=0.0, t_end=1.0, n_steps=n_steps, x0=0.0)
    generate_training_set(count, SPEC_SQ, COMPACT, cfg, seed=1234,
                          out_path=out)
    _, _, targets = load_dataset(out)
    basis = build_basis(5)
    rng = np.random.default_rng(999)
    k_outer = 200
    draws = rng.uniform(-5.0, 5.0, (k_outer, 5))
    for j, x in enumerate(X_GRID_DEFAULT):
        t_mean = float(targets[:, j].mean())
        t_se = float(targets[:, j].std(ddof=1)) / math.sqrt(count)
        estimates = np.empty(k_outer)
        for i in range(k_outer):
            pspec = ProblemSpec(
                phi=square, c=lambda y, a=draws[i]: evaluate_many(basis, a, y))
            estimates[i], _ = mc_solution(float(x), 0.0, pspec, 1000, n_steps,
                                          np.random.default_rng([999, i, j]))
        o_mean = float(estimates.mean())
        o_se = float(estimates.std(ddof=1)) / math.sqrt(k_outer)
        tol = 3.0 * math.hypot(t_se, o_se)
        assert abs(t_mean - o_mean) <= tol, (x, t_mean, o_mean, tol)


# ------------------------------------------------------------ serialization

def test_round_trip_preserves_bytes(tmp_path):
    out = tmp_path / "t.bin"
    cfg = PathConfig(t_start=0.0, t_end=1.0, n_steps=10, x0=0.0)
    header = generate_training_set(7, SPEC_SQ, COMPACT, cfg, seed=2,
                                   out_path=out)
    h2, coeffs, targets = load_dataset(out)
    assert h2 == header
    rewritten = pack_header(h2) + np.ascontiguousarray(
        np.concatenate([coeffs, targets], axis=1), dtype="<f8").tobytes()
    assert rewritten == out.read_bytes()


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(DataFormatError) as exc:
        load_dataset(p)
    assert exc.value.offset == 0


def test_truncated_header(tmp_path):
    p = tmp_path / "short.bin"
    p.write_bytes(b"CO")
    with pytest.raises(DataFormatError):
        load_dataset(p)


def test_truncated_records(tmp_path):
    out = tmp_path / "t.bin"
    cfg = PathConfig(t_start=0.0, t_end=1.0, n_steps=10, x0=0.0)
    generate_training_set(5, SPEC_SQ, COMPACT, cfg, seed=2, out_path=out)
    blob = out.read_bytes()
    out.write_bytes(blob[:-8])
    with pytest.raises(DataFormatError):
        load_dataset(out)
    with pytest.raises(DataFormatError):
        stream_batches(out, 2, 0, 0)


def test_poisoned_record_offset(tmp_path):
    out = tmp_path / "t.bin"
    cfg = PathConfig(t_start=0.0, t_end=1.0, n_steps=10, x0=0.0)
    header = generate_training_set(6, SPEC_SQ, COMPACT, cfg, seed=2,
                                   out_path=out)
    bad_record = 4
    pos = header.header_bytes + bad_record * header.record_bytes + 7 * 8
    blob = bytearray(out.read_bytes())
    blob[pos:pos + 8] = struct.pack("<d", math.inf)
    out.write_bytes(bytes(blob))
    with pytest.raises(DataFormatError) as exc:
        load_dataset(out)
    assert exc.value.offset == header.header_bytes \
        + bad_record * header.record_bytes
    with pytest.raises(DataFormatError) as exc2:
        for _ in stream_batches(out, 3, 0, 0):
            pass
    assert exc2.value.offset == exc.value.offset


# ---------------------------------------------------------------- streaming

@pytest.fixture()
def small_file(tmp_path):
    out = tmp_path / "s.bin"
    cfg = PathConfig(t_start=0.0, t_end=1.0, n_steps=5, x0=0.0)
    generate_training_set(25, SPEC_SQ, COMPACT, cfg, seed=8, out_path=out)
    return out


def test_batch_sizes(small_file):
    sizes = [c.shape[0] for c, _ in stream_batches(small_file, 10, 0, 0)]
    assert sizes == [10, 10, 5]


def test_epoch_permutation_reproducible(small_file):
    def collect(epoch):
        return np.concatenate(
            [t[:, 0] for _, t in stream_batches(small_file, 7, 42, epoch)])

    e0a, e0b, e1 = collect(0), collect(0), collect(1)
    np.testing.assert_array_equal(e0a, e0b)
    assert not np.array_equal(e0a, e1)
    np.testing.assert_array_equal(np.sort(e0a), np.sort(e1))


def test_every_record_once(small_file):
    _, _, targets = load_dataset(small_file)
    seen = np.concatenate(
        [t for _, t in stream_batches(small_file, 4, 3, 5)])
    np.testing.assert_array_equal(
        np.sort(seen[:, 0]), np.sort(targets[:, 0]))


def test_stream_batches_rejects_bad_batch(small_file):
    with pytest.raises(ContractError):
        stream_batches(small_file, 0, 0, 0)


def test_stream_test_file_yields_triples(tmp_path):
    out = tmp_path / "t.bin"
    generate_test_set(4, SPEC_SQ, COMPACT, n_paths=100, n_steps=5, seed=1,
                      out_path=out)
    batches = list(stream_batches(out, 3, 0, 0))
    assert len(batches) == 2
    coeffs, truths, errs = batches[0]
    assert coeffs.shape == (3, 5)
    assert truths.shape == (3, 5)
    assert errs.shape == (3, 5)


def test_range_size_unchanged():
    # the on-disk determinism contract bakes in the range length
    assert RANGE_SIZE == 4096
