import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phenomnn.linalg import (
    SparseMat,
    add,
    extreme_eigenvalue,
    format_matrix_market,
    frobenius_norm,
    gershgorin_interval,
    kron_matvec,
    matmul,
    relu_elementwise,
    row_scale,
    scale,
    spmm,
    transpose,
    write_matrix_market,
)
from helpers import rng_for


def naive_spmm(a, d):
    n, m = a.shape
    k = d.shape[1]
    out = np.zeros((n, k))
    for i in range(n):
        for j in range(m):
            for l in range(k):
                out[i, l] += a[i, j] * d[j, l]
    return out


# -- spmm ---------------------------------------------------------------------


def test_spmm_identity():
    d = rng_for(0).standard_normal((4, 3))
    assert np.array_equal(spmm(SparseMat.identity(4), d), d)


def test_spmm_hand_example():
    b = SparseMat.from_dense([[1, 0], [1, 1], [0, 1]])
    out = spmm(b, np.array([[1.0], [2.0]]))
    assert np.array_equal(out, [[1.0], [3.0], [2.0]])


def test_spmm_zero():
    z = SparseMat.from_dense(np.zeros((3, 4)))
    d = rng_for(1).standard_normal((4, 2))
    assert np.array_equal(spmm(z, d), np.zeros((3, 2)))


def test_spmm_dimension_mismatch():
    with pytest.raises(ValueError, match="spmm"):
        spmm(SparseMat.identity(3), np.zeros((4, 2)))


@settings(deadline=None, max_examples=30)
@given(st.integers(0, 2**31 - 1), st.integers(1, 20), st.integers(1, 20), st.integers(1, 4))
def test_spmm_matches_triple_loop_oracle(seed, n, m, k):
    rng = rng_for(seed)
    a = rng.standard_normal((n, m)) * (rng.random((n, m)) < 0.4)
    d = rng.standard_normal((m, k))
    got = spmm(SparseMat.from_dense(a), d)
    assert np.max(np.abs(got - naive_spmm(a, d))) <= 1e-12


def test_spmm_pure_bitwise():
    rng = rng_for(2)
    s = SparseMat.from_dense(rng.standard_normal((6, 6)) * (rng.random((6, 6)) < 0.5))
    d = rng.standard_normal((6, 3))
    assert np.array_equal(spmm(s, d), spmm(s, d))


def test_sparsemat_validate_rejects_bad_layout():
    s = SparseMat.identity(3)
    bad = SparseMat(3, 3, s.indptr.copy(), s.indices.copy(), np.array([1.0, np.inf, 1.0]))
    with pytest.raises(ValueError, match="finite"):
        bad.validate()


# -- kron_matvec ---------------------------------------------------------------


def test_kron_matvec_identity():
    rng = rng_for(3)
    y = rng.standard_normal((4, 3))
    out = kron_matvec(SparseMat.identity(4), np.eye(3), y)
    assert np.max(np.abs(out - y)) == 0.0


def test_kron_matvec_zero_h():
    rng = rng_for(4)
    y = rng.standard_normal((2, 2))
    m = SparseMat.from_dense(rng.standard_normal((2, 2)))
    assert np.array_equal(kron_matvec(m, np.zeros((2, 2)), y), np.zeros((2, 2)))


@settings(deadline=None, max_examples=30)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4), st.integers(1, 4))
def test_kron_matvec_matches_materialized_kron(seed, n, d):
    rng = rng_for(seed)
    m = rng.standard_normal((n, n))
    h = rng.standard_normal((d, d))
    y = rng.standard_normal((n, d))
    got = kron_matvec(SparseMat.from_dense(m), h, y)
    # vec is column-stacking, so the operator matrix is kron(h.T, m)
    want = (np.kron(h.T, m) @ y.flatten(order="F")).reshape((n, d), order="F")
    assert np.max(np.abs(got - want)) <= 1e-12


def test_kron_matvec_diagonal_operator():
    rng = rng_for(5)
    diag = rng.standard_normal(3)
    h = rng.standard_normal((2, 2))
    y = rng.standard_normal((3, 2))
    want = np.diag(diag) @ y @ h
    assert np.max(np.abs(kron_matvec(diag, h, y) - want)) <= 1e-12


def test_kron_matvec_dimension_mismatch():
    with pytest.raises(ValueError, match="kron_matvec"):
        kron_matvec(SparseMat.identity(3), np.eye(2), np.zeros((3, 3)))


# -- extreme_eigenvalue ----------------------------------------------------------


def test_eigen_diagonal_max():
    a = np.diag([1.0, 2.0, 3.0])
    res = extreme_eigenvalue(lambda v: a @ v, 3, "max", iters=2000, tol=1e-12)
    assert res.converged and abs(res.value - 3.0) <= 1e-9


def test_eigen_diagonal_min():
    a = np.diag([1.0, 2.0, 3.0])
    hi = gershgorin_interval(a)[1]
    res = extreme_eigenvalue(lambda v: a @ v, 3, "min", iters=2000, tol=1e-12, shift=hi)
    assert res.converged and abs(res.value - 1.0) <= 1e-9


@pytest.mark.parametrize("seed", range(6))
def test_eigen_matches_dense_oracle(seed):
    rng = rng_for(seed)
    a = rng.standard_normal((5, 5))
    a = (a + a.T) / 2.0
    # independent oracle computed first
    spectrum = np.linalg.eigvalsh(a)
    lo, hi = gershgorin_interval(a)
    emax = extreme_eigenvalue(lambda v: a @ v, 5, "max", iters=20000, tol=1e-12, shift=-lo)
    emin = extreme_eigenvalue(lambda v: a @ v, 5, "min", iters=20000, tol=1e-12, shift=hi)
    assert abs(emax.value - spectrum[-1]) <= 1e-8
    assert abs(emin.value - spectrum[0]) <= 1e-8


def test_eigen_nonconvergence_is_flagged():
    rng = rng_for(7)
    a = rng.standard_normal((8, 8))
    a = (a + a.T) / 2.0
    lo, _ = gershgorin_interval(a)
    res = extreme_eigenvalue(lambda v: a @ v, 8, "max", iters=2, tol=1e-16, shift=-lo)
    assert not res.converged
    assert np.isfinite(res.value) and np.isfinite(res.residual)


def test_eigen_argument_validation():
    a = np.eye(2)
    with pytest.raises(ValueError, match="iters"):
        extreme_eigenvalue(lambda v: a @ v, 2, "max", iters=0)
    with pytest.raises(ValueError, match="tol"):
        extreme_eigenvalue(lambda v: a @ v, 2, "max", tol=0.0)
    with pytest.raises(ValueError, match="shift"):
        extreme_eigenvalue(lambda v: a @ v, 2, "min")
    with pytest.raises(ValueError, match="which"):
        extreme_eigenvalue(lambda v: a @ v, 2, "median")


def test_eigen_zero_operator():
    res = extreme_eigenvalue(lambda v: 0.0 * v, 4, "max")
    assert res.converged and res.value == 0.0


# -- dense kernels -----------------------------------------------------------------


def test_row_scale_identity():
    y = rng_for(8).standard_normal((5, 2))
    assert np.array_equal(row_scale(np.ones(5), y), y)


def test_relu_example():
    out = relu_elementwise(np.array([[-1.0, 2.0], [3.0, -4.0]]))
    assert np.array_equal(out, [[0.0, 2.0], [3.0, 0.0]])


def test_frobenius_zero():
    assert frobenius_norm(np.zeros((3, 3))) == 0.0


def test_dense_kernels_roundtrip():
    rng = rng_for(9)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    assert np.allclose(matmul(a, b), a @ b)
    assert np.array_equal(transpose(a), a.T)
    assert np.array_equal(add(a, a), 2 * a)
    assert np.array_equal(scale(a, -2.0), -2.0 * a)


def test_dense_kernel_mismatches():
    with pytest.raises(ValueError):
        matmul(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        add(np.zeros((2, 3)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        row_scale(np.ones(3), np.zeros((2, 2)))


# -- matrix market export ------------------------------------------------------------


def test_matrix_market_grammar():
    s = SparseMat.from_dense([[1.5, 0.0], [0.0, -2.0], [3.0, 0.0]])
    text = format_matrix_market(s)
    lines = text.strip().split("\n")
    assert lines[0] == "%%MatrixMarket matrix coordinate real general"
    assert lines[1] == "3 2 3"
    assert lines[2:] == ["1 1 1.5", "2 2 -2.0", "3 1 3.0"]


def test_matrix_market_file_roundtrip(tmp_path):
    rng = rng_for(10)
    dense = rng.standard_normal((4, 4)) * (rng.random((4, 4)) < 0.5)
    s = SparseMat.from_dense(dense)
    path = tmp_path / "m.mtx"
    write_matrix_market(s, str(path))
    lines = path.read_text().strip().split("\n")
    rows, cols, nnz = (int(x) for x in lines[1].split())
    assert (rows, cols, nnz) == (4, 4, s.nnz)
    rebuilt = np.zeros((rows, cols))
    for entry in lines[2:]:
        i, j, v = entry.split()
        rebuilt[int(i) - 1, int(j) - 1] = float(v)
    assert np.array_equal(rebuilt, s.to_dense())
