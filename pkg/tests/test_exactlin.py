import random

import pytest
from hypothesis import given, settings, strategies as st

from opcal.exactlin import (Q, SparseMatrix, inverse, is_injective, kernel_basis,
                            rank, retraction, scalar, scalar_str, solve)

try:
    import sympy
    HAVE_SYMPY = True
except ImportError:
    HAVE_SYMPY = False


def M(rows):
    return SparseMatrix.from_rows(rows)


def mat_vec(m, x):
    out = [Q(0)] * m.rows
    for (i, j), v in m.entries.items():
        out[i] += v * x[j]
    return out


def test_scalar_parsing():
    assert scalar("3/6") == Q(1, 2)
    assert scalar("-2") == Q(-2)
    assert scalar_str(Q(4, 6)) == "2/3"
    assert scalar_str(Q(5)) == "5"


def test_rank_identity():
    assert rank(SparseMatrix.identity(2)) == 2


def test_rank_zero_matrix():
    assert rank(SparseMatrix.zero(3, 5)) == 0


def test_rank_dependent_rows():
    # hand Gaussian elimination: second row is twice the first
    assert rank(M([[1, 2], [2, 4]])) == 1


def test_solve_identity():
    assert solve(SparseMatrix.identity(2), [3, 5]) == [Q(3), Q(5)]


def test_solve_inconsistent():
    assert solve(SparseMatrix.zero(1, 1), [1]) is None


def test_solve_back_substitution():
    # [[1,1],[0,1]] x = (2,1)  =>  x = (1,1) by hand back-substitution
    assert solve(M([[1, 1], [0, 1]]), [2, 1]) == [Q(1), Q(1)]


def test_solve_dimension_mismatch():
    with pytest.raises(ValueError):
        solve(M([[1, 0]]), [1, 2])


def test_kernel_identity():
    assert kernel_basis(SparseMatrix.identity(3)) == []


def test_kernel_zero_map():
    basis = kernel_basis(SparseMatrix.zero(1, 2))
    assert len(basis) == 2
    assert rank(SparseMatrix.from_rows(basis)) == 2


def test_kernel_rank_one():
    # hand computation: kernel of [[1,2],[2,4]] is spanned by (2,-1)
    basis = kernel_basis(M([[1, 2], [2, 4]]))
    assert len(basis) == 1
    v = basis[0]
    assert v[0] * Q(-1) == v[1] * Q(2)
    assert v != [0, 0]


def test_inverse_and_retraction():
    a = M([[2, 1], [1, 1]])
    ainv = inverse(a)
    assert a * ainv == SparseMatrix.identity(2)
    tall = M([[1, 0], [2, 1], [3, 3]])
    r = retraction(tall)
    assert r * tall == SparseMatrix.identity(2)


def _random_matrix(rng, rows, cols, density=0.4):
    ent = {}
    for i in range(rows):
        for j in range(cols):
            if rng.random() < density:
                ent[(i, j)] = Q(rng.randint(-4, 4))
    return SparseMatrix(rows, cols, ent)


def test_rank_nullity_on_random_sparse_matrices():
    rng = random.Random(20240915)
    for _ in range(60):
        rows, cols = rng.randint(1, 7), rng.randint(1, 7)
        m = _random_matrix(rng, rows, cols)
        assert rank(m) + len(kernel_basis(m)) == cols


def test_solve_returns_exact_solutions_or_certifies_failure():
    rng = random.Random(77)
    for _ in range(60):
        rows, cols = rng.randint(1, 6), rng.randint(1, 6)
        m = _random_matrix(rng, rows, cols)
        b = [Q(rng.randint(-3, 3)) for _ in range(rows)]
        x = solve(m, b)
        if x is not None:
            assert mat_vec(m, x) == b
        else:
            aug = m.hstack(SparseMatrix(rows, 1, {(i, 0): v for i, v in enumerate(b) if v != 0}))
            assert rank(aug) > rank(m)


def test_determinism_across_runs():
    rng = random.Random(5)
    mats = [_random_matrix(rng, 5, 5) for _ in range(10)]
    sols1 = [solve(m, [1, 0, 2, 0, 1]) for m in mats]
    kers1 = [kernel_basis(m) for m in mats]
    sols2 = [solve(m, [1, 0, 2, 0, 1]) for m in mats]
    kers2 = [kernel_basis(m) for m in mats]
    assert sols1 == sols2 and kers1 == kers2


@pytest.mark.skipif(not HAVE_SYMPY, reason="sympy oracle unavailable")
def test_rank_against_sympy_oracle():
    rng = random.Random(123)
    for _ in range(25):
        rows, cols = rng.randint(1, 5), rng.randint(1, 5)
        m = _random_matrix(rng, rows, cols, density=0.5)
        sm = sympy.Matrix([[sympy.Rational(str(m.get(i, j))) for j in range(cols)]
                           for i in range(rows)])
        assert rank(m) == sm.rank()


@given(st.lists(st.lists(st.integers(-5, 5), min_size=1, max_size=5), min_size=1, max_size=5)
       .filter(lambda rows: len({len(r) for r in rows}) == 1))
@settings(max_examples=40, deadline=None)
def test_kernel_vectors_annihilate(rows):
    m = M(rows)
    for v in kernel_basis(m):
        assert mat_vec(m, v) == [Q(0)] * m.rows


def test_matrix_algebra():
    a = M([[1, 2], [0, 1]])
    b = M([[1, 0], [3, 1]])
    assert (a * b) == M([[7, 2], [3, 1]])
    assert (a + b) == M([[2, 2], [3, 2]])
    assert a.transpose() == M([[1, 0], [2, 1]])
    assert is_injective(a)
