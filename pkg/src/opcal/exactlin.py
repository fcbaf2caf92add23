"""Exact rational scalar arithmetic and sparse linear algebra.

Everything downstream (homology, Maurer-Cartan residuals, obstruction
solving) reduces to rank / solve / kernel computations over the rationals,
so this module never rounds: scalars are arbitrary-precision rationals in
lowest terms and elimination uses a fixed deterministic pivot rule
(first nonzero in the leftmost unresolved column), which makes every
witness reproducible across runs.
"""

from __future__ import annotations

try:  # gmpy2.mpq is drop-in compatible and much faster; Fraction is the fallback
    from gmpy2 import mpq as Q
except ImportError:  # pragma: no cover
    from fractions import Fraction as Q

ZERO = Q(0)
ONE = Q(1)


def scalar(x) -> "Q":
    """Coerce ints, 'p/q' strings and rationals to the scalar type."""
    if isinstance(x, str):
        if "/" in x:
            p, q = x.split("/")
            return Q(int(p), int(q))
        return Q(int(x))
    return Q(x)


def scalar_str(x) -> str:
    """Render a scalar as an exact literal, 'p' or 'p/q'."""
    return str(Q(x))


class SparseMatrix:
    """Immutable-by-convention sparse matrix: entries maps (row, col) to nonzero scalars."""

    __slots__ = ("rows", "cols", "entries")

    def __init__(self, rows: int, cols: int, entries=None):
        if rows < 0 or cols < 0:
            raise ValueError("negative dimensions")
        self.rows = rows
        self.cols = cols
        ent = {}
        if entries:
            for (i, j), v in entries.items():
                if not (0 <= i < rows and 0 <= j < cols):
                    raise ValueError(f"index {(i, j)} out of bounds for {rows}x{cols}")
                v = Q(v)
                if v != 0:
                    ent[(i, j)] = v
        self.entries = ent

    # -- constructors -------------------------------------------------

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls(n, n, {(i, i): ONE for i in range(n)})

    @classmethod
    def zero(cls, rows: int, cols: int) -> "SparseMatrix":
        return cls(rows, cols)

    @classmethod
    def from_rows(cls, dense) -> "SparseMatrix":
        rows = len(dense)
        cols = len(dense[0]) if rows else 0
        ent = {}
        for i, row in enumerate(dense):
            if len(row) != cols:
                raise ValueError("ragged rows")
            for j, v in enumerate(row):
                v = scalar(v)
                if v != 0:
                    ent[(i, j)] = v
        return cls(rows, cols, ent)

    @classmethod
    def from_columns(cls, rows: int, columns) -> "SparseMatrix":
        """Build from a list of column vectors (dicts row->scalar)."""
        ent = {}
        for j, col in enumerate(columns):
            for i, v in col.items():
                if v != 0:
                    ent[(i, j)] = Q(v)
        return cls(rows, len(columns), ent)

    # -- basic operations ---------------------------------------------

    def __eq__(self, other):
        return (isinstance(other, SparseMatrix) and self.rows == other.rows
                and self.cols == other.cols and self.entries == other.entries)

    def __hash__(self):
        return hash((self.rows, self.cols, tuple(sorted(self.entries.items()))))

    def get(self, i: int, j: int):
        return self.entries.get((i, j), ZERO)

    def is_zero(self) -> bool:
        return not self.entries

    def __add__(self, other: "SparseMatrix") -> "SparseMatrix":
        if (self.rows, self.cols) != (other.rows, other.cols):
            raise ValueError("shape mismatch in addition")
        ent = dict(self.entries)
        for k, v in other.entries.items():
            w = ent.get(k, ZERO) + v
            if w == 0:
                ent.pop(k, None)
            else:
                ent[k] = w
        return SparseMatrix(self.rows, self.cols, ent)

    def __sub__(self, other: "SparseMatrix") -> "SparseMatrix":
        return self + other.scale(-1)

    def scale(self, c) -> "SparseMatrix":
        c = Q(c)
        if c == 0:
            return SparseMatrix(self.rows, self.cols)
        return SparseMatrix(self.rows, self.cols,
                            {k: c * v for k, v in self.entries.items()})

    def __neg__(self) -> "SparseMatrix":
        return self.scale(-1)

    def __mul__(self, other: "SparseMatrix") -> "SparseMatrix":
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        if self.cols != other.rows:
            raise ValueError("shape mismatch in product")
        # index other by row for cache-friendly accumulation
        by_row = {}
        for (i, j), v in other.entries.items():
            by_row.setdefault(i, []).append((j, v))
        acc = {}
        for (i, k), u in self.entries.items():
            row = by_row.get(k)
            if not row:
                continue
            for j, v in row:
                key = (i, j)
                w = acc.get(key, ZERO) + u * v
                if w == 0:
                    acc.pop(key, None)
                else:
                    acc[key] = w
        return SparseMatrix(self.rows, other.cols, acc)

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix(self.cols, self.rows,
                            {(j, i): v for (i, j), v in self.entries.items()})

    def apply(self, vec: dict) -> dict:
        """Matrix times sparse column vector (dict col->scalar)."""
        out = {}
        for (i, j), v in self.entries.items():
            c = vec.get(j)
            if c:
                w = out.get(i, ZERO) + v * c
                if w == 0:
                    out.pop(i, None)
                else:
                    out[i] = w
        return out

    def column(self, j: int) -> dict:
        return {i: v for (i, jj), v in self.entries.items() if jj == j}

    def hstack(self, other: "SparseMatrix") -> "SparseMatrix":
        if self.rows != other.rows:
            raise ValueError("row mismatch in hstack")
        ent = dict(self.entries)
        for (i, j), v in other.entries.items():
            ent[(i, j + self.cols)] = v
        return SparseMatrix(self.rows, self.cols + other.cols, ent)

    def vstack(self, other: "SparseMatrix") -> "SparseMatrix":
        if self.cols != other.cols:
            raise ValueError("col mismatch in vstack")
        ent = dict(self.entries)
        for (i, j), v in other.entries.items():
            ent[(i + self.rows, j)] = v
        return SparseMatrix(self.rows + other.rows, self.cols, ent)

    def to_rows(self):
        out = [[ZERO] * self.cols for _ in range(self.rows)]
        for (i, j), v in self.entries.items():
            out[i][j] = v
        return out

    def __repr__(self):
        return f"SparseMatrix({self.rows}x{self.cols}, nnz={len(self.entries)})"


def _row_echelon(mat: SparseMatrix, rhs=None):
    """Forward elimination with the first-nonzero-in-column pivot rule.

    Returns (pivot list [(row, col)], row dicts, transformed rhs rows).
    rhs, when given, is a list of dicts transformed alongside.
    """
    rows = []
    for i in range(mat.rows):
        rows.append({})
    for (i, j), v in mat.entries.items():
        rows[i][j] = v
    rvec = [dict(r) for r in rhs] if rhs is not None else None

    pivots = []
    prow = 0
    for col in range(mat.cols):
        # first row at or below prow with a nonzero entry in this column
        sel = -1
        for i in range(prow, mat.rows):
            if rows[i].get(col):
                sel = i
                break
        if sel < 0:
            continue
        if sel != prow:
            rows[prow], rows[sel] = rows[sel], rows[prow]
            if rvec is not None:
                rvec[prow], rvec[sel] = rvec[sel], rvec[prow]
        pv = rows[prow][col]
        for i in range(prow + 1, mat.rows):
            f = rows[i].get(col)
            if not f:
                continue
            factor = f / pv
            ri, rp = rows[i], rows[prow]
            for j, v in rp.items():
                w = ri.get(j, ZERO) - factor * v
                if w == 0:
                    ri.pop(j, None)
                else:
                    ri[j] = w
            if rvec is not None:
                ti, tp = rvec[i], rvec[prow]
                for j, v in tp.items():
                    w = ti.get(j, ZERO) - factor * v
                    if w == 0:
                        ti.pop(j, None)
                    else:
                        ti[j] = w
        pivots.append((prow, col))
        prow += 1
        if prow == mat.rows:
            break
    return pivots, rows, rvec


def rank(mat: SparseMatrix) -> int:
    """Rank over the rationals, computed exactly."""
    pivots, _, _ = _row_echelon(mat)
    return len(pivots)


def solve(mat: SparseMatrix, b) -> list | None:
    """One solution of mat * x = b, or None when inconsistent.

    b may be a list of scalars or a dict row->scalar of length mat.rows.
    The solution is the particular one with all free variables set to zero
    under the deterministic pivot rule.
    """
    if isinstance(b, dict):
        bd = {i: Q(v) for i, v in b.items() if v}
        if any(not (0 <= i < mat.rows) for i in bd):
            raise ValueError("rhs index out of range")
    else:
        if len(b) != mat.rows:
            raise ValueError(f"rhs length {len(b)} != rows {mat.rows}")
        bd = {i: Q(v) for i, v in enumerate(b) if Q(v) != 0}
    pivots, rows, rhs = _solve_echelon(mat, bd)
    return _back_substitute(mat.cols, pivots, rows, rhs)


def _solve_echelon(mat: SparseMatrix, bd: dict):
    rows = [dict() for _ in range(mat.rows)]
    for (i, j), v in mat.entries.items():
        rows[i][j] = v
    rhs = [dict() for _ in range(mat.rows)]
    for i, v in bd.items():
        rhs[i][0] = v
    pivots = []
    prow = 0
    for col in range(mat.cols):
        sel = -1
        for i in range(prow, mat.rows):
            if rows[i].get(col):
                sel = i
                break
        if sel < 0:
            continue
        if sel != prow:
            rows[prow], rows[sel] = rows[sel], rows[prow]
            rhs[prow], rhs[sel] = rhs[sel], rhs[prow]
        pv = rows[prow][col]
        for i in range(prow + 1, mat.rows):
            f = rows[i].get(col)
            if not f:
                continue
            factor = f / pv
            ri, rp = rows[i], rows[prow]
            for j, v in rp.items():
                w = ri.get(j, ZERO) - factor * v
                if w == 0:
                    ri.pop(j, None)
                else:
                    ri[j] = w
            bv = rhs[prow].get(0)
            if bv:
                w = rhs[i].get(0, ZERO) - factor * bv
                if w == 0:
                    rhs[i].pop(0, None)
                else:
                    rhs[i][0] = w
        pivots.append((prow, col))
        prow += 1
        if prow == mat.rows:
            break
    return pivots, rows, rhs


def _back_substitute(ncols, pivots, rows, rhs):
    prow = len(pivots)
    for i in range(prow, len(rows)):
        if rhs[i].get(0):
            return None  # inconsistent
    x = [ZERO] * ncols
    for (r, c) in reversed(pivots):
        s = rhs[r].get(0, ZERO)
        row = rows[r]
        acc = ZERO
        for j, v in row.items():
            if j > c and x[j] != 0:
                acc += v * x[j]
        x[c] = (s - acc) / row[c]
    return x


def kernel_basis(mat: SparseMatrix) -> list:
    """Basis of the null space; deterministic, empty iff the matrix is injective.

    Vectors are returned as dense lists of scalars of length mat.cols.
    """
    pivots, rows, _ = _row_echelon(mat)
    pivot_cols = [c for (_, c) in pivots]
    pivot_set = set(pivot_cols)
    free_cols = [c for c in range(mat.cols) if c not in pivot_set]
    basis = []
    for fc in free_cols:
        x = [ZERO] * mat.cols
        x[fc] = ONE
        for (r, c) in reversed(pivots):
            row = rows[r]
            acc = ZERO
            for j, v in row.items():
                if j > c and x[j] != 0:
                    acc += v * x[j]
            if acc != 0:
                x[c] = -acc / row[c]
        basis.append(x)
    return basis


def column_space_pivots(mat: SparseMatrix) -> list:
    """Column indices forming a basis of the column space (deterministic)."""
    pivots, _, _ = _row_echelon(mat)
    return [c for (_, c) in pivots]


def retraction(mat: SparseMatrix) -> SparseMatrix:
    """Left inverse R of an injective matrix: R * mat = identity.

    Picks the pivot rows of mat and inverts the resulting square block, so
    the retraction kills a fixed complement of the column space.
    """
    pivot_rows = column_space_pivots(mat.transpose())
    n = mat.cols
    if len(pivot_rows) != n:
        raise ValueError("matrix is not injective")
    block = SparseMatrix(n, n, {(k, j): mat.get(i, j)
                                for k, i in enumerate(pivot_rows)
                                for j in range(n) if mat.get(i, j) != 0})
    inv = inverse(block)
    ent = {}
    for (i, k), v in inv.entries.items():
        ent[(i, pivot_rows[k])] = v
    return SparseMatrix(n, mat.rows, ent)


def inverse(mat: SparseMatrix) -> SparseMatrix:
    """Inverse of a square invertible matrix."""
    if mat.rows != mat.cols:
        raise ValueError("not square")
    n = mat.rows
    cols = []
    for j in range(n):
        e = [ONE if i == j else ZERO for i in range(n)]
        x = solve(mat, e)
        if x is None:
            raise ValueError("matrix is singular")
        cols.append({i: v for i, v in enumerate(x) if v != 0})
    return SparseMatrix.from_columns(n, cols)


def is_injective(mat: SparseMatrix) -> bool:
    return rank(mat) == mat.cols


def is_surjective(mat: SparseMatrix) -> bool:
    return rank(mat) == mat.rows


class CosetReducer:
    """Canonical representatives modulo the span of given vectors.

    Builds a reduced row echelon form of the spanning set once; reduce()
    then eliminates the pivot coordinates of any vector, producing the
    canonical coset representative supported on non-pivot coordinates.
    """

    def __init__(self, dim: int, vectors):
        self.dim = dim
        rows = []
        for v in vectors:
            r = self._eliminate(dict(v), rows)
            if r:
                piv = min(r)
                rows.append((piv, r))
                rows.sort()
        # back-eliminate to reduced form
        for idx in range(len(rows) - 1, -1, -1):
            piv, r = rows[idx]
            for jdx in range(idx):
                pj, rj = rows[jdx]
                c = rj.get(piv)
                if c:
                    f = c / r[piv]
                    for k, v in r.items():
                        w = rj.get(k, ZERO) - f * v
                        if w == 0:
                            rj.pop(k, None)
                        else:
                            rj[k] = w
        self.rows = rows
        self.pivots = [p for p, _ in rows]
        self.free = [i for i in range(dim) if i not in set(self.pivots)]

    @staticmethod
    def _eliminate(vec, rows):
        for piv, r in rows:
            c = vec.get(piv)
            if c:
                f = c / r[piv]
                for k, v in r.items():
                    w = vec.get(k, ZERO) - f * v
                    if w == 0:
                        vec.pop(k, None)
                    else:
                        vec[k] = w
        return vec

    def reduce(self, vec: dict) -> dict:
        """Canonical representative of vec modulo the span."""
        return self._eliminate(dict(vec), self.rows)

    def contains(self, vec: dict) -> bool:
        return not self.reduce(vec)

    def rank(self) -> int:
        return len(self.rows)


def vec_add(u: dict, v: dict, c=ONE) -> dict:
    """u + c*v on sparse vectors (dicts)."""
    out = dict(u)
    for k, w in v.items():
        s = out.get(k, ZERO) + c * w
        if s == 0:
            out.pop(k, None)
        else:
            out[k] = s
    return out


def vec_scale(u: dict, c) -> dict:
    c = Q(c)
    if c == 0:
        return {}
    return {k: c * v for k, v in u.items()}
