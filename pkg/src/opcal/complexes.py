"""Chain complexes over the rationals with homological (degree -1) differential.

Complexes have finite explicit support; everything outside the declared
degrees is zero, which makes homology and quasi-isomorphism checks exact
rather than window-approximate. Homotopies are carried as "raw" maps of
degree +1 exempt from the chain-map check.

Contraction convention used throughout the package:

    p i = id,   id - i p = d h + h d,   h i = 0,   p h = 0,   h h = 0.

The orientation (id - ip on the left) is the one satisfied by the explicit
polynomial-forms contraction in :mod:`opcal.homotopy`, and every internal
construction (homology contractions, perturbation series) follows it.
"""

from __future__ import annotations

from .exactlin import (ONE, Q, SparseMatrix, ZERO, is_injective, is_surjective,
                       kernel_basis, rank, solve)


class GradedSpace:
    """Finite graded vector space: degree -> ordered list of basis labels."""

    def __init__(self, components: dict):
        self.components = {}
        for n, labels in components.items():
            labels = list(labels)
            if len(set(labels)) != len(labels):
                raise ValueError(f"duplicate labels in degree {n}")
            if labels:
                self.components[int(n)] = labels
        self.support = sorted(self.components)

    def dim(self, n: int) -> int:
        return len(self.components.get(n, ()))

    def labels(self, n: int):
        return self.components.get(n, [])

    def total_dim(self) -> int:
        return sum(len(v) for v in self.components.values())

    def index(self, n: int, label) -> int:
        return self.components[n].index(label)

    def __eq__(self, other):
        return isinstance(other, GradedSpace) and self.components == other.components

    def __repr__(self):
        dims = {n: len(v) for n, v in self.components.items()}
        return f"GradedSpace({dims})"


class ChainComplex:
    """Graded space plus degree -1 differential, d*d = 0 checked at construction."""

    def __init__(self, space: GradedSpace, d: dict, check: bool = True):
        self.space = space
        self.d = {}
        for n, m in d.items():
            n = int(n)
            if m.is_zero():
                continue
            if m.rows != space.dim(n - 1) or m.cols != space.dim(n):
                raise ValueError(f"differential shape mismatch in degree {n}")
            self.d[n] = m
        if check:
            for n in list(self.d):
                if n - 1 in self.d:
                    if not (self.d[n - 1] * self.d[n]).is_zero():
                        raise ValueError(f"d*d != 0 from degree {n}")

    def diff(self, n: int) -> SparseMatrix:
        m = self.d.get(n)
        if m is None:
            return SparseMatrix.zero(self.space.dim(n - 1), self.space.dim(n))
        return m

    def dim(self, n: int) -> int:
        return self.space.dim(n)

    def degrees(self):
        return self.space.support

    def total_dim(self) -> int:
        return self.space.total_dim()

    def __repr__(self):
        return f"ChainComplex({ {n: self.dim(n) for n in self.degrees()} })"


def zero_complex() -> ChainComplex:
    return ChainComplex(GradedSpace({}), {})


def sphere(n: int, label="e") -> ChainComplex:
    """One-dimensional complex concentrated in degree n."""
    return ChainComplex(GradedSpace({n: [label]}), {})


def disk(n: int) -> ChainComplex:
    """Acyclic two-term complex: identity differential from degree n to n-1."""
    sp = GradedSpace({n: [f"D{n}top"], n - 1: [f"D{n}bot"]})
    return ChainComplex(sp, {n: SparseMatrix.identity(1)})


def direct_sum(a: ChainComplex, b: ChainComplex, tag_a="a", tag_b="b"):
    """Sum complex plus the two inclusion ChainMaps."""
    comps = {}
    for n in set(a.degrees()) | set(b.degrees()):
        comps[n] = [(tag_a, l) for l in a.space.labels(n)] + \
                   [(tag_b, l) for l in b.space.labels(n)]
    sp = GradedSpace(comps)
    d = {}
    for n in sp.support:
        ent = {}
        da, db = a.diff(n), b.diff(n)
        for (i, j), v in da.entries.items():
            ent[(i, j)] = v
        off_r, off_c = a.dim(n - 1), a.dim(n)
        for (i, j), v in db.entries.items():
            ent[(i + off_r, j + off_c)] = v
        d[n] = SparseMatrix(sp.dim(n - 1), sp.dim(n), ent)
    total = ChainComplex(sp, d)
    inc_a = ChainMap(a, total, {n: SparseMatrix(total.dim(n), a.dim(n),
                                                {(i, i): ONE for i in range(a.dim(n))})
                                for n in a.degrees()})
    inc_b = ChainMap(b, total, {n: SparseMatrix(total.dim(n), b.dim(n),
                                                {(i + a.dim(n), i): ONE for i in range(b.dim(n))})
                                for n in b.degrees()})
    return total, inc_a, inc_b


def shift(c: ChainComplex, k: int, tag="s") -> ChainComplex:
    """Suspension s^k: degree n of the result is degree n-k of c; d gets (-1)^k."""
    comps = {n + k: [(tag, k, l) for l in c.space.labels(n)] for n in c.degrees()}
    sign = ONE if k % 2 == 0 else -ONE
    d = {n + k: c.diff(n).scale(sign) for n in c.d}
    return ChainComplex(GradedSpace(comps), d)


class ChainMap:
    """Degree-preserving map of complexes (or a raw homotopy when degree_shift != 0).

    components[n] maps degree n of the source to degree n + degree_shift of
    the target. Chain-map commutation is checked at construction unless the
    map is flagged raw.
    """

    def __init__(self, source: ChainComplex, target: ChainComplex,
                 components: dict, degree_shift: int = 0, raw: bool = False,
                 check: bool = True):
        self.source = source
        self.target = target
        self.degree_shift = degree_shift
        self.raw = raw
        self.components = {}
        for n, m in components.items():
            n = int(n)
            if m.rows != target.dim(n + degree_shift) or m.cols != source.dim(n):
                raise ValueError(f"component shape mismatch in degree {n}")
            if not m.is_zero():
                self.components[n] = m
        if degree_shift != 0 and not raw:
            raise ValueError("nonzero degree shift requires raw=True")
        if check and not raw:
            err = self.chain_defect()
            if err is not None:
                raise ValueError(f"not a chain map in degree {err}")

    def comp(self, n: int) -> SparseMatrix:
        m = self.components.get(n)
        if m is None:
            return SparseMatrix.zero(self.target.dim(n + self.degree_shift),
                                     self.source.dim(n))
        return m

    def chain_defect(self):
        """First degree where d f != f d, or None."""
        for n in sorted(set(self.source.degrees()) | {k + 1 for k in self.source.degrees()}):
            lhs = self.target.diff(n) * self.comp(n)
            rhs = self.comp(n - 1) * self.source.diff(n)
            if lhs != rhs:
                return n
        return None

    @classmethod
    def identity(cls, c: ChainComplex) -> "ChainMap":
        return cls(c, c, {n: SparseMatrix.identity(c.dim(n)) for n in c.degrees()})

    @classmethod
    def zero(cls, source: ChainComplex, target: ChainComplex,
             degree_shift: int = 0, raw: bool = False) -> "ChainMap":
        return cls(source, target, {}, degree_shift=degree_shift, raw=raw)

    def compose(self, other: "ChainMap") -> "ChainMap":
        """self after other."""
        if other.target is not self.source and other.target.space.components != self.source.space.components:
            raise ValueError("composition endpoint mismatch")
        comps = {}
        for n in other.source.degrees():
            m = self.comp(n + other.degree_shift) * other.comp(n)
            if not m.is_zero():
                comps[n] = m
        shift_total = self.degree_shift + other.degree_shift
        return ChainMap(other.source, self.target, comps,
                        degree_shift=shift_total, raw=shift_total != 0 or self.raw or other.raw,
                        check=False)

    def add(self, other: "ChainMap", c=ONE) -> "ChainMap":
        if self.degree_shift != other.degree_shift:
            raise ValueError("degree shift mismatch")
        comps = {}
        for n in set(self.components) | set(other.components):
            m = self.comp(n) + other.comp(n).scale(c)
            if not m.is_zero():
                comps[n] = m
        return ChainMap(self.source, self.target, comps,
                        degree_shift=self.degree_shift, raw=self.raw or other.raw, check=False)

    def scale(self, c) -> "ChainMap":
        return ChainMap(self.source, self.target,
                        {n: m.scale(c) for n, m in self.components.items()},
                        degree_shift=self.degree_shift, raw=self.raw, check=False)

    def is_injective(self) -> bool:
        return all(is_injective(self.comp(n)) for n in self.source.degrees())

    def is_surjective(self) -> bool:
        return all(rank(self.comp(n - self.degree_shift)) == self.target.dim(n)
                   for n in self.target.degrees())

    def __repr__(self):
        return f"ChainMap(shift={self.degree_shift}, degs={sorted(self.components)})"


def homology_dims(c: ChainComplex) -> dict:
    """dim H_n = dim ker(d_n) - rank(d_{n+1}) for each degree in the support."""
    out = {}
    for n in c.degrees():
        dn = c.diff(n)
        ker = c.dim(n) - rank(dn)
        out[n] = ker - rank(c.diff(n + 1))
    return out


def is_acyclic(c: ChainComplex) -> bool:
    return all(v == 0 for v in homology_dims(c).values())


def mapping_cone(f: ChainMap) -> ChainComplex:
    """Cone(f: X -> Y) = Y + sX with d(y, sx) = (dy + f x, -s dx)."""
    if f.degree_shift != 0:
        raise ValueError("cone needs a degree-preserving chain map")
    x, y = f.source, f.target
    sx = shift(x, 1)
    comps = {}
    for n in set(y.degrees()) | set(sx.degrees()):
        comps[n] = [("y", l) for l in y.space.labels(n)] + list(sx.space.labels(n))
    sp = GradedSpace(comps)
    d = {}
    for n in sp.support:
        ent = {}
        dy = y.diff(n)
        for (i, j), v in dy.entries.items():
            ent[(i, j)] = v
        off_r, off_c = y.dim(n - 1), y.dim(n)
        dsx = sx.diff(n)
        for (i, j), v in dsx.entries.items():
            ent[(i + off_r, j + off_c)] = v
        fn = f.comp(n - 1)  # sX_n = X_{n-1} -> Y_{n-1}
        for (i, j), v in fn.entries.items():
            ent[(i, j + off_c)] = v
        d[n] = SparseMatrix(sp.dim(n - 1), sp.dim(n), ent)
    return ChainComplex(sp, d)


def is_quasi_iso(f: ChainMap) -> bool:
    """True iff f induces an isomorphism on homology (cone acyclicity test)."""
    if f.degree_shift != 0 or f.raw:
        raise ValueError("quasi-isomorphism test needs a chain map")
    return is_acyclic(mapping_cone(f))


class Contraction:
    """Deformation retract (i, p, h) of big onto small with side conditions."""

    def __init__(self, big: ChainComplex, small: ChainComplex,
                 i: ChainMap, p: ChainMap, h: ChainMap, check: bool = True):
        self.big = big
        self.small = small
        self.i = i
        self.p = p
        self.h = h
        if h.degree_shift != 1:
            raise ValueError("homotopy must have degree +1")
        if check and not validate_contraction(self):
            raise ValueError("contraction identities fail")

    def __repr__(self):
        return f"Contraction(big={self.big!r}, small={self.small!r})"


def _is_identity(m: ChainMap) -> bool:
    return all(m.comp(n) == SparseMatrix.identity(m.source.dim(n))
               for n in m.source.degrees())


def validate_contraction(c: Contraction) -> bool:
    """All five identities, exactly: pi=id, id-ip=dh+hd, hi=0, ph=0, hh=0."""
    if not _is_identity(c.p.compose(c.i)):
        return False
    big = c.big
    for n in big.degrees():
        ip = c.i.comp(n) * c.p.comp(n)
        dh = big.diff(n + 1) * c.h.comp(n)
        hd = c.h.comp(n - 1) * big.diff(n)
        lhs = SparseMatrix.identity(big.dim(n)) - ip
        if lhs != dh + hd:
            return False
    for n in c.small.degrees():
        if not (c.h.comp(n) * c.i.comp(n)).is_zero():
            return False
    for n in big.degrees():
        if not (c.p.comp(n + 1) * c.h.comp(n)).is_zero():
            return False
        if not (c.h.comp(n + 1) * c.h.comp(n)).is_zero():
            return False
    return True


def trivial_contraction(c: ChainComplex) -> Contraction:
    return Contraction(c, c, ChainMap.identity(c), ChainMap.identity(c),
                       ChainMap.zero(c, c, degree_shift=1, raw=True))


def homology_contraction(c: ChainComplex, tag="H") -> Contraction:
    """Deterministic contraction of c onto its homology (zero differential).

    Greedy pivot choices split each degree as boundaries + harmonic part +
    a complement mapped isomorphically onto lower boundaries; h inverts d
    on boundaries and vanishes elsewhere, which satisfies all five
    identities on the nose.
    """
    basis = {}     # degree -> (B, H, W) column blocks expressed in c coordinates
    h_labels = {}
    for n in c.degrees():
        dn = c.diff(n)
        dn1 = c.diff(n + 1)
        ker = kernel_basis(dn)  # columns spanning Z_n
        # boundaries: independent columns of d_{n+1}
        from .exactlin import column_space_pivots
        bcols = [dn1.column(j) for j in column_space_pivots(dn1)]
        # complete boundaries to Z_n by greedy pivoting over kernel vectors
        zmat_cols = [{i: v for i, v in enumerate(k) if v != 0} for k in ker]
        chosen_h = []
        cur = SparseMatrix.from_columns(c.dim(n), bcols)
        r = rank(cur)
        for col in zmat_cols:
            cand = cur.hstack(SparseMatrix.from_columns(c.dim(n), [col]))
            if rank(cand) > r:
                chosen_h.append(col)
                cur = cand
                r += 1
        # complete Z_n to the whole degree by greedy standard vectors
        chosen_w = []
        for j in range(c.dim(n)):
            col = {j: ONE}
            cand = cur.hstack(SparseMatrix.from_columns(c.dim(n), [col]))
            if rank(cand) > r:
                chosen_w.append(col)
                cur = cand
                r += 1
        basis[n] = (bcols, chosen_h, chosen_w)
        h_labels[n] = [(tag, n, k) for k in range(len(chosen_h))]

    small = ChainComplex(GradedSpace({n: ls for n, ls in h_labels.items() if ls}), {})

    i_comp, p_comp, h_comp = {}, {}, {}
    for n in c.degrees():
        bcols, hcols, wcols = basis[n]
        dim = c.dim(n)
        all_cols = bcols + hcols + wcols
        if not all_cols:
            continue
        T = SparseMatrix.from_columns(dim, all_cols)   # new basis -> standard coords
        from .exactlin import inverse as _inv
        Tinv = _inv(T)
        nb, nh = len(bcols), len(hcols)
        # i: homology classes to their harmonic representatives
        if nh:
            i_comp[n] = SparseMatrix.from_columns(dim, hcols)
        # p: project standard coords onto the harmonic block
        p_ent = {}
        for (r_, c_), v in Tinv.entries.items():
            if nb <= r_ < nb + nh:
                p_ent[(r_ - nb, c_)] = v
        if p_ent:
            p_comp[n] = SparseMatrix(len(h_labels[n]), dim, p_ent)
        # h on degree n: boundary block B_n -> W_{n+1} via the inverse of d
        bcols_list = basis[n][0]
        if bcols_list:
            wcols_up = basis.get(n + 1, ((), (), ()))[2]
            Wup = SparseMatrix.from_columns(c.dim(n + 1), list(wcols_up))
            dW = c.diff(n + 1) * Wup  # image of chosen complement, spans boundaries
            targets = []
            for bc in bcols_list:
                sol = solve(dW, {i: v for i, v in bc.items()})
                if sol is None:
                    raise RuntimeError("boundary not hit by complement block")
                targets.append((Wup * SparseMatrix.from_columns(len(sol), [
                    {k: v for k, v in enumerate(sol) if v != 0}])).column(0))
            # assemble h = targets on B-block, 0 on H and W blocks, in standard coords
            hb = SparseMatrix.from_columns(c.dim(n + 1), targets)
            sel = SparseMatrix(len(bcols_list), dim,
                               {(r_, c_): v for (r_, c_), v in Tinv.entries.items()
                                if r_ < len(bcols_list)})
            h_comp[n] = hb * sel

    i = ChainMap(small, c, i_comp, check=False)
    p = ChainMap(c, small, p_comp, check=False)
    h = ChainMap(c, c, h_comp, degree_shift=1, raw=True)
    contraction = Contraction(c, small, i, p, h, check=True)
    return contraction
