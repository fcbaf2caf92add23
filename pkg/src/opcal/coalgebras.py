"""Conilpotent coalgebra containers: bar and cobar constructions.

The bar of a homotopy algebra is the cofree conilpotent coalgebra on its
underlying complex, truncated at the window, with the codifferential
assembled from the dual coderivation, the internal differential and the
structure components; that the resulting differential squares to zero is
rechecked at construction. In symmetric mode the component of weight w and
arity n is realized as the invariant subspace of (dual component) tensor
(n-th tensor power), computed through signed orbit sums when every
generator space is one-dimensional and by exact kernels otherwise.

The cobar of a conilpotent coalgebra is a presented free algebra over the
quotient operad with generator bookkeeping; because the full free algebra
is infinite dimensional the construction carries a hard total-weight bound
and every homology statement about it is relative to that window.
"""

from __future__ import annotations

from itertools import product as iproduct

from .complexes import ChainComplex, ChainMap, GradedSpace, homology_dims, is_quasi_iso
from .exactlin import (ONE, Q, SparseMatrix, ZERO, kernel_basis, retraction,
                       vec_add)
from .hoalg import (Flat, HomotopyAlgebra, InftyMorphism, block_reorder_sign,
                    comp_eval, tuple_degree)
from .operads import KoszulSystem, Truncation, TruncationError
from . import trees as tr


class ConilCoalgebra:
    """Finite conilpotent coalgebra with explicit structure map.

    delta[i] lists the decomposition of the i-th flat basis element as
    (coeff, (w, k, top_idx), child_tuple) terms, including the primitive
    term with identity top. weights[i] is the weight-filtration level of
    the basis element (bases are required to be filtration-homogeneous).
    """

    def __init__(self, ks: KoszulSystem, cx: ChainComplex, delta, weights,
                 name="C"):
        self.ks = ks
        self.cx = cx
        self.flat = Flat(cx)
        self.delta = delta
        self.weights = list(weights)
        self.name = name

    def dim(self):
        return self.flat.dim()

    def weight_of_vec(self, vec: dict) -> int:
        return max((self.weights[i] for i in vec), default=0)

    def __repr__(self):
        return f"ConilCoalgebra({self.name}, dim={self.dim()})"


class BarCoalgebra(ConilCoalgebra):
    """Quasi-free coalgebra on a homotopy algebra, with component access."""

    def __init__(self, ks, cx, delta, weights, algebra, components,
                 comp_keys, comp_retr, flat_of, name):
        super().__init__(ks, cx, delta, weights, name=name)
        self.algebra = algebra
        self.components = components      # (w,n) -> list of basis vecs (dicts)
        self.comp_keys = comp_keys        # (w,n) -> ordered key list
        self.comp_retr = comp_retr        # (w,n) -> retraction matrix or None
        self.flat_of = flat_of            # (w,n,local) -> flat index

    def component_items(self):
        return sorted(self.components)

    def to_local_coords(self, w, n, vec_component: dict) -> dict:
        """Component-coordinate dict {(dual_i, atuple): c} -> local basis coords."""
        if not vec_component:
            return {}
        retr = self.comp_retr[(w, n)]
        if retr is None:
            out = {}
            keyindex = self._keyindex(w, n)
            for key, c in vec_component.items():
                out[keyindex[key]] = c
            return out
        keyindex = self._keyindex(w, n)
        col = {}
        for key, c in vec_component.items():
            col[keyindex[key]] = c
        return retr.apply(col)

    def _keyindex(self, w, n):
        cache = getattr(self, "_ki", None)
        if cache is None:
            cache = self._ki = {}
        if (w, n) not in cache:
            cache[(w, n)] = {k: i for i, k in enumerate(self.comp_keys[(w, n)])}
        return cache[(w, n)]

    def to_flat_vec(self, w, n, vec_component: dict) -> dict:
        from .hoalg import component_symmetrize
        vec_component = component_symmetrize(self.ks, self.algebra.flat,
                                             w, n, vec_component)
        loc = self.to_local_coords(w, n, vec_component)
        return {self.flat_of[(w, n, j)]: c for j, c in loc.items() if c != 0}


def _monomial_ok(E) -> bool:
    return all(len(g) <= 1 for g in E.components.values())


def invariant_component_basis(ks: KoszulSystem, flat: Flat, w, n,
                              tuple_iter=None):
    """Basis of the (invariant) component: list of dicts {(dual_i, atuple): c}.

    Nonsymmetric mode: all singleton keys. Symmetric mode: invariants of
    the diagonal action, via signed orbit sums constrained to the dual
    subspace when the generator spaces are one-dimensional, by a dense
    kernel otherwise. tuple_iter yields the admissible argument tuples
    (used by weight-capped algebras; the set must be action-stable).
    """
    dd = ks.dual_dim(w, n)
    if dd == 0:
        return []
    adim = flat.dim()
    if tuple_iter is None:
        tuple_iter = lambda: iproduct(range(adim), repeat=n)
    if not ks.symmetric or n == 1:
        out = []
        for atuple in tuple_iter():
            for i in range(dd):
                out.append({(i, atuple): ONE})
        return out
    if _monomial_ok(ks.E):
        return _invariants_monomial(ks, flat, w, n, tuple_iter)
    return _invariants_dense(ks, flat, w, n, tuple_iter)


def _tuple_act(flat, atuple, sigma):
    """Tuple part of the diagonal action: position j receives sigma^{-1}(j),
    with the Koszul sign of the reorder."""
    inv = tr.perm_inverse(sigma)
    permuted = tuple(atuple[inv[j] - 1] for j in range(len(sigma)))
    degs = [flat.deg[a] for a in atuple]
    sign = tr.koszul_perm_sign(degs, tuple(x - 1 for x in inv))
    return sign, permuted


def _invariants_monomial(ks, flat, w, n, tuple_iter):
    span = ks.span
    trees_basis = span.basis(w, n)
    gens = [tr.transposition(n, i) for i in range(1, n)]
    seen = set()
    orbit_sums = []
    for atuple in tuple_iter():
        for t_idx in range(len(trees_basis)):
            key = (t_idx, atuple)
            if key in seen:
                continue
            # BFS with sign tracking over the diagonal action
            signs = {key: ONE}
            frontier = [key]
            alive = True
            while frontier:
                nxt = []
                for (ti, at) in frontier:
                    for sigma in gens:
                        terms = tr.act_tree(ks.sE, trees_basis[ti], sigma)
                        if len(terms) != 1:
                            raise RuntimeError("non-monomial action")
                        c_t, t2 = terms[0]
                        sA, at2 = _tuple_act(flat, at, sigma)
                        k2 = (span.index(w, n, t2), at2)
                        val = signs[(ti, at)] * c_t * sA
                        if k2 in signs:
                            if signs[k2] != val:
                                alive = False
                        else:
                            signs[k2] = val
                            nxt.append(k2)
                frontier = nxt
                if not alive:
                    break
            seen.update(signs)
            if alive:
                orbit_sums.append(signs)
    # constrain to the dual subspace: rows of (P - I) tensor identity
    bmat = ks._bmat[(w, n)]
    retr = ks._retr[(w, n)]
    proj = bmat * retr
    pmi = proj - SparseMatrix.identity(proj.rows)
    rows = {}
    for j, osum in enumerate(orbit_sums):
        for (t_idx, atuple), c in osum.items():
            for (r, t2), v in pmi.entries.items():
                if t2 == t_idx:
                    key = (r, atuple)
                    cur = rows.setdefault(key, {})
                    cur[j] = cur.get(j, ZERO) + c * v
    mat_entries = {}
    row_ids = {}
    for key, cols in rows.items():
        rid = row_ids.setdefault(key, len(row_ids))
        for j, v in cols.items():
            if v != 0:
                mat_entries[(rid, j)] = v
    mat = SparseMatrix(len(row_ids), len(orbit_sums), mat_entries)
    combos = kernel_basis(mat)
    out = []
    for combo in combos:
        tree_vec = {}
        for j, c in enumerate(combo):
            if c == 0:
                continue
            for key, v in orbit_sums[j].items():
                tree_vec[key] = tree_vec.get(key, ZERO) + c * v
        # convert tree coordinates to dual coordinates per tuple slice
        out_vec = {}
        for (t_idx, atuple), c in tree_vec.items():
            if c == 0:
                continue
            for (i, t2), v in retr.entries.items():
                if t2 == t_idx:
                    k2 = (i, atuple)
                    out_vec[k2] = out_vec.get(k2, ZERO) + c * v
        out_vec = {k: v for k, v in out_vec.items() if v != 0}
        if out_vec:
            out.append(out_vec)
    return out


def _invariants_dense(ks, flat, w, n, tuple_iter):
    from .hoalg import key_action_terms
    dd = ks.dual_dim(w, n)
    keys = [(i, atuple) for atuple in tuple_iter() for i in range(dd)]
    keyindex = {k: i for i, k in enumerate(keys)}
    # (M_sigma - I) v = 0: assemble the action matrix by target key
    ent = {}
    for gen_i in range(1, n):
        sigma = tr.transposition(n, gen_i)
        off = (gen_i - 1) * len(keys)
        for col, (i, atuple) in enumerate(keys):
            for c, key2 in key_action_terms(ks, flat, w, n, i, atuple, sigma):
                ent[(off + keyindex[key2], col)] = \
                    ent.get((off + keyindex[key2], col), ZERO) + c
            ent[(off + col, col)] = ent.get((off + col, col), ZERO) - ONE
    mat = SparseMatrix((n - 1) * len(keys), len(keys),
                       {k: v for k, v in ent.items() if v != 0})
    out = []
    for kv in kernel_basis(mat):
        vec = {keys[i]: c for i, c in enumerate(kv) if c != 0}
        if vec:
            out.append(vec)
    return out


# -- the bar construction -----------------------------------------------------

def bar_coalgebra(a: HomotopyAlgebra, name=None) -> BarCoalgebra:
    """Quasi-free coalgebra on the algebra with the structure codifferential.

    The underlying complex construction re-verifies that the codifferential
    squares to zero, so a successful call certifies the Maurer-Cartan data
    at the coalgebra level as well.
    """
    ks = a.ks
    flat = a.flat
    components = {}
    comp_keys = {}
    comp_retr = {}
    for w in range(0, ks.trunc.w_max + 1):
        for n in range(1, ks.trunc.n_max + 1):
            if a.weight_cap is None:
                tuple_iter = None
            else:
                from .hoalg import bounded_tuples
                tuple_iter = (lambda _w=w, _n=n:
                              bounded_tuples(a.weights, _n, a.weight_cap - _w))
            basis = invariant_component_basis(ks, flat, w, n, tuple_iter)
            if not basis:
                continue
            components[(w, n)] = basis
            keys = sorted({k for v in basis for k in v})
            comp_keys[(w, n)] = keys
            if not ks.symmetric or n == 1:
                comp_retr[(w, n)] = None
            else:
                keyindex = {k: i for i, k in enumerate(keys)}
                cols = [{keyindex[k]: c for k, c in v.items()} for v in basis]
                comp_retr[(w, n)] = retraction(
                    SparseMatrix.from_columns(len(keys), cols))

    # flat layout and degrees
    flat_of = {}
    labels = {}
    degrees = {}
    for (w, n), basis in sorted(components.items()):
        for j, vec in enumerate(basis):
            (i0, at0) = next(iter(vec))
            deg = ks.dual_degree(w, n, i0) + tuple_degree(flat, at0)
            degrees[(w, n, j)] = deg
            labels.setdefault(deg, []).append((w, n, j))
    space = GradedSpace(labels)
    for d, ls in labels.items():
        for pos, key in enumerate(ls):
            flat_of[key] = None  # filled after Flat is built

    bar = BarCoalgebra.__new__(BarCoalgebra)
    bar.ks = ks
    bar.algebra = a
    bar.components = components
    bar.comp_keys = comp_keys
    bar.comp_retr = comp_retr
    bar.name = name or f"Bar({a.name})"

    # differential on basis vectors, expressed in component coordinates
    def diff_component(w, n, vec):
        out = {}
        for (i, atuple), c in vec.items():
            for key2, c2 in _bar_diff_term(ks, a, w, n, i, atuple).items():
                v = out.get(key2, ZERO) + c * c2
                if v == 0:
                    out.pop(key2, None)
                else:
                    out[key2] = v
        return out

    # assemble chain complex
    index_in_degree = {}
    for d, ls in labels.items():
        for pos, key in enumerate(ls):
            index_in_degree[key] = (d, pos)
    dmats = {}
    for d, ls in sorted(labels.items()):
        ent = {}
        lower = {key: pos for pos, key in enumerate(labels.get(d - 1, []))}
        for col, (w, n, j) in enumerate(ls):
            img = diff_component_grouped(ks, a, components[(w, n)][j], w, n)
            for (w2, n2), vec2 in img.items():
                # plain images represent coinvariant classes; project onto
                # the invariant realization before expressing in the basis
                from .hoalg import component_symmetrize
                vec2 = component_symmetrize(ks, a.flat, w2, n2, vec2)
                loc = _to_local(bar, w2, n2, vec2)
                for j2, c in loc.items():
                    key2 = (w2, n2, j2)
                    if c != 0:
                        if key2 not in lower:
                            raise RuntimeError("bar differential leaves window")
                        ent[(lower[key2], col)] = ent.get((lower[key2], col), ZERO) + c
        dmats[d] = SparseMatrix(len(labels.get(d - 1, [])), len(ls),
                                {k: v for k, v in ent.items() if v != 0})
    cx = ChainComplex(space, dmats)

    bar.cx = cx
    bar.flat = Flat(cx)
    for key, (d, pos) in index_in_degree.items():
        flat_of[key] = bar.flat.pos[(d, pos)]
    bar.flat_of = flat_of
    bar.weights = [0] * bar.flat.dim()
    for (w, n, j), fi in flat_of.items():
        bar.weights[fi] = w

    # structure map: full cuts of every basis vector, stored as the
    # canonical symmetrized representatives
    delta = [[] for _ in range(bar.flat.dim())]
    for (w, n), basis in components.items():
        for j, vec in enumerate(basis):
            fi = flat_of[(w, n, j)]
            delta[fi] = symmetrize_delta_terms(
                ks, lambda x: bar.flat.deg[x], _bar_delta(bar, w, n, vec))
    bar.delta = delta
    return bar


def _to_local(bar, w, n, vec_component):
    if (w, n) not in bar.components:
        if vec_component:
            raise RuntimeError("component missing from bar window")
        return {}
    retr = bar.comp_retr[(w, n)]
    keyindex = {k: i for i, k in enumerate(bar.comp_keys[(w, n)])}
    col = {}
    for key, c in vec_component.items():
        if key not in keyindex:
            raise RuntimeError("value outside the invariant component")
        col[keyindex[key]] = c
    if retr is None:
        return col
    return retr.apply(col)


def diff_component_grouped(ks, a, vec, w, n):
    out = {}
    for (i, atuple), c in vec.items():
        for (comp, key2), c2 in _bar_diff_term(ks, a, w, n, i, atuple).items():
            cur = out.setdefault(comp, {})
            v = cur.get(key2, ZERO) + c * c2
            if v == 0:
                cur.pop(key2, None)
            else:
                cur[key2] = v
    return {comp: vec2 for comp, vec2 in out.items() if vec2}


def _bar_diff_term(ks, a, w, n, i, atuple):
    """Codifferential of one monomial, keyed ((w', n'), (dual_j, tuple))."""
    flat = a.flat
    out = {}

    def add(comp, key, c):
        if c == 0:
            return
        k2 = (comp, key)
        v = out.get(k2, ZERO) + c
        if v == 0:
            out.pop(k2, None)
        else:
            out[k2] = v

    # dual coderivation part
    for j, cj in ks.dphi_matrix(w, n).column(i).items():
        add((w - 1, n), (j, atuple), cj)
    # internal differential, Leibniz over the arguments after the dual factor
    ddeg = ks.dual_degree(w, n, i)
    sign0 = -ONE if ddeg % 2 else ONE
    acc = 0
    for slot, aidx in enumerate(atuple):
        s = sign0 * (-ONE if acc % 2 else ONE)
        for b, cb in flat.d[aidx].items():
            add((w, n), (i, atuple[:slot] + (b,) + atuple[slot + 1:]), s * cb)
        acc += flat.deg[aidx]
    # structure part: split off an inner factor and apply the structure map
    for (c, (wo, no, io), slot, (wi, ni, ii), block) in ks.delta1(w, n, i):
        if wi < 1:
            continue
        inner_args = tuple(atuple[b - 1] for b in block)
        val = a.op(wi, ni, ii, inner_args)  # raises outside the window
        if not val:
            continue
        rest = tuple(q for q in range(1, n + 1) if q not in set(block))
        argsign = block_reorder_sign(flat, atuple,
                                     [rest[:slot - 1], block, rest[slot - 1:]])
        before = rest[:slot - 1]
        before_deg = sum(flat.deg[atuple[q - 1]] for q in before)
        s = Q(argsign)
        if ks.dual_degree(wi, ni, ii) % 2 and before_deg % 2:
            s = -s
        if (ks.dual_degree(wo, no, io) + before_deg) % 2:
            s = -s
        outer_args = tuple(atuple[q - 1] for q in before)
        after_args = tuple(atuple[q - 1] for q in rest[slot - 1:])
        for bidx, cb in val.items():
            key = (io, outer_args + (bidx,) + after_args)
            add((wo, no), key, c * s * cb)
    return out


def _bar_delta(bar, w, n, vec):
    """Full structure map of a bar basis vector, children in basis coords.

    Returns a list of (coeff, (w_top, k, top_idx), child_flat_tuple).
    """
    ks = bar.ks
    flat = bar.algebra.flat
    grouped = {}
    for (i, atuple), c in vec.items():
        for (cc, (wt, k, it), bots) in ks.cuts(w, n, i):
            blocks = [blk for (_, blk) in bots]
            argsign = block_reorder_sign(flat, atuple, blocks)
            inter = ONE
            prior = 0
            children = []
            for q, ((wb, nb, ib), blk) in enumerate(bots):
                if ks.dual_degree(wb, nb, ib) % 2 and prior % 2:
                    inter = -inter
                args_b = tuple(atuple[b - 1] for b in blk)
                children.append(((wb, nb), (ib, args_b)))
                prior += sum(flat.deg[atuple[b - 1]] for b in blk)
            key = (wt, k, it, tuple(children))
            val = c * cc * argsign * inter
            grouped[key] = grouped.get(key, ZERO) + val
    # project children slotwise into the invariant realization
    from .hoalg import component_symmetrize
    out = {}
    for (wt, k, it, children), c in grouped.items():
        if c == 0:
            continue
        expansions = [(c, ())]
        for (comp, key) in children:
            sym = component_symmetrize(ks, flat, comp[0], comp[1], {key: ONE})
            loc = _to_local(bar, comp[0], comp[1], sym)
            expansions = [(cc * cv, tp + (bar.flat_of[(comp[0], comp[1], j)],))
                          for (cc, tp) in expansions
                          for j, cv in loc.items()]
            if not expansions:
                break
        for cc, tp in expansions:
            k2 = ((wt, k, it), tp)
            v = out.get(k2, ZERO) + cc
            if v == 0:
                out.pop(k2, None)
            else:
                out[k2] = v
    return [(c, top, ch) for (top, ch), c in out.items() if c != 0]



def symmetrize_delta_terms(ks, child_deg_of, terms):
    """Average structure-map terms across the top slots: the invariant
    representative of the class in (dual component) tensor (children).

    terms: list of (coeff, (w, k, top_idx), child_tuple); child_deg_of maps
    a child handle to its homological degree.
    """
    if not ks.symmetric:
        return terms
    acc = {}
    for c, (w, k, it), ch in terms:
        if k == 1:
            key = ((w, k, it), ch)
            acc[key] = acc.get(key, ZERO) + c
            continue
        perms = tr.all_perms(k)
        frac = Q(1, len(perms))
        degs = [child_deg_of(x) for x in ch]
        for sigma in perms:
            inv = tr.perm_inverse(sigma)
            ch2 = tuple(ch[inv[q] - 1] for q in range(k))
            eps = tr.koszul_perm_sign(degs, tuple(v - 1 for v in inv))
            act = ks.act_dual(w, k, sigma)
            for (j, i2), cc in act.entries.items():
                if i2 != it:
                    continue
                key = ((w, k, j), ch2)
                v = acc.get(key, ZERO) + frac * c * cc * eps
                if v == 0:
                    acc.pop(key, None)
                else:
                    acc[key] = v
    return [(c, top, ch) for (top, ch), c in acc.items() if c != 0]

def primitive_inclusion(bar: BarCoalgebra) -> ChainMap:
    """Inclusion of the algebra as the weight-zero part of its bar."""
    a = bar.algebra
    ent_by_deg = {}
    for i in range(a.dim()):
        d, j = a.flat.elems[i]
        vec = bar.to_flat_vec(0, 1, {(0, (i,)): ONE})
        for fi, c in vec.items():
            dd, jj = bar.flat.elems[fi]
            if dd != d:
                raise RuntimeError("primitive inclusion mixes degrees")
            ent_by_deg.setdefault(d, {})[(jj, j)] = c
    return ChainMap(a.cx, bar.cx,
                    {d: SparseMatrix(bar.cx.dim(d), a.cx.dim(d), ent)
                     for d, ent in ent_by_deg.items()}, check=False)


def bar_projection(bar: BarCoalgebra) -> ChainMap:
    """Projection of the bar onto its weight-zero cogenerators."""
    a = bar.algebra
    ent_by_deg = {}
    for j, vec in enumerate(bar.components[(0, 1)]):
        fi = bar.flat_of[(0, 1, j)]
        d, jj = bar.flat.elems[fi]
        for (i0, atuple), c in vec.items():
            dd, ja = a.flat.elems[atuple[0]]
            ent_by_deg.setdefault(d, {})[(ja, jj)] = c
    return ChainMap(bar.cx, a.cx,
                    {d: SparseMatrix(a.cx.dim(d), bar.cx.dim(d), ent)
                     for d, ent in ent_by_deg.items()}, check=False)


def bar_functor_value(src: BarCoalgebra, tgt: BarCoalgebra, f: InftyMorphism,
                      w, n, vec) -> dict:
    """Value of the induced coalgebra morphism on one component vector."""
    ks = src.ks
    flat = src.algebra.flat
    grouped = {}
    for (i, atuple), c in vec.items():
        for (cc, (wt, k, it), bots) in ks.cuts(w, n, i):
            blocks = [blk for (_, blk) in bots]
            argsign = block_reorder_sign(flat, atuple, blocks)
            expansions = [(c * cc * Q(argsign), ())]
            prior = 0
            feasible = True
            for ((wb, nb, ib), blk) in bots:
                args_b = tuple(atuple[b - 1] for b in blk)
                val = f.ev(wb, nb, ib, args_b)
                if not val:
                    feasible = False
                    break
                sgn = -ONE if (ks.dual_degree(wb, nb, ib) % 2
                               and prior % 2) else ONE
                expansions = [(ce * cv * sgn, ys + (y,))
                              for (ce, ys) in expansions
                              for y, cv in val.items()]
                prior += sum(flat.deg[atuple[b - 1]] for b in blk)
            if not feasible:
                continue
            cur = grouped.setdefault((wt, k), {})
            for ce, ys in expansions:
                key = (it, ys)
                v = cur.get(key, ZERO) + ce
                if v == 0:
                    cur.pop(key, None)
                else:
                    cur[key] = v
    out = {}
    for (wt, k), vec2 in grouped.items():
        vec2 = {k2: v for k2, v in vec2.items() if v != 0}
        if not vec2:
            continue
        for fi, c in tgt.to_flat_vec(wt, k, vec2).items():
            v = out.get(fi, ZERO) + c
            if v == 0:
                out.pop(fi, None)
            else:
                out[fi] = v
    return out


def bar_functor_map(src: BarCoalgebra, tgt: BarCoalgebra,
                    f: InftyMorphism) -> ChainMap:
    """Coalgebra morphism of bar constructions induced by a morphism."""
    ent_by_deg = {}
    for (w, n), basis in src.components.items():
        for j, vec in enumerate(basis):
            fi = src.flat_of[(w, n, j)]
            d_src, j_src = src.flat.elems[fi]
            for tfi, c in bar_functor_value(src, tgt, f, w, n, vec).items():
                d_t, j_t = tgt.flat.elems[tfi]
                if d_t != d_src:
                    raise RuntimeError("induced map is not degree zero")
                ent_by_deg.setdefault(d_src, {})[(j_t, j_src)] = c
    return ChainMap(src.cx, tgt.cx,
                    {d: SparseMatrix(tgt.cx.dim(d), src.cx.dim(d), ent)
                     for d, ent in ent_by_deg.items()}, check=False)


def is_coalgebra_morphism(src: ConilCoalgebra, tgt: ConilCoalgebra,
                          fmap: ChainMap) -> bool:
    """Chain map compatible with both structure maps, checked termwise."""
    ks = src.ks
    fl_s, fl_t = src.flat, tgt.flat

    def fvec(vec):
        out = {}
        for i, c in vec.items():
            d, j = fl_s.elems[i]
            col = fmap.comp(d).column(j)
            for j2, c2 in col.items():
                k = fl_t.pos[(d, j2)]
                v = out.get(k, ZERO) + c * c2
                if v == 0:
                    out.pop(k, None)
                else:
                    out[k] = v
        return out

    if fmap.chain_defect() is not None:
        return False
    ks = src.ks
    for i in range(src.dim()):
        # delta(f(c)) computed in the target
        lhs = {}
        for j, c in fvec({i: ONE}).items():
            for (cc, top, ch) in tgt.delta[j]:
                key = (top, ch)
                v = lhs.get(key, ZERO) + c * cc
                if v == 0:
                    lhs.pop(key, None)
                else:
                    lhs[key] = v
        # (dual o f-tensor)(delta(c)) from the source
        rhs = {}
        for (cc, top, ch) in src.delta[i]:
            expansions = [(cc, ())]
            for cidx in ch:
                img = fvec({cidx: ONE})
                expansions = [(ce * cv, ys + (j2,))
                              for (ce, ys) in expansions
                              for j2, cv in img.items()]
                if not expansions:
                    break
            for ce, ys in expansions:
                key = (top, ys)
                v = rhs.get(key, ZERO) + ce
                if v == 0:
                    rhs.pop(key, None)
                else:
                    rhs[key] = v
        lhs_terms = symmetrize_delta_terms(
            ks, lambda x: fl_t.deg[x],
            [(c, top, ch) for (top, ch), c in lhs.items()])
        rhs_terms = symmetrize_delta_terms(
            ks, lambda x: fl_t.deg[x],
            [(c, top, ch) for (top, ch), c in rhs.items()])
        if sorted(lhs_terms, key=lambda t: (repr(t[1]), repr(t[2]))) != \
                sorted(rhs_terms, key=lambda t: (repr(t[1]), repr(t[2]))):
            return False
    return True


# -- the cobar construction ----------------------------------------------------

class CobarAlgebra:
    """Presented free algebra on a conilpotent coalgebra, weight-truncated.

    Basis elements pair a quotient-operad basis element with a tuple of
    coalgebra generators; the total weight (operad weight plus coalgebra
    weights) is bounded by the window, making each degree finite. The
    differential combines the coalgebra differential with the derivation
    extending the weight-one twisting map; homology statements are always
    relative to the recorded window.
    """

    def __init__(self, C: ConilCoalgebra, total_weight: int, name=None):
        self.C = C
        self.ks = C.ks
        self.total_weight = total_weight
        self.name = name or f"Cobar({C.name})"
        ks = self.ks
        elems = []
        for k in range(1, total_weight + 2):
            for wq in range(0, ks.trunc.w_max + 1):
                dimq = ks.qop.dim(wq, k)
                if dimq == 0:
                    continue
                for ctuple in iproduct(range(C.dim()), repeat=k):
                    tw = wq + sum(C.weights[c] for c in ctuple)
                    if tw <= total_weight:
                        for iq in range(dimq):
                            elems.append((wq, k, iq, ctuple))
        self.plain = elems
        self.plain_index = {e: i for i, e in enumerate(elems)}
        if ks.symmetric:
            self.basis = self._invariant_basis()
        else:
            self.basis = [{i: ONE} for i in range(len(elems))]
        self._layout()

    def elem_degree(self, e):
        wq, k, iq, ctuple = e
        d = tr.tree_degree(self.ks.qop.basis(wq, k)[iq], self.ks.E)
        return d + sum(self.C.flat.deg[c] for c in ctuple)

    def elem_weight(self, e):
        wq, k, iq, ctuple = e
        return wq + sum(self.C.weights[c] for c in ctuple)

    def _invariant_basis(self):
        ks = self.ks
        C = self.C
        nkeys = len(self.plain)
        ent = {}
        row_off = {}
        nblocks = 0
        for idx, (wq, k, iq, ctuple) in enumerate(self.plain):
            for gen_i in range(1, k):
                key = (k, gen_i)
                if key not in row_off:
                    row_off[key] = nblocks * nkeys
                    nblocks += 1
        for idx, (wq, k, iq, ctuple) in enumerate(self.plain):
            for gen_i in range(1, k):
                sigma = tr.transposition(k, gen_i)
                off = row_off[(k, gen_i)]
                sA, ct2 = _tuple_act(C.flat, ctuple, sigma)
                for iq2, c in ks.qop.act(wq, k, iq, sigma).items():
                    j = self.plain_index[(wq, k, iq2, ct2)]
                    ent[(off + j, idx)] = ent.get((off + j, idx), ZERO) + sA * c
                ent[(off + idx, idx)] = ent.get((off + idx, idx), ZERO) - ONE
        mat = SparseMatrix(nblocks * nkeys, nkeys,
                           {k2: v for k2, v in ent.items() if v != 0})
        return [{i: c for i, c in enumerate(kv) if c != 0}
                for kv in kernel_basis(mat)]

    def _layout(self):
        labels = {}
        self.basis_degree = []
        self.basis_weight = []
        for j, vec in enumerate(self.basis):
            e0 = self.plain[next(iter(vec))]
            degs = {self.elem_degree(self.plain[i]) for i in vec}
            wts = {self.elem_weight(self.plain[i]) for i in vec}
            if len(degs) != 1 or len(wts) != 1:
                raise RuntimeError("inhomogeneous cobar basis vector")
            d = degs.pop()
            self.basis_degree.append(d)
            self.basis_weight.append(wts.pop())
            labels.setdefault(d, []).append(j)
        space = GradedSpace({d: [("cb", j) for j in ls]
                             for d, ls in labels.items()})
        # retraction for expressing plain vectors in basis coordinates
        cols = [dict(v) for v in self.basis]
        if self.ks.symmetric and cols:
            self._retr = retraction(
                SparseMatrix.from_columns(len(self.plain), cols))
        else:
            self._retr = None
        dmats = {}
        pos_of = {}
        for d, ls in labels.items():
            for p, j in enumerate(ls):
                pos_of[j] = (d, p)
        self.pos_of = pos_of
        for d, ls in sorted(labels.items()):
            lower = {j: p for p, j in enumerate(labels.get(d - 1, []))}
            ent = {}
            for col, j in enumerate(ls):
                img = self.diff_basis(j)
                for j2, c in img.items():
                    if j2 not in lower:
                        raise RuntimeError("cobar differential leaves window")
                    ent[(lower[j2], col)] = c
            dmats[d] = SparseMatrix(len(labels.get(d - 1, [])), len(ls),
                                    {k: v for k, v in ent.items() if v != 0})
        self.cx = ChainComplex(space, dmats)
        self.flat = Flat(self.cx)
        self.flat_of_basis = {}
        for j, (d, p) in pos_of.items():
            self.flat_of_basis[j] = self.flat.pos[(d, p)]

    def sym_plain(self, plain_vec: dict) -> dict:
        """Average a plain vector over the diagonal actions (the invariant
        representative of its coinvariant class)."""
        if not self.ks.symmetric:
            return plain_vec
        out = {}
        for idx, c in plain_vec.items():
            wq, k, iq, ctuple = self.plain[idx]
            perms = tr.all_perms(k)
            frac = Q(1, len(perms))
            for sigma in perms:
                sA, ct2 = _tuple_act(self.C.flat, ctuple, sigma)
                for iq2, cc in self.ks.qop.act(wq, k, iq, sigma).items():
                    j = self.plain_index.get((wq, k, iq2, ct2))
                    if j is None:
                        raise RuntimeError("symmetrized element leaves window")
                    v = out.get(j, ZERO) + frac * c * cc * sA
                    if v == 0:
                        out.pop(j, None)
                    else:
                        out[j] = v
        return out

    def to_basis_coords(self, plain_vec: dict) -> dict:
        plain_vec = {k: v for k, v in plain_vec.items() if v != 0}
        if not plain_vec:
            return {}
        if self._retr is None:
            return dict(plain_vec)
        return self._retr.apply(self.sym_plain(plain_vec))

    def diff_basis(self, j) -> dict:
        out = {}
        for i, c in self.basis[j].items():
            for i2, c2 in self.diff_plain(i).items():
                v = out.get(i2, ZERO) + c * c2
                if v == 0:
                    out.pop(i2, None)
                else:
                    out[i2] = v
        return self.to_basis_coords(out)

    def diff_plain(self, idx) -> dict:
        """Differential of a plain element, as a plain-coordinate vector."""
        ks = self.ks
        C = self.C
        wq, k, iq, ctuple = self.plain[idx]
        out = {}

        def add(e, c):
            if c == 0:
                return
            j = self.plain_index.get(e)
            if j is None:
                raise RuntimeError("cobar differential leaves window")
            v = out.get(j, ZERO) + c
            if v == 0:
                out.pop(j, None)
            else:
                out[j] = v

        u_deg = tr.tree_degree(ks.qop.basis(wq, k)[iq], ks.E)
        # internal part: Leibniz over the coalgebra factors
        acc = 0
        sign0 = -ONE if u_deg % 2 else ONE
        for slot, cidx in enumerate(ctuple):
            s = sign0 * (-ONE if acc % 2 else ONE)
            for b, cb in C.flat.d[cidx].items():
                add((wq, k, iq, ctuple[:slot] + (b,) + ctuple[slot + 1:]),
                    s * cb)
            acc += C.flat.deg[cidx]
        # twisting part: expand one factor and compose the weight-one piece
        acc = 0
        for slot, cidx in enumerate(ctuple):
            before_deg = acc
            acc += C.flat.deg[cidx]
            for (cc, (wd, m, dual_i), children) in C.delta[cidx]:
                if wd != 1:
                    continue
                kap = ks.kappa(dual_i, m)
                if not kap:
                    continue
                # kappa has degree -1: it jumps u and the earlier factors;
                # the global sign makes the adjunction counit a chain map
                s = -cc
                if (u_deg + before_deg) % 2:
                    s = -s
                e_deg = ks.dual_degree(wd, m, dual_i) - 1
                if e_deg % 2 and before_deg % 2:
                    s = -s
                for e_idx, ce in kap.items():
                    comp = ks.qop.compose(wq, k, iq, slot + 1, 1, m, e_idx)
                    new_tuple = (ctuple[:slot] + tuple(children)
                                 + ctuple[slot + 1:])
                    for iu, cu in comp.items():
                        add((wq + 1, k + m - 1, iu, new_tuple), s * ce * cu)
        return out

    def strict_structure(self) -> dict:
        """Weight-one structure components of the free-algebra product.

        Products whose total weight would leave the window are omitted;
        the algebra view guards their lookup with TruncationError, so the
        structure is exact precisely inside the recorded window.
        """
        ks = self.ks
        mu = {}
        for m in ks.E.arities():
            dd = ks.dual_dim(1, m)
            if dd == 0:
                continue
            by = {}
            for i in range(dd):
                kap = ks.kappa(i, m)
                if not kap:
                    continue
                for jtuple in iproduct(range(len(self.basis)), repeat=m):
                    if 1 + sum(self.basis_weight[j] for j in jtuple) >                             self.total_weight:
                        continue
                    xtuple = tuple(self.flat_of_basis[j] for j in jtuple)
                    val = self._gamma_value(kap, jtuple)
                    if val:
                        by[(i, xtuple)] = val
            if by:
                mu[(1, m)] = by
        return mu

    def _gamma_value(self, kap: dict, jtuple) -> dict:
        """Free-algebra product of basis elements along a generator."""
        ks = self.ks
        out_plain = {}
        expansions = [(ONE, [])]
        for j in jtuple:
            expansions = [(c * cv, parts + [i2])
                          for (c, parts) in expansions
                          for i2, cv in self.basis[j].items()]
        for c0, parts in expansions:
            datas = [self.plain[i2] for i2 in parts]
            tw = 1 + sum(self.elem_weight(e) for e in datas)
            if tw > self.total_weight:
                raise TruncationError("free-algebra product leaves the window")
            # interleave signs: u_i moves left past earlier coalgebra tuples
            sgn = ONE
            prior = 0
            for (wq, k, iq, ctuple) in datas:
                u_deg = tr.tree_degree(ks.qop.basis(wq, k)[iq], ks.E)
                if u_deg % 2 and prior % 2:
                    sgn = -sgn
                prior += sum(self.C.flat.deg[c] for c in ctuple)
            for e_idx, ce in kap.items():
                comp = ks.qop.gamma_multi(
                    1, len(jtuple), e_idx,
                    [(wq, k, {iq: ONE}) for (wq, k, iq, _) in datas])
                new_tuple = sum((ct for (_, _, _, ct) in datas), ())
                for iu, cu in comp.items():
                    wq_new = 1 + sum(wq for (wq, _, _, _) in datas)
                    k_new = sum(k for (_, k, _, _) in datas)
                    e = (wq_new, k_new, iu, new_tuple)
                    j2 = self.plain_index.get(e)
                    if j2 is None:
                        raise RuntimeError("product leaves window")
                    v = out_plain.get(j2, ZERO) + c0 * sgn * ce * cu
                    if v == 0:
                        out_plain.pop(j2, None)
                    else:
                        out_plain[j2] = v
        coords = self.to_basis_coords(out_plain)
        return {self.flat_of_basis[j]: c for j, c in coords.items() if c != 0}

    def as_algebra(self, validate=False):
        """The cobar as a strict homotopy algebra on its truncated complex.

        The free-algebra identities hold by construction (operad-level
        associativity); validation, when requested, checks them inside the
        product window. Element weights and the window cap are recorded so
        downstream constructions stay inside the truncation contract.
        """
        mu = self.strict_structure()
        weights = [0] * self.flat.dim()
        for j, fb in self.flat_of_basis.items():
            weights[fb] = self.basis_weight[j]
        return HomotopyAlgebra(self.ks, self.cx, mu, validate=validate,
                               name=self.name, weights=weights,
                               weight_cap=self.total_weight)

    def generator_inclusion(self) -> ChainMap:
        """C -> cobar(C) as the arity-one, weight-zero part (raw chain map)."""
        ent_by_deg = {}
        for ci in range(self.C.dim()):
            e = (0, 1, 0, (ci,))
            j = self.plain_index.get(e)
            if j is None:
                continue
            vec = self.to_basis_coords({j: ONE})
            d, jc = self.C.flat.elems[ci]
            for jb, c in vec.items():
                fb = self.flat_of_basis[jb]
                dd, jj = self.flat.elems[fb]
                ent_by_deg.setdefault(d, {})[(jj, jc)] = c
        return ChainMap(self.C.cx, self.cx,
                        {d: SparseMatrix(self.cx.dim(d), self.C.cx.dim(d), ent)
                         for d, ent in ent_by_deg.items()}, check=False)


def cobar_algebra(C: ConilCoalgebra, total_weight: int) -> CobarAlgebra:
    return CobarAlgebra(C, total_weight)


def cobar_functor_map(src: CobarAlgebra, tgt: CobarAlgebra,
                      fmap: ChainMap) -> ChainMap:
    """Algebra map of cobar constructions induced by a coalgebra morphism."""
    fl_s = src.C.flat
    fl_t = tgt.C.flat
    ent_by_deg = {}
    for j, vec in enumerate(src.basis):
        out_plain = {}
        for i, c in vec.items():
            wq, k, iq, ctuple = src.plain[i]
            expansions = [(c, ())]
            for ci in ctuple:
                d, jc = fl_s.elems[ci]
                col = fmap.comp(d).column(jc)
                expansions = [(ce * cv, ys + (fl_t.pos[(d, j2)],))
                              for (ce, ys) in expansions
                              for j2, cv in col.items()]
                if not expansions:
                    break
            for ce, ys in expansions:
                e = (wq, k, iq, ys)
                j2 = tgt.plain_index.get(e)
                if j2 is None:
                    raise TruncationError("image leaves the target window")
                v = out_plain.get(j2, ZERO) + ce
                if v == 0:
                    out_plain.pop(j2, None)
                else:
                    out_plain[j2] = v
        coords = tgt.to_basis_coords(out_plain)
        fb_src = src.flat_of_basis[j]
        d_src, j_src = src.flat.elems[fb_src]
        for jb, c in coords.items():
            fb = tgt.flat_of_basis[jb]
            dd, jj = tgt.flat.elems[fb]
            if dd != d_src:
                raise RuntimeError("induced map is not degree zero")
            ent_by_deg.setdefault(d_src, {})[(jj, j_src)] = c
    return ChainMap(src.cx, tgt.cx,
                    {d: SparseMatrix(tgt.cx.dim(d), src.cx.dim(d), ent)
                     for d, ent in ent_by_deg.items()}, check=False)


def counit_map(cobar: CobarAlgebra, a: HomotopyAlgebra) -> ChainMap:
    """Counit of the adjunction onto a strict algebra: evaluate every
    generator tuple through the weight-zero projection and the product."""
    C = cobar.C
    if not isinstance(C, BarCoalgebra) or C.algebra is not a:
        raise ValueError("counit needs the bar of the target algebra")
    ent_by_deg = {}
    for j, vec in enumerate(cobar.basis):
        val = {}
        for i, c in vec.items():
            wq, k, iq, ctuple = cobar.plain[i]
            # generators of positive weight die; weight-zero ones project to a
            if any(C.weights[ci] != 0 for ci in ctuple):
                continue
            aidx = []
            for ci in ctuple:
                w0 = C.components[(0, 1)]
                loc = None
                d, jc = C.flat.elems[ci]
                # weight-zero basis vectors are primitive singletons
                for jj, v0 in enumerate(w0):
                    if C.flat_of[(0, 1, jj)] == ci:
                        loc = next(iter(v0))[1][0]
                        break
                aidx.append(loc)
            tree = cobar.ks.qop.basis(wq, k)[iq]
            res = _evaluate_tree(cobar.ks, a, tree, tuple(aidx))
            for t, ct in res.items():
                v = val.get(t, ZERO) + c * ct
                if v == 0:
                    val.pop(t, None)
                else:
                    val[t] = v
        fb = cobar.flat_of_basis[j]
        d_src, j_src = cobar.flat.elems[fb]
        for t, ct in val.items():
            dd, jj = a.flat.elems[t]
            if dd != d_src:
                raise RuntimeError("counit is not degree zero")
            ent_by_deg.setdefault(d_src, {})[(jj, j_src)] = ct
    return ChainMap(cobar.cx, a.cx,
                    {d: SparseMatrix(a.cx.dim(d), cobar.cx.dim(d), ent)
                     for d, ent in ent_by_deg.items()}, check=False)


def _evaluate_tree(ks, a: HomotopyAlgebra, tree, aidx) -> dict:
    """Evaluate a quotient-operad tree monomial in a strict algebra."""
    flat = a.flat

    def ev(t):
        """Returns (vector, total operator degree consumed so far)."""
        if tr.is_leaf(t):
            return {aidx[t - 1]: ONE}
        vecs = []
        prior = 0
        sgn = ONE
        for c in t[2]:
            sub = ev(c)
            # operator of this subtree jumps the earlier evaluated blocks
            sub_op_deg = _subtree_op_degree(ks, c)
            if sub_op_deg % 2 and prior % 2:
                sgn = -sgn
            vecs.append(sub)
            prior += _subtree_input_degree(ks, flat, c)
        # generator corolla acts through the weight-one structure
        m = len(t[2])
        gen = t[1]
        dual_idx = _gen_dual_index(ks, gen)
        out = {}
        expansions = [(sgn, ())]
        for sub in vecs:
            expansions = [(ce * cv, ys + (y,))
                          for (ce, ys) in expansions
                          for y, cv in sub.items()]
        for ce, ys in expansions:
            for tgt, ct in a.op(1, m, dual_idx, ys).items():
                v = out.get(tgt, ZERO) + ce * ct
                if v == 0:
                    out.pop(tgt, None)
                else:
                    out[tgt] = v
        return out

    def _subtree_op_degree(ks_, t):
        if tr.is_leaf(t):
            return 0
        return sum(ks_.E.degree(g) for _, g in tr.dfs(t))

    def _subtree_input_degree(ks_, flat_, t):
        return sum(flat_.deg[aidx[l - 1]] for l in tr.leaves_of(t))

    return ev(tree)


def _gen_dual_index(ks, gen):
    m = gen[0]
    corolla = tr.node(gen, tuple(range(1, m + 1)))
    idx = ks.span.index(1, m, corolla)
    # weight-one dual components are spanned by the corollas themselves
    return idx


def unit_value(C: ConilCoalgebra, cobar: CobarAlgebra,
               bar_of_cobar: BarCoalgebra, ci: int) -> dict:
    """Adjunction unit on a generator: the structure map with children
    wrapped as cobar generators."""
    grouped = {}
    for (cc, (wt, k, it), children) in C.delta[ci]:
        ys = []
        ok = True
        for ch in children:
            e = (0, 1, 0, (ch,))
            j = cobar.plain_index.get(e)
            if j is None:
                ok = False
                break
            coords = cobar.to_basis_coords({j: ONE})
            ys.append({cobar.flat_of_basis[jb]: c for jb, c in coords.items()})
        if not ok:
            continue
        expansions = [(cc, ())]
        for y in ys:
            expansions = [(ce * cv, tp + (fi,))
                          for (ce, tp) in expansions for fi, cv in y.items()]
        cur = grouped.setdefault((wt, k), {})
        for ce, tp in expansions:
            key = (it, tp)
            v = cur.get(key, ZERO) + ce
            if v == 0:
                cur.pop(key, None)
            else:
                cur[key] = v
    out = {}
    for (wt, k), vec2 in grouped.items():
        vec2 = {k2: v for k2, v in vec2.items() if v != 0}
        if vec2:
            for fi, c in bar_of_cobar.to_flat_vec(wt, k, vec2).items():
                out[fi] = out.get(fi, ZERO) + c
    return {k2: v for k2, v in out.items() if v != 0}


def unit_map(C: ConilCoalgebra, cobar: CobarAlgebra,
             bar_of_cobar: BarCoalgebra) -> ChainMap:
    """Adjunction unit as a chain map into the bar of the cobar."""
    ent_by_deg = {}
    for ci in range(C.dim()):
        d, jc = C.flat.elems[ci]
        ent = ent_by_deg.setdefault(d, {})
        for fi, c in unit_value(C, cobar, bar_of_cobar, ci).items():
            dd, jj = bar_of_cobar.flat.elems[fi]
            if dd != d:
                raise RuntimeError("unit is not degree zero")
            ent[(jj, jc)] = c
    return ChainMap(C.cx, bar_of_cobar.cx,
                    {d: SparseMatrix(bar_of_cobar.cx.dim(d), C.cx.dim(d), ent)
                     for d, ent in ent_by_deg.items()}, check=False)
