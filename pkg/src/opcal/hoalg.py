"""Homotopy algebras over a Koszul system and their infinity-morphisms.

A homotopy algebra is a finite chain complex A together with weight-graded
structure components: for each dual-cooperad basis element of weight w and
arity n, a degree -1 multilinear operation on A. The defining condition is
the Maurer-Cartan identity weightwise up to the truncation weight. An
infinity-morphism is a weight-graded family of degree-0 multilinear maps
whose weightwise identity couples the convolution operations on both
sides; both identities are checked exactly at construction.

Components are stored sparsely as

    comps[(w, n)][(dual_idx, arg_tuple)] = {target_flat_index: coeff}

over a flat enumeration of the basis of A. Koszul signs follow the
left-to-right factor convention: a map of odd degree applied to a factor
picks up the degrees of everything to its left, and reordering graded
arguments contributes the sign of the permutation.
"""

from __future__ import annotations

from itertools import product as iproduct

from .complexes import ChainComplex, ChainMap, GradedSpace, homology_dims, is_quasi_iso
from .exactlin import (ONE, Q, SparseMatrix, ZERO, inverse, kernel_basis,
                       rank, vec_add, vec_scale)
from .operads import KoszulSystem, Truncation, TruncationError
from . import trees as tr


class Flat:
    """Flat view of a chain complex basis with cached differential columns."""

    def __init__(self, cx: ChainComplex):
        self.cx = cx
        self.elems = []
        for n in cx.degrees():
            for j in range(cx.dim(n)):
                self.elems.append((n, j))
        self.pos = {e: i for i, e in enumerate(self.elems)}
        self.deg = [n for (n, _) in self.elems]
        self.d = []
        for (n, j) in self.elems:
            col = cx.diff(n).column(j)
            self.d.append({self.pos[(n - 1, i)]: c for i, c in col.items()})

    def dim(self) -> int:
        return len(self.elems)

    def label(self, i):
        n, j = self.elems[i]
        return self.cx.space.labels(n)[j]

    def by_degree(self, n):
        return [i for i, e in enumerate(self.elems) if e[0] == n]

    def vec_degree(self, vec: dict):
        degs = {self.deg[i] for i in vec}
        if len(degs) > 1:
            raise ValueError("inhomogeneous vector")
        return degs.pop() if degs else None

    def dvec(self, vec: dict) -> dict:
        out = {}
        for i, c in vec.items():
            for j, v in self.d[i].items():
                w = out.get(j, ZERO) + c * v
                if w == 0:
                    out.pop(j, None)
                else:
                    out[j] = w
        return out


def tuple_degree(flat: Flat, atuple) -> int:
    return sum(flat.deg[a] for a in atuple)


def d_tensor_terms(flat: Flat, atuple):
    """Leibniz expansion of the differential on a basis tuple.

    Yields (coeff, slot, target_index); the sign collects the degrees of
    the factors to the left of the slot.
    """
    acc = 0
    for i, a in enumerate(atuple):
        sign = -ONE if acc % 2 else ONE
        for b, c in flat.d[a].items():
            yield sign * c, i, b
        acc += flat.deg[a]



def bounded_tuples(weights, n, budget):
    """Tuples of indices whose recorded weights sum to at most the budget."""
    dim = len(weights)

    def rec(slots, left):
        if slots == 0:
            yield ()
            return
        for i in range(dim):
            w = weights[i]
            if w > left:
                continue
            for rest in rec(slots - 1, left - w):
                yield (i,) + rest

    yield from rec(n, budget)


def window_tuples(algebra, w, n):
    """Argument tuples representable for weight-w operations on the algebra."""
    if algebra.weight_cap is None:
        return iproduct(range(algebra.flat.dim()), repeat=n)
    return bounded_tuples(algebra.weights, n, algebra.weight_cap - w)

def comp_eval(comps, w, n, i, atuple) -> dict:
    if isinstance(comps, _GuardedStructure):
        return comps.op(w, n, i, atuple)
    by = comps.get((w, n))
    if not by:
        return {}
    return by.get((i, atuple), {})


class _GuardedStructure:
    """Structure view that enforces the product window of its algebra."""

    def __init__(self, algebra):
        self.algebra = algebra

    def op(self, w, n, i, atuple):
        return self.algebra.op(w, n, i, atuple)

    def get(self, key):
        return self.algebra.mu.get(key)


def _guarded(algebra):
    if algebra.weight_cap is None:
        return algebra.mu
    return _GuardedStructure(algebra)


def block_reorder_sign(flat: Flat, atuple, blocks):
    """Koszul sign of rearranging the arguments into the given blocks."""
    order = [b - 1 for blk in blocks for b in blk]
    if order == list(range(len(atuple))):
        return 1
    degs = [flat.deg[a] for a in atuple]
    return tr.koszul_perm_sign(degs, tuple(order))


def star_terms(ks: KoszulSystem, flat_src: Flat, outer, outer_deg,
               inner, inner_deg, w, n, i, atuple,
               min_inner_weight=1, min_outer_weight=0):
    """(outer o_(1) inner) o partial-decomposition, evaluated on a basis input.

    outer and inner are component dicts; outer consumes the split-off
    result in place of the inner block. Returns a target vector.
    """
    out = {}
    for (c, (wo, no, io), slot, (wi, ni, ii), block) in ks.delta1(w, n, i):
        if wi < min_inner_weight or wo < min_outer_weight:
            continue
        inner_args = tuple(atuple[b - 1] for b in block)
        rest = [atuple[q - 1] for q in range(1, n + 1) if q not in set(block)]
        gval = comp_eval(inner, wi, ni, ii, inner_args)
        if not gval:
            continue
        # reorder arguments: (before, block, after) relative to the slot
        before = rest[:slot - 1]
        after = rest[slot - 1:]
        argsign = block_reorder_sign(
            flat_src, atuple,
            [tuple(q for q in range(1, n + 1) if q not in set(block))[:slot - 1],
             block,
             tuple(q for q in range(1, n + 1) if q not in set(block))[slot - 1:]])
        # inner map over the outer dual factor
        sgn = ONE
        if inner_deg % 2 and ks.dual_degree(wo, no, io) % 2:
            sgn = -sgn
        # inner operator over the arguments before the slot
        op_deg = inner_deg + ks.dual_degree(wi, ni, ii)
        before_deg = sum(flat_src.deg[a] for a in before)
        if op_deg % 2 and before_deg % 2:
            sgn = -sgn
        coeff = c * sgn * argsign
        for bidx, cb in gval.items():
            args2 = tuple(before) + (bidx,) + tuple(after)
            fval = comp_eval(outer, wo, no, io, args2)
            for t, ct in fval.items():
                v = out.get(t, ZERO) + coeff * cb * ct
                if v == 0:
                    out.pop(t, None)
                else:
                    out[t] = v
    return out


def cut_terms(ks: KoszulSystem, flat_src: Flat, outer, outer_deg,
              inner, inner_deg, w, n, i, atuple, min_top_weight=0,
              skip_full_top=False):
    """(outer o inner...) o full-decomposition, evaluated on a basis input.

    The top dual element is consumed by outer applied to the inner values
    on the blocks. skip_full_top drops the cut whose top has full weight
    with all-identity bottoms (used by triangular solves).
    """
    out = {}
    for (c, (wt, k, it), bots) in ks.cuts(w, n, i):
        if wt < min_top_weight:
            continue
        if skip_full_top and wt == w:
            continue
        blocks = [blk for (_, blk) in bots]
        argsign = block_reorder_sign(flat_src, atuple, blocks)
        # expand the inner values multilinearly, tracking interleave signs
        partial = [(ONE, [])]
        feasible = True
        for q, ((wb, nb, ib), blk) in enumerate(bots):
            args_b = tuple(atuple[b - 1] for b in blk)
            yv = comp_eval(inner, wb, nb, ib, args_b)
            if not yv:
                feasible = False
                break
            op_deg = inner_deg + ks.dual_degree(wb, nb, ib)
            prior = sum(flat_src.deg[atuple[b - 1]]
                        for bb in blocks[:q] for b in bb)
            sgn = -ONE if (op_deg % 2 and prior % 2) else ONE
            partial = [(cc * cy * sgn, ys + [y])
                       for (cc, ys) in partial for y, cy in yv.items()]
        if not feasible:
            continue
        for cc, ys in partial:
            fval = comp_eval(outer, wt, k, it, tuple(ys))
            for t, ct in fval.items():
                v = out.get(t, ZERO) + c * argsign * cc * ct
                if v == 0:
                    out.pop(t, None)
                else:
                    out[t] = v
    return out


def del_op(flat_src: Flat, flat_tgt: Flat, op_deg, value_fn, i_dual_deg,
           atuple):
    """Hom-complex differential of an operation evaluated on a tuple.

    d_target(value(atuple)) - (-1)^{|op|} sum value(d applied slotwise).
    op_deg is the total operator degree (dual degree plus map shift).
    """
    out = flat_tgt.dvec(value_fn(atuple))
    sign = -ONE if op_deg % 2 else ONE
    for c, slot, b in d_tensor_terms(flat_src, atuple):
        args = atuple[:slot] + (b,) + atuple[slot + 1:]
        for t, ct in value_fn(args).items():
            v = out.get(t, ZERO) - sign * c * ct
            if v == 0:
                out.pop(t, None)
            else:
                out[t] = v
    return out


# -- equivariance -----------------------------------------------------------
#
# The diagonal action on a component basis key (dual element; argument
# tuple) relabels the leaves of the dual trees carrying the argument
# degrees, so a single interleaved Koszul sign covers decorations and
# arguments together. Structure and morphism components are invariant
# functionals for this action: F(x . sigma) = F(x).

def key_action_terms(ks, flat, w, n, i, atuple, sigma):
    """Diagonal action on a basis key: the dual element moves by sigma and
    the argument at position j comes from position sigma^{-1}(j), with the
    Koszul sign of that reorder; the coinvariant identifications become
    invariance for this action. Returns (coeff, (j, new_tuple)) terms."""
    act = ks.act_dual(w, n, sigma)
    inv = tr.perm_inverse(sigma)
    permuted = tuple(atuple[inv[q] - 1] for q in range(n))
    degs = [flat.deg[a] for a in atuple]
    eps = tr.koszul_perm_sign(degs, tuple(v - 1 for v in inv))
    return [(eps * c, (j, permuted)) for (j, i2), c in act.entries.items()
            if i2 == i and c != 0]


def transported(ks, flat, comps, map_deg, w, n, i, atuple, sigma):
    """F applied to the diagonal action of the key."""
    out = {}
    for c, (j, permuted) in key_action_terms(ks, flat, w, n, i, atuple, sigma):
        for t, ct in comp_eval(comps, w, n, j, permuted).items():
            v = out.get(t, ZERO) + c * ct
            if v == 0:
                out.pop(t, None)
            else:
                out[t] = v
    return out


def is_equivariant(ks, flat, comps, map_deg) -> bool:
    if not ks.symmetric:
        return True
    return _clean_comps(symmetrize(ks, flat, comps, map_deg)) == \
        _clean_comps(comps)


def symmetrize(ks, flat, comps, map_deg) -> dict:
    """Average F over the diagonal action; projects onto equivariant maps."""
    if not ks.symmetric:
        return comps
    out = {}
    for (w, n), by in comps.items():
        perms = tr.all_perms(n)
        frac = Q(1, len(perms))
        acc = {}
        keys = set()
        for (i, atuple) in by:
            for sigma in perms:
                permuted = tuple(atuple[sigma[q] - 1] for q in range(n))
                permuted2 = tuple(atuple[tr.perm_inverse(sigma)[q] - 1]
                                  for q in range(n))
                for j in range(ks.dual_dim(w, n)):
                    keys.add((j, permuted))
                    keys.add((j, permuted2))
        for (j, atuple) in keys:
            val = {}
            for sigma in perms:
                for t, ct in transported(ks, flat, comps, map_deg, w, n, j,
                                         atuple, sigma).items():
                    v = val.get(t, ZERO) + frac * ct
                    if v == 0:
                        val.pop(t, None)
                    else:
                        val[t] = v
            if val:
                acc[(j, atuple)] = val
        if acc:
            out[(w, n)] = acc
    return out


# -- homotopy algebras -------------------------------------------------------

class MCViolation(Exception):
    def __init__(self, weight, dual_idx, atuple, residual):
        self.weight = weight
        self.dual_idx = dual_idx
        self.atuple = atuple
        self.residual = residual
        super().__init__(f"Maurer-Cartan fails at weight {weight}, "
                         f"dual index {dual_idx}, inputs {atuple}")


class HomotopyAlgebra:
    """Chain complex with validated weight-graded structure components.

    Algebras carved out of truncated free constructions carry per-element
    weights and a product window cap: operations whose result would have
    weight beyond the cap are not represented and raise TruncationError,
    and validation quantifies only over inputs inside the window (the
    honest truncation contract).
    """

    def __init__(self, ks: KoszulSystem, cx: ChainComplex, mu: dict,
                 validate: bool = True, name: str = "A",
                 weights=None, weight_cap=None):
        self.ks = ks
        self.cx = cx
        self.flat = Flat(cx)
        self.mu = _clean_comps(mu)
        self.name = name
        self.weights = list(weights) if weights is not None else             [0] * self.flat.dim()
        self.weight_cap = weight_cap
        if validate:
            report = mc_residual_report(ks, self.flat, self.mu,
                                        self.weights, self.weight_cap)
            if report is not None:
                raise MCViolation(*report)
            if ks.symmetric and not is_equivariant(ks, self.flat, self.mu, -1):
                raise ValueError("structure components are not equivariant")

    def op(self, w, n, i, atuple) -> dict:
        if self.weight_cap is not None:
            if w + sum(self.weights[a] for a in atuple) > self.weight_cap:
                raise TruncationError(
                    f"operation of weight {w} on inputs of total weight "
                    f"{sum(self.weights[a] for a in atuple)} leaves the "
                    f"window (cap {self.weight_cap})")
        return comp_eval(self.mu, w, n, i, atuple)

    def tuple_in_window(self, w, atuple) -> bool:
        if self.weight_cap is None:
            return True
        return w + sum(self.weights[a] for a in atuple) <= self.weight_cap

    def dim(self) -> int:
        return self.flat.dim()

    def __repr__(self):
        return f"HomotopyAlgebra({self.name}, dim={self.dim()})"


def check_component_degrees(ks, flat_src, flat_tgt, comps, shift):
    """Every stored value must be homogeneous of the forced degree."""
    for (w, n), by in comps.items():
        for (i, atuple), vec in by.items():
            want = ks.dual_degree(w, n, i) + shift + \
                sum(flat_src.deg[a] for a in atuple)
            for t, c in vec.items():
                if c != 0 and flat_tgt.deg[t] != want:
                    raise ValueError(
                        f"component at weight {w}, arity {n} has a value of "
                        f"degree {flat_tgt.deg[t]} where {want} is forced")


def _clean_comps(comps: dict) -> dict:
    out = {}
    for key, by in comps.items():
        cl = {}
        for k2, vec in by.items():
            vec = {t: Q(c) for t, c in vec.items() if Q(c) != 0}
            if vec:
                cl[k2] = vec
        if cl:
            out[key] = cl
    return out


def mc_residual(ks, flat, mu, w, n, i, atuple) -> dict:
    """Weightwise Maurer-Cartan residual on one basis input."""
    op_deg = ks.dual_degree(w, n, i) - 1
    res = del_op(flat, flat, op_deg,
                 lambda args: comp_eval(mu, w, n, i, args), None, atuple)
    star = star_terms(ks, flat, mu, -1, mu, -1, w, n, i, atuple,
                      min_inner_weight=1)
    for t, c in star.items():
        v = res.get(t, ZERO) + c
        if v == 0:
            res.pop(t, None)
        else:
            res[t] = v
    dphi = ks.dphi_matrix(w, n)
    col = dphi.column(i)
    for j, cj in col.items():
        for t, ct in comp_eval(mu, w - 1, n, j, atuple).items():
            v = res.get(t, ZERO) + cj * ct
            if v == 0:
                res.pop(t, None)
            else:
                res[t] = v
    return res


def mc_residual_report(ks, flat, mu, weights=None, weight_cap=None):
    """First Maurer-Cartan violation, or None when the structure is valid.

    With a weight cap, only inputs whose residual stays representable are
    quantified over (window-relative validation).
    """
    for w in range(1, ks.trunc.w_max + 1):
        for n in range(1, ks.trunc.n_max + 1):
            dd = ks.dual_dim(w, n)
            if dd == 0:
                continue
            tuples = (iproduct(range(flat.dim()), repeat=n)
                      if weight_cap is None
                      else bounded_tuples(weights, n, weight_cap - w))
            for atuple in tuples:
                for i in range(dd):
                    res = mc_residual(ks, flat, mu, w, n, i, atuple)
                    if res:
                        return (w, i, atuple, res)
    return None


def mc_check(ks: KoszulSystem, cx: ChainComplex, mu: dict):
    """Validated algebra or the first weightwise violation report."""
    try:
        return HomotopyAlgebra(ks, cx, mu), None
    except MCViolation as e:
        return None, (e.weight, e.dual_idx, e.atuple, e.residual)


def trivial_algebra(ks, cx, name="triv") -> HomotopyAlgebra:
    return HomotopyAlgebra(ks, cx, {}, name=name)


# -- infinity-morphisms -------------------------------------------------------

class InftyViolation(Exception):
    def __init__(self, weight, dual_idx, atuple, residual):
        self.weight = weight
        self.dual_idx = dual_idx
        self.atuple = atuple
        self.residual = residual
        super().__init__(f"morphism identity fails at weight {weight}, "
                         f"dual index {dual_idx}, inputs {atuple}")


class InftyMorphism:
    """Weight-graded components of a morphism between homotopy algebras.

    comps[(0, 1)] holds the linear first component; the weightwise identity
    couples it with both structures and is verified exactly at construction.
    """

    def __init__(self, source: HomotopyAlgebra, target: HomotopyAlgebra,
                 comps: dict, validate: bool = True):
        if source.ks is not target.ks:
            raise ValueError("endpoints live over different Koszul systems")
        self.ks = source.ks
        self.source = source
        self.target = target
        self.comps = _clean_comps(comps)
        if validate:
            check_component_degrees(self.ks, source.flat, target.flat,
                                    self.comps, 0)
            report = infty_residual_report(self.ks, source, target, self.comps)
            if report is not None:
                raise InftyViolation(*report)
            if self.ks.symmetric and not is_equivariant(
                    self.ks, source.flat, self.comps, 0):
                raise ValueError("morphism components are not equivariant")

    def ev(self, w, n, i, atuple) -> dict:
        return comp_eval(self.comps, w, n, i, atuple)

    def first_component(self) -> ChainMap:
        comps = {}
        src, tgt = self.source.cx, self.target.cx
        by = self.comps.get((0, 1), {})
        for n in src.degrees():
            ent = {}
            for j in range(src.dim(n)):
                a = self.source.flat.pos[(n, j)]
                for t, c in by.get((0, (a,)), {}).items():
                    dt, jt = self.target.flat.elems[t]
                    if dt != n:
                        raise ValueError("first component is not degree zero")
                    ent[(jt, j)] = c
            comps[n] = SparseMatrix(tgt.dim(n), src.dim(n), ent)
        return ChainMap(src, tgt, comps, check=False)

    def __repr__(self):
        return (f"InftyMorphism({self.source.name} ~> {self.target.name}, "
                f"weights={sorted({w for (w, _) in self.comps})})")


def infty_residual(ks, source, target, comps, w, n, i, atuple) -> dict:
    """Weightwise morphism-identity residual on one basis input."""
    fs, ft = source.flat, target.flat
    op_deg = ks.dual_degree(w, n, i)
    res = del_op(fs, ft, op_deg,
                 lambda args: comp_eval(comps, w, n, i, args), None, atuple)
    dphi = ks.dphi_matrix(w, n)
    for j, cj in dphi.column(i).items():
        for t, ct in comp_eval(comps, w - 1, n, j, atuple).items():
            v = res.get(t, ZERO) - cj * ct
            if v == 0:
                res.pop(t, None)
            else:
                res[t] = v
    fstar = star_terms(ks, fs, comps, 0, _guarded(source), -1, w, n, i,
                       atuple, min_inner_weight=1)
    for t, c in fstar.items():
        v = res.get(t, ZERO) - c
        if v == 0:
            res.pop(t, None)
        else:
            res[t] = v
    vcirc = cut_terms(ks, fs, _guarded(target), -1, comps, 0, w, n, i,
                      atuple, min_top_weight=1)
    for t, c in vcirc.items():
        v = res.get(t, ZERO) + c
        if v == 0:
            res.pop(t, None)
        else:
            res[t] = v
    return res


def infty_residual_report(ks, source, target, comps):
    for w in range(0, ks.trunc.w_max + 1):
        for n in range(1, ks.trunc.n_max + 1):
            dd = ks.dual_dim(w, n)
            if dd == 0:
                continue
            for atuple in window_tuples(source, w, n):
                for i in range(dd):
                    try:
                        res = infty_residual(ks, source, target, comps,
                                             w, n, i, atuple)
                    except TruncationError:
                        continue
                    if res:
                        return (w, i, atuple, res)
    return None


def infty_check(source, target, comps):
    try:
        return InftyMorphism(source, target, comps), None
    except InftyViolation as e:
        return None, (e.weight, e.dual_idx, e.atuple, e.residual)


def identity_morphism(a: HomotopyAlgebra) -> InftyMorphism:
    comps = {(0, 1): {(0, (i,)): {i: ONE} for i in range(a.dim())}}
    return InftyMorphism(a, a, comps)


def strict_morphism(a: HomotopyAlgebra, b: HomotopyAlgebra,
                    f0: ChainMap, validate=True) -> InftyMorphism:
    comps = {(0, 1): {}}
    for i in range(a.dim()):
        n, j = a.flat.elems[i]
        col = f0.comp(n).column(j)
        vec = {b.flat.pos[(n, t)]: c for t, c in col.items()}
        if vec:
            comps[(0, 1)][(0, (i,))] = vec
    return InftyMorphism(a, b, comps, validate=validate)


def compose(g: InftyMorphism, f: InftyMorphism) -> InftyMorphism:
    """Composite morphism via the full decomposition of the dual."""
    if f.target is not g.source:
        raise ValueError("composition endpoint mismatch")
    ks = f.ks
    comps = {}
    fs = f.source.flat
    for w in range(0, ks.trunc.w_max + 1):
        for n in range(1, ks.trunc.n_max + 1):
            dd = ks.dual_dim(w, n)
            if dd == 0:
                continue
            by = {}
            for atuple in window_tuples(f.source, w, n):
                for i in range(dd):
                    val = cut_terms(ks, fs, g.comps, 0, f.comps, 0,
                                    w, n, i, atuple, min_top_weight=0)
                    if val:
                        by[(i, atuple)] = val
            if by:
                comps[(w, n)] = by
    return InftyMorphism(f.source, g.target, comps)


def invert_iso(f: InftyMorphism) -> InftyMorphism:
    """Inverse of a morphism with invertible first component.

    Triangular solve of (g o f) = identity: the weight-n component is the
    lower-weight defect postcomposed with inverses of the tensor powers of
    the first component.
    """
    ks = f.ks
    a, b = f.source, f.target
    f0 = f.first_component()
    inv0 = {}
    for n in b.cx.degrees():
        m = f0.comp(n)
        if m.rows != m.cols:
            raise ValueError("first component is not invertible")
        inv0[n] = inverse(m) if m.rows else m
    finv = {}
    for i in range(b.dim()):
        n, j = b.flat.elems[i]
        col = inv0[n].column(j)
        finv[i] = {a.flat.pos[(n, t)]: c for t, c in col.items()}

    comps = {(0, 1): {(0, (i,)): dict(finv[i]) for i in range(b.dim())
                      if finv[i]}}
    id_targets = {(0, 1): {(0, (i,)): {i: ONE} for i in range(a.dim())}}

    for w in range(1, ks.trunc.w_max + 1):
        for n in range(1, ks.trunc.n_max + 1):
            dd = ks.dual_dim(w, n)
            if dd == 0:
                continue
            by = {}
            for atuple in window_tuples(a, w, n):
                for i in range(dd):
                    lower = cut_terms(ks, a.flat, comps, 0, f.comps, 0,
                                      w, n, i, atuple, min_top_weight=0,
                                      skip_full_top=True)
                    if not lower:
                        continue
                    # g_(w)(delta; f0 a1, ..., f0 an) = -lower: substitute
                    # the inverse of f0 on each slot
                    by.setdefault(i, {})[atuple] = {t: -c for t, c in lower.items()}
            comp_w = {}
            for i, vals in by.items():
                for atuple, vec in vals.items():
                    # expand inverse tensor substitution
                    expansion = [(ONE, ())]
                    for a_idx in atuple:
                        expansion = [(c * cc, tp + (bidx,))
                                     for (c, tp) in expansion
                                     for bidx, cc in finv[a_idx].items()]
                    for c, btuple in expansion:
                        cur = comp_w.setdefault((i, btuple), {})
                        for t, ct in vec.items():
                            v = cur.get(t, ZERO) + c * ct
                            if v == 0:
                                cur.pop(t, None)
                            else:
                                cur[t] = v
            comp_w = {k: v for k, v in comp_w.items() if v}
            if comp_w:
                comps[(w, n)] = comp_w

    g = InftyMorphism(b, a, comps)
    _assert_identity(compose(g, f))
    _assert_identity(compose(f, g))
    return g


def _assert_identity(h: InftyMorphism):
    ident = identity_morphism(h.source)
    if _clean_comps(h.comps) != _clean_comps(ident.comps):
        raise RuntimeError("composite is not the identity morphism")


def is_identity(h: InftyMorphism) -> bool:
    return _clean_comps(h.comps) == _clean_comps(identity_morphism(h.source).comps)


# -- transport and strictification -------------------------------------------

def transport_structure(g_comps: dict, algebra: HomotopyAlgebra,
                        name="transported") -> HomotopyAlgebra:
    """Structure on the same complex making g an infinity-isomorphism out of
    algebra, where g has identity first component.

    Solves the morphism identity weight by weight for the target structure.
    """
    ks = algebra.ks
    flat = algebra.flat
    xi = {}
    src_mu = algebra.mu
    for w in range(1, ks.trunc.w_max + 1):
        for n in range(1, ks.trunc.n_max + 1):
            dd = ks.dual_dim(w, n)
            if dd == 0:
                continue
            by = {}
            for atuple in window_tuples(algebra, w, n):
                for i in range(dd):
                    op_deg = ks.dual_degree(w, n, i)
                    res = del_op(flat, flat, op_deg,
                                 lambda args: comp_eval(g_comps, w, n, i, args),
                                 None, atuple)
                    vec = {t: -c for t, c in res.items()}
                    dphi = ks.dphi_matrix(w, n)
                    for j, cj in dphi.column(i).items():
                        for t, ct in comp_eval(g_comps, w - 1, n, j, atuple).items():
                            v = vec.get(t, ZERO) + cj * ct
                            if v == 0:
                                vec.pop(t, None)
                            else:
                                vec[t] = v
                    fstar = star_terms(ks, flat, g_comps, 0, src_mu, -1,
                                       w, n, i, atuple, min_inner_weight=1)
                    for t, c in fstar.items():
                        v = vec.get(t, ZERO) + c
                        if v == 0:
                            vec.pop(t, None)
                        else:
                            vec[t] = v
                    # subtract the lower-weight outer terms of xi circ g
                    lower = cut_terms(ks, flat, xi, -1, g_comps, 0,
                                      w, n, i, atuple, min_top_weight=1,
                                      skip_full_top=True)
                    for t, c in lower.items():
                        v = vec.get(t, ZERO) - c
                        if v == 0:
                            vec.pop(t, None)
                        else:
                            vec[t] = v
                    if vec:
                        by[(i, atuple)] = vec
            if by:
                xi[(w, n)] = by
    return HomotopyAlgebra(ks, algebra.cx, xi, name=name)


def strictify_mono(f: InftyMorphism):
    """Straighten an injective-first-component morphism.

    Returns (C, g, gf) with g an infinity-isomorphism out of the target and
    gf = g o f strict. The retraction of the first component is chosen by
    deterministic pivoting.
    """
    ks = f.ks
    f0 = f.first_component()
    if not f0.is_injective():
        raise ValueError("first component is not injective")
    a, b = f.source, f.target
    # retraction r: B -> A with r f0 = id
    from .exactlin import retraction as _retr
    r = {}
    for n in a.cx.degrees():
        r[n] = _retr(f0.comp(n))
    rflat = {}
    for i in range(b.dim()):
        n, j = b.flat.elems[i]
        if n in r and r[n].rows:
            col = r[n].column(j)
            rflat[i] = {a.flat.pos[(n, t)]: c for t, c in col.items()}
        else:
            rflat[i] = {}

    # r^* f: precompose each component with tensor powers of r
    rstar = _precompose_tensor(f.comps, rflat, b.dim())

    # g_(n) := - sum_{k<n} [g_(k) circ (r^* f)]_(n), g_(0) = id_B
    g_comps = {(0, 1): {(0, (i,)): {i: ONE} for i in range(b.dim())}}
    for w in range(1, ks.trunc.w_max + 1):
        for n in range(1, ks.trunc.n_max + 1):
            dd = ks.dual_dim(w, n)
            if dd == 0:
                continue
            by = {}
            for atuple in window_tuples(b, w, n):
                for i in range(dd):
                    val = cut_terms(ks, b.flat, g_comps, 0, rstar, 0,
                                    w, n, i, atuple, min_top_weight=0,
                                    skip_full_top=True)
                    if val:
                        by[(i, atuple)] = {t: -c for t, c in val.items()}
            if by:
                g_comps[(w, n)] = by

    c_alg = transport_structure(g_comps, b, name=f"{b.name}_strict")
    g = InftyMorphism(b, c_alg, g_comps)
    gf = compose(g, f)
    for (w, n), by in gf.comps.items():
        if w >= 1 and by:
            raise RuntimeError("strictification left a higher component")
    return c_alg, g, gf


def strictify_epi(f: InftyMorphism):
    """Straighten a surjective-first-component morphism from the source side.

    Returns (A, g, fg) with g an infinity-isomorphism into the source and
    fg = f o g strict; uses a deterministic section of the first component.
    """
    ks = f.ks
    f0 = f.first_component()
    if not f0.is_surjective():
        raise ValueError("first component is not surjective")
    a, b = f.source, f.target
    # section s: B -> A with f0 s = id, by solving on pivot columns
    from .exactlin import solve
    sflat = {}
    for i in range(b.dim()):
        n, j = b.flat.elems[i]
        m = f0.comp(n)
        e = [ONE if t == j else ZERO for t in range(m.rows)]
        x = solve(m, e)
        if x is None:
            raise RuntimeError("section solve failed on a surjective map")
        sflat[i] = {a.flat.pos[(n, t)]: c for t, c in enumerate(x) if c != 0}

    g_comps = {(0, 1): {(0, (i,)): {i: ONE} for i in range(a.dim())}}
    for w in range(1, ks.trunc.w_max + 1):
        for n in range(1, ks.trunc.n_max + 1):
            dd = ks.dual_dim(w, n)
            if dd == 0:
                continue
            by = {}
            for atuple in window_tuples(a, w, n):
                for i in range(dd):
                    val = cut_terms(ks, a.flat, f.comps, 0, g_comps, 0,
                                    w, n, i, atuple, min_top_weight=1,
                                    skip_full_top=False)
                    # (f circ g)_(w) = 0: the top-identity cut contributes
                    # f0 g_(w), so g_(w) := -s * (the other terms)
                    if val:
                        corr = {}
                        for t, c in val.items():
                            for u, cu in sflat[t].items():
                                v = corr.get(u, ZERO) - c * cu
                                if v == 0:
                                    corr.pop(u, None)
                                else:
                                    corr[u] = v
                        if corr:
                            by[(i, atuple)] = corr
            if by:
                g_comps[(w, n)] = by

    # transported structure on the source side along g (identity first comp)
    a_new = transport_structure_from(g_comps, a)
    g = InftyMorphism(a_new, a, g_comps)
    fg = compose(f, g)
    for (w, n), by in fg.comps.items():
        if w >= 1 and by:
            raise RuntimeError("strictification left a higher component")
    return a_new, g, fg


def transport_structure_from(g_comps: dict, target: HomotopyAlgebra,
                             name="transported") -> HomotopyAlgebra:
    """Structure on the source side making g : new -> target a morphism,
    where g has identity first component; solved weight by weight from the
    morphism identity read in the other direction."""
    ks = target.ks
    flat = target.flat
    xi = {}
    for w in range(1, ks.trunc.w_max + 1):
        for n in range(1, ks.trunc.n_max + 1):
            dd = ks.dual_dim(w, n)
            if dd == 0:
                continue
            by = {}
            for atuple in window_tuples(target, w, n):
                for i in range(dd):
                    # residual of the identity with unknown xi isolated:
                    # f* xi top term equals xi_(w) since f0 = id
                    op_deg = ks.dual_degree(w, n, i)
                    res = del_op(flat, flat, op_deg,
                                 lambda args: comp_eval(g_comps, w, n, i, args),
                                 None, atuple)
                    vec = dict(res)
                    dphi = ks.dphi_matrix(w, n)
                    for j, cj in dphi.column(i).items():
                        for t, ct in comp_eval(g_comps, w - 1, n, j,
                                               atuple).items():
                            v = vec.get(t, ZERO) - cj * ct
                            if v == 0:
                                vec.pop(t, None)
                            else:
                                vec[t] = v
                    star_lower = star_terms(ks, flat, g_comps, 0, xi, -1,
                                            w, n, i, atuple,
                                            min_inner_weight=1,
                                            min_outer_weight=1)
                    for t, c in star_lower.items():
                        v = vec.get(t, ZERO) - c
                        if v == 0:
                            vec.pop(t, None)
                        else:
                            vec[t] = v
                    vtop = cut_terms(ks, flat, target.mu, -1, g_comps, 0,
                                     w, n, i, atuple, min_top_weight=1)
                    for t, c in vtop.items():
                        v = vec.get(t, ZERO) + c
                        if v == 0:
                            vec.pop(t, None)
                        else:
                            vec[t] = v
                    if vec:
                        by[(i, atuple)] = vec
            if by:
                xi[(w, n)] = by
    return HomotopyAlgebra(ks, target.cx, xi, name=name)


def _precompose_tensor(comps: dict, rflat: dict, new_dim: int) -> dict:
    """Precompose every component with tensor powers of a degree-0 map."""
    out = {}
    for (w, n), by in comps.items():
        dual_indices = sorted({i for (i, _) in by})
        acc = {}
        for btuple in iproduct(range(new_dim), repeat=n):
            expansions = [(ONE, ())]
            for b in btuple:
                expansions = [(c * cc, tp + (aidx,))
                              for (c, tp) in expansions
                              for aidx, cc in rflat[b].items()]
                if not expansions:
                    break
            if not expansions:
                continue
            for i in dual_indices:
                vec = {}
                for c, atuple in expansions:
                    for t, ct in by.get((i, atuple), {}).items():
                        v = vec.get(t, ZERO) + c * ct
                        if v == 0:
                            vec.pop(t, None)
                        else:
                            vec[t] = v
                if vec:
                    acc[(i, btuple)] = vec
        if acc:
            out[(w, n)] = acc
    return out


# -- products and classification ----------------------------------------------

def product(a: HomotopyAlgebra, b: HomotopyAlgebra):
    """Product algebra on the direct sum; mixed inputs vanish.

    Returns (algebra, projection to a, projection to b).
    """
    if a.ks is not b.ks:
        raise ValueError("product needs a common Koszul system")
    from .complexes import direct_sum
    total, inc_a, inc_b = direct_sum(a.cx, b.cx, tag_a=a.name, tag_b=b.name)
    ks = a.ks
    flat_t = Flat(total)
    # flat index translations
    a_to_t, b_to_t = {}, {}
    for i in range(a.dim()):
        n, j = a.flat.elems[i]
        col = inc_a.comp(n).column(j)
        a_to_t[i] = flat_t.pos[(n, min(col))]
    for i in range(b.dim()):
        n, j = b.flat.elems[i]
        col = inc_b.comp(n).column(j)
        b_to_t[i] = flat_t.pos[(n, min(col))]
    t_to_a = {v: k for k, v in a_to_t.items()}
    t_to_b = {v: k for k, v in b_to_t.items()}

    mu = {}
    for (w, n), by in a.mu.items():
        acc = mu.setdefault((w, n), {})
        for (i, atuple), vec in by.items():
            key = (i, tuple(a_to_t[x] for x in atuple))
            acc[key] = {a_to_t[t]: c for t, c in vec.items()}
    for (w, n), by in b.mu.items():
        acc = mu.setdefault((w, n), {})
        for (i, atuple), vec in by.items():
            key = (i, tuple(b_to_t[x] for x in atuple))
            acc[key] = {b_to_t[t]: c for t, c in vec.items()}
    prod = HomotopyAlgebra(ks, total, mu, name=f"{a.name}x{b.name}")

    proj_a = {(0, 1): {(0, (a_to_t[i],)): {i: ONE} for i in range(a.dim())}}
    proj_b = {(0, 1): {(0, (b_to_t[i],)): {i: ONE} for i in range(b.dim())}}
    pa = InftyMorphism(prod, a, proj_a)
    pb = InftyMorphism(prod, b, proj_b)
    return prod, pa, pb


def pair_into_product(prod: HomotopyAlgebra, pa: InftyMorphism,
                      pb: InftyMorphism, f: InftyMorphism,
                      g: InftyMorphism) -> InftyMorphism:
    """Unique morphism into the product recovering f and g under projections."""
    if f.source is not g.source:
        raise ValueError("pairing needs a common source")
    # reuse the flat translations recorded by the projections
    a_to_t = {i: t for (z, (t,)), vec in pa.comps[(0, 1)].items() for i in vec}
    b_to_t = {i: t for (z, (t,)), vec in pb.comps[(0, 1)].items() for i in vec}
    comps = {}
    for (w, n), by in f.comps.items():
        acc = comps.setdefault((w, n), {})
        for key, vec in by.items():
            acc.setdefault(key, {}).update(
                {a_to_t[t]: c for t, c in vec.items()})
    for (w, n), by in g.comps.items():
        acc = comps.setdefault((w, n), {})
        for key, vec in by.items():
            cur = acc.setdefault(key, {})
            for t, c in vec.items():
                cur[b_to_t[t]] = cur.get(b_to_t[t], ZERO) + c
    return InftyMorphism(f.source, prod, comps)


def classify(f: InftyMorphism) -> dict:
    """Weak-equivalence / cofibration / fibration flags by first component."""
    f0 = f.first_component()
    return {"we": is_quasi_iso(f0),
            "cof": f0.is_injective(),
            "fib": f0.is_surjective()}


# -- bar, cobar, rectification -------------------------------------------------

def component_symmetrize(ks, flat, w, n, vec_component: dict) -> dict:
    """Averaging projector onto the invariants of the diagonal action."""
    if not ks.symmetric or n == 1:
        return dict(vec_component)
    perms = tr.all_perms(n)
    frac = Q(1, len(perms))
    out = {}
    for (i, atuple), c in vec_component.items():
        for sigma in perms:
            for cj, key in key_action_terms(ks, flat, w, n, i, atuple, sigma):
                v = out.get(key, ZERO) + frac * cj * c
                if v == 0:
                    out.pop(key, None)
                else:
                    out[key] = v
    return out


def bar(a: HomotopyAlgebra):
    """Quasi-free coalgebra on the algebra (spec-level wrapper)."""
    from .coalgebras import bar_coalgebra
    return bar_coalgebra(a)


def cobar(C, total_weight: int):
    """Presented free algebra on a conilpotent coalgebra, weight-windowed."""
    from .coalgebras import cobar_algebra
    return cobar_algebra(C, total_weight)


class RectificationResult:
    def __init__(self, cobar_obj, algebra, unit, is_wqi, window):
        self.cobar = cobar_obj
        self.algebra = algebra
        self.unit = unit
        self.is_wqi = is_wqi
        self.window = window

    def __repr__(self):
        return f"Rectification(dim={self.algebra.dim()}, is_wqi={self.is_wqi})"


def rectify(a: HomotopyAlgebra, total_weight=None) -> RectificationResult:
    """Strict replacement: cobar of the bar, with the unit morphism.

    The unit's weight-w component wraps the corresponding bar element as a
    generator of the free algebra; its first component is the inclusion of
    the algebra as the weight-zero generators. The quasi-isomorphism flag
    is window-relative and the window travels with the result.
    """
    from .coalgebras import bar_coalgebra, cobar_algebra
    ks = a.ks
    if total_weight is None:
        total_weight = ks.trunc.w_max
    barA = bar_coalgebra(a)
    om = cobar_algebra(barA, total_weight)
    R = om.as_algebra(validate=False)
    comps = {}
    for (w, n) in barA.components:
        by = {}
        for i in range(ks.dual_dim(w, n)):
            for atuple in iproduct(range(a.dim()), repeat=n):
                sym = component_symmetrize(ks, a.flat, w, n, {(i, atuple): ONE})
                barvec = barA.to_flat_vec(w, n, sym)
                val = {}
                for fb, c in barvec.items():
                    e = (0, 1, 0, (fb,))
                    j = om.plain_index.get(e)
                    if j is None:
                        raise TruncationError("unit wrap leaves the window")
                    for jb, cb in om.to_basis_coords({j: ONE}).items():
                        t = om.flat_of_basis[jb]
                        v = val.get(t, ZERO) + c * cb
                        if v == 0:
                            val.pop(t, None)
                        else:
                            val[t] = v
                if val:
                    by[(i, atuple)] = val
        if by:
            comps[(w, n)] = by
    unit = InftyMorphism(a, R, comps)
    f0 = unit.first_component()
    wqi = is_quasi_iso(f0)
    return RectificationResult(om, R, unit, wqi,
                               {"w_max": ks.trunc.w_max,
                                "n_max": ks.trunc.n_max,
                                "total_weight": total_weight})
