"""Tree monomials for free operads on symmetric or nonsymmetric generators.

A tree monomial is a rooted tree whose internal vertices carry generators
and whose leaves carry the labels 1..n; its weight is the number of
internal vertices. Algebraically a monomial stands for the tensor of its
vertex decorations in depth-first (root first) order, so every structural
operation (grafting, cutting, relabeling) is accompanied by the Koszul
sign of the induced permutation of decoration factors.

Canonical form: at every vertex the children are ordered by their minimal
leaf label. In symmetric mode an arbitrary planar arrangement is rewritten
into canonical form via

    (g; c_1, ..., c_m) = sign * ((g . tau^{-1}); c_{tau(1)}, ..., c_{tau(m)})

where tau sorts the children, the sign is the Koszul sign of permuting the
graded child blocks, and "." is the right action on generators. Leaf labels
may carry degrees (used when leaves stand for grafted graded subtrees).

Trees are nested tuples: a leaf is an int label, an internal vertex is
("N", gen_key, children). The special generator key ("hole", m) marks the
substitution slot of a context tree.
"""

from __future__ import annotations

from itertools import permutations, product

from .exactlin import ONE, Q, ZERO

NODE = "N"


def is_leaf(t) -> bool:
    return isinstance(t, int)


def node(gen, children) -> tuple:
    return (NODE, gen, tuple(children))


def hole_key(m: int) -> tuple:
    return ("hole", m)


def is_hole(gen) -> bool:
    return isinstance(gen, tuple) and len(gen) == 2 and gen[0] == "hole"


def leaves_of(t) -> tuple:
    if is_leaf(t):
        return (t,)
    out = []
    for c in t[2]:
        out.extend(leaves_of(c))
    return tuple(sorted(out))


def min_leaf(t) -> int:
    if is_leaf(t):
        return t
    return min(min_leaf(c) for c in t[2])


def tree_arity(t) -> int:
    return len(leaves_of(t))


def tree_weight(t) -> int:
    if is_leaf(t):
        return 0
    return (0 if is_hole(t[1]) else 1) + sum(tree_weight(c) for c in t[2])


def dfs(t, path=()):
    """Decoration factors in preorder: list of (path, gen_key)."""
    if is_leaf(t):
        return []
    out = [(path, t[1])]
    for k, c in enumerate(t[2]):
        out.extend(dfs(c, path + (k,)))
    return out


def subtree_at(t, path):
    for k in path:
        t = t[2][k]
    return t


def replace_at(t, path, sub):
    if not path:
        return sub
    k = path[0]
    kids = list(t[2])
    kids[k] = replace_at(kids[k], path[1:], sub)
    return node(t[1], kids)


def relabel(t, mapping: dict):
    if is_leaf(t):
        return mapping[t]
    return node(t[1], tuple(relabel(c, mapping) for c in t[2]))


def standardize(t):
    """Monotone relabeling of the leaf set onto 1..n; preserves canonical form."""
    ls = leaves_of(t)
    return relabel(t, {l: i + 1 for i, l in enumerate(ls)})


# -- permutations (1-based image tuples: perm[i-1] = image of i) ---------

def perm_identity(n):
    return tuple(range(1, n + 1))


def perm_mul(a, b):
    """First relabel by a, then by b: (a*b)(i) = b(a(i))."""
    return tuple(b[a[i] - 1] for i in range(len(a)))


def perm_inverse(a):
    inv = [0] * len(a)
    for i, v in enumerate(a):
        inv[v - 1] = i + 1
    return tuple(inv)


def all_perms(n):
    return [tuple(p) for p in permutations(range(1, n + 1))]


def transposition(n, i):
    """Adjacent transposition swapping i and i+1 (1-based)."""
    p = list(range(1, n + 1))
    p[i - 1], p[i] = p[i], p[i - 1]
    return tuple(p)


def koszul_perm_sign(degs, tau):
    """Sign of reordering graded blocks: new[j] = old[tau[j]] (0-based tau)."""
    sign = 1
    m = len(tau)
    for a in range(m):
        for b in range(a + 1, m):
            if tau[a] > tau[b]:
                if (degs[tau[a]] % 2) and (degs[tau[b]] % 2):
                    sign = -sign
    return sign


def reorder_sign(src, dst, deg_of):
    """Koszul sign of reordering factor list src (uids) into dst order."""
    pos = {u: i for i, u in enumerate(src)}
    tau = tuple(pos[u] for u in dst)
    degs = [deg_of[u] for u in src]
    return koszul_perm_sign(degs, tau)


# -- canonical form ------------------------------------------------------

def _merge(terms):
    acc = {}
    for c, t in terms:
        if c == 0:
            continue
        acc[t] = acc.get(t, ZERO) + c
    return [(c, t) for t, c in acc.items() if c != 0]


def tree_degree(t, table, leaf_degs=None) -> int:
    if is_leaf(t):
        return leaf_degs.get(t, 0) if leaf_degs else 0
    d = 0 if is_hole(t[1]) else table.degree(t[1])
    return d + sum(tree_degree(c, table, leaf_degs) for c in t[2])


def canonicalize(table, t, leaf_degs=None):
    """Rewrite into min-leaf-sorted canonical form: list of (coeff, tree)."""
    if is_leaf(t):
        return [(ONE, t)]
    parts = [canonicalize(table, c, leaf_degs) for c in t[2]]
    gen = t[1]
    out = []
    for combo in product(*parts):
        coeff = ONE
        for c, _ in combo:
            coeff *= c
        kids = [tr for _, tr in combo]
        mins = [min_leaf(k) for k in kids]
        tau = tuple(sorted(range(len(kids)), key=lambda j: mins[j]))
        if tau == tuple(range(len(kids))):
            out.append((coeff, node(gen, kids)))
            continue
        degs = [tree_degree(k, table, leaf_degs) for k in kids]
        sign = koszul_perm_sign(degs, tau)
        sorted_kids = [kids[j] for j in tau]
        rho = perm_inverse(tuple(j + 1 for j in tau))
        if is_hole(gen):
            out.append((coeff * sign, node(gen, sorted_kids)))
        else:
            for ac, g2 in table.act(gen, rho):
                out.append((coeff * sign * ac, node(g2, sorted_kids)))
    return _merge(out)


def act_tree(table, t, sigma, leaf_degs=None):
    """Right symmetric-group action by leaf relabeling: k -> sigma(k)."""
    mapping = {i + 1: sigma[i] for i in range(len(sigma))}
    if leaf_degs:
        leaf_degs = {mapping[k]: d for k, d in leaf_degs.items()}
    return canonicalize(table, relabel(t, mapping), leaf_degs)


# -- enumeration ---------------------------------------------------------

def _ordered_partitions_sym(labels, m):
    """Ordered set partitions into m nonempty blocks with increasing minima."""
    labels = sorted(labels)
    if m == 1:
        yield (tuple(labels),)
        return
    first = labels[0]
    rest = labels[1:]
    # choose the remainder of block 1 from rest
    for mask in range(1 << len(rest)):
        block1 = [first] + [rest[i] for i in range(len(rest)) if mask >> i & 1]
        remaining = [rest[i] for i in range(len(rest)) if not mask >> i & 1]
        if len(remaining) < m - 1:
            continue
        for tail in _ordered_partitions_sym(remaining, m - 1):
            yield (tuple(block1),) + tail


def _ordered_partitions_ns(labels, m):
    """Consecutive-interval partitions (planar mode)."""
    labels = sorted(labels)
    n = len(labels)

    def rec(start, blocks_left):
        if blocks_left == 1:
            yield (tuple(labels[start:]),)
            return
        for size in range(1, n - start - blocks_left + 2):
            head = tuple(labels[start:start + size])
            for tail in rec(start + size, blocks_left - 1):
                yield (head,) + tail

    return rec(0, m)


def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for tail in _compositions(total - first, parts - 1):
            yield (first,) + tail


def tree_key(t):
    if is_leaf(t):
        return (0, str(t))
    return (1, repr(t[1]), tuple(tree_key(c) for c in t[2]))


def enumerate_trees(table, weight, labels):
    """All canonical tree monomials of given weight on the given leaf labels."""
    labels = tuple(sorted(labels))
    out = _enum(table, weight, labels)
    return sorted(out, key=tree_key)


def _enum(table, weight, labels):
    if weight == 0:
        return [labels[0]] if len(labels) == 1 else []
    out = []
    parter = _ordered_partitions_sym if table.symmetric else _ordered_partitions_ns
    for m in table.arities():
        if m > len(labels):
            continue
        gens = table.gens(m)
        if not gens:
            continue
        for blocks in parter(labels, m):
            for wsplit in _compositions(weight - 1, m):
                kid_lists = [_enum(table, wsplit[i], blocks[i]) for i in range(m)]
                if any(not kl for kl in kid_lists):
                    continue
                for kids in product(*kid_lists):
                    for g in gens:
                        out.append(node(g, kids))
    return out


# -- grafting ------------------------------------------------------------

def graft(table, t, i, s, leaf_degs=None):
    """Partial composition t o_i s: returns (sign, tree).

    Leaves of s become i..i+arity(s)-1, later leaves of t shift up.
    Canonical inputs give a canonical output (relabelings are monotone);
    the sign interleaves the decoration factors of s into those of t.
    """
    ns = tree_arity(s)
    nt = tree_arity(t)
    map_t = {}
    for l in range(1, nt + 1):
        if l < i:
            map_t[l] = l
        elif l > i:
            map_t[l] = l + ns - 1
    map_t[i] = 0  # placeholder
    map_s = {l: l + i - 1 for l in range(1, ns + 1)}

    s2 = relabel(s, map_s)
    t2 = relabel(t, {k: (v if v else -1) for k, v in map_t.items()})

    # locate placeholder leaf -1 and substitute
    def subst(u):
        if is_leaf(u):
            return s2 if u == -1 else u
        return node(u[1], tuple(subst(c) for c in u[2]))

    res = subst(t2)
    src = [p for p, _ in dfs(t)] + [("S",) + p for p, _ in dfs(s)]
    deg_of = {p: (0 if is_hole(g) else table.degree(g)) for p, g in dfs(t)}
    for p, g in dfs(s):
        deg_of[("S",) + p] = 0 if is_hole(g) else table.degree(g)

    # path of the placeholder in t2 determines where s factors land
    def find_leaf(u, path=()):
        if is_leaf(u):
            return path if u == -1 else None
        for k, c in enumerate(u[2]):
            r = find_leaf(c, path + (k,))
            if r is not None:
                return r
        return None

    at = find_leaf(t2)
    dst = []
    for p, _ in dfs(res):
        if len(p) >= len(at) and p[:len(at)] == at:
            dst.append(("S",) + p[len(at):])
        else:
            dst.append(p)
    sign = reorder_sign(src, dst, deg_of)
    return Q(sign), res


# -- cuts and splits -----------------------------------------------------

def upward_closed_sets(t):
    """All vertex sets closed under taking parents, as frozensets of paths."""
    if is_leaf(t):
        return [frozenset()]
    child_opts = []
    for k, c in enumerate(t[2]):
        opts = []
        for s in upward_closed_sets(c):
            opts.append(frozenset((k,) + p for p in s))
        child_opts.append(opts)
    out = [frozenset()]
    for combo in product(*child_opts):
        u = frozenset().union(*combo) | {()}
        out.append(u)
    return out


def cut(table, t, uset):
    """Split t along an upward-closed vertex set.

    Returns (sign, top, [(bottom, block)...]) with the top on labels 1..k,
    bottoms standardized to 1..|block|, blocks listed in top-leaf order.
    Bottoms may be trivial (bare leaf). uset empty gives top = identity.
    """
    if not uset:
        blk = leaves_of(t)
        return ONE, 1, [(standardize(t), blk)]

    blocks = []  # (subtree, block labels, path in t)

    def build(u, path):
        if is_leaf(u) or path not in uset:
            blocks.append((u, leaves_of(u), path))
            return ("B", len(blocks) - 1)
        return (NODE, (u[1], path), tuple(build(c, path + (k,)) for k, c in enumerate(u[2])))

    tagged = build(t, ())
    order = sorted(range(len(blocks)), key=lambda i: blocks[i][1][0])
    rank = {order[r]: r + 1 for r in range(len(order))}

    def detag(u):
        if isinstance(u, tuple) and u[0] == "B":
            return rank[u[1]]
        return node(u[1][0], tuple(detag(c) for c in u[2]))

    top = detag(tagged)
    deg_of = {p: (0 if is_hole(g) else table.degree(g)) for p, g in dfs(t)}
    src = [p for p, _ in dfs(t)]

    # destination order: top factors in top preorder, then bottoms by rank
    def top_paths(u):
        if isinstance(u, tuple) and u[0] == "B":
            return []
        out = [u[1][1]]
        for c in u[2]:
            out.extend(top_paths(c))
        return out

    dst = list(top_paths(tagged))
    bottoms = []
    for r in range(len(order)):
        sub, blk, path = blocks[order[r]]
        if not is_leaf(sub):
            dst.extend(p for p, _ in dfs(sub, path))
        bottoms.append((standardize(sub), blk))
    sign = reorder_sign(src, dst, deg_of)
    return Q(sign), top, bottoms


def splits(table, t):
    """Partial decompositions: complete lower subtree against the rest.

    Yields (sign, outer, slot, inner, block): outer on 1..n-|block|+1 with
    the distinguished leaf at position slot, inner standardized on
    1..|block|, block the sorted original labels of the inner part.
    Includes the two trivial splits (identity above or below).
    """
    n = tree_arity(t)
    out = []
    # inner = identity at each leaf position
    for l in sorted(leaves_of(t)):
        out.append((ONE, t, l, 1, (l,)))
    paths = [p for p, _ in dfs(t)]
    deg_of = {p: (0 if is_hole(g) else table.degree(g)) for p, g in dfs(t)}
    for p in paths:
        inner = subtree_at(t, p)
        blk = leaves_of(inner)
        rest = sorted(set(leaves_of(t)) - set(blk))
        outer_raw = replace_at(t, p, blk[0])
        # monotone relabel of outer onto 1..n-|blk|+1
        outer_leaves = sorted(rest + [blk[0]])
        ren = {l: i + 1 for i, l in enumerate(outer_leaves)}
        outer = relabel(outer_raw, ren)
        slot = ren[blk[0]]
        src = paths
        dst = [q for q in paths if q[:len(p)] != p] + [q for q in paths if q[:len(p)] == p]
        sign = reorder_sign(src, dst, deg_of)
        out.append((Q(sign), outer, slot, standardize(inner), blk))
    return out


# -- two-vertex extraction and contexts ----------------------------------

def edge_extractions(table, t):
    """Per internal edge (v, child w): collapse to a context with one hole.

    Yields (sign, ctx, local, slot_degs): ctx is t with v and w replaced by
    a hole whose children are the hung subtrees sorted by min leaf; local
    is the canonical two-vertex monomial on slots 1..m describing how v
    and w sat over those subtrees; slot_degs maps slot labels to the hung
    subtree degrees. Decoration factor order: ctx factors, then g_v, g_w.
    """
    out = []
    paths = [p for p, _ in dfs(t)]
    deg_of = {p: (0 if is_hole(g) else table.degree(g)) for p, g in dfs(t)}
    for vpath, gv in dfs(t):
        v = subtree_at(t, vpath)
        if is_leaf(v) or is_hole(v[1]):
            continue
        for ci, w in enumerate(v[2]):
            if is_leaf(w) or is_hole(w[1]):
                continue
            gw = w[1]
            # hung subtrees with their original base paths, in planar order
            hung = []
            for k, c in enumerate(v[2]):
                if k == ci:
                    for kk, cc in enumerate(w[2]):
                        hung.append((cc, vpath + (ci, kk)))
                else:
                    hung.append((c, vpath + (k,)))
            order = sorted(range(len(hung)), key=lambda i: min_leaf(hung[i][0]))
            rank = {order[r]: r + 1 for r in range(len(order))}
            slot_degs = {rank[i]: tree_degree(hung[i][0], table)
                         for i in range(len(hung))}
            hole = node(hole_key(len(hung)),
                        tuple(hung[order[r]][0] for r in range(len(hung))))
            ctx = replace_at(t, vpath, hole)
            # local: g_v over slots, g_w inserted at its child position
            lk = []
            idx = 0
            for k in range(len(v[2])):
                if k == ci:
                    wkids = []
                    for _ in w[2]:
                        wkids.append(rank[idx])
                        idx += 1
                    lk.append(node(gw, tuple(wkids)))
                else:
                    lk.append(rank[idx])
                    idx += 1
            local = node(gv, tuple(lk))
            # reorder t factors into (ctx factors in ctx preorder, g_v, g_w)
            outside = [q for q in paths
                       if q != vpath and q != vpath + (ci,)
                       and q[:len(vpath)] != vpath]
            before = [q for q in outside if q < vpath]
            after = [q for q in outside if q > vpath]
            hung_factors = []
            for r in range(len(hung)):
                sub, base = hung[order[r]]
                hung_factors.extend(p for p, _ in dfs(sub, base))
            dst = before + hung_factors + after + [vpath, vpath + (ci,)]
            sign = reorder_sign(paths, dst, deg_of)
            out.append((Q(sign), ctx, local, slot_degs))
    return out


def hole_info(ctx):
    """Path and arity of the unique hole vertex."""
    for p, g in dfs(ctx):
        if is_hole(g):
            return p, g[1]
    raise ValueError("no hole in context")


def embed_at_hole(table, ctx, local):
    """Substitute a local tree (leaves = slots 1..m) into the hole of ctx.

    Returns (sign, tree): the hole's children replace the local tree's
    slot leaves. Decoration convention: ctx factors then local factors.
    """
    hp, m = hole_info(ctx)
    hole = subtree_at(ctx, hp)
    kids = hole[2]
    if tree_arity(local) != m:
        raise ValueError("slot count mismatch")

    def subst(u):
        if is_leaf(u):
            return kids[u - 1]
        return node(u[1], tuple(subst(c) for c in u[2]))

    new_sub = subst(local)
    res = replace_at(ctx, hp, new_sub)

    deg_of = {}
    src = []
    for p, g in dfs(ctx):
        if p == hp:
            continue
        key = ("C",) + p
        src.append(key)
        deg_of[key] = 0 if is_hole(g) else table.degree(g)
    for p, g in dfs(local):
        key = ("L",) + p
        src.append(key)
        deg_of[key] = table.degree(g)

    # factors of res: outside hp they are ctx factors at the same path;
    # under hp they are local vertices or factors of spliced hole children
    loc_vertex_at = {}
    slot_respath = {}

    def mark(u, lpath, respath):
        if is_leaf(u):
            slot_respath[u] = respath
            return
        loc_vertex_at[respath] = ("L",) + lpath
        for k, c in enumerate(u[2]):
            mark(c, lpath + (k,), respath + (k,))

    mark(local, (), hp)

    dst = []
    for p, _ in dfs(res):
        if len(p) >= len(hp) and p[:len(hp)] == hp:
            if p in loc_vertex_at:
                dst.append(loc_vertex_at[p])
                continue
            for slot, rp in slot_respath.items():
                if p[:len(rp)] == rp:
                    dst.append(("C",) + hp + (slot - 1,) + p[len(rp):])
                    break
            else:
                raise RuntimeError("unmapped factor in embedding")
        else:
            dst.append(("C",) + p)
    sign = reorder_sign(src, dst, deg_of)
    return Q(sign), res
