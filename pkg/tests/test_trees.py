import random

from opcal import trees as tr
from opcal.exactlin import Q
from opcal.operads import SModule, builtin_presentation


def terms_eq(a, b):
    da = {}
    for c, t in a:
        da[t] = da.get(t, 0) + c
    db = {}
    for c, t in b:
        db[t] = db.get(t, 0) + c
    return {k: v for k, v in da.items() if v} == {k: v for k, v in db.items() if v}


def test_nonsymmetric_catalan_counts():
    E = builtin_presentation("As").smodule
    for w, n, count in [(0, 1, 1), (1, 2, 1), (2, 3, 2), (3, 4, 5), (4, 5, 14)]:
        assert len(tr.enumerate_trees(E, w, tuple(range(1, n + 1)))) == count


def test_symmetric_binary_counts():
    E = builtin_presentation("Com").smodule
    # leaf-labeled binary trees: (2n-3)!! of them
    for w, n, count in [(1, 2, 1), (2, 3, 3), (3, 4, 15)]:
        assert len(tr.enumerate_trees(E, w, tuple(range(1, n + 1)))) == count


def test_empty_generators_only_identity():
    E = SModule("nonsymmetric", {2: []})
    assert tr.enumerate_trees(E, 0, (1,)) == [1]
    assert tr.enumerate_trees(E, 1, (1, 2)) == []


def test_action_is_right_action():
    for name in ("Com", "Lie"):
        E = builtin_presentation(name).smodule
        for t in tr.enumerate_trees(E, 2, (1, 2, 3)):
            for a in tr.all_perms(3):
                for b in tr.all_perms(3):
                    two_step = []
                    for c1, t1 in tr.act_tree(E, t, a):
                        for c2, t2 in tr.act_tree(E, t1, b):
                            two_step.append((c1 * c2, t2))
                    one_step = [(c, t2) for c, t2 in tr.act_tree(E, t, tr.perm_mul(a, b))]
                    assert terms_eq(two_step, one_step)


def test_action_identity_fixes():
    E = builtin_presentation("Lie").smodule
    for t in tr.enumerate_trees(E, 3, (1, 2, 3, 4)):
        assert tr.act_tree(E, t, tr.perm_identity(4)) == [(Q(1), t)]


def test_corolla_action_matches_generator_action():
    E = builtin_presentation("Lie").smodule
    b = (2, 0)
    cor = tr.node(b, (1, 2))
    swap = (2, 1)
    assert tr.act_tree(E, cor, swap) == [(Q(-1), cor)]


def test_graft_keeps_canonical_form_and_composes():
    E = builtin_presentation("Com").smodule
    m = (2, 0)
    t = tr.node(m, (1, 2))
    sign, res = tr.graft(E, t, 1, t)
    assert sign == Q(1)
    assert res == tr.node(m, (tr.node(m, (1, 2)), 3))
    canon = tr.canonicalize(E, res)
    assert canon == [(Q(1), res)]


def test_graft_relabeling():
    E = builtin_presentation("As").smodule
    m = (2, 0)
    t = tr.node(m, (1, 2))
    _, res = tr.graft(E, t, 2, t)
    assert res == tr.node(m, (1, tr.node(m, (2, 3))))


def test_splits_roundtrip_by_graft():
    # grafting the split pieces back recovers the tree with inverse sign
    for name in ("As", "Lie"):
        E = builtin_presentation(name).smodule
        for t in tr.enumerate_trees(E, 3, (1, 2, 3, 4)):
            for sign, outer, slot, inner, block in tr.splits(E, t):
                if tr.is_leaf(inner) or tr.is_leaf(outer):
                    continue
                if block != tuple(range(block[0], block[0] + len(block))):
                    continue  # graft assumes consecutive labels
                s2, res = tr.graft(E, outer, slot, inner)
                assert res == t
                assert sign * s2 == Q(1)


def test_cut_total_decomposition_counts():
    E = builtin_presentation("As").smodule
    m = (2, 0)
    t = tr.node(m, (tr.node(m, (1, 2)), 3))
    usets = tr.upward_closed_sets(t)
    # vertex sets closed under parents: {}, {root}, {root, child}
    assert len(usets) == 3
    for uset in usets:
        sign, top, bottoms = tr.cut(E, t, uset)
        assert sign == Q(1)
        n = sum(len(blk) for _, blk in bottoms)
        assert n == 3


def test_edge_extraction_context_shapes():
    E = builtin_presentation("As").smodule.suspend()
    m = (2, 0)
    t = tr.node(m, (tr.node(m, (1, 2)), 3))
    ext = tr.edge_extractions(E, t)
    assert len(ext) == 1  # one internal edge
    sign, ctx, local, slot_degs = ext[0]
    assert tr.hole_info(ctx)[1] == 3
    assert tr.tree_weight(local) == 2
    # embedding the local back into the context recovers the tree
    s2, res = tr.embed_at_hole(E, ctx, local)
    assert res == t
    assert sign * s2 == Q(1)


def test_edge_extraction_embed_roundtrip_with_signs():
    rng = random.Random(7)
    for name in ("Com", "Lie", "D"):
        E = builtin_presentation(name).smodule.suspend()
        wmax = 3 if name != "D" else 4
        nmax = 4 if name != "D" else 1
        for w in range(2, wmax + 1):
            for t in tr.enumerate_trees(E, w, tuple(range(1, nmax + 1)))[:6]:
                for sign, ctx, local, _ in tr.edge_extractions(E, t):
                    s2, res = tr.embed_at_hole(E, ctx, local)
                    assert res == t
                    assert sign * s2 == Q(1)
