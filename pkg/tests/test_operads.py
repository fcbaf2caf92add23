import random

import pytest

from opcal import trees as tr
from opcal.exactlin import Q, SparseMatrix
from opcal.operads import (BUILTIN_NAMES, Presentation, SModule, Truncation,
                           TruncationError, builtin_presentation,
                           check_ql_conditions, convolution_star,
                           free_operad_span, kappa_map, kappa_mc_residual,
                           koszul_complex_check, koszul_dual)


def ks_for(name, w=3, n=4):
    if name == "D":
        n = min(n, 2)
    return koszul_dual(builtin_presentation(name), Truncation(w, n))


def test_free_span_counts_and_composition():
    As = builtin_presentation("As")
    span = free_operad_span(As.smodule, 3, 4)
    assert span.dim(2, 3) == 2  # left and right comb
    assert span.dim(3, 4) == 5  # Catalan number
    m = (2, 0)
    t = tr.node(m, (1, 2))
    sign, res = span.compose(t, 1, t)
    assert sign == Q(1) and tr.tree_weight(res) == 2
    with pytest.raises(TruncationError):
        big = tr.node(m, (tr.node(m, (1, 2)), 3))
        span.compose(big, 1, big)  # weight 6 > 3


def test_free_span_empty_generators():
    E = SModule("nonsymmetric", {2: []})
    span = free_operad_span(E, 2, 3)
    assert span.dim(0, 1) == 1
    assert all(span.dim(w, n) == 0 for w in (1, 2) for n in (1, 2, 3))


def test_ql_conditions_homogeneous_quadratic():
    ql1, ql2, phi = check_ql_conditions(builtin_presentation("As"))
    assert ql1 and ql2
    assert all(not any(v for _, v in rows) or all(not v for _, v in rows)
               for rows in phi.values())
    # phi vanishes identically for a homogeneous presentation
    for rows in phi.values():
        for _, val in rows:
            assert not val


def test_ql1_fails_for_generator_relation():
    E = builtin_presentation("As").smodule
    m = (2, 0)
    bad = Presentation("bad", E, [[(1, tr.node(m, (1, 2)))]])
    ql1, _, phi = check_ql_conditions(bad)
    assert not ql1 and phi is None


def _ql_sample():
    E = SModule("nonsymmetric", {1: [("a", 1), ("c", 2)]})
    a, c = (1, 0), (1, 1)
    aa = tr.node(a, (tr.node(a, (1,)),))
    ac = tr.node(a, (tr.node(c, (1,)),))
    ca = tr.node(c, (tr.node(a, (1,)),))
    return Presentation("ql-sample", E, [
        [(1, aa), (-1, tr.node(c, (1,)))],
        [(1, ac), (-1, ca)],
    ])


def test_ql_sample_has_nonzero_phi():
    ql1, ql2, phi = check_ql_conditions(_ql_sample())
    assert ql1 and ql2
    assert any(val for _, val in phi[1])


def test_ql2_fails_without_closure_relation():
    E = SModule("nonsymmetric", {1: [("a", 1), ("c", 2)]})
    a, c = (1, 0), (1, 1)
    aa = tr.node(a, (tr.node(a, (1,)),))
    pres = Presentation("open", E, [[(1, aa), (-1, tr.node(c, (1,)))]])
    ql1, ql2, _ = check_ql_conditions(pres)
    assert ql1 and not ql2


def test_koszul_dual_rejects_bad_presentation():
    E = builtin_presentation("As").smodule
    m = (2, 0)
    bad = Presentation("bad", E, [[(1, tr.node(m, (1, 2)))]])
    with pytest.raises(ValueError, match="ql1|minimality"):
        koszul_dual(bad, Truncation(2, 3))


def test_dual_dimensions_As():
    ks = ks_for("As")
    for w in range(4):
        for n in range(1, 5):
            expected = 1 if n == w + 1 else 0
            assert ks.dual_dim(w, n) == expected
        if ks.dual_dim(w, w + 1):
            assert ks.dual_degree(w, w + 1, 0) == w


def test_dual_dimensions_Com_Lie():
    com = ks_for("Com")
    lie = ks_for("Lie")
    # dual of Com has the dimensions of (shifted) Lie components and dually
    assert [com.dual_dim(w, w + 1) for w in range(4)] == [1, 1, 2, 6]
    assert [lie.dual_dim(w, w + 1) for w in range(4)] == [1, 1, 1, 1]
    assert [com.qop.dim(n - 1, n) for n in range(2, 5)] == [1, 1, 1]
    assert [lie.qop.dim(n - 1, n) for n in range(2, 5)] == [1, 2, 6]


def test_weight_zero_and_one_components():
    for name in BUILTIN_NAMES:
        ks = ks_for(name)
        assert ks.dual_dim(0, 1) == 1
        for n in range(1, ks.trunc.n_max + 1):
            gens = len(ks.E.components.get(n, ()))
            assert ks.dual_dim(1, n) == gens


def test_dphi_zero_for_homogeneous():
    for name in BUILTIN_NAMES:
        ks = ks_for(name)
        for (w, n) in ks.dual_components():
            assert ks.dphi_matrix(w, n).is_zero()


def test_dphi_nonzero_and_squares_to_zero_on_ql_sample():
    ks = koszul_dual(_ql_sample(), Truncation(4, 1))
    nnz = sum(len(ks.dphi_matrix(w, 1).entries) for w in range(1, 5))
    assert nnz > 0
    for w in range(2, 5):
        assert (ks.dphi_matrix(w - 1, 1) * ks.dphi_matrix(w, 1)).is_zero()


def test_dual_action_equivariance_of_dphi():
    ks = koszul_dual(_ql_sample(), Truncation(3, 1))
    # arity-1 actions are trivial; the check is that act_dual is identity
    for (w, n) in ks.dual_components():
        act = ks.act_dual(w, n, tr.perm_identity(n))
        assert act == SparseMatrix.identity(ks.dual_dim(w, n))


def test_dual_components_are_action_stable():
    for name in ("Com", "Lie"):
        ks = ks_for(name)
        for (w, n) in ks.dual_components():
            for i in range(1, n):
                sigma = tr.transposition(n, i)
                mat = ks.act_dual(w, n, sigma)
                assert mat.rows == mat.cols == ks.dual_dim(w, n)
                sq = mat * mat
                assert sq == SparseMatrix.identity(mat.rows)


def test_koszul_complex_acyclic_for_builtins():
    for name in ("As", "Com", "Lie"):
        rep = koszul_complex_check(ks_for(name))
        assert rep.acyclic, rep.homology
    repD = koszul_complex_check(ks_for("D"))
    assert repD.acyclic


def test_koszul_complex_arity_one_trivial():
    rep = koszul_complex_check(ks_for("As", w=2, n=1))
    assert rep.homology == {(1, 0): {0: 1}}
    assert rep.acyclic


def test_non_koszul_anti_associative_detected():
    # anti-associativity is the classical non-Koszul binary quadratic example;
    # the defect shows at arity 5 in this window
    E = SModule("nonsymmetric", {2: [("m", 0)]})
    m = (2, 0)
    left = tr.node(m, (tr.node(m, (1, 2)), 3))
    right = tr.node(m, (1, tr.node(m, (2, 3))))
    anti = Presentation("antiAs", E, [[(1, left), (1, right)]])
    rep = koszul_complex_check(koszul_dual(anti, Truncation(4, 5)))
    assert not rep.acyclic
    assert any(any(v.values()) for k, v in rep.homology.items() if k != (1, 0))


def test_kappa_mc_residual_vanishes():
    for name in BUILTIN_NAMES:
        res = kappa_mc_residual(ks_for(name))
        assert all(not v for vals in res.values() for v in vals), name


def test_convolution_star_zero_map():
    ks = ks_for("As", w=2, n=3)
    kap = kappa_map(ks)
    zero = {key: [{} for _ in vals] for key, vals in kap.items()}
    out = convolution_star(ks, zero, kap, -1, -1)
    assert all(not v for vals in out.values() for v in vals)


def test_convolution_degree_bookkeeping():
    # value weights add: kappa * kappa lands in quotient weight 2
    ks = ks_for("Com", w=3, n=3)
    kap = kappa_map(ks)
    out = convolution_star(ks, kap, kap, -1, -1)
    for (w, n), vals in out.items():
        for v in vals:
            for (wq, _), c in v.items():
                assert wq == 2 and w == 2


def test_prelie_associator_symmetry():
    # (f*g)*h - f*(g*h) is symmetric in g and h: the pre-Lie relation,
    # checked on even-degree random convolution maps into the quotient
    rng = random.Random(31415)
    ks = ks_for("Lie", w=3, n=4)

    def rand_map():
        out = {}
        for (w, n) in ks.dual_components():
            vals = []
            for i in range(ks.dual_dim(w, n)):
                if w == 1:
                    vals.append({(1, iq): Q(rng.randint(-2, 2))
                                 for iq in range(ks.qop.dim(1, n))})
                else:
                    vals.append({})
            out[(w, n)] = vals
        return out

    def minus(a, b):
        out = {}
        for key in set(a) | set(b):
            va = a.get(key, [])
            vb = b.get(key, [])
            vals = []
            for i in range(max(len(va), len(vb))):
                d = dict(va[i]) if i < len(va) else {}
                for k2, v in (vb[i] if i < len(vb) else {}).items():
                    w = d.get(k2, Q(0)) - v
                    if w == 0:
                        d.pop(k2, None)
                    else:
                        d[k2] = w
                vals.append(d)
            out[key] = vals
        return out

    for _ in range(3):
        f, g, h = rand_map(), rand_map(), rand_map()
        fg_h = convolution_star(ks, convolution_star(ks, f, g, 0, 0), h, 0, 0)
        f_gh = convolution_star(ks, f, convolution_star(ks, g, h, 0, 0), 0, 0)
        assoc_gh = minus(fg_h, f_gh)
        fh_g = convolution_star(ks, convolution_star(ks, f, h, 0, 0), g, 0, 0)
        f_hg = convolution_star(ks, f, convolution_star(ks, h, g, 0, 0), 0, 0)
        assoc_hg = minus(fh_g, f_hg)
        assert assoc_gh == assoc_hg


def test_relation_stability_rejected_for_unstable_span():
    # a single associator difference is not an S3-stable span for Com
    E = SModule("symmetric", {2: [("m", 0)]}, actions={2: [[[Q(1)]]]})
    m = (2, 0)
    t_a = tr.node(m, (tr.node(m, (1, 2)), 3))
    t_c = tr.node(m, (1, tr.node(m, (2, 3))))
    with pytest.raises(ValueError, match="stable"):
        Presentation("halfCom", E, [[(1, t_a), (-1, t_c)]])
