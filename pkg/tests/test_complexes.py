import random

import pytest

from opcal.complexes import (ChainComplex, ChainMap, Contraction, GradedSpace,
                             direct_sum, disk, homology_contraction,
                             homology_dims, is_acyclic, is_quasi_iso,
                             mapping_cone, shift, sphere, trivial_contraction,
                             validate_contraction, zero_complex)
from opcal.exactlin import Q, SparseMatrix


def test_dd_zero_rejected():
    sp = GradedSpace({2: ["a"], 1: ["b"], 0: ["c"]})
    with pytest.raises(ValueError):
        ChainComplex(sp, {2: SparseMatrix.identity(1), 1: SparseMatrix.identity(1)})


def test_homology_point():
    assert homology_dims(sphere(0)) == {0: 1}


def test_homology_disk_vanishes():
    assert all(v == 0 for v in homology_dims(disk(3)).values())


def test_homology_rank_nullity_by_hand():
    # QQ^2 -> QQ with d = (1, 0) in degrees 1, 0: H_1 = 1, H_0 = 0
    sp = GradedSpace({1: ["x", "y"], 0: ["z"]})
    c = ChainComplex(sp, {1: SparseMatrix.from_rows([[1, 0]])})
    assert homology_dims(c) == {1: 1, 0: 0}


def test_quasi_iso_identity():
    c = disk(1)
    assert is_quasi_iso(ChainMap.identity(c))


def test_quasi_iso_disk_to_zero():
    # the acyclic two-term complex maps quasi-isomorphically to zero
    f = ChainMap.zero(disk(4), zero_complex())
    assert is_quasi_iso(f)


def test_zero_self_map_of_sphere_not_quasi_iso():
    c = sphere(0)
    assert not is_quasi_iso(ChainMap.zero(c, c))


def test_cone_of_identity_acyclic():
    c = sphere(0)
    cone = mapping_cone(ChainMap.identity(c))
    assert cone.total_dim() == 2
    assert is_acyclic(cone)


def test_cone_of_zero_map_from_zero():
    c = disk(2)
    cone = mapping_cone(ChainMap.zero(zero_complex(), c))
    assert homology_dims(cone) == homology_dims(c)


def test_cone_of_iso_between_lines_acyclic():
    a, b = sphere(0, "a"), sphere(0, "b")
    f = ChainMap(a, b, {0: SparseMatrix.from_rows([[5]])})
    assert is_acyclic(mapping_cone(f))


def _random_complex(rng, max_deg=2, max_dim=3):
    # random basis change of a sum of spheres and disks keeps d*d = 0
    pieces = []
    for n in range(-1, max_deg + 1):
        for _ in range(rng.randint(0, 1)):
            pieces.append(sphere(n, ("S", n, rng.random())))
        for _ in range(rng.randint(0, 1)):
            pieces.append(disk(n))
    total = zero_complex()
    for p in pieces:
        total, _, _ = direct_sum(total, p, tag_b=str(rng.random()))
    return total


def test_quasi_iso_matches_homology_comparison_on_samples():
    rng = random.Random(42)
    for _ in range(25):
        c = _random_complex(rng)
        f = ChainMap.identity(c)
        assert is_quasi_iso(f) == (homology_dims(c) == homology_dims(c))
        z = ChainMap.zero(c, zero_complex())
        assert is_quasi_iso(z) == is_acyclic(c)
        assert is_acyclic(mapping_cone(z)) == is_quasi_iso(z)


def test_shift_squares_differential_sign():
    c = disk(1)
    s = shift(c, 1)
    assert s.dim(2) == 1 and s.dim(1) == 1
    assert s.diff(2).get(0, 0) == Q(-1)


def test_trivial_contraction_valid():
    c = disk(2)
    assert validate_contraction(trivial_contraction(c))


def test_contraction_identities_reject_corruption():
    c = disk(2)
    t = trivial_contraction(c)
    bad_h = ChainMap(c, c, {1: SparseMatrix.from_rows([[1]])}, degree_shift=1, raw=True)
    broken = Contraction(c, c, t.i, t.p, bad_h, check=False)
    assert not validate_contraction(broken)


def test_homology_contraction_on_samples():
    rng = random.Random(2718)
    for _ in range(20):
        c = _random_complex(rng)
        con = homology_contraction(c)
        assert validate_contraction(con)
        assert {n: d for n, d in homology_dims(c).items() if d} == \
               {n: con.small.dim(n) for n in con.small.degrees()}
        assert con.small.total_dim() == sum(max(v, 0) for v in homology_dims(c).values())
