"""Lattice, section storage, and pairing tests."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from peierls_lab.lattice import (
    Lattice,
    BundleDescriptor,
    LatticeSection,
    pairing,
    random_section,
    zero_section,
)

SCALAR = BundleDescriptor("phi", (("value", ()),))
SCALAR_DUAL = SCALAR.dual("phi*")


def small_lattice(shape=(8, 8), spacing=None, margin=2):
    if spacing is None:
        spacing = (1.0,) * len(shape)
    return Lattice(shape, spacing, interior_margin=margin)


def test_lattice_invariants():
    with pytest.raises(ValueError):
        Lattice((4, 4), (1.0, 1.0), interior_margin=2)  # 4 < 2*2+2
    with pytest.raises(ValueError):
        Lattice((8, 4), (0.0, 1.0))
    with pytest.raises(ValueError):
        Lattice((8,), (1.0,))
    lat = Lattice((6, 4), (0.5, 0.25), interior_margin=2)
    assert lat.volume_weight == pytest.approx(0.125)
    assert list(lat.interior_time_slices()) == [2, 3]


def test_lattice_json_round_trip():
    lat = Lattice((8, 6, 4), (0.5, 1.0, 2.0), interior_margin=3)
    assert Lattice.from_json(lat.to_json()) == lat


def test_bundle_descriptor():
    b = BundleDescriptor("A", (("t", (0,)), ("x", (1,))))
    assert b.rank == 2
    assert b.dual().density and b.dual().components == b.components
    assert b.compatible(b.dual()) is False
    assert b.compatible(BundleDescriptor("other-name", b.components))
    with pytest.raises(ValueError):
        BundleDescriptor("bad", (("a", (1, 0)),))  # unsorted axes
    with pytest.raises(ValueError):
        BundleDescriptor("bad", (("a", ()), ("a", (0,))))  # duplicate labels
    lat = small_lattice()
    with pytest.raises(ValueError):
        BundleDescriptor("bad", (("z", (5,)),)).validate_for(lat)


def test_flat_is_c_order():
    lat = small_lattice((6, 3))
    sec = random_section(lat, SCALAR, "all", seed=3)
    flat = sec.flat()
    for k in (0, 7, 17):
        idx = np.unravel_index(k, sec.values.shape)
        assert flat[k] == sec.values[idx]


def test_pairing_zero_section():
    lat = small_lattice()
    phi = zero_section(lat, SCALAR)
    alpha = random_section(lat, SCALAR_DUAL, "all", seed=1)
    assert pairing(phi, alpha) == 0.0


def test_pairing_delta_against_constant():
    lat = Lattice((4, 4), (1.0, 1.0), interior_margin=0)
    ones = LatticeSection(lat, SCALAR, np.ones(lat.shape + (1,)))
    delta = np.zeros(lat.shape + (1,))
    delta[2, 1, 0] = 1.0
    alpha = LatticeSection(lat, SCALAR_DUAL, delta)
    assert pairing(ones, alpha) == pytest.approx(1.0)


def test_pairing_matches_dense_oracle():
    # oracle: flatten everything, pair through an explicit diagonal weight matrix
    lat = small_lattice((8, 8), spacing=(0.5, 0.75))
    phi = random_section(lat, SCALAR, "all", seed=11)
    alpha = random_section(lat, SCALAR_DUAL, "all", seed=12)
    weight = np.diag(np.full(phi.size, lat.volume_weight))
    expected = phi.flat() @ weight @ alpha.flat()
    assert pairing(phi, alpha) == pytest.approx(expected, rel=1e-14)


def test_pairing_gram_is_diagonal_positive():
    # canonical-basis Gram matrix of the pairing on a tiny lattice
    lat = Lattice((4, 3), (0.5, 2.0), interior_margin=0)
    n = lat.n_cells
    gram = np.zeros((n, n))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = 1.0
        phi = LatticeSection(lat, SCALAR, ei.reshape(lat.shape + (1,)))
        for j in range(n):
            ej = np.zeros(n)
            ej[j] = 1.0
            alpha = LatticeSection(lat, SCALAR_DUAL, ej.reshape(lat.shape + (1,)))
            gram[i, j] = pairing(phi, alpha)
    assert np.allclose(gram, np.diag(np.diag(gram)))
    assert np.all(np.diag(gram) > 0)


def test_pairing_rejects_mismatch():
    lat = small_lattice()
    phi = random_section(lat, SCALAR, "all", seed=1)
    with pytest.raises(ValueError):
        pairing(phi, phi)  # both fields
    other = BundleDescriptor("A", (("t", (0,)),), density=True)
    with pytest.raises(ValueError):
        pairing(phi, random_section(lat, other, "all", seed=2))


def test_pairing_rejects_nan():
    lat = small_lattice()
    vals = np.full(lat.shape + (1,), np.nan)
    phi = LatticeSection(lat, SCALAR, vals)
    alpha = random_section(lat, SCALAR_DUAL, "all", seed=4)
    with pytest.raises(ValueError):
        pairing(phi, alpha)


def test_pairing_locality():
    # restricting the sum to the common support changes nothing
    lat = small_lattice()
    phi = random_section(lat, SCALAR, "retarded", seed=5, cutoff=5)
    alpha = random_section(lat, SCALAR_DUAL, "advanced", seed=6, cutoff=5)
    full = pairing(phi, alpha)
    overlap = lat.volume_weight * float(
        np.sum(phi.values[5:6] * alpha.values[5:6])
    )
    assert full == pytest.approx(overlap, abs=1e-13)


def test_random_section_determinism_and_support():
    lat = small_lattice()
    a = random_section(lat, SCALAR, "interior", seed=1)
    b = random_section(lat, SCALAR, "interior", seed=1)
    assert np.array_equal(a.values, b.values)
    assert np.all(a.values[:2] == 0.0) and np.all(a.values[-2:] == 0.0)
    ret = random_section(lat, SCALAR, "retarded", seed=2, cutoff=3)
    assert ret.support_box()[0][0] >= 3
    adv = random_section(lat, SCALAR, "advanced", seed=2, cutoff=3)
    assert adv.support_box()[0][1] <= 3


def test_interior_constructor_enforces_margin():
    lat = small_lattice()
    vals = np.ones(lat.shape + (1,))
    with pytest.raises(ValueError):
        LatticeSection(lat, SCALAR, vals, "interior")


def test_support_box_exact_and_sum_bound():
    lat = small_lattice()
    vals = np.zeros(lat.shape + (1,))
    vals[3, 2, 0] = 1.0
    vals[5, 6, 0] = -2.0
    sec = LatticeSection(lat, SCALAR, vals)
    assert sec.support_box() == ((3, 5), (2, 6))
    assert sec.support_box(tol=1.5) == ((5, 5), (6, 6))
    assert zero_section(lat, SCALAR).support_box() is None
    other = random_section(lat, SCALAR, "interior", seed=9)
    total = sec + other
    box = total.support_box()
    for axis, (lo, hi) in enumerate(box):
        lo_parts = min(sec.support_box()[axis][0], other.support_box()[axis][0])
        hi_parts = max(sec.support_box()[axis][1], other.support_box()[axis][1])
        assert lo >= lo_parts and hi <= hi_parts


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    tol_lo=st.floats(0, 1, allow_nan=False),
    tol_hi=st.floats(0, 1, allow_nan=False),
)
def test_support_box_monotone_in_tolerance(seed, tol_lo, tol_hi):
    lat = small_lattice((6, 5), margin=1)
    sec = random_section(lat, SCALAR, "all", seed=seed)
    lo, hi = sorted((tol_lo, tol_hi))
    box_lo, box_hi = sec.support_box(lo), sec.support_box(hi)
    if box_hi is None:
        return
    assert box_lo is not None
    for (a0, a1), (b0, b1) in zip(box_lo, box_hi):
        assert a0 <= b0 and b1 <= a1


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), c1=st.floats(-3, 3), c2=st.floats(-3, 3))
def test_pairing_bilinearity(seed, c1, c2):
    lat = small_lattice((6, 5), margin=1)
    phi1 = random_section(lat, SCALAR, "all", seed=seed)
    phi2 = random_section(lat, SCALAR, "all", seed=seed + 1)
    alpha = random_section(lat, SCALAR_DUAL, "all", seed=seed + 2)
    lhs = pairing(c1 * phi1 + c2 * phi2, alpha)
    rhs = c1 * pairing(phi1, alpha) + c2 * pairing(phi2, alpha)
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_section_csv_round_trip(tmp_path):
    lat = small_lattice((6, 4), margin=1)
    bundle = BundleDescriptor("A", (("t", (0,)), ("x", (1,))))
    sec = random_section(lat, bundle, "all", seed=7)
    path = tmp_path / "section.csv"
    sec.dump_csv(path)
    back = LatticeSection.load_csv(path, lat, bundle)
    assert np.array_equal(back.values, sec.values)


def test_sections_are_read_only():
    lat = small_lattice()
    sec = random_section(lat, SCALAR, "all", seed=1)
    with pytest.raises(ValueError):
        sec.values[0, 0, 0] = 1.0
