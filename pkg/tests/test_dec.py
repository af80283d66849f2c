"""Discrete exterior calculus tests: exactness is literal, not approximate."""

import numpy as np
import pytest

from peierls_lab.dec import (
    codifferential,
    coboundary,
    form_bundle,
    hodge,
    hodge_inverse,
    hodge_weights,
    wave_operator,
)
from peierls_lab.diffop import masked_residual, stencil_operator
from peierls_lab.lattice import Lattice, pairing, random_section


def lat_1p1(shape=(8, 6), spacing=(0.5, 1.0)):
    return Lattice(shape, spacing, interior_margin=2)


def lat_1p2(shape=(6, 4, 4), spacing=(0.5, 1.0, 1.0)):
    return Lattice(shape, spacing, interior_margin=2)


def test_form_bundle_components():
    lat = lat_1p2()
    assert form_bundle(lat, 0).rank == 1
    assert form_bundle(lat, 1).rank == 3
    assert form_bundle(lat, 2).rank == 3
    assert form_bundle(lat, 3).rank == 1
    labels = [c[0] for c in form_bundle(lat, 2).components]
    assert labels == ["t^x1", "t^x2", "x1^x2"]
    with pytest.raises(ValueError):
        form_bundle(lat, 4)


def test_dd_is_exactly_zero():
    for lat in (lat_1p1(), lat_1p2()):
        for k in range(lat.ndim - 1):
            dd = coboundary(lat, k + 1) @ coboundary(lat, k)
            assert dd.max_abs() == 0.0  # integer incidence cancellation survives truncation


def test_coboundary_is_integer():
    lat = lat_1p1()
    for k in range(lat.ndim):
        data = coboundary(lat, k).matrix.data
        assert np.all(np.abs(data) == 1.0)


def test_hodge_signs_and_values():
    lat = lat_1p1(spacing=(0.5, 2.0))
    w = lat.volume_weight
    np.testing.assert_allclose(hodge_weights(lat, 0), [w])
    np.testing.assert_allclose(hodge_weights(lat, 1), [-w / 0.25, w / 4.0])
    np.testing.assert_allclose(hodge_weights(lat, 2), [-w / 1.0])
    ident = hodge_inverse(lat, 1) @ hodge(lat, 1)
    assert masked_residual(ident, time_radius=0) == pytest.approx(1.0)  # diagonal of ones
    diff = ident.matrix - np.eye(ident.matrix.shape[0])
    assert np.abs(diff).max() < 1e-15


def test_codifferential_is_adjoint_of_d():
    lat = lat_1p1()
    for k in range(lat.ndim):
        d = coboundary(lat, k)
        delta = codifferential(lat, k)
        hk = hodge(lat, k)
        hk1 = hodge(lat, k + 1)
        for seed in range(20):
            a = random_section(lat, form_bundle(lat, k), "interior", seed=seed)
            b = random_section(lat, form_bundle(lat, k + 1), "interior", seed=seed + 99)
            lhs = pairing(d.apply(a), hk1.apply(b))
            rhs = pairing(a, hk.apply(delta.apply(b)))
            assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_delta_delta_vanishes():
    lat = lat_1p2()
    dd = codifferential(lat, 0) @ codifferential(lat, 1)
    assert dd.max_abs() < 1e-12


def componentwise_wave_pattern(lattice, degree):
    """Dense oracle: second time difference minus spatial Laplacian per component."""
    bundle = form_bundle(lattice, degree)
    terms = []
    h = lattice.spacing
    center = -2.0 / h[0] ** 2 + sum(2.0 / h[a] ** 2 for a in range(1, lattice.ndim))
    for comp in range(bundle.rank):
        terms.append((comp, comp, (0,) * lattice.ndim, center))
        off = [0] * lattice.ndim
        for sign in (1, -1):
            off_t = tuple([sign] + [0] * (lattice.ndim - 1))
            terms.append((comp, comp, off_t, 1.0 / h[0] ** 2))
        for a in range(1, lattice.ndim):
            for sign in (1, -1):
                off = [0] * lattice.ndim
                off[a] = sign
                terms.append((comp, comp, tuple(off), -1.0 / h[a] ** 2))
    return stencil_operator(lattice, bundle, bundle, terms, "wave-oracle%d" % degree)


def test_wave_operator_is_componentwise():
    for lat in (lat_1p1(), lat_1p2(spacing=(0.5, 1.0, 2.0))):
        for k in range(lat.ndim + 1):
            got = wave_operator(lat, k)
            want = componentwise_wave_pattern(lat, k)
            assert masked_residual(got, want) < 1e-13


def test_wave_commutes_with_d():
    # d . wave_k = wave_{k+1} . d away from the slab boundary
    lat = lat_1p1()
    for k in range(lat.ndim):
        lhs = coboundary(lat, k) @ wave_operator(lat, k)
        rhs = wave_operator(lat, k + 1) @ coboundary(lat, k)
        assert masked_residual(lhs, rhs) < 1e-13
