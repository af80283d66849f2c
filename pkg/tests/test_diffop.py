"""Operator algebra tests: dense oracles, adjoints, subspaces, factorization."""

import numpy as np
import pytest

from peierls_lab.causal import AdaptedPartition
from peierls_lab.diffop import (
    CapacityError,
    FactorizationObstruction,
    LinOp,
    SolutionPreconditionError,
    cutoff_commutator,
    diagonal_operator,
    factor_through,
    identity_operator,
    masked_residual,
    masked_section_max,
    orthonormal_columns,
    safe_time_rows,
    stencil_operator,
    subspace,
    subspace_intersection,
    subspace_quotient,
    zero_operator,
)
from peierls_lab.lattice import (
    BundleDescriptor,
    Lattice,
    LatticeSection,
    pairing,
    random_section,
)

SCALAR = BundleDescriptor("phi", (("value", ()),))


def lat_2d(shape=(8, 6), spacing=(1.0, 1.0), margin=2):
    return Lattice(shape, spacing, interior_margin=margin)


def forward_time_diff(lattice, bundle=SCALAR):
    terms = [(0, 0, (1,) + (0,) * (lattice.ndim - 1), 1.0),
             (0, 0, (0,) * lattice.ndim, -1.0)]
    return stencil_operator(lattice, bundle, bundle, terms, "dt+")


def backward_time_diff(lattice, bundle=SCALAR):
    terms = [(0, 0, (0,) * lattice.ndim, 1.0),
             (0, 0, (-1,) + (0,) * (lattice.ndim - 1), -1.0)]
    return stencil_operator(lattice, bundle, bundle, terms, "dt-")


def random_local_op(lattice, seed, bundle=SCALAR):
    rng = np.random.default_rng(seed)
    terms = []
    for comp in range(bundle.rank):
        for offset in [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)]:
            terms.append((comp, comp, offset, rng.standard_normal()))
    return stencil_operator(lattice, bundle, bundle, terms, "rnd%d" % seed)


def test_apply_identity_and_constants():
    lat = lat_2d()
    phi = random_section(lat, SCALAR, "all", seed=0)
    assert np.array_equal(identity_operator(lat, SCALAR).apply(phi).values, phi.values)
    const = LatticeSection(lat, SCALAR, np.ones(lat.shape + (1,)))
    diff = forward_time_diff(lat).apply(const)
    # interior rows vanish; the top row sees the truncated stencil
    assert np.all(diff.values[:-1] == 0.0)


def test_apply_matches_dense_oracle():
    lat = lat_2d()
    op = random_local_op(lat, seed=5)
    phi = random_section(lat, SCALAR, "all", seed=6)
    dense = np.asarray(op.matrix.todense())
    expected = dense @ phi.flat()
    np.testing.assert_allclose(op.apply(phi).flat(), expected, rtol=1e-14, atol=0)


def test_apply_rejects_mismatch():
    lat = lat_2d()
    op = forward_time_diff(lat)
    other = random_section(lat, SCALAR.dual(), "all", seed=1)
    with pytest.raises(ValueError):
        op.apply(other)


def test_locality_certificate_enforced():
    lat = lat_2d()
    n = lat.n_cells
    rng = np.random.default_rng(0)
    dense = rng.standard_normal((n, n))  # global coupling
    with pytest.raises(ValueError):
        LinOp(lat, SCALAR, SCALAR, dense, "global", 1, 1)


def test_radii_are_measured_tight():
    lat = lat_2d()
    second = backward_time_diff(lat) @ forward_time_diff(lat)
    # certificate says 2, the actual second-difference pattern has radius 1
    assert second.time_radius == 1
    assert zero_operator(lat, SCALAR, SCALAR).time_radius == 0


def test_apply_support_dilation():
    lat = lat_2d((8, 16))
    terms = [(0, 0, (1, 0), 1.0), (0, 0, (0, 1), 1.0), (0, 0, (0, -1), -2.0)]
    op = stencil_operator(lat, SCALAR, SCALAR, terms, "mix")
    vals = np.zeros(lat.shape + (1,))
    vals[4, 8, 0] = 1.0
    out = op.apply(LatticeSection(lat, SCALAR, vals))
    (t0, t1), (x0, x1) = out.support_box()
    assert t0 >= 4 - op.time_radius and t1 <= 4 + op.time_radius
    assert x0 >= 8 - op.space_radius and x1 <= 8 + op.space_radius


def test_adjoint_pairing_identity():
    lat = lat_2d()
    op = random_local_op(lat, seed=7)
    adj = op.adjoint()
    worst = 0.0
    for seed in range(100):
        phi = random_section(lat, SCALAR, "interior", seed=seed)
        psi = random_section(lat, SCALAR.dual(), "interior", seed=seed + 1000)
        lhs = pairing(op.apply(phi), psi)
        rhs = pairing(phi, adj.apply(psi))
        scale = max(1.0, abs(lhs))
        worst = max(worst, abs(lhs - rhs) / scale)
    assert worst < 1e-13


def test_adjoint_involution_and_antihomomorphism():
    lat = lat_2d()
    a = random_local_op(lat, seed=8)
    b = random_local_op(lat, seed=9)
    assert (a.adjoint().adjoint().matrix - a.matrix).nnz == 0
    lhs = (a @ b).adjoint()
    rhs = b.adjoint() @ a.adjoint()
    assert (lhs.matrix - rhs.matrix).nnz == 0
    # a maps fields to fields, so its adjoint maps dual densities to dual densities
    assert a.adjoint().domain.density and a.adjoint().codomain.density


def test_adjoint_of_symmetric_stencil():
    lat = lat_2d()
    terms = [(0, 0, (0, 1), 1.0), (0, 0, (0, -1), 1.0), (0, 0, (0, 0), -2.0)]
    lap = stencil_operator(lat, SCALAR, SCALAR, terms, "lap")
    assert (lap.adjoint().matrix - lap.matrix).nnz == 0


def test_adjoint_of_forward_difference():
    lat = lat_2d()
    fwd = forward_time_diff(lat)
    bwd = backward_time_diff(lat)
    # transpose of the forward difference is minus the backward difference
    diff = fwd.adjoint().matrix + bwd.matrix
    # they disagree only at the slab boundary rows (stencil truncation)
    mask = safe_time_rows(lat, 1, 1)
    assert np.abs(diff[np.nonzero(mask)[0]].todense()).max() == 0.0


def test_masked_residual_ignores_boundary_rows():
    lat = lat_2d()
    second_composed = backward_time_diff(lat) @ forward_time_diff(lat)
    terms = [(0, 0, (1, 0), 1.0), (0, 0, (0, 0), -2.0), (0, 0, (-1, 0), 1.0)]
    second_direct = stencil_operator(lat, SCALAR, SCALAR, terms, "ddt")
    assert masked_residual(second_composed, second_direct) == 0.0
    # without the mask they differ at the boundary
    assert np.abs((second_composed.matrix - second_direct.matrix).data).max() > 0.5


def test_safe_time_rows_errors_on_short_slab():
    lat = lat_2d((4, 4), margin=1)
    with pytest.raises(ValueError):
        safe_time_rows(lat, 1, 2)


def test_masked_section_max():
    lat = lat_2d()
    vals = np.zeros(lat.shape + (1,))
    vals[0, 0, 0] = 7.0
    vals[4, 0, 0] = 1.0
    sec = LatticeSection(lat, SCALAR, vals)
    assert masked_section_max(sec, 1) == 1.0


def test_cutoff_commutator_band_support():
    lat = lat_2d((10, 6))
    op = forward_time_diff(lat)
    const = LatticeSection(lat, SCALAR, np.tile(np.arange(6.0), (10, 1))[..., None])
    part = AdaptedPartition.sharp(lat, t_0=5)
    out = cutoff_commutator(op, part, const)
    # band confinement holds away from the unenforced slab boundary rows
    masked = out.values.copy()
    masked[: op.time_radius] = 0.0
    masked[lat.n_time - op.time_radius :] = 0.0
    hit = np.nonzero(np.abs(masked).max(axis=tuple(range(1, masked.ndim))))[0]
    assert hit.size > 0
    assert hit.min() >= part.t_minus - op.time_radius
    assert hit.max() <= part.t_plus + op.time_radius
    # f[chi+ phi] = -f[chi- phi] wherever the solution rows are enforced
    other = op.apply(part.apply_minus(const))
    diff = out.values + other.values
    assert np.abs(diff[1:-1]).max() == 0.0


def test_cutoff_commutator_zero_section():
    lat = lat_2d()
    op = forward_time_diff(lat)
    part = AdaptedPartition.sharp(lat, t_0=4)
    zero = LatticeSection(lat, SCALAR, np.zeros(lat.shape + (1,)))
    assert np.all(cutoff_commutator(op, part, zero).values == 0.0)


def test_cutoff_commutator_rejects_non_solutions():
    lat = lat_2d()
    op = forward_time_diff(lat)
    part = AdaptedPartition.sharp(lat, t_0=4)
    bad = random_section(lat, SCALAR, "all", seed=3)
    with pytest.raises(SolutionPreconditionError) as err:
        cutoff_commutator(op, part, bad)
    assert err.value.residual > 0.1


def test_subspace_trivial_cases():
    lat = lat_2d((6, 4), margin=1)
    assert subspace("kernel", identity_operator(lat, SCALAR)).dim == 0
    assert subspace("image", zero_operator(lat, SCALAR, SCALAR)).dim == 0
    with pytest.raises(ValueError):
        subspace("cokernel", identity_operator(lat, SCALAR))


def test_subspace_rank_nullity_against_dense_oracle():
    lat = lat_2d((6, 4), margin=1)
    for seed in (1, 2, 3):
        op = random_local_op(lat, seed=seed)
        kernel = subspace("kernel", op)
        image = subspace("image", op)
        dense_rank = np.linalg.matrix_rank(np.asarray(op.matrix.todense()), tol=1e-9)
        assert image.dim == dense_rank
        assert kernel.dim + image.dim == op.matrix.shape[1]
        if kernel.dim:
            hits = np.abs(op.matrix @ kernel.vectors).max()
            assert hits < 1e-9


def test_subspace_interior_restriction():
    lat = lat_2d((8, 4))
    op = zero_operator(lat, SCALAR, SCALAR)
    basis = subspace("kernel", op, support_class="interior")
    # kernel of 0 on interior sections = all interior degrees of freedom
    assert basis.dim == 4 * 4
    assert np.all(basis.vectors[: 2 * 4] == 0.0)


def test_subspace_budget():
    lat = lat_2d((8, 6))
    with pytest.raises(CapacityError):
        subspace("kernel", identity_operator(lat, SCALAR), budget=10)


def test_subspace_deterministic():
    lat = lat_2d((6, 4), margin=1)
    op = random_local_op(lat, seed=4)
    a = subspace("kernel", op)
    b = subspace("kernel", op)
    assert np.array_equal(a.vectors, b.vectors)


def test_subspace_intersection_and_quotient():
    lat = lat_2d((6, 4), margin=1)
    n = lat.n_cells
    e = np.eye(n)
    from peierls_lab.diffop import SubspaceBasis

    span_a = SubspaceBasis(SCALAR, "all", orthonormal_columns(e[:, [0, 1]]), 1e-9)
    span_b = SubspaceBasis(SCALAR, "all", orthonormal_columns(e[:, [1, 2]]), 1e-9)
    meet = subspace_intersection(span_a, span_b)
    assert meet.dim == 1
    assert abs(abs(meet.vectors[1, 0]) - 1.0) < 1e-12
    quot = subspace_quotient(span_a, span_b)
    assert quot.dim == 1
    assert abs(abs(quot.vectors[0, 0]) - 1.0) < 1e-12


def test_factor_through_self_and_zero():
    lat = lat_2d((6, 4), margin=1)
    op = random_local_op(lat, seed=11)
    fac = factor_through(op, op)
    assert np.abs((fac @ op).matrix - op.matrix).max() < 1e-9
    zfac = factor_through(zero_operator(lat, SCALAR, SCALAR), op)
    assert zfac.max_abs() < 1e-10


def test_factor_through_composite():
    lat = lat_2d((6, 4), margin=1)
    c = random_local_op(lat, seed=12)
    l_c = random_local_op(lat, seed=13)
    composite = l_c @ c
    fac = factor_through(composite, c)
    assert np.abs((fac @ c).matrix - composite.matrix).max() < 1e-8


def test_factor_through_obstruction_witness():
    lat = lat_2d((6, 4), margin=1)
    # periodic spatial difference: genuine kernel (spatially constant sections)
    terms = [(0, 0, (0, 1), 1.0), (0, 0, (0, 0), -1.0)]
    dx = stencil_operator(lat, SCALAR, SCALAR, terms, "dx+")
    ident = identity_operator(lat, SCALAR)
    with pytest.raises(FactorizationObstruction) as err:
        factor_through(ident, dx)
    witness = err.value.witness
    assert witness is not None
    # the witness really is a kernel vector the identity fails to kill
    assert np.abs(dx.matrix @ witness).max() < 1e-8
    assert np.abs(witness).max() > 1e-3


def test_diagonal_operator_broadcast():
    lat = lat_2d()
    profile = np.linspace(1.0, 2.0, lat.shape[1])
    op = diagonal_operator(lat, SCALAR, SCALAR, profile[None, :, None], "profile")
    phi = random_section(lat, SCALAR, "all", seed=2)
    np.testing.assert_allclose(
        op.apply(phi).values, phi.values * profile[None, :, None], rtol=0, atol=0
    )


def test_operator_csv_and_json_dump(tmp_path):
    lat = lat_2d((6, 4), margin=1)
    op = forward_time_diff(lat)
    op.dump_csv(tmp_path / "op.csv")
    op.dump_json(tmp_path / "op.json")
    text = (tmp_path / "op.csv").read_text().splitlines()
    assert text[0] == "row,col,value"
    assert len(text) == op.matrix.nnz + 1
    import json

    meta = json.loads((tmp_path / "op.json").read_text())
    assert meta["time_radius"] == 1 and meta["nnz"] == op.matrix.nnz
