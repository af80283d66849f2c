"""Sparse local linear operator algebra on lattice sections.

Operators are sparse matrices in the canonical flat ordering
(time-major cells, then components) together with a locality
certificate: a time stencil radius and a spatial stencil radius that
every nonzero entry respects.  Because the volume weight is uniform
and lives in the pairing, the formal adjoint is the plain matrix
transpose, exactly.

Identities between operator compositions are asserted through
``masked_residual``, which compares two operators on the time rows far
enough from the slab boundary that no stencil truncation can reach
them.  On those rows the discrete identities of the built-in theories
hold to machine precision or exactly.
"""

from __future__ import annotations

import csv
import json

import numpy as np
import scipy.sparse as sp

from .lattice import LatticeSection


class CapacityError(RuntimeError):
    """A dense-factorization request exceeded the desk-scale budget."""


class FactorizationObstruction(RuntimeError):
    """An operator failed to factor through another.

    Carries ``witness`` (a flat kernel vector of the would-be right
    factor that the operator does not annihilate, when one exists) and
    ``residual``.
    """

    def __init__(self, message, residual, witness=None):
        super().__init__(message)
        self.residual = residual
        self.witness = witness


class SolutionPreconditionError(ValueError):
    """Input section was required to solve an equation but does not.

    Carries ``residual``, the masked sup-norm of the equation applied
    to the offending section.
    """

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


def _spatial_size(lattice):
    return int(np.prod(lattice.spatial_shape)) if lattice.ndim > 1 else 1


def _measure_radii(lattice, domain, codomain, matrix):
    """Tight stencil radii of a matrix from its nonzero pattern."""
    coo = matrix.tocoo()
    if coo.nnz == 0:
        return 0, 0
    n_sp = _spatial_size(lattice)
    row_cell = coo.row // codomain.rank
    col_cell = coo.col // domain.rank
    dt = np.abs(row_cell // n_sp - col_cell // n_sp)
    r_time = int(dt.max())
    r_space = 0
    row_sp = np.unravel_index(row_cell % n_sp, lattice.spatial_shape)
    col_sp = np.unravel_index(col_cell % n_sp, lattice.spatial_shape)
    for axis, n in enumerate(lattice.spatial_shape):
        d = np.abs(row_sp[axis].astype(int) - col_sp[axis].astype(int))
        d = np.minimum(d, n - d)
        r_space = max(r_space, int(d.max()))
    return r_time, r_space


class LinOp:
    """A local linear operator between section bundles.

    The stored stencil radii are measured from the actual nonzero
    pattern at construction (declared radii act as an upper bound the
    pattern must respect), so downstream row masks stay as tight as
    the operator allows.
    """

    def __init__(self, lattice, domain, codomain, matrix, name,
                 time_radius, space_radius, validate=True):
        domain.validate_for(lattice)
        codomain.validate_for(lattice)
        matrix = sp.csr_matrix(matrix)
        matrix.eliminate_zeros()
        n = lattice.n_cells
        expect = (n * codomain.rank, n * domain.rank)
        if matrix.shape != expect:
            raise ValueError(
                "operator %s: matrix shape %r, expected %r" % (name, matrix.shape, expect)
            )
        r_t, r_s = _measure_radii(lattice, domain, codomain, matrix)
        if validate and (r_t > time_radius or r_s > space_radius):
            raise ValueError(
                "operator %s: entries reach (time %d, space %d) beyond the "
                "declared stencil radii (%d, %d)" % (name, r_t, r_s, time_radius, space_radius)
            )
        self.lattice = lattice
        self.domain = domain
        self.codomain = codomain
        self.matrix = matrix
        self.name = name
        self.time_radius = r_t
        self.space_radius = r_s

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, section):
        """Sparse matrix-vector product on a section over the domain bundle."""
        if section.lattice != self.lattice:
            raise ValueError("operator %s: section lives on another lattice" % self.name)
        if not self.domain.compatible(section.bundle):
            raise ValueError(
                "operator %s expects bundle %s, got %s"
                % (self.name, self.domain.name, section.bundle.name)
            )
        out = self.matrix @ section.flat()
        shape = self.lattice.shape + (self.codomain.rank,)
        support = section.support_class
        if support == "interior" and self.time_radius > 0:
            support = "all"
        return LatticeSection(self.lattice, self.codomain, out.reshape(shape), support)

    def adjoint(self):
        """Formal adjoint: the plain transpose, mapping between the duals.

        Exact for interior-supported sections: <A phi, psi> = <phi, A* psi>
        holds with no boundary term because the pairing weight is uniform.
        """
        name = self.name[:-1] if self.name.endswith("*") else self.name + "*"
        return LinOp(
            self.lattice,
            self.codomain.dual(),
            self.domain.dual(),
            self.matrix.transpose().tocsr(),
            name,
            self.time_radius,
            self.space_radius,
            validate=False,
        )

    def compose(self, other):
        """self after other; stencil radii of the product are re-measured."""
        if other.lattice != self.lattice:
            raise ValueError("composition across lattices")
        if not self.domain.compatible(other.codomain):
            raise ValueError(
                "cannot compose %s (domain %s) with %s (codomain %s)"
                % (self.name, self.domain.name, other.name, other.codomain.name)
            )
        return LinOp(
            self.lattice,
            other.domain,
            self.codomain,
            self.matrix @ other.matrix,
            "%s.%s" % (self.name, other.name),
            self.time_radius + other.time_radius,
            self.space_radius + other.space_radius,
            validate=False,
        )

    def __matmul__(self, other):
        return self.compose(other)

    def _check_same_slots(self, other):
        if other.lattice != self.lattice:
            raise ValueError("operator sum across lattices")
        if not (self.domain.compatible(other.domain) and self.codomain.compatible(other.codomain)):
            raise ValueError("operator sum with mismatched bundles")

    def __add__(self, other):
        self._check_same_slots(other)
        return LinOp(
            self.lattice, self.domain, self.codomain,
            self.matrix + other.matrix,
            "(%s+%s)" % (self.name, other.name),
            max(self.time_radius, other.time_radius),
            max(self.space_radius, other.space_radius),
            validate=False,
        )

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return self * (-1.0)

    def __mul__(self, scalar):
        return LinOp(
            self.lattice, self.domain, self.codomain,
            self.matrix * float(scalar),
            "(%g*%s)" % (scalar, self.name),
            self.time_radius, self.space_radius,
            validate=False,
        )

    __rmul__ = __mul__

    def rename(self, name):
        self.name = name
        return self

    def max_abs(self):
        return float(np.abs(self.matrix.data).max()) if self.matrix.nnz else 0.0

    def metadata(self):
        return {
            "name": self.name,
            "domain": self.domain.name,
            "codomain": self.codomain.name,
            "shape": list(self.matrix.shape),
            "nnz": int(self.matrix.nnz),
            "time_radius": self.time_radius,
            "space_radius": self.space_radius,
        }

    def dump_csv(self, path):
        """Coordinate-list dump (row, col, value)."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "col", "value"])
            for k in order:
                writer.writerow([int(coo.row[k]), int(coo.col[k]), "%.17g" % coo.data[k]])

    def dump_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def identity_operator(lattice, bundle, name="id"):
    n = lattice.n_cells * bundle.rank
    return LinOp(lattice, bundle, bundle, sp.identity(n, format="csr"), name, 0, 0)


def zero_operator(lattice, domain, codomain, name="0"):
    shape = (lattice.n_cells * codomain.rank, lattice.n_cells * domain.rank)
    return LinOp(lattice, domain, codomain, sp.csr_matrix(shape), name, 0, 0)


def diagonal_operator(lattice, domain, codomain, values, name):
    """Purely algebraic operator: componentwise multiplication.

    ``values`` broadcasts against the section array shape
    lattice.shape + (rank,).
    """
    if domain.rank != codomain.rank:
        raise ValueError("diagonal operator needs equal ranks")
    full = np.broadcast_to(np.asarray(values, dtype=float), lattice.shape + (domain.rank,))
    return LinOp(lattice, domain, codomain, sp.diags(full.reshape(-1)).tocsr(), name, 0, 0)


def stencil_operator(lattice, domain, codomain, terms, name):
    """Build a local operator from stencil terms.

    Each term is (comp_out, comp_in, offset, coeff): output component
    comp_out at cell y reads input component comp_in at cell y+offset,
    scaled by coeff.  Spatial offsets wrap around the torus; time
    offsets that leave the slab are dropped (stencil truncation).
    """
    shape = lattice.shape
    n_cells = lattice.n_cells
    coords = np.indices(shape)
    cell_flat = np.arange(n_cells).reshape(shape)
    rows, cols, data = [], [], []
    max_dt = 0
    max_dx = 0
    for comp_out, comp_in, offset, coeff in terms:
        offset = tuple(int(o) for o in offset)
        if len(offset) != lattice.ndim:
            raise ValueError("offset %r does not match lattice dimension" % (offset,))
        t_src = coords[0] + offset[0]
        valid = (t_src >= 0) & (t_src < shape[0])
        idx = [np.where(valid, t_src, 0)]
        for axis in range(1, lattice.ndim):
            idx.append((coords[axis] + offset[axis]) % shape[axis])
        src_flat = np.ravel_multi_index(idx, shape)
        rows.append(cell_flat[valid] * codomain.rank + int(comp_out))
        cols.append(src_flat[valid] * domain.rank + int(comp_in))
        data.append(np.full(int(valid.sum()), float(coeff)))
        max_dt = max(max_dt, abs(offset[0]))
        for axis in range(1, lattice.ndim):
            n = shape[axis]
            max_dx = max(max_dx, min(abs(offset[axis]) % n, (-abs(offset[axis])) % n))
    shape2 = (n_cells * codomain.rank, n_cells * domain.rank)
    if not terms:
        return LinOp(lattice, domain, codomain, sp.csr_matrix(shape2), name, 0, 0)
    matrix = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=shape2,
    )
    return LinOp(lattice, domain, codomain, matrix.tocsr(), name, max_dt, max_dx)


def safe_time_rows(lattice, rank, time_radius):
    """Boolean flat-row mask for rows no stencil truncation can touch."""
    t_top = lattice.n_time - 1 - time_radius
    if time_radius > t_top:
        raise ValueError(
            "time radius %d leaves no safe rows on a slab of height %d"
            % (time_radius, lattice.n_time)
        )
    if rank == 0:
        return np.zeros(0, dtype=bool)
    n_sp = _spatial_size(lattice)
    t_of_row = np.arange(lattice.n_cells * rank) // (rank * n_sp)
    return (t_of_row >= time_radius) & (t_of_row <= t_top)


def masked_residual(a, b=None, time_radius=None):
    """Max absolute entry of (a - b) over stencil-safe time rows.

    The default mask radius is the larger measured time radius of the
    two operands, which is exactly the band where slab truncation can
    break a translation-invariant identity.  Pass ``b=None`` to measure
    a single operator against zero.
    """
    if b is not None and a.matrix.shape != b.matrix.shape:
        raise ValueError("masked_residual on mismatched shapes")
    if time_radius is None:
        time_radius = a.time_radius if b is None else max(a.time_radius, b.time_radius)
    diff = a.matrix if b is None else (a.matrix - b.matrix).tocsr()
    mask = safe_time_rows(a.lattice, a.codomain.rank, time_radius)
    sub = diff[np.nonzero(mask)[0]]
    return float(np.abs(sub.data).max()) if sub.nnz else 0.0


def masked_section_max(section, time_radius):
    """Max absolute value over time slices a truncated stencil cannot reach."""
    t_top = section.lattice.n_time - time_radius
    if time_radius >= t_top:
        raise ValueError("time radius leaves no safe slices")
    window = section.values[time_radius:t_top]
    return float(np.abs(window).max()) if window.size else 0.0


def cutoff_commutator(op, partition, section, tol=1e-8):
    """op applied to the future cutoff of a solution: op[chi_plus * section].

    The input must solve op[section] = 0 on stencil-safe rows (the
    residual rides along in the error if it does not).  Away from the
    slab boundary rows the result is supported in the partition band
    dilated by the stencil and equals -op[chi_minus * section].
    """
    residual = masked_section_max(op.apply(section), op.time_radius)
    peak = float(np.abs(section.values).max()) if section.values.size else 0.0
    scale = max(1.0, peak) * max(1.0, op.max_abs())
    if residual > tol * scale:
        raise SolutionPreconditionError(
            "section does not solve %s = 0 (masked residual %.3e)" % (op.name, residual),
            residual,
        )
    return op.apply(partition.apply_plus(section))


class SubspaceBasis:
    """Orthonormal basis of a subspace of flat section coordinates."""

    def __init__(self, bundle, support_class, vectors, tol,
                 singular_values=None, spectral_gap=None):
        vectors = np.asarray(vectors, dtype=float)
        if vectors.ndim != 2:
            raise ValueError("basis vectors must form a 2-D column array")
        if vectors.shape[1] > 0:
            gram = vectors.T @ vectors
            if np.abs(gram - np.eye(vectors.shape[1])).max() > 1e-12:
                raise ValueError("basis columns are not orthonormal to 1e-12")
        self.bundle = bundle
        self.support_class = support_class
        self.vectors = vectors
        self.tol = tol
        self.singular_values = singular_values
        self.spectral_gap = spectral_gap

    @property
    def dim(self):
        return self.vectors.shape[1]

    def project_coefficients(self, flat):
        return self.vectors.T @ flat

    def residual(self, flat):
        """Relative distance of a flat vector from the subspace."""
        norm = np.linalg.norm(flat)
        if norm == 0.0:
            return 0.0
        inside = self.vectors @ (self.vectors.T @ flat)
        return float(np.linalg.norm(flat - inside) / norm)

    def contains(self, flat, tol=1e-9):
        return self.residual(flat) <= tol


def _support_columns(lattice, bundle, support_class):
    n = lattice.n_cells * bundle.rank
    if support_class in ("all", "retarded", "advanced"):
        # on the bounded slab the half-slab classes span everything
        return np.arange(n)
    if support_class == "interior":
        m = lattice.interior_margin
        n_sp = _spatial_size(lattice)
        t_of = np.arange(n) // (bundle.rank * n_sp)
        return np.nonzero((t_of >= m) & (t_of <= lattice.n_time - 1 - m))[0]
    raise ValueError("unknown support class %r" % (support_class,))


def _rank_split(s, tol):
    if s.size == 0 or s[0] == 0.0:
        return 0, np.inf
    rank = int(np.sum(s > tol * s[0]))
    if 0 < rank < s.size and s[rank] > 0.0:
        gap = float(s[rank - 1] / s[rank])
    else:
        gap = np.inf
    return rank, gap


def subspace(kind, op, support_class="all", tol=1e-9, budget=4000,
             row_time_radius=None):
    """Orthonormal kernel or image basis of a support-restricted operator.

    The domain is restricted to the support class; kernel vectors come
    back embedded in the full flat coordinates.  Rank decisions use a
    relative singular value cutoff and record the spectral gap between
    the last retained and first discarded singular value.

    ``row_time_radius`` drops the slab boundary rows a truncated stencil
    corrupts before taking the kernel, which is how solution spaces of
    marching operators are realized (only kernels support it).
    """
    if kind not in ("kernel", "image"):
        raise ValueError("kind must be 'kernel' or 'image'")
    if row_time_radius is not None and kind != "kernel":
        raise ValueError("row masking is only meaningful for kernels")
    cols = _support_columns(op.lattice, op.domain, support_class)
    if cols.size > budget:
        raise CapacityError(
            "dense factorization over %d columns exceeds the budget of %d; "
            "shrink the lattice" % (cols.size, budget)
        )
    matrix = op.matrix
    if row_time_radius is not None:
        keep = np.nonzero(safe_time_rows(op.lattice, op.codomain.rank, row_time_radius))[0]
        matrix = matrix[keep]
    dense = np.asarray(matrix[:, cols].todense())
    u, s, vt = np.linalg.svd(dense, full_matrices=True)
    rank, gap = _rank_split(s, tol)
    if kind == "kernel":
        embedded = np.zeros((op.matrix.shape[1], dense.shape[1] - rank))
        embedded[cols] = vt[rank:].T
        return SubspaceBasis(op.domain, support_class, embedded, tol,
                             singular_values=s, spectral_gap=gap)
    return SubspaceBasis(op.codomain, "all", u[:, :rank], tol,
                         singular_values=s, spectral_gap=gap)


def orthonormal_columns(vectors, tol=1e-10):
    """Orthonormal basis of the column span, dropping null directions."""
    vectors = np.asarray(vectors, dtype=float)
    if vectors.size == 0:
        return vectors.reshape(vectors.shape[0], 0)
    u, s, _ = np.linalg.svd(vectors, full_matrices=False)
    keep = int(np.sum(s > tol * s[0])) if s.size and s[0] > 0 else 0
    return u[:, :keep]


def subspace_intersection(a, b, tol=1e-10):
    """Basis of the intersection of two subspaces (same ambient space)."""
    if a.vectors.shape[0] != b.vectors.shape[0]:
        raise ValueError("subspaces live in different ambient spaces")
    support = a.support_class if a.support_class == b.support_class else "all"
    if a.dim == 0 or b.dim == 0:
        empty = np.zeros((a.vectors.shape[0], 0))
        return SubspaceBasis(a.bundle, support, empty, tol)
    stacked = np.hstack([a.vectors, -b.vectors])
    _, s, vt = np.linalg.svd(stacked, full_matrices=True)
    null_dim = stacked.shape[1] - int(np.sum(s > tol * s[0]))
    coeffs = vt[stacked.shape[1] - null_dim :].T[: a.dim] if null_dim else np.zeros((a.dim, 0))
    vectors = orthonormal_columns(a.vectors @ coeffs, tol)
    return SubspaceBasis(a.bundle, support, vectors, tol)


def subspace_quotient(a, b, tol=1e-10):
    """Orthogonal-complement realization of a modulo b."""
    if a.vectors.shape[0] != b.vectors.shape[0]:
        raise ValueError("subspaces live in different ambient spaces")
    if b.dim == 0:
        return SubspaceBasis(a.bundle, a.support_class, a.vectors.copy(), tol)
    reduced = a.vectors - b.vectors @ (b.vectors.T @ a.vectors)
    vectors = orthonormal_columns(reduced, tol)
    return SubspaceBasis(a.bundle, a.support_class, vectors, tol)


def factor_through(left, right, tol=1e-8, budget=4000):
    """Solve left = X . right for a local operator X by least squares.

    Mirrors the factorization property of formally exact columns: it
    succeeds exactly when ``left`` annihilates the kernel of ``right``.
    On failure the obstruction witness (a kernel vector of ``right``
    not annihilated by ``left``) rides along in the exception.
    """
    if left.lattice != right.lattice:
        raise ValueError("factorization across lattices")
    if not left.domain.compatible(right.domain):
        raise ValueError("factor_through needs a common domain")
    n_cols = right.matrix.shape[0]
    if max(n_cols, right.matrix.shape[1]) > budget:
        raise CapacityError(
            "dense factorization of a %r matrix exceeds the budget of %d; "
            "shrink the lattice" % (right.matrix.shape, budget)
        )
    dense_r = np.asarray(right.matrix.todense())
    dense_l = np.asarray(left.matrix.todense())
    scale = max(1.0, float(np.abs(dense_l).max()) if dense_l.size else 0.0)
    _, s, vt = np.linalg.svd(dense_r, full_matrices=True)
    rank = int(np.sum(s > 1e-12 * s[0])) if s.size and s[0] > 0 else 0
    kernel = vt[rank:].T
    if kernel.shape[1]:
        images = dense_l @ kernel
        worst = int(np.argmax(np.abs(images).max(axis=0)))
        obstruction = float(np.abs(images[:, worst]).max())
        if obstruction > tol * scale:
            raise FactorizationObstruction(
                "%s does not annihilate the kernel of %s (residual %.3e)"
                % (left.name, right.name, obstruction),
                obstruction,
                witness=kernel[:, worst],
            )
    solution, *_ = np.linalg.lstsq(dense_r.T, dense_l.T, rcond=None)
    factor = solution.T
    gap = dense_l - factor @ dense_r
    residual = float(np.abs(gap).max()) if gap.size else 0.0
    if residual > tol * scale:
        raise FactorizationObstruction(
            "no factorization of %s through %s (residual %.3e)"
            % (left.name, right.name, residual),
            residual,
        )
    if factor.size:
        factor[np.abs(factor) < 1e-13 * max(1.0, np.abs(factor).max())] = 0.0
    out = LinOp(
        left.lattice, right.codomain, left.codomain, sp.csr_matrix(factor),
        "%s/%s" % (left.name, right.name),
        left.lattice.n_time, max(left.lattice.shape[1:]),
        validate=False,
    )
    return out
