"""Retarded and advanced Green functions by time marching.

A wave-type operator whose stencil couples one time step in each
direction is solved by marching: the newest-slice coupling block is
inverted once, and each enforced row then determines the next slice
from the two before it.  Initial data below (or above) the source is
zero, which is exactly the retarded (advanced) support condition on
the slab.

Rows on the two outermost time slices carry truncated stencils and
are never enforced; every identity involving Green functions is
therefore stated on the stencil-safe rows, where it holds to solver
precision.  A dense solve over the same enforced rows is kept as a
permanent independent oracle for the marching path.
"""

from __future__ import annotations

import csv

import numpy as np
import scipy.linalg

from .causal import ConeStencil, influence
from .diffop import (
    CapacityError,
    SolutionPreconditionError,
    _spatial_size,
    cutoff_commutator,
    masked_section_max,
    safe_time_rows,
    subspace,
)
from .lattice import LatticeSection, delta_section, pairing
from .report import rank_check, residual_check

SOLVE_TOL = 1e-11


class GreenHyperbolicityError(RuntimeError):
    """The operator does not admit the marching Green functions."""


class SolvabilityError(RuntimeError):
    """A constrained-source problem failed its solvability criterion.

    Carries ``residual``, the masked sup-norm of the violated identity.
    """

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


def _support_time_box(section):
    box = section.support_box()
    if box is None:
        return None
    return box[0]


def _solution_scale(values):
    return max(float(np.abs(values).max()) if values.size else 0.0, 1e-300)


class MarchingForm:
    """One-step time-marching solver for a wave-type operator.

    Validates at construction that the operator couples exactly one
    time step, is time-homogeneous away from the slab boundary, and
    has invertible newest/oldest-slice coupling blocks (the lattice
    form of Green hyperbolicity).  Both block condition numbers are
    kept for reporting.
    """

    def __init__(self, op, cond_limit=1e12):
        lattice = op.lattice
        if op.domain.rank == 0:
            raise ValueError("operator %s acts on a rank-0 bundle" % op.name)
        if op.domain.rank != op.codomain.rank:
            raise ValueError(
                "operator %s has non-square slice blocks (%d vs %d components)"
                % (op.name, op.domain.rank, op.codomain.rank)
            )
        if op.time_radius == 0:
            raise GreenHyperbolicityError(
                "operator %s has no time coupling, so it admits no "
                "retarded/advanced solutions" % op.name
            )
        if op.time_radius > 1:
            raise ValueError(
                "operator %s couples %d time steps; only one-step stencils march"
                % (op.name, op.time_radius)
            )
        n_time = lattice.n_time
        block = _spatial_size(lattice) * op.domain.rank
        matrix = op.matrix
        blocks = None
        for t in range(1, n_time - 1):
            rows = matrix[t * block : (t + 1) * block]
            dense = np.asarray(rows.todense())
            triple = (
                dense[:, (t - 1) * block : t * block],
                dense[:, t * block : (t + 1) * block],
                dense[:, (t + 1) * block : (t + 2) * block],
            )
            if blocks is None:
                blocks = triple
                scale = max(1.0, max(np.abs(b).max() for b in triple))
            else:
                drift = max(np.abs(a - b).max() for a, b in zip(blocks, triple))
                if drift > 1e-12 * scale:
                    raise ValueError(
                        "operator %s is not time-homogeneous (row blocks drift "
                        "by %.3e at slice %d); marching needs one stencil for "
                        "all interior slices" % (op.name, drift, t)
                    )
        self.op = op
        self.lattice = lattice
        self.block_size = block
        self.block_past, self.block_center, self.block_future = blocks
        self.leading_condition = {}
        factors = {}
        for direction, lead in (("retarded", self.block_future), ("advanced", self.block_past)):
            cond = float(np.linalg.cond(lead))
            self.leading_condition[direction] = cond
            if not np.isfinite(cond) or cond > cond_limit:
                raise GreenHyperbolicityError(
                    "operator %s: %s leading block is singular or too "
                    "ill-conditioned (cond %.3e); not Green hyperbolic on "
                    "this lattice" % (op.name, direction, cond)
                )
            factors[direction] = scipy.linalg.lu_factor(lead)
        self._factors = factors

    def _check_solve(self, alpha, values):
        residual = self.op.matrix @ values.reshape(-1) - alpha.flat()
        residual = residual.reshape(self.lattice.n_time, self.block_size)
        r_t = self.op.time_radius
        worst = float(np.abs(residual[r_t : self.lattice.n_time - r_t]).max())
        scale = _solution_scale(alpha.values)
        if worst > SOLVE_TOL * scale:
            raise GreenHyperbolicityError(
                "marching solve for %s left residual %.3e (scale %.3e)"
                % (self.op.name, worst, scale)
            )

    def solve_retarded(self, alpha, check_cone=False):
        """Unique solution supported on and above the source.

        The source must vanish on the initial slice; a source reaching
        down to the slab bottom has no retarded solution to represent.
        """
        self._check_source(alpha, "retarded")
        n_time = self.lattice.n_time
        a = alpha.flat().reshape(n_time, self.block_size)
        phi = np.zeros_like(a)
        lu = self._factors["retarded"]
        for t in range(1, n_time - 1):
            rhs = a[t] - self.block_center @ phi[t] - self.block_past @ phi[t - 1]
            phi[t + 1] = scipy.linalg.lu_solve(lu, rhs)
        self._check_solve(alpha, phi)
        result = LatticeSection(
            self.lattice,
            self.op.domain,
            phi.reshape(self.lattice.shape + (self.op.domain.rank,)),
            "retarded",
        )
        if check_cone:
            verify_cone(self.op, alpha, result, "future")
        return result

    def solve_advanced(self, alpha, check_cone=False):
        """Unique solution supported on and below the source."""
        self._check_source(alpha, "advanced")
        n_time = self.lattice.n_time
        a = alpha.flat().reshape(n_time, self.block_size)
        phi = np.zeros_like(a)
        lu = self._factors["advanced"]
        for t in range(n_time - 2, 0, -1):
            rhs = a[t] - self.block_center @ phi[t] - self.block_future @ phi[t + 1]
            phi[t - 1] = scipy.linalg.lu_solve(lu, rhs)
        self._check_solve(alpha, phi)
        result = LatticeSection(
            self.lattice,
            self.op.domain,
            phi.reshape(self.lattice.shape + (self.op.domain.rank,)),
            "advanced",
        )
        if check_cone:
            verify_cone(self.op, alpha, result, "past")
        return result

    def _check_source(self, alpha, direction):
        if alpha.lattice != self.lattice:
            raise ValueError("source lives on another lattice")
        if not self.op.codomain.compatible(alpha.bundle):
            raise ValueError(
                "source bundle %s does not match the operator codomain %s"
                % (alpha.bundle.name, self.op.codomain.name)
            )
        box = _support_time_box(alpha)
        if box is None:
            return
        lo, hi = box
        top = self.lattice.n_time - 2
        if direction in ("retarded", "causal") and lo < 1:
            raise ValueError(
                "source support reaches the initial slab slice; no retarded "
                "solution is representable (support starts at t=%d)" % lo
            )
        if direction in ("advanced", "causal") and hi > top:
            raise ValueError(
                "source support reaches the final slab slice; no advanced "
                "solution is representable (support ends at t=%d)" % hi
            )

    def causal_green(self, alpha, check_cone=False):
        """Retarded minus advanced solution of an interior source."""
        plus = self.solve_retarded(alpha, check_cone=check_cone)
        minus = self.solve_advanced(alpha, check_cone=check_cone)
        values = plus.values - minus.values
        return LatticeSection(self.lattice, self.op.domain, values, "all")

    def split_inverse(self, partition, alpha):
        """Right inverse on arbitrary sources via an adapted partition.

        Retarded solve of the future cutoff plus advanced solve of the
        past cutoff; the composition with the operator is the identity
        on all stencil-safe rows.
        """
        plus = self.solve_retarded(partition.apply_plus(alpha))
        minus = self.solve_advanced(partition.apply_minus(alpha))
        values = plus.values + minus.values
        return LatticeSection(self.lattice, self.op.domain, values, "all")

    def metadata(self):
        data = self.op.metadata()
        data["leading_condition"] = dict(self.leading_condition)
        data["block_size"] = self.block_size
        return data


def verify_cone(op, source, result, direction, tol=0.0):
    """Assert the solution is confined to the domain of influence.

    With a componentwise leading block the marching recursion
    propagates exact zeros, so the default tolerance is zero: support
    outside the cone means a genuine confinement violation, not
    roundoff.
    """
    box = source.support_box()
    if box is None:
        peak = float(np.abs(result.values).max()) if result.values.size else 0.0
        if peak > tol:
            raise GreenHyperbolicityError(
                "solution of a zero source has entries up to %.3e" % peak
            )
        return
    cone = ConeStencil.from_radii(
        op.time_radius, (op.space_radius,) * (op.lattice.ndim - 1)
    )
    lows = [b[0] for b in box]
    highs = [b[1] for b in box]
    region = set()
    for cell in np.ndindex(*[h - l + 1 for l, h in zip(lows, highs)]):
        region.add(tuple(c + l for c, l in zip(cell, lows)))
    allowed = influence(op.lattice, region, direction, cone)
    mask = np.zeros(op.lattice.shape, dtype=bool)
    for cell in allowed:
        mask[cell] = True
    outside = result.values[~mask]
    worst = float(np.abs(outside).max()) if outside.size else 0.0
    if worst > tol:
        raise GreenHyperbolicityError(
            "solution leaks outside the %s domain of influence (worst %.3e)"
            % (direction, worst)
        )


def dense_causal_solve(op, alpha, direction, budget=4000):
    """Independent dense oracle for the marching solves.

    Restricts the operator matrix to the enforced rows and to the
    columns a retarded (advanced) solution can occupy, and solves the
    resulting square system directly.  Shares no code with the
    marching path.
    """
    lattice = op.lattice
    n_time = lattice.n_time
    block = _spatial_size(lattice) * op.domain.rank
    n_unknown = (n_time - 2) * block
    if n_unknown > budget:
        raise CapacityError(
            "dense oracle over %d unknowns exceeds the budget of %d"
            % (n_unknown, budget)
        )
    rows = np.arange(block, (n_time - 1) * block)
    if direction == "retarded":
        cols = np.arange(2 * block, n_time * block)
    elif direction == "advanced":
        cols = np.arange(0, (n_time - 2) * block)
    else:
        raise ValueError("direction must be 'retarded' or 'advanced'")
    dense = np.asarray(op.matrix[rows][:, cols].todense())
    rhs = alpha.flat()[rows]
    try:
        solution = np.linalg.solve(dense, rhs)
    except np.linalg.LinAlgError as err:
        raise GreenHyperbolicityError(
            "dense %s system for %s is singular: %s" % (direction, op.name, err)
        )
    flat = np.zeros(op.matrix.shape[1])
    flat[cols] = solution
    return LatticeSection(
        lattice, op.domain, flat.reshape(lattice.shape + (op.domain.rank,)), direction
    )


class SequenceReport:
    """Rank bookkeeping for the compact-support/solution exact sequence.

    Keeps the dense causal Green matrix over the source columns, which
    downstream symplectic-form assembly reuses.
    """

    def __init__(self, checks, ranks, green_matrix, source_columns):
        self.checks = checks
        self.ranks = ranks
        self.green_matrix = green_matrix
        self.source_columns = source_columns

    @property
    def passed(self):
        return all(c["passed"] for c in self.checks)


def _margin_columns(lattice, rank, margin):
    n = lattice.n_cells * rank
    n_sp = _spatial_size(lattice)
    t_of = np.arange(n) // (rank * n_sp)
    return np.nonzero((t_of >= margin) & (t_of <= lattice.n_time - 1 - margin))[0]


def green_matrix(march, budget=4000):
    """Dense causal Green function over one-margin interior sources.

    Returns (matrix, source_columns): column j is the causal solution
    of the delta source at flat index source_columns[j].
    """
    op = march.op
    lattice = march.lattice
    r_t = op.time_radius
    cols = _margin_columns(lattice, op.codomain.rank, r_t)
    if cols.size > budget:
        raise CapacityError(
            "causal Green matrix over %d sources exceeds the budget of %d"
            % (cols.size, budget)
        )
    out = np.zeros((op.matrix.shape[1], cols.size))
    for j, col in enumerate(cols):
        cell = np.unravel_index(col // op.codomain.rank, lattice.shape)
        component = int(col % op.codomain.rank)
        alpha = delta_section(lattice, op.codomain, cell, component)
        out[:, j] = march.causal_green(alpha).flat()
    return out, cols


def verify_exact_sequence(march, tol=1e-9, budget=4000):
    """Rank certificate for the two-sided exact sequence of the Green pair.

    Compactly supported sections inject under the dynamics, their
    images exhaust the kernel of the causal Green function, its image
    is exactly the solution space, and the dynamics maps onto all
    enforced source rows.  All four statements are rank identities
    with recorded spectral gaps, plus composition residuals.
    """
    op = march.op
    lattice = march.lattice
    r_t = op.time_radius
    if lattice.interior_margin < 2 * r_t:
        raise ValueError(
            "exact-sequence margins need interior_margin >= %d" % (2 * r_t)
        )
    checks = []
    dense_full = np.asarray(op.matrix.todense())

    cols_deep = _margin_columns(lattice, op.domain.rank, 2 * r_t)
    if max(dense_full.shape) > budget:
        raise CapacityError(
            "exact-sequence ranks on a %r operator exceed the budget of %d"
            % (op.matrix.shape, budget)
        )
    sub = dense_full[:, cols_deep]
    s = np.linalg.svd(sub, compute_uv=False)
    rank_deep = int(np.sum(s > tol * s[0])) if s.size and s[0] > 0 else 0
    gap_inj = float(s[rank_deep - 1] / (tol * s[0])) if rank_deep else float("inf")
    checks.append(
        rank_check(
            "compactly supported kernel of the dynamics is zero",
            "Prp (exact)",
            cols_deep.size - rank_deep,
            0,
            gap=gap_inj,
        )
    )

    gmat, cols_src = green_matrix(march, budget=budget)
    s_g = np.linalg.svd(gmat, compute_uv=False)
    rank_g = int(np.sum(s_g > tol * s_g[0])) if s_g.size and s_g[0] > 0 else 0
    gap_g = float(s_g[rank_g - 1] / s_g[rank_g]) if 0 < rank_g < s_g.size else float("inf")

    # image of the dynamics on deep columns, restricted to source rows
    image_in_sources = dense_full[np.ix_(cols_src, cols_deep)]
    composed = gmat @ image_in_sources
    scale = max(1.0, float(np.abs(gmat).max())) * max(1.0, float(np.abs(image_in_sources).max()))
    checks.append(
        residual_check(
            "causal Green annihilates the image of the dynamics",
            "Prp (exact)",
            float(np.abs(composed).max()) / scale if composed.size else 0.0,
            1e-11,
        )
    )
    checks.append(
        rank_check(
            "kernel of causal Green equals the image of the dynamics",
            "Prp (exact)",
            cols_src.size - rank_g,
            rank_deep,
            gap=gap_g,
        )
    )

    solutions = subspace("kernel", op, "all", tol=tol, budget=budget, row_time_radius=r_t)
    checks.append(
        rank_check(
            "image of causal Green equals the solution space",
            "Prp (exact)",
            rank_g,
            solutions.dim,
            gap=solutions.spectral_gap,
        )
    )
    safe = np.nonzero(safe_time_rows(lattice, op.codomain.rank, r_t))[0]
    residual_sol = np.abs((dense_full @ gmat)[safe])
    scale_sol = max(1.0, float(np.abs(gmat).max())) * max(1.0, float(np.abs(dense_full).max()))
    checks.append(
        residual_check(
            "causal Green image solves the dynamics",
            "Prp (exact)",
            float(residual_sol.max()) / scale_sol if residual_sol.size else 0.0,
            1e-11,
        )
    )

    onto = dense_full[safe]
    s_onto = np.linalg.svd(onto, compute_uv=False)
    rank_onto = int(np.sum(s_onto > tol * s_onto[0])) if s_onto.size and s_onto[0] > 0 else 0
    gap_onto = float(s_onto[rank_onto - 1] / (tol * s_onto[0])) if rank_onto else float("inf")
    checks.append(
        rank_check(
            "dynamics maps onto every enforced source row",
            "Prp (exact)",
            rank_onto,
            safe.size,
            gap=gap_onto,
        )
    )

    euler = cols_deep.size - cols_src.size + op.matrix.shape[1] - safe.size
    checks.append(
        rank_check(
            "alternating dimension sum of the sequence vanishes",
            "Prp (exact)",
            euler,
            0,
        )
    )

    ranks = {
        "deep_columns": int(cols_deep.size),
        "source_columns": int(cols_src.size),
        "ambient": int(op.matrix.shape[1]),
        "enforced_rows": int(safe.size),
        "dynamics_rank": int(rank_deep),
        "green_rank": int(rank_g),
        "solution_dim": int(solutions.dim),
    }
    return SequenceReport(checks, ranks, gmat, cols_src)


def adjoint_identity_check(march, n_probes=100, tol=1e-11, seed=0):
    """Green functions of the adjoint against adjoints of Green functions.

    Measures, over random interior dual sources, the worst relative
    deviation of the retarded/advanced exchange identities and the
    sign flip of the causal function under transposition; when the
    operator is symmetric, also the antisymmetry of the causal
    bilinear form.
    """
    op = march.op
    adj = MarchingForm(op.adjoint())
    rng = np.random.default_rng(seed)
    lattice = march.lattice

    def probe():
        values = rng.standard_normal(lattice.shape + (op.codomain.rank,))
        margin = lattice.interior_margin
        values[:margin] = 0.0
        values[lattice.n_time - margin :] = 0.0
        return LatticeSection(lattice, op.codomain, values, "interior")

    dev_exchange_plus = 0.0
    dev_exchange_minus = 0.0
    dev_causal = 0.0
    dev_antisym = 0.0
    symmetric = (op.matrix - op.matrix.transpose()).tocsr()
    is_symmetric = (
        float(np.abs(symmetric.data).max()) if symmetric.nnz else 0.0
    ) <= 1e-13 * max(1.0, op.max_abs())
    for _ in range(n_probes):
        alpha = probe()
        beta = probe()
        g_plus = march.solve_retarded(alpha)
        g_minus = march.solve_advanced(alpha)
        h_plus = adj.solve_retarded(beta)
        h_minus = adj.solve_advanced(beta)

        def rel(a, b):
            return abs(a - b) / max(1.0, abs(a), abs(b))

        dev_exchange_plus = max(
            dev_exchange_plus, rel(pairing(g_plus, beta), pairing(h_minus, alpha))
        )
        dev_exchange_minus = max(
            dev_exchange_minus, rel(pairing(g_minus, beta), pairing(h_plus, alpha))
        )
        causal_left = pairing(g_plus, beta) - pairing(g_minus, beta)
        causal_right = pairing(h_plus, alpha) - pairing(h_minus, alpha)
        dev_causal = max(dev_causal, rel(causal_left, -causal_right))
        if is_symmetric:
            dev_antisym = max(dev_antisym, rel(causal_left, -causal_right))
    checks = [
        residual_check(
            "retarded Green pairs as the adjoint's advanced Green",
            "Eq (adj-id)",
            dev_exchange_plus,
            tol,
            probes=n_probes,
        ),
        residual_check(
            "advanced Green pairs as the adjoint's retarded Green",
            "Eq (adj-id)",
            dev_exchange_minus,
            tol,
            probes=n_probes,
        ),
        residual_check(
            "causal Green flips sign under transposition",
            "Eq (adj-id)",
            dev_causal,
            tol,
            probes=n_probes,
        ),
    ]
    if is_symmetric:
        checks.append(
            residual_check(
                "causal bilinear form of a symmetric operator is antisymmetric",
                "Eq (adj-id)",
                dev_antisym,
                tol,
                probes=n_probes,
            )
        )
    return checks


def _boundary_masked(section, radius):
    """Copy with the outermost time slices zeroed.

    Those slices carry stencil truncation junk; every pairing formula
    below is stated on the remaining rows, where it is exact.
    """
    values = section.values.copy()
    values[:radius] = 0.0
    values[section.lattice.n_time - radius :] = 0.0
    return LatticeSection(section.lattice, section.bundle, values, "all")


def _check_partition_window(partition, lattice, r_t):
    if partition.t_minus < r_t or partition.t_plus > lattice.n_time - 1 - r_t:
        raise ValueError(
            "partition band [%d, %d] is too close to the slab boundary for a "
            "stencil of time radius %d"
            % (partition.t_minus, partition.t_plus, r_t)
        )


def green_pairing(march, phi, psi, partition, tol=1e-8):
    """Conserved pairing of a solution with an adjoint solution.

    Evaluates -<phi, f*[chi_plus psi]> with the slab boundary rows
    masked; the value is independent of where the partition band sits
    and of its profile, because different cutoffs differ by a full
    divergence of the two solutions.
    """
    op = march.op
    r_t = op.time_radius
    _check_partition_window(partition, march.lattice, r_t)
    residual = masked_section_max(op.apply(phi), r_t)
    scale = max(1.0, float(np.abs(phi.values).max())) * max(1.0, op.max_abs())
    if residual > tol * scale:
        raise SolutionPreconditionError(
            "first argument does not solve %s = 0 (masked residual %.3e)"
            % (op.name, residual),
            residual,
        )
    flux = cutoff_commutator(op.adjoint(), partition, psi, tol=tol)
    return -pairing(phi, _boundary_masked(flux, r_t))


def green_pairing_forms(march, adj_march, alpha, beta, partition, tol=1e-8):
    """All equivalent expressions of the pairing of two causal solutions.

    For phi the causal solution of alpha and psi the adjoint causal
    solution of beta, returns the cutoff form, the source-solution
    pairings on both sides, and the transposed cutoff form.  All four
    agree on interior sources.
    """
    phi = march.causal_green(alpha)
    psi = adj_march.causal_green(beta)
    r_t = march.op.time_radius
    cutoff = green_pairing(march, phi, psi, partition, tol=tol)
    transposed = pairing(
        psi, _boundary_masked(cutoff_commutator(march.op, partition, phi, tol=tol), r_t)
    )
    return {
        "cutoff commutator": cutoff,
        "source against adjoint solution": pairing(psi, alpha),
        "solution against adjoint source": -pairing(phi, beta),
        "transposed cutoff commutator": transposed,
    }


def solve_constrained(march, constraint, h_march, q_op, beta, gamma,
                      direction="retarded", tol=1e-10):
    """Causal solve of a source subject to a companion constraint value.

    Solvability requires the constraint dynamics applied to gamma to
    reproduce the transferred source q[beta]; the criterion is checked
    first and its violation reported with the measured residual.  The
    returned solution satisfies both the field equation and the
    constraint equation on stencil-safe rows.
    """
    h_op = h_march.op if isinstance(h_march, MarchingForm) else h_march
    lhs = h_op.apply(gamma)
    rhs = q_op.apply(beta)
    diff = LatticeSection(
        lhs.lattice, lhs.bundle, lhs.values - rhs.values, "all"
    )
    radius = max(h_op.time_radius, q_op.time_radius, march.op.time_radius)
    criterion = masked_section_max(diff, radius)
    scale = max(
        1.0,
        float(np.abs(beta.values).max()) if beta.values.size else 0.0,
        float(np.abs(gamma.values).max()) if gamma.values.size else 0.0,
    )
    if criterion > tol * scale:
        raise SolvabilityError(
            "constraint criterion violated: |h[gamma] - q[beta]| = %.3e "
            "on stencil-safe rows" % criterion,
            criterion,
        )
    if direction == "retarded":
        phi = march.solve_retarded(beta)
    elif direction == "advanced":
        phi = march.solve_advanced(beta)
    else:
        raise ValueError("direction must be 'retarded' or 'advanced'")
    got = constraint.apply(phi)
    mismatch = LatticeSection(got.lattice, got.bundle, got.values - gamma.values, "all")
    radius_c = constraint.time_radius + march.op.time_radius
    res_c = masked_section_max(mismatch, radius_c)
    if res_c > tol * scale:
        raise SolvabilityError(
            "constraint of the %s solution differs from the given value by "
            "%.3e; the value is consistent but belongs to a different "
            "solution branch" % (direction, res_c),
            res_c,
        )
    return phi


def section_heatmap_csv(path, section):
    """Write a section as (cell coordinates, component, value) rows."""
    lattice = section.lattice
    axis_names = ["t"] + ["x%d" % i for i in range(1, lattice.ndim)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(axis_names + ["component", "value"])
        for cell in np.ndindex(*lattice.shape):
            for comp in range(section.bundle.rank):
                writer.writerow(
                    list(cell) + [comp, "%.17g" % section.values[cell + (comp,)]]
                )
