"""Lattice causal structure induced by operator stencils.

Causality here is intrinsic to the discretized PDE: an operator with
time stencil radius r_t and spatial radius r_s propagates information
at most ceil(r_s / r_t) spatial cells per time step, and that slope is
the lattice light cone.  Domains of influence, chronal precedence,
spacelike separation, time slices as Cauchy surfaces, and the adapted
cutoff partition {chi_plus, chi_minus} all derive from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import LatticeSection


@dataclass(frozen=True)
class ConeStencil:
    """Lattice light cone: maximal spatial cell offset per time step."""

    reach: tuple

    def __post_init__(self):
        object.__setattr__(self, "reach", tuple(int(r) for r in self.reach))
        if any(r < 0 for r in self.reach):
            raise ValueError("cone reach must be non-negative")

    @classmethod
    def from_radii(cls, time_radius, space_radii):
        """Cone of an operator stencil: reach = ceil(r_s / r_t) per axis."""
        if time_radius == 0:
            if any(r > 0 for r in space_radii):
                raise ValueError("purely spatial stencil has no finite cone")
            return cls(tuple(0 for _ in space_radii))
        return cls(tuple(math.ceil(r / time_radius) for r in space_radii))


def _wrap_distance(a, b, n):
    """Shortest periodic distance between cell indices a and b on a ring of n."""
    d = abs(a - b) % n
    return min(d, n - d)


def _dilate_slice(cells, reach, spatial_shape):
    """One periodic dilation of a set of spatial cells by the cone reach."""
    out = set()
    for cell in cells:
        for offset in np.ndindex(*[2 * r + 1 for r in reach]):
            moved = tuple(
                (c + o - r) % n
                for c, o, r, n in zip(cell, offset, reach, spatial_shape)
            )
            out.add(moved)
    return out


def influence(lattice, region, direction, cone, steps=None):
    """Domain of influence I^+/I^- of a set of spacetime cells.

    Per time step the spatial footprint dilates by the cone reach while
    time advances (future) or retreats (past).  The region itself is
    included (closure).  ``steps`` caps the number of time steps walked;
    by default the walk runs to the slab edge.

    Args:
        region: iterable of spacetime cells (t, x1, ...).
        direction: "future" or "past".
    """
    if direction not in ("future", "past"):
        raise ValueError("direction must be 'future' or 'past'")
    step = 1 if direction == "future" else -1
    buckets = {}
    result = set()
    for cell in region:
        t, rest = int(cell[0]), tuple(int(c) for c in cell[1:])
        if not 0 <= t < lattice.n_time:
            raise ValueError("cell %r outside the slab" % (cell,))
        buckets.setdefault(t, set()).add(rest)
        result.add((t,) + rest)
    # dilation distributes over unions, so walking each time bucket
    # independently matches a breadth-first walk from every seed cell
    for t0, cells in buckets.items():
        current = cells
        t = t0
        walked = 0
        while 0 <= t + step < lattice.n_time and (steps is None or walked < steps):
            current = _dilate_slice(current, cone.reach, lattice.spatial_shape)
            walked += 1
            t += step
            result.update((t,) + rest for rest in current)
    return result


def chronal_precedes(lattice, x, y, cone):
    """True iff y lies in the strict future domain of influence of x."""
    dt = y[0] - x[0]
    if dt <= 0:
        return False
    return all(
        _wrap_distance(a, b, n) <= r * dt
        for a, b, r, n in zip(x[1:], y[1:], cone.reach, lattice.spatial_shape)
    )


def spacelike_separated(lattice, region1, region2, cone):
    """True iff neither region meets the closed influence of the other."""
    set1, set2 = set(map(tuple, region1)), set(map(tuple, region2))
    if set1 & set2:
        return False
    for x in set1:
        for y in set2:
            if chronal_precedes(lattice, x, y, cone) or chronal_precedes(
                lattice, y, x, cone
            ):
                return False
    return True


def temporal_function(lattice):
    """The time coordinate t * dt per cell; every level set is a Cauchy slice."""
    t = np.arange(lattice.n_time) * lattice.spacing[0]
    shape = (lattice.n_time,) + (1,) * (lattice.ndim - 1)
    return np.broadcast_to(t.reshape(shape), lattice.shape).copy()


@dataclass(frozen=True)
class AdaptedPartition:
    """Cutoff partition chi_plus + chi_minus = 1 adapted to a Cauchy slice.

    chi_plus is a per-time-slice weight equal to 1 at and above t_plus,
    0 at and below t_minus, and monotone in between; the slice t_0 with
    t_minus < t_0 < t_plus is the Cauchy surface the partition is
    adapted to.  The default is the sharp step at t_0.
    """

    lattice: object
    t_minus: int
    t_0: int
    t_plus: int
    chi_plus: tuple

    def __post_init__(self):
        if not self.t_minus < self.t_0 < self.t_plus:
            raise ValueError("need t_minus < t_0 < t_plus")
        if self.t_minus < 0 or self.t_plus >= self.lattice.n_time:
            raise ValueError("partition band leaves the slab")
        chi = tuple(float(c) for c in self.chi_plus)
        object.__setattr__(self, "chi_plus", chi)
        if len(chi) != self.lattice.n_time:
            raise ValueError("chi_plus needs one weight per time slice")
        if any(chi[t] != 0.0 for t in range(self.t_minus + 1)):
            raise ValueError("chi_plus must vanish at and below t_minus")
        if any(chi[t] != 1.0 for t in range(self.t_plus, self.lattice.n_time)):
            raise ValueError("chi_plus must be 1 at and above t_plus")
        if any(chi[t + 1] < chi[t] for t in range(self.lattice.n_time - 1)):
            raise ValueError("chi_plus must be monotone")

    @classmethod
    def sharp(cls, lattice, t_0):
        """Sharp indicator step: chi_plus = 1 exactly at t >= t_0."""
        chi = tuple(1.0 if t >= t_0 else 0.0 for t in range(lattice.n_time))
        return cls(lattice, t_0 - 1, t_0, t_0 + 1, chi)

    @classmethod
    def ramped(cls, lattice, t_minus, t_0, t_plus):
        """Linear ramp between t_minus and t_plus."""
        chi = tuple(
            min(1.0, max(0.0, (t - t_minus) / (t_plus - t_minus)))
            for t in range(lattice.n_time)
        )
        return cls(lattice, t_minus, t_0, t_plus, chi)

    @property
    def chi_minus(self):
        return tuple(1.0 - c for c in self.chi_plus)

    def _apply(self, section, weights, tag):
        w = np.asarray(weights).reshape((-1,) + (1,) * (section.values.ndim - 1))
        support = section.support_class if section.support_class == "interior" else tag
        return LatticeSection(section.lattice, section.bundle, section.values * w, support)

    def apply_plus(self, section):
        """Multiply by chi_plus; the result has retarded (future) support."""
        return self._apply(section, self.chi_plus, "retarded")

    def apply_minus(self, section):
        """Multiply by chi_minus; the result has advanced (past) support."""
        return self._apply(section, self.chi_minus, "advanced")
