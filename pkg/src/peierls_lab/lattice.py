"""Finite spacetime lattice, section storage, and the natural pairing.

The lattice is a bounded slab in time (axis 0) times a periodic spatial
torus.  On a compact spatial slice every section is spacelike compact,
so the support taxonomy collapses to something finite linear algebra
can handle: "interior" time support stands in for compact support,
half-slab supports stand in for retarded and advanced support, and
"all" is the spacelike-compact class.

Fields and dual densities share one storage layout, a real array of
shape ``lattice.shape + (rank,)``.  The volume weight lives in the
pairing, not in the stored values.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

SUPPORT_CLASSES = ("interior", "all", "retarded", "advanced")


@dataclass(frozen=True)
class Lattice:
    """Finite spacetime lattice: bounded time axis 0, periodic space.

    Args:
        shape: cells per axis, time first.  shape[0] must leave room for
            two interior margins plus at least two working slices.
        spacing: cell spacing per axis (dt, dx1, ...).
        interior_margin: time slices at each end excluded from interior
            support, so formal adjoints are exact on interior sections.
    """

    shape: tuple
    spacing: tuple
    interior_margin: int = 2

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        if len(self.shape) != len(self.spacing):
            raise ValueError("shape and spacing must have equal length")
        if len(self.shape) < 2:
            raise ValueError("need a time axis and at least one spatial axis")
        if any(n < 1 for n in self.shape):
            raise ValueError("all axis sizes must be positive")
        if any(s <= 0.0 for s in self.spacing):
            raise ValueError("all spacings must be strictly positive")
        if self.interior_margin < 0:
            raise ValueError("interior_margin must be non-negative")
        if self.shape[0] < 2 * self.interior_margin + 2:
            raise ValueError(
                "time extent %d too small for interior_margin %d"
                % (self.shape[0], self.interior_margin)
            )

    @property
    def ndim(self):
        return len(self.shape)

    @property
    def n_time(self):
        return self.shape[0]

    @property
    def spatial_shape(self):
        return self.shape[1:]

    @property
    def n_cells(self):
        return int(np.prod(self.shape))

    @property
    def volume_weight(self):
        """Cell volume w = prod(spacing); carried by the pairing."""
        return float(np.prod(self.spacing))

    def interior_time_slices(self):
        """Range of time indices allowed to carry interior support."""
        return range(self.interior_margin, self.n_time - self.interior_margin)

    def to_json(self):
        return json.dumps(
            {
                "shape": list(self.shape),
                "spacing": list(self.spacing),
                "interior_margin": self.interior_margin,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        meta = json.loads(text)
        return cls(
            shape=tuple(meta["shape"]),
            spacing=tuple(meta["spacing"]),
            interior_margin=int(meta["interior_margin"]),
        )


@dataclass(frozen=True)
class BundleDescriptor:
    """Names a section bundle: which cells its components live on.

    Each component is a (label, cell_axes) pair where cell_axes is the
    sorted tuple of lattice axes the cell extends along: () is a site,
    (0,) a time edge, (2,) a space edge along axis 2, (1, 2) a spatial
    plaquette, and so on.  ``density=True`` marks the densitized dual;
    the pairing only accepts a field against a dual density with the
    identical component list.
    """

    name: str
    components: tuple
    density: bool = False

    def __post_init__(self):
        comps = []
        for label, axes in self.components:
            comps.append((str(label), tuple(int(a) for a in axes)))
        object.__setattr__(self, "components", tuple(comps))
        labels = [c[0] for c in self.components]
        if len(set(labels)) != len(labels):
            raise ValueError("component labels must be unique")
        for _, axes in self.components:
            if tuple(sorted(set(axes))) != axes:
                raise ValueError("cell axes must be sorted and distinct: %r" % (axes,))

    @property
    def rank(self):
        return len(self.components)

    def compatible(self, other):
        """True when sections of self and other share one vector space."""
        return self.components == other.components and self.density == other.density

    def dual(self, name=None):
        """The densitized dual bundle (same components, density flipped)."""
        return BundleDescriptor(
            name=name if name is not None else self.name + "*",
            components=self.components,
            density=not self.density,
        )

    def validate_for(self, lattice):
        for label, axes in self.components:
            for a in axes:
                if not 0 <= a < lattice.ndim:
                    raise ValueError(
                        "component %r uses axis %d outside lattice dimension %d"
                        % (label, a, lattice.ndim)
                    )


def _degrade_support(a, b):
    if a == b:
        return a
    if "all" in (a, b):
        return "all"
    if {a, b} == {"retarded", "advanced"}:
        return "all"
    # interior against retarded/advanced keeps the half-slab tag
    return a if a != "interior" else b


class LatticeSection:
    """A field or dual density sampled over the lattice.

    Values are stored as a read-only array of shape
    ``lattice.shape + (bundle.rank,)``; flattening in C order is the
    canonical time-major ordering every operator matrix uses.
    """

    def __init__(self, lattice, bundle, values, support_class="all"):
        bundle.validate_for(lattice)
        if support_class not in SUPPORT_CLASSES:
            raise ValueError("unknown support class %r" % (support_class,))
        values = np.asarray(values, dtype=float)
        expect = lattice.shape + (bundle.rank,)
        if values.shape != expect:
            raise ValueError("values shape %r, expected %r" % (values.shape, expect))
        if support_class == "interior":
            m = lattice.interior_margin
            if m > 0 and (np.any(values[:m] != 0.0) or np.any(values[-m:] != 0.0)):
                raise ValueError("interior section has support inside the time margin")
        self.lattice = lattice
        self.bundle = bundle
        self.values = values.copy()
        self.values.flags.writeable = False
        self.support_class = support_class

    @property
    def size(self):
        return self.values.size

    def flat(self):
        """Canonical 1-D view: C order over (time, space..., component)."""
        return self.values.reshape(-1)

    def support_box(self, tol=0.0):
        """Per-axis (min, max) cell index bounds of entries with |v| > tol.

        Returns None for a section with no entries above tol.  Exact at
        tol 0 and monotone (shrinking) as tol grows.
        """
        mask = np.abs(self.values) > tol
        if not mask.any():
            return None
        cellmask = mask.any(axis=-1)
        box = []
        for axis in range(cellmask.ndim):
            other = tuple(a for a in range(cellmask.ndim) if a != axis)
            hit = cellmask.any(axis=other) if other else cellmask
            idx = np.nonzero(hit)[0]
            box.append((int(idx[0]), int(idx[-1])))
        return tuple(box)

    def with_values(self, values, support_class=None):
        return LatticeSection(
            self.lattice,
            self.bundle,
            values,
            support_class if support_class is not None else self.support_class,
        )

    def _check_mate(self, other):
        if self.lattice != other.lattice:
            raise ValueError("sections live on different lattices")
        if not self.bundle.compatible(other.bundle):
            raise ValueError(
                "bundle mismatch: %s vs %s" % (self.bundle.name, other.bundle.name)
            )

    def __add__(self, other):
        self._check_mate(other)
        return LatticeSection(
            self.lattice,
            self.bundle,
            self.values + other.values,
            _degrade_support(self.support_class, other.support_class),
        )

    def __sub__(self, other):
        self._check_mate(other)
        return LatticeSection(
            self.lattice,
            self.bundle,
            self.values - other.values,
            _degrade_support(self.support_class, other.support_class),
        )

    def __neg__(self):
        return self.with_values(-self.values)

    def __mul__(self, scalar):
        return self.with_values(self.values * float(scalar))

    __rmul__ = __mul__

    def dump_csv(self, path):
        """Write rows (flat cell index, component, value) to a CSV file."""
        arr = self.values.reshape(-1, self.bundle.rank)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cell", "component", "value"])
            for cell in range(arr.shape[0]):
                for comp in range(arr.shape[1]):
                    writer.writerow([cell, comp, "%.17g" % arr[cell, comp]])

    @classmethod
    def load_csv(cls, path, lattice, bundle, support_class="all"):
        arr = np.zeros((int(np.prod(lattice.shape)), bundle.rank))
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["cell", "component", "value"]:
                raise ValueError("unrecognized section CSV header: %r" % (header,))
            for cell, comp, value in reader:
                arr[int(cell), int(comp)] = float(value)
        return cls(lattice, bundle, arr.reshape(lattice.shape + (bundle.rank,)), support_class)


def pairing(phi, alpha):
    """Natural pairing of a field with a dual density: w * sum(phi * alpha).

    The two sections must share the lattice and the component list and
    carry opposite density flags; the volume weight of the lattice
    multiplies the plain componentwise sum.
    """
    if phi.lattice != alpha.lattice:
        raise ValueError("sections live on different lattices")
    if phi.bundle.components != alpha.bundle.components:
        raise ValueError(
            "bundles %s and %s are not dual (component mismatch)"
            % (phi.bundle.name, alpha.bundle.name)
        )
    if phi.bundle.density == alpha.bundle.density:
        raise ValueError(
            "bundles %s and %s are not dual (both %s)"
            % (phi.bundle.name, alpha.bundle.name, "densities" if phi.bundle.density else "fields")
        )
    if np.isnan(phi.values).any() or np.isnan(alpha.values).any():
        raise ValueError("NaN in pairing input")
    return phi.lattice.volume_weight * float(np.dot(phi.flat(), alpha.flat()))


def zero_section(lattice, bundle, support_class="interior"):
    return LatticeSection(
        lattice, bundle, np.zeros(lattice.shape + (bundle.rank,)), support_class
    )


def delta_section(lattice, bundle, cell, component=0, value=1.0, support_class="all"):
    """Section vanishing everywhere except one component at one cell."""
    values = np.zeros(lattice.shape + (bundle.rank,))
    values[tuple(cell) + (component,)] = value
    return LatticeSection(lattice, bundle, values, support_class)


def random_section(lattice, bundle, support_class="interior", seed=0, cutoff=None):
    """Deterministic pseudorandom section respecting the support class.

    For "retarded" ("advanced") support the values vanish strictly below
    (above) the cutoff time slice; cutoff defaults to the middle slice.
    Equal seeds give bit-identical sections.
    """
    rng = np.random.default_rng(seed)
    values = rng.standard_normal(lattice.shape + (bundle.rank,))
    m = lattice.interior_margin
    if support_class == "interior":
        if lattice.n_time < 2 * m + 1:
            raise ValueError("margin leaves no interior time slices")
        if m > 0:
            values[:m] = 0.0
            values[-m:] = 0.0
    elif support_class in ("retarded", "advanced"):
        t0 = lattice.n_time // 2 if cutoff is None else int(cutoff)
        if not 0 <= t0 < lattice.n_time:
            raise ValueError("cutoff slice %d outside the slab" % t0)
        if support_class == "retarded":
            values[:t0] = 0.0
        else:
            values[t0 + 1 :] = 0.0
    elif support_class != "all":
        raise ValueError("unknown support class %r" % (support_class,))
    return LatticeSection(lattice, bundle, values, support_class)
