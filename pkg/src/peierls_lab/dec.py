"""Cubical discrete exterior calculus on the spacetime lattice.

k-form components live on the k-cells spanned by a sorted tuple of
axes.  Coboundaries are pure incidence sums with integer +-1 weights,
so d.d = 0 holds exactly even with the stencil truncation at the time
boundary (the truncation removes cancelling pairs together).  The
Lorentzian metric (mostly plus, time axis 0) and the cell spacings
enter only through the diagonal Hodge weights, which map a k-form
bundle to its densitized dual.

With these conventions the componentwise wave operator
  wave_k = codifferential . d + d . codifferential
acts as (second time difference - spatial Laplacian) on every
component, which is what makes causal marching possible.
"""

from __future__ import annotations

import itertools

import numpy as np

from .lattice import BundleDescriptor
from .diffop import diagonal_operator, stencil_operator, zero_operator

_AXIS_NAMES = ("t", "x1", "x2", "x3", "x4")


def _axis_name(axis):
    return _AXIS_NAMES[axis] if axis < len(_AXIS_NAMES) else "x%d" % axis


def cell_label(axes):
    return "site" if not axes else "^".join(_axis_name(a) for a in axes)


def form_bundle(lattice, degree, name=None, density=False):
    """Bundle of k-forms: one component per sorted axis combination."""
    if not 0 <= degree <= lattice.ndim:
        raise ValueError("form degree %d out of range" % degree)
    components = tuple(
        (cell_label(axes), axes)
        for axes in itertools.combinations(range(lattice.ndim), degree)
    )
    if name is None:
        name = "Lambda^%d%s" % (degree, "~*" if density else "")
    return BundleDescriptor(name, components, density=density)


def coboundary(lattice, degree, name=None):
    """The discrete exterior derivative d: k-forms -> (k+1)-forms.

    Integer incidence matrix: the value on a (k+1)-cell sums its
    boundary k-faces with alternating signs.
    """
    domain = form_bundle(lattice, degree)
    codomain = form_bundle(lattice, degree + 1)
    source_index = {axes: i for i, (_, axes) in enumerate(domain.components)}
    terms = []
    for comp_out, (_, axes) in enumerate(codomain.components):
        for j, axis in enumerate(axes):
            face = tuple(a for a in axes if a != axis)
            comp_in = source_index[face]
            sign = float((-1) ** j)
            offset = tuple(1 if a == axis else 0 for a in range(lattice.ndim))
            terms.append((comp_out, comp_in, offset, sign))
            terms.append((comp_out, comp_in, (0,) * lattice.ndim, -sign))
    if name is None:
        name = "d%d" % degree
    return stencil_operator(lattice, domain, codomain, terms, name)


def hodge_weights(lattice, degree):
    """Diagonal metric weight per k-form component (mostly-plus signature)."""
    bundle = form_bundle(lattice, degree)
    weights = []
    for _, axes in bundle.components:
        value = lattice.volume_weight
        for a in axes:
            value /= lattice.spacing[a] ** 2
        if 0 in axes:
            value = -value
        weights.append(value)
    return np.array(weights)


def hodge(lattice, degree, name=None):
    """Diagonal map from k-forms to their densitized duals."""
    bundle = form_bundle(lattice, degree)
    if name is None:
        name = "H%d" % degree
    return diagonal_operator(
        lattice, bundle, bundle.dual(), hodge_weights(lattice, degree), name
    )


def hodge_inverse(lattice, degree, name=None):
    bundle = form_bundle(lattice, degree)
    if name is None:
        name = "H%d^-1" % degree
    return diagonal_operator(
        lattice, bundle.dual(), bundle, 1.0 / hodge_weights(lattice, degree), name
    )


def codifferential(lattice, degree, name=None):
    """The metric adjoint of d: (k+1)-forms -> k-forms.

    Built as hodge_inverse . d^T . hodge, so it is the exact adjoint of
    the coboundary under the natural pairing with the Hodge duals.
    """
    d = coboundary(lattice, degree)
    op = hodge_inverse(lattice, degree) @ d.adjoint() @ hodge(lattice, degree + 1)
    if name is None:
        name = "delta%d" % (degree + 1)
    return op.rename(name)


def wave_operator(lattice, degree, name=None):
    """Componentwise wave operator on k-forms.

    wave = delta d + d delta, with whichever term exists at the ends of
    the complex.  Acts as (time second difference - spatial Laplacian)
    on each component.
    """
    bundle = form_bundle(lattice, degree)
    parts = []
    if degree < lattice.ndim:
        parts.append(codifferential(lattice, degree) @ coboundary(lattice, degree))
    if degree > 0:
        parts.append(coboundary(lattice, degree - 1) @ codifferential(lattice, degree - 1))
    if not parts:
        op = zero_operator(lattice, bundle, bundle)
    else:
        op = parts[0]
        for extra in parts[1:]:
            op = op + extra
    if name is None:
        name = "wave%d" % degree
    return op.rename(name)
