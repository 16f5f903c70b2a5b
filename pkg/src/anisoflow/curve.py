"""Periodic piecewise linear curves, mass-lumped integration, discrete energy.

The parameter interval [0, 1] is split into J elements with nodes q_j; node
q_J is identified with q_0.  Nodes are stored 0-based: element e runs from
node e to node e+1 (mod J), its constant derivative is
d_e = (X_{e+1} - X_e) / h_e.  For a node i the left element is (i-1) mod J
and the right element is i; all cyclic index arithmetic lives here.

Piecewise fields with jumps at the nodes are represented by their one-sided
endpoint values per element, which is exactly what the mass-lumped inner
product consumes:

    (u, v)^h = 1/2 sum_e h_e [ (u.v)(right end of e) + (u.v)(left end of e) ].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .anisotropy import perp, vec_norm
from .errors import DegenerateEdgeError


@dataclass(frozen=True)
class PeriodicGrid:
    """Partition of the periodic parameter interval into J >= 3 elements."""

    J: int
    h: np.ndarray  # element lengths, shape (J,)
    q: np.ndarray  # node parameters, shape (J,), q_j = sum of previous h

    def __post_init__(self):
        if self.J < 3:
            raise ValueError("a periodic grid needs at least 3 elements")
        if np.any(self.h <= 0.0):
            raise ValueError("element lengths must be positive")
        if abs(self.h.sum() - 1.0) > 1e-12:
            raise ValueError("element lengths must sum to 1")

    @classmethod
    def uniform(cls, J):
        J = int(J)
        h = np.full(J, 1.0 / J)
        return cls(J=J, h=h, q=np.arange(J) / J)

    def h_left(self):
        """Length of the element left of each node: h_{(i-1) mod J}."""
        return np.roll(self.h, 1)

    def h_right(self):
        """Length of the element right of each node: h_i."""
        return self.h

    def node_weights(self):
        """Lumped weight per node, (h_left + h_right) / 2."""
        return 0.5 * (self.h_left() + self.h_right())


class ElementField(NamedTuple):
    """One-sided endpoint values of a piecewise field, per element.

    `left[e]` is the value at the left end of element e (limit from inside),
    `right[e]` at its right end.  Values may be scalar (J,) or vector (J, d).
    """

    left: np.ndarray
    right: np.ndarray

    @classmethod
    def from_nodal(cls, values):
        """Field of a continuous piecewise linear function with nodal `values`."""
        values = np.asarray(values, dtype=float)
        return cls(left=values, right=np.roll(values, -1, axis=0))

    @classmethod
    def constant(cls, value, J):
        arr = np.full(J, float(value))
        return cls(left=arr, right=arr)


def lumped_inner(u: ElementField, v: ElementField, grid: PeriodicGrid) -> float:
    """Mass-lumped L^2 inner product of two piecewise fields."""
    pr = u.right * v.right
    pl = u.left * v.left
    if pr.ndim > 1:
        pr = pr.sum(axis=-1)
        pl = pl.sum(axis=-1)
    return float(0.5 * np.dot(grid.h, pr + pl))


@dataclass(frozen=True)
class EdgeStats:
    """Element derivatives and mesh quality numbers of a polygonal curve."""

    derivatives: np.ndarray   # (J, 2)
    edge_lengths: np.ndarray  # (J,)
    ratio: float              # max/min edge length, inf if an edge collapsed
    min_edge: float


@dataclass(frozen=True)
class PolygonalCurve:
    """Closed polygonal curve: nodal positions on a periodic grid."""

    grid: PeriodicGrid
    x: np.ndarray  # (J, 2)

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.shape != (self.grid.J, 2):
            raise ValueError(f"nodes must have shape ({self.grid.J}, 2)")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    def with_nodes(self, x):
        return PolygonalCurve(self.grid, x)

    def edge_vectors(self):
        return np.roll(self.x, -1, axis=0) - self.x

    def edge_lengths(self):
        return vec_norm(self.edge_vectors())

    def derivatives(self):
        """Constant derivative per element, d_e = (X_{e+1} - X_e)/h_e."""
        return self.edge_vectors() / self.grid.h[:, None]

    def perimeter(self):
        return float(self.edge_lengths().sum())

    def stats(self) -> EdgeStats:
        return element_stats(self)


def element_stats(curve: PolygonalCurve) -> EdgeStats:
    """Derivatives, edge lengths, longest/shortest ratio, and minimum edge."""
    lengths = curve.edge_lengths()
    min_edge = float(lengths.min())
    ratio = float("inf") if min_edge == 0.0 else float(lengths.max() / min_edge)
    return EdgeStats(derivatives=curve.derivatives(), edge_lengths=lengths,
                     ratio=ratio, min_edge=min_edge)


def _require_valid_edges(curve, what):
    if np.any(curve.edge_lengths() == 0.0):
        raise DegenerateEdgeError(f"{what} needs a curve without collapsed edges")


def discrete_energy(curve: PolygonalCurve, bundle) -> float:
    """Lumped anisotropic length (gamma(x, x_rho^perp), a(x))^h.

    Reduces to the polygon perimeter for the isotropic unit-weight bundle.
    """
    _require_valid_edges(curve, "discrete_energy")
    d = curve.derivatives()
    q = perp(d)
    x_l = curve.x
    x_r = np.roll(curve.x, -1, axis=0)
    gamma_field = ElementField(left=bundle.base.gamma(x_l, q),
                               right=bundle.base.gamma(x_r, q))
    a_field = ElementField(left=bundle.base.weight(x_l)[0],
                           right=bundle.base.weight(x_r)[0])
    return lumped_inner(gamma_field, a_field, curve.grid)


def discrete_phi_energy(curve: PolygonalCurve, bundle) -> float:
    """Lumped quadratic energy (Phi(x, x_rho), 1)^h used by the stability estimate."""
    d = curve.derivatives()
    phi_field = ElementField(left=bundle.phi(curve.x, d),
                             right=bundle.phi(np.roll(curve.x, -1, axis=0), d))
    return lumped_inner(phi_field, ElementField.constant(1.0, curve.grid.J),
                        curve.grid)


def sample_initial(x0: Callable, grid: PeriodicGrid) -> PolygonalCurve:
    """Nodal interpolation X_j = x0(q_j) of a periodic parameterization."""
    x = np.asarray(x0(grid.q), dtype=float)
    if x.shape != (grid.J, 2):
        raise ValueError("initial curve map must return one point per node")
    curve = PolygonalCurve(grid, x)
    if np.any(curve.edge_lengths() == 0.0):
        raise DegenerateEdgeError("initial samples contain duplicate consecutive nodes")
    return curve


def circle_map(center=(0.0, 0.0), radius=1.0, clockwise=False):
    """Equidistributed parameterization of a circle (counterclockwise by default)."""
    cx, cy = float(center[0]), float(center[1])
    sign = -1.0 if clockwise else 1.0

    def x0(rho):
        rho = np.asarray(rho, dtype=float)
        angle = sign * 2.0 * np.pi * rho
        return np.stack([cx + radius * np.cos(angle),
                         cy + radius * np.sin(angle)], axis=-1)

    return x0


def mikula_map(clockwise=False):
    """Wavy nonconvex test curve

        x(rho) = ( cos(u), sin(u)/2 + sin(cos(u)) + sin(u) [1/5 + sin(u) sin^2(3u)] )

    with u = 2 pi rho.  As printed the loop runs counterclockwise; pass
    clockwise=True to reverse the traversal (the node set is unchanged, the
    discrete normals x_rho^perp flip from inward to outward).
    """

    def x0(rho):
        rho = np.asarray(rho, dtype=float)
        if clockwise:
            rho = (1.0 - rho) % 1.0
        u = 2.0 * np.pi * rho
        su, cu = np.sin(u), np.cos(u)
        s3 = np.sin(3.0 * u)
        y = 0.5 * su + np.sin(cu) + su * (0.2 + su * s3 * s3)
        return np.stack([cu, y], axis=-1)

    return x0


def regular_polygon(J, radius=1.0, center=(0.0, 0.0), clockwise=False):
    """Regular J-gon inscribed in the circle of the given radius."""
    return sample_initial(circle_map(center, radius, clockwise),
                          PeriodicGrid.uniform(J))


def is_convex(curve: PolygonalCurve) -> bool:
    """True when consecutive edge cross products all share one strict sign."""
    e = curve.edge_vectors()
    e_next = np.roll(e, -1, axis=0)
    cross = e[:, 0] * e_next[:, 1] - e[:, 1] * e_next[:, 0]
    return bool(np.all(cross > 0.0) or np.all(cross < 0.0))
