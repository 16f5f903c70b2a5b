"""Graph surfaces, their induced metric, and geodesic-flow density bundles.

A curve on the graph M = {(z1, z2, phi(z))} evolving by geodesic curvature
flow is equivalent to a weighted anisotropic flow in the parameter plane with

    gamma(z, p) = sqrt(G(z)^{-1} p . p),   a(z) = sqrt(det G(z)),
    G(z) = Id + grad(phi)(z) (x) grad(phi)(z),

for which the quadratic energy density takes the closed form
Phi(z, p) = 1/2 G(z) p . p.
"""

from __future__ import annotations

import numpy as np

from .anisotropy import make_density, _outer
from .density import DensityBundle

_EYE2 = np.eye(2)

# psi(s) = exp(-1/(1-s)) underflows long before 1/(1-s) reaches the double
# exponent range; cut off there so no intermediate overflows.
_EXP_CUTOFF = 700.0


def bump(s):
    """Compactly supported bump psi(s) = exp(-1/(1-s)) for s < 1, else 0."""
    s = np.asarray(s, dtype=float)
    val = np.zeros_like(s)
    inside = 1.0 - s > 1.0 / _EXP_CUTOFF
    u = 1.0 / (1.0 - np.where(inside, s, 0.0))
    val = np.where(inside, np.exp(-u), 0.0)
    return val


def bump_derivatives(s):
    """(psi, psi', psi'') with psi' = -psi/(1-s)^2, evaluated safely across s = 1."""
    s = np.asarray(s, dtype=float)
    inside = 1.0 - s > 1.0 / _EXP_CUTOFF
    sm = np.where(inside, s, 0.0)
    r = 1.0 / (1.0 - sm)
    psi = np.where(inside, np.exp(-r), 0.0)
    d1 = np.where(inside, -psi * r ** 2, 0.0)
    d2 = np.where(inside, psi * (r ** 4 - 2.0 * r ** 3), 0.0)
    return psi, d1, d2


class GraphSurface:
    """Surface z -> (z1, z2, phi(z)) given by a C^3 height function.

    `value`, `gradient`, `hessian` are vectorized callables on (..., 2) arrays.
    A small content-addressed memo covers the solver's access pattern, which
    evaluates the same node arrays many times per step; callers must treat
    the returned arrays as read-only.
    """

    _CACHE_SIZE = 16

    def __init__(self, value, gradient, hessian):
        self._value = value
        self._gradient = gradient
        self._hessian = hessian
        self._cache = {}
        self._cache_order = []

    def _evaluate_impl(self, z):
        return self._value(z), self._gradient(z), self._hessian(z)

    def evaluate(self, z):
        """Return (phi(z), grad phi(z), Hess phi(z))."""
        z = np.asarray(z, dtype=float)
        key = (z.shape, z.tobytes())
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        out = self._evaluate_impl(z)
        self._cache[key] = out
        self._cache_order.append(key)
        if len(self._cache_order) > self._CACHE_SIZE:
            self._cache.pop(self._cache_order.pop(0), None)
        return out

    def value(self, z):
        return self._value(np.asarray(z, dtype=float))


class FlatSurface(GraphSurface):
    """phi identically zero; the induced flow is the isotropic one."""

    def __init__(self):
        super().__init__(
            lambda z: np.zeros(z.shape[:-1]),
            lambda z: np.zeros(z.shape),
            lambda z: np.zeros(z.shape + (2,)),
        )


class MountainSurface(GraphSurface):
    """Three-bump test surface phi(z) = sum_i lambda_i psi(2 |z - mu_i|^2).

    Bumps of heights (1, 3, 4)/e sit at mu_1 = (0,0), mu_2 = (2,0),
    mu_3 = (1, sqrt(3)); their supports (radius 1/sqrt(2)) are disjoint.
    """

    CENTERS = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, np.sqrt(3.0)]])
    AMPLITUDES = np.array([1.0, 3.0, 4.0])

    def __init__(self):
        super().__init__(self._phi, self._grad, self._hess)

    @classmethod
    def _eval(cls, z):
        z = np.asarray(z, dtype=float)
        d = z[..., None, :] - cls.CENTERS          # (..., 3, 2)
        s = 2.0 * (d[..., 0] ** 2 + d[..., 1] ** 2)
        psi, d1, d2 = bump_derivatives(s)
        lam = cls.AMPLITUDES
        val = (lam * psi).sum(axis=-1)
        grad = ((4.0 * lam * d1)[..., None] * d).sum(axis=-2)
        hess = ((16.0 * lam * d2)[..., None, None] * _outer(d, d)).sum(axis=-3)
        trace = (4.0 * lam * d1).sum(axis=-1)
        hess[..., 0, 0] += trace
        hess[..., 1, 1] += trace
        return val, grad, hess

    @classmethod
    def _phi(cls, z):
        return cls._eval(z)[0]

    @classmethod
    def _grad(cls, z):
        return cls._eval(z)[1]

    @classmethod
    def _hess(cls, z):
        return cls._eval(z)[2]

    def _evaluate_impl(self, z):
        return self._eval(z)


def mountain_phi(z):
    """Height, gradient, and Hessian of the three-mountain surface at z."""
    return MountainSurface._eval(np.asarray(z, dtype=float))


def metric(surface, z):
    """Induced metric G(z) = Id + grad(phi) (x) grad(phi) and weight sqrt(det G)."""
    z = np.asarray(z, dtype=float)
    _, g, _ = surface.evaluate(z)
    G = np.broadcast_to(_EYE2, g.shape + (2,)).copy()
    G += _outer(g, g)
    a = np.sqrt(1.0 + g[..., 0] ** 2 + g[..., 1] ** 2)
    return G, a


def geodesic_bundle(surface, c_phi=0.0):
    """Density bundle for geodesic curvature flow on a graph surface.

    The convex/concave split shifts the implicit part by
    Phi^+ = Phi + (c_phi/2) |z|^2 |p|^2; `c_phi = 0` keeps Phi^+ = Phi,
    which is the practical choice observed to dissipate energy.
    """
    if c_phi < 0.0:
        raise ValueError("c_phi must be nonnegative")
    density = make_density("metric_induced", surface=surface,
                           weight="metric_determinant")
    return DensityBundle(density, split_mode="graph_shift", c_phi=c_phi)


def lift(curve, surface):
    """Lift curve nodes onto the surface: per node (X_j, phi(X_j))."""
    x = curve.x
    out = np.empty((x.shape[0], 3))
    out[:, :2] = x
    out[:, 2] = surface.value(x)
    return out
