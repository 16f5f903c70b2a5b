"""Anisotropy functions gamma(z, p) and spatial weights a(z).

A density bundles vectorized evaluators for gamma, its p- and z-gradients,
the p-Hessian, and the weight a(z) with gradient.  Evaluators accept arrays
of shape (..., 2) for z and p, broadcast over leading axes, and are pure;
densities are immutable after construction and safe to share across threads.

Built-in kinds::

    isotropic        gamma(z, p) = |p|
    kfold            gamma(z, p) = |p| (1 + delta cos(k theta(p)))
    elliptic         gamma(z, p) = sqrt(p1^2 + delta^2 p2^2)
    metric_induced   gamma(z, p) = sqrt(G(z)^{-1} p . p),
                     G(z) = Id + grad(phi)(z) (x) grad(phi)(z) for a graph surface

Every built-in gamma is absolutely 1-homogeneous, gamma(z, s p) = |s| gamma(z, p),
positive for p != 0, and satisfies the Euler relation gamma_p(z, p) . p = gamma(z, p).
The kfold family is strictly convex (in the Frank-diagram sense) only when
|delta| (k^2 - 1) < 1, which construction enforces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DegenerateDirectionError

_EYE2 = np.eye(2)


def perp(p):
    """Rotate vectors by +pi/2: (p1, p2) -> (-p2, p1)."""
    p = np.asarray(p, dtype=float)
    out = np.empty_like(p)
    out[..., 0] = -p[..., 1]
    out[..., 1] = p[..., 0]
    return out


def vec_norm(p):
    """Euclidean norm over the trailing length-2 axis."""
    p = np.asarray(p, dtype=float)
    return np.sqrt(p[..., 0] ** 2 + p[..., 1] ** 2)


def _outer(u, v):
    return u[..., :, None] * v[..., None, :]


def _check_nonzero(p):
    if np.any(vec_norm(p) == 0.0):
        raise DegenerateDirectionError("gradient of gamma requested at p = 0")


@dataclass(frozen=True)
class AnisotropyDensity:
    """Evaluator bundle for gamma, its gradients, and the weight a(z)."""

    kind: str
    params: dict
    weight_kind: str
    spatially_homogeneous: bool
    surface: object = field(default=None, repr=False)
    _gamma: Callable = field(default=None, repr=False)
    _gamma_p: Callable = field(default=None, repr=False)
    _gamma_z: Callable = field(default=None, repr=False)
    _gamma_pp: Callable = field(default=None, repr=False)
    _weight: Callable = field(default=None, repr=False)

    def gamma(self, z, p):
        """gamma(z, p); returns 0 at p = 0 by continuity."""
        return self._gamma(np.asarray(z, float), np.asarray(p, float))

    def gamma_p(self, z, p):
        """Gradient of p -> gamma(z, p).  Raises for p = 0."""
        p = np.asarray(p, float)
        _check_nonzero(p)
        return self._gamma_p(np.asarray(z, float), p)

    def gamma_z(self, z, p):
        """Gradient of z -> gamma(z, p); zero for spatially homogeneous kinds."""
        return self._gamma_z(np.asarray(z, float), np.asarray(p, float))

    def gamma_pp(self, z, p):
        """Hessian of p -> gamma(z, p).  Raises for p = 0."""
        p = np.asarray(p, float)
        _check_nonzero(p)
        return self._gamma_pp(np.asarray(z, float), p)

    def weight(self, z):
        """Weight a(z) > 0 and its gradient, as a pair (a, grad_a)."""
        return self._weight(np.asarray(z, float))


# evaluator factories, one set per kind

def _isotropic_evaluators():
    def gamma(z, p):
        return vec_norm(p)

    def gamma_p(z, p):
        return p / vec_norm(p)[..., None]

    def gamma_z(z, p):
        return np.zeros(np.broadcast(z[..., 0], p[..., 0]).shape + (2,))

    def gamma_pp(z, p):
        n = vec_norm(p)
        ph = p / n[..., None]
        return (_EYE2 - _outer(ph, ph)) / n[..., None, None]

    return gamma, gamma_p, gamma_z, gamma_pp


def _kfold_evaluators(k, delta):
    def _polar(p):
        r = vec_norm(p)
        theta = np.arctan2(p[..., 1], p[..., 0])
        return r, theta

    def gamma(z, p):
        r, theta = _polar(p)
        return r * (1.0 + delta * np.cos(k * theta))

    def gamma_p(z, p):
        # gamma = r g(theta) with g = 1 + delta cos(k theta):
        # gamma_p = g p/|p| + g' p^perp/|p|, g' = -k delta sin(k theta)
        r, theta = _polar(p)
        g = 1.0 + delta * np.cos(k * theta)
        gp = -k * delta * np.sin(k * theta)
        return (g[..., None] * p + gp[..., None] * perp(p)) / r[..., None]

    def gamma_z(z, p):
        return np.zeros(np.broadcast(z[..., 0], p[..., 0]).shape + (2,))

    def gamma_pp(z, p):
        # Hessian of a 1-homogeneous function: ((g + g'')/r) t (x) t, t = p^perp/|p|
        r, theta = _polar(p)
        coeff = (1.0 - delta * (k * k - 1.0) * np.cos(k * theta)) / r
        t = perp(p) / r[..., None]
        return coeff[..., None, None] * _outer(t, t)

    return gamma, gamma_p, gamma_z, gamma_pp


def _elliptic_evaluators(delta):
    d2 = delta * delta

    def _scaled(p):
        out = np.empty_like(p)
        out[..., 0] = p[..., 0]
        out[..., 1] = d2 * p[..., 1]
        return out

    def gamma(z, p):
        return np.sqrt(p[..., 0] ** 2 + d2 * p[..., 1] ** 2)

    def gamma_p(z, p):
        return _scaled(p) / gamma(z, p)[..., None]

    def gamma_z(z, p):
        return np.zeros(np.broadcast(z[..., 0], p[..., 0]).shape + (2,))

    def gamma_pp(z, p):
        g = gamma(z, p)
        dp = _scaled(p)
        diag = np.zeros(p.shape + (2,))
        diag[..., 0, 0] = 1.0
        diag[..., 1, 1] = d2
        return diag / g[..., None, None] - _outer(dp, dp) / (g ** 3)[..., None, None]

    return gamma, gamma_p, gamma_z, gamma_pp


def metric_inverse(grad_phi):
    """Inverse of G = Id + g (x) g via Sherman-Morrison; exact when g = 0."""
    g2 = grad_phi[..., 0] ** 2 + grad_phi[..., 1] ** 2
    det = 1.0 + g2
    ginv = np.broadcast_to(_EYE2, grad_phi.shape + (2,)).copy()
    ginv -= _outer(grad_phi, grad_phi) / det[..., None, None]
    return ginv, det


def _metric_evaluators(surface):
    def _parts(z, p):
        _, g, hess = surface.evaluate(z)
        ginv, _ = metric_inverse(g)
        w = np.einsum("...ij,...j->...i", ginv, p)
        quad = w[..., 0] * p[..., 0] + w[..., 1] * p[..., 1]
        return g, hess, ginv, w, np.sqrt(quad)

    def gamma(z, p):
        _, _, _, _, val = _parts(z, p)
        return val

    def gamma_p(z, p):
        _, _, _, w, val = _parts(z, p)
        return w / val[..., None]

    def gamma_z(z, p):
        # d/dz sqrt(G^{-1} p . p) = -(grad_phi . w) (Hess_phi w) / gamma,  w = G^{-1} p
        g, hess, _, w, val = _parts(z, p)
        gw = g[..., 0] * w[..., 0] + g[..., 1] * w[..., 1]
        hw = np.einsum("...ij,...j->...i", hess, w)
        return -(gw / val)[..., None] * hw

    def gamma_pp(z, p):
        _, _, ginv, w, val = _parts(z, p)
        return ginv / val[..., None, None] - _outer(w, w) / (val ** 3)[..., None, None]

    return gamma, gamma_p, gamma_z, gamma_pp


def _unit_weight():
    def weight(z):
        shape = z.shape[:-1]
        return np.ones(shape), np.zeros(shape + (2,))

    return weight


def _metric_determinant_weight(surface):
    def weight(z):
        # a = sqrt(det G) = sqrt(1 + |grad phi|^2),  grad a = Hess_phi grad_phi / a
        _, g, hess = surface.evaluate(z)
        a = np.sqrt(1.0 + g[..., 0] ** 2 + g[..., 1] ** 2)
        grad = np.einsum("...ij,...j->...i", hess, g) / a[..., None]
        return a, grad

    return weight


_HOMOGENEOUS_KINDS = ("isotropic", "kfold", "elliptic")


def make_density(kind, *, k=None, delta=None, surface=None, weight="unit",
                 weight_surface=None):
    """Build an :class:`AnisotropyDensity` of the given kind.

    Parameters
    ----------
    kind : str
        One of ``isotropic``, ``kfold``, ``elliptic``, ``metric_induced``.
    k, delta :
        kfold parameters (k a positive integer).  Construction rejects
        parameters with ``|delta| (k^2 - 1) >= 1``, the sufficient condition
        for strict convexity.  ``elliptic`` takes ``delta > 0`` (default 0.5).
    surface :
        Graph surface handle for ``metric_induced`` (needs an ``evaluate(z)``
        method returning (phi, grad, hessian)).
    weight : str or callable
        ``unit``, ``metric_determinant`` (uses ``weight_surface``, defaulting
        to ``surface``), or a callable ``z -> (a, grad_a)``.
    """
    params = {}
    if kind == "isotropic":
        evals = _isotropic_evaluators()
    elif kind == "kfold":
        if k is None or delta is None:
            raise ConfigurationError("kfold density needs parameters k and delta")
        k = int(k)
        if k <= 0:
            raise ConfigurationError("kfold density needs a positive integer k")
        guard = abs(delta) * (k * k - 1)
        if not guard < 1.0:
            raise ConfigurationError(
                "kfold convexity guard violated: |delta|*(k^2-1) = "
                f"{abs(delta)}*{k * k - 1} = {guard} >= 1"
            )
        params = {"k": k, "delta": float(delta)}
        evals = _kfold_evaluators(k, float(delta))
    elif kind == "elliptic":
        delta = 0.5 if delta is None else float(delta)
        if not delta > 0.0:
            raise ConfigurationError(f"elliptic density needs delta > 0, got {delta}")
        params = {"delta": delta}
        evals = _elliptic_evaluators(delta)
    elif kind == "metric_induced":
        if surface is None:
            raise ConfigurationError("metric_induced density needs a surface handle")
        params = {}
        evals = _metric_evaluators(surface)
        if weight == "unit":
            weight = "metric_determinant"
    else:
        raise ConfigurationError(f"unknown density kind {kind!r}")

    if callable(weight):
        weight_fn, weight_kind = weight, "user"
    elif weight == "unit":
        weight_fn, weight_kind = _unit_weight(), "unit"
    elif weight == "metric_determinant":
        wsurf = weight_surface if weight_surface is not None else surface
        if wsurf is None:
            raise ConfigurationError("metric_determinant weight needs a surface")
        weight_fn, weight_kind = _metric_determinant_weight(wsurf), "metric_determinant"
        if surface is None:
            surface = wsurf
    else:
        raise ConfigurationError(f"unknown weight {weight!r}")

    gamma, gamma_p, gamma_z, gamma_pp = evals
    return AnisotropyDensity(
        kind=kind,
        params=params,
        weight_kind=weight_kind,
        spatially_homogeneous=(kind in _HOMOGENEOUS_KINDS and weight_kind == "unit"),
        surface=surface,
        _gamma=gamma,
        _gamma_p=gamma_p,
        _gamma_z=gamma_z,
        _gamma_pp=gamma_pp,
        _weight=weight_fn,
    )
