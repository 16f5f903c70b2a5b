"""Derived flow calculus: Phi, its gradients, the convex/concave split, and H.

For a density with weight a and anisotropy gamma the quadratic energy density

    Phi(z, p) = 1/2 a(z)^2 gamma(z, p^perp)^2

drives the evolution.  Its p-gradient is assembled by the chain rule through
the perpendicular map (using (p^perp)^perp = -p):

    Phi_p(z, p) = -a(z)^2 gamma(z, q) (gamma_p(z, q))^perp,   q = p^perp,

and the mobility matrix is

    H(z, p) = a^2 gamma(z, q) / |gamma_p(z, q)|^2 * [[gamma(z, q),  gamma_p . p],
                                                     [-gamma_p . p, gamma(z, q)]],

whose quadratic form is H xi . xi = (a^2 gamma^2 / |gamma_p|^2) |xi|^2.

The split Phi = Phi^+ + Phi^- separates the z-dependence into a part treated
implicitly (Phi^+, convex in z) and one treated explicitly (-Phi^- convex).
Spatially homogeneous densities use Phi^- = 0; metric-induced densities use
the quadratic shift Phi^+ = Phi + (c_phi/2) |z|^2 |p|^2.  No computable rule
for c_phi exists, so it stays configurable and `midpoint_convexity_report`
lets callers measure sampled violations for their choice.
"""

from __future__ import annotations

import numpy as np

from .anisotropy import AnisotropyDensity, perp, vec_norm, _outer
from .errors import ConfigurationError, DegenerateDirectionError

_EYE2 = np.eye(2)
_FD_Z_STEP = 1e-6

_PARTS = ("full", "plus", "minus")


class DensityBundle:
    """Immutable evaluator bundle for Phi, its gradients, the split, and H."""

    def __init__(self, base: AnisotropyDensity, split_mode=None, c_phi=0.0,
                 user_split=None, validation_samples=256, rng_seed=0):
        self.base = base
        self.c_phi = float(c_phi)
        self.has_graph_form = (base.kind == "metric_induced"
                               and base.weight_kind == "metric_determinant")
        if split_mode is None:
            split_mode = "graph_shift" if self.has_graph_form else "homogeneous"
        if split_mode == "graph_shift" and not self.has_graph_form:
            raise ConfigurationError(
                "graph_shift split needs a metric-induced density with its "
                "determinant weight")
        if split_mode == "user":
            if user_split is None:
                raise ConfigurationError("split_mode='user' needs user_split=(plus_z, minus_z)")
            self._user_plus_z, self._user_minus_z = user_split
            self._validate_user_split(validation_samples, rng_seed)
        elif split_mode not in ("homogeneous", "graph_shift"):
            raise ConfigurationError(f"unknown split_mode {split_mode!r}")
        self.split_mode = split_mode

    @property
    def spatially_homogeneous(self):
        return self.base.spatially_homogeneous

    @property
    def has_analytic_jacobian(self):
        """True when all second derivatives needed by a Newton solver exist."""
        return self.spatially_homogeneous or (
            self.has_graph_form and self.split_mode == "graph_shift")

    def _validate_user_split(self, n, seed):
        rng = np.random.default_rng(seed)
        z = rng.uniform(-2.0, 2.0, size=(n, 2))
        p = rng.uniform(-2.0, 2.0, size=(n, 2))
        total = self._user_plus_z(z, p) + self._user_minus_z(z, p)
        full = self.phi_z(z, p, part="full", _skip_user=True)
        scale = 1.0 + np.abs(full).max()
        err = np.abs(total - full).max()
        if err > 1e-8 * scale:
            raise ConfigurationError(
                f"user split violates Phi_z^+ + Phi_z^- = Phi_z (max error {err:.3e})")

    # -- Phi and derivatives ------------------------------------------------

    def phi(self, z, p):
        """Phi(z, p) = 1/2 a^2 gamma(z, p^perp)^2; nonnegative, 2-homogeneous in p."""
        z = np.asarray(z, float)
        p = np.asarray(p, float)
        a, _ = self.base.weight(z)
        g = self.base.gamma(z, perp(p))
        return 0.5 * a * a * g * g

    def phi_part(self, z, p, part):
        """Value of Phi (full) or of the split parts Phi^+ / Phi^-."""
        if part not in _PARTS:
            raise ValueError(f"part must be one of {_PARTS}")
        z = np.asarray(z, float)
        p = np.asarray(p, float)
        if part == "full":
            return self.phi(z, p)
        if self.split_mode == "user":
            raise ConfigurationError("user splits supply gradients only, not values")
        if self.split_mode == "homogeneous":
            return self.phi(z, p) if part == "plus" else np.zeros(
                np.broadcast(z[..., 0], p[..., 0]).shape)
        shift = 0.5 * self.c_phi * (z[..., 0] ** 2 + z[..., 1] ** 2) * (
            p[..., 0] ** 2 + p[..., 1] ** 2)
        if part == "plus":
            return self.phi(z, p) + shift
        return -shift

    def phi_p(self, z, p):
        """Gradient of p -> Phi(z, p); 1-homogeneous, Phi_p . p = 2 Phi.

        Defined as 0 at p = 0 (unlike gamma_p, which is singular there).
        """
        z = np.asarray(z, float)
        p = np.asarray(p, float)
        kind = self.base.kind
        if kind == "isotropic" and self.base.weight_kind == "unit":
            return p.copy()
        if kind == "elliptic" and self.base.weight_kind == "unit":
            d2 = self.base.params["delta"] ** 2
            out = np.empty_like(p)
            out[..., 0] = d2 * p[..., 0]
            out[..., 1] = p[..., 1]
            return out
        if self.has_graph_form:
            G = self._metric_matrix(z)
            return np.einsum("...ij,...j->...i", G, p)
        n = vec_norm(p)
        degenerate = n == 0.0
        safe_p = np.where(degenerate[..., None], [1.0, 0.0], p)
        q = perp(safe_p)
        a, _ = self.base.weight(z)
        g = self.base._gamma(z, q)
        gp = self.base._gamma_p(z, q)
        out = -(a * a * g)[..., None] * perp(gp)
        return np.where(degenerate[..., None], 0.0, out)

    def phi_pp(self, z, p):
        """Hessian of p -> Phi(z, p); 0-homogeneous, undefined at p = 0."""
        z = np.asarray(z, float)
        p = np.asarray(p, float)
        kind = self.base.kind
        if kind == "isotropic" and self.base.weight_kind == "unit":
            return np.broadcast_to(_EYE2, p.shape + (2,)).copy()
        if kind == "elliptic" and self.base.weight_kind == "unit":
            d2 = self.base.params["delta"] ** 2
            out = np.zeros(p.shape + (2,))
            out[..., 0, 0] = d2
            out[..., 1, 1] = 1.0
            return out
        if self.has_graph_form:
            return self._metric_matrix(z) + np.zeros(p.shape + (2,))
        if np.any(vec_norm(p) == 0.0):
            raise DegenerateDirectionError("Phi_pp requested at p = 0")
        q = perp(p)
        a, _ = self.base.weight(z)
        g = self.base._gamma(z, q)
        gp = self.base._gamma_p(z, q)
        gpp = self.base._gamma_pp(z, q)
        A = _outer(gp, gp) + g[..., None, None] * gpp
        # congruence by the rotation R p = p^perp: Phi_pp = a^2 R^T A R
        out = np.empty_like(A)
        out[..., 0, 0] = A[..., 1, 1]
        out[..., 0, 1] = -A[..., 1, 0]
        out[..., 1, 0] = -A[..., 0, 1]
        out[..., 1, 1] = A[..., 0, 0]
        return (a * a)[..., None, None] * out

    def _metric_matrix(self, z):
        _, g, _ = self.base.surface.evaluate(z)
        G = np.broadcast_to(_EYE2, g.shape + (2,)).copy()
        G += _outer(g, g)
        return G

    def phi_z(self, z, p, part="full", _skip_user=False):
        """Gradient of z -> Phi^{part}(z, p); the parts sum to the full gradient."""
        if part not in _PARTS:
            raise ValueError(f"part must be one of {_PARTS}")
        z = np.asarray(z, float)
        p = np.asarray(p, float)
        shape = np.broadcast(z[..., 0], p[..., 0]).shape + (2,)
        if self.split_mode == "user" and part != "full" and not _skip_user:
            fn = self._user_plus_z if part == "plus" else self._user_minus_z
            return np.asarray(fn(z, p), float)
        if self.spatially_homogeneous:
            return np.zeros(shape)
        if self.has_graph_form:
            # Phi = 1/2 G(z) p . p gives Phi_z = (grad_phi . p) Hess_phi p
            if part == "minus" and self.c_phi == 0.0:
                return np.zeros(shape)
            shift = None
            if self.c_phi != 0.0 and part != "full":
                p2 = p[..., 0] ** 2 + p[..., 1] ** 2
                shift = self.c_phi * p2[..., None] * z
            if part == "minus":
                return -shift
            _, g, hess = self.base.surface.evaluate(z)
            gp = g[..., 0] * p[..., 0] + g[..., 1] * p[..., 1]
            full = gp[..., None] * np.einsum("...ij,...j->...i", hess, p)
            if part == "plus" and shift is not None:
                return full + shift
            return full
        # generic chain rule: Phi_z = a grad_a gamma^2 + a^2 gamma gamma_z at p^perp
        q = perp(p)
        a, grad_a = self.base.weight(z)
        g = self.base.gamma(z, q)
        gz = self.base.gamma_z(z, q)
        full = (a * g * g)[..., None] * grad_a + (a * a * g)[..., None] * gz
        if part == "full" or part == "plus":
            return full
        return np.zeros(shape)

    def phi_zp(self, z, p, part="full"):
        """Mixed second derivative d^2 Phi^{part} / dz dp (rows: z, cols: p)."""
        if part not in _PARTS:
            raise ValueError(f"part must be one of {_PARTS}")
        z = np.asarray(z, float)
        p = np.asarray(p, float)
        shape = np.broadcast(z[..., 0], p[..., 0]).shape + (2, 2)
        if self.spatially_homogeneous:
            return np.zeros(shape)
        if not self.has_graph_form:
            raise NotImplementedError(
                "analytic z-p cross derivatives exist only for graph metrics")
        shift = None
        if self.c_phi != 0.0 and part != "full":
            shift = 2.0 * self.c_phi * _outer(z, p)
        if part == "minus":
            return -shift if shift is not None else np.zeros(shape)
        _, g, hess = self.base.surface.evaluate(z)
        gp = g[..., 0] * p[..., 0] + g[..., 1] * p[..., 1]
        hp = np.einsum("...ij,...j->...i", hess, p)
        full = _outer(hp, g) + gp[..., None, None] * hess
        if part == "plus" and shift is not None:
            return full + shift
        return full

    def phi_zz_plus(self, z, p):
        """z-Hessian of Phi^+; finite differences of the analytic Phi_z^+.

        The graph form would need third surface derivatives, which the
        surface contract does not provide; a symmetrized central difference
        of the exact gradient is accurate to O(step^2).
        """
        z = np.asarray(z, float)
        p = np.asarray(p, float)
        if self.spatially_homogeneous:
            return np.zeros(np.broadcast(z[..., 0], p[..., 0]).shape + (2, 2))
        if not self.has_graph_form:
            raise NotImplementedError(
                "analytic z-Hessians exist only for graph metrics")
        out = np.empty(np.broadcast(z[..., 0], p[..., 0]).shape + (2, 2))
        for i in range(2):
            dz = np.zeros(2)
            dz[i] = _FD_Z_STEP
            hi = self.phi_z(z + dz, p, "plus")
            lo = self.phi_z(z - dz, p, "plus")
            out[..., i, :] = (hi - lo) / (2.0 * _FD_Z_STEP)
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    # -- mobility -----------------------------------------------------------

    def h_matrix(self, z, p):
        """Mobility matrix H(z, p); positive definite, undefined at p = 0."""
        z = np.asarray(z, float)
        p = np.asarray(p, float)
        if np.any(vec_norm(p) == 0.0):
            raise DegenerateDirectionError("H requested at p = 0")
        q = perp(p)
        a, _ = self.base.weight(z)
        g = self.base._gamma(z, q)
        gp = self.base._gamma_p(z, q)
        cross = gp[..., 0] * p[..., 0] + gp[..., 1] * p[..., 1]
        scale = a * a * g / (gp[..., 0] ** 2 + gp[..., 1] ** 2)
        H = np.empty(p.shape + (2,))
        H[..., 0, 0] = scale * g
        H[..., 1, 1] = scale * g
        H[..., 0, 1] = scale * cross
        H[..., 1, 0] = -scale * cross
        return H

    def monotonicity_probe(self, z, p, q):
        """(Phi_p(z, q) - Phi_p(z, p)) . (q - p); nonnegative by convexity."""
        d = self.phi_p(z, q) - self.phi_p(z, p)
        e = np.asarray(q, float) - np.asarray(p, float)
        return d[..., 0] * e[..., 0] + d[..., 1] * e[..., 1]


def midpoint_convexity_report(bundle, n_samples=1000, seed=0,
                              z_box=((-1.0, 3.0), (-1.0, 3.0)), p_scale=2.0,
                              tol=1e-12):
    """Sampled midpoint-convexity check of z -> Phi^+ and z -> -Phi^-.

    Returns a dict with violation counts and the worst defect for each part.
    A positive count for a graph bundle signals that its c_phi is too small
    for provable energy stability (the flow may still dissipate in practice).
    """
    rng = np.random.default_rng(seed)
    (x0, x1), (y0, y1) = z_box
    za = np.stack([rng.uniform(x0, x1, n_samples), rng.uniform(y0, y1, n_samples)], -1)
    zb = np.stack([rng.uniform(x0, x1, n_samples), rng.uniform(y0, y1, n_samples)], -1)
    p = rng.uniform(-p_scale, p_scale, size=(n_samples, 2))
    zm = 0.5 * (za + zb)
    report = {}
    for part, sign in (("plus", 1.0), ("minus", -1.0)):
        fa = sign * bundle.phi_part(za, p, part)
        fb = sign * bundle.phi_part(zb, p, part)
        fm = sign * bundle.phi_part(zm, p, part)
        defect = fm - 0.5 * (fa + fb)
        slack = tol * (1.0 + np.abs(fa) + np.abs(fb))
        report[f"violations_{part}"] = int(np.sum(defect > slack))
        report[f"max_defect_{part}"] = float(defect.max(initial=0.0))
    return report
