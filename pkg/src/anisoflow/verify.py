"""Independent oracles and convergence machinery.

Everything here double-checks the production code through a second route:
finite differences against claimed gradients, a hand-assembled isotropic
discretization of x_t = x_rho_rho / |x_rho|^2, the exact shrinking-circle
radius sqrt(R0^2 - 2t), experimental orders of convergence against nested
fine-grid references, and the Cahn-Hoffman boundary map of the limiting
shape.  None of it shares assembly code with the solver it checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .anisotropy import make_density, perp
from .curve import (ElementField, PeriodicGrid, PolygonalCurve, circle_map,
                    lumped_inner, sample_initial)
from .density import DensityBundle
from .errors import ConfigurationError
from .scheme import SchemeParams, run, solve_step


def fd_check(f, grad, samples, step=1e-6):
    """Max relative deviation of a claimed gradient from central differences.

    `f` maps a point (n,) to a scalar or vector; `grad` returns the claimed
    derivative with the input coordinate on the leading axis of the result.
    Returns max over samples of |fd - claimed| / (1 + |claimed|), norms taken
    over all components.
    """
    worst = 0.0
    for s in np.asarray(samples, dtype=float):
        claimed = np.asarray(grad(s), dtype=float)
        fd = np.empty_like(claimed)
        for i in range(s.size):
            e = np.zeros_like(s)
            e[i] = step
            fd[i] = (np.asarray(f(s + e), float) - np.asarray(f(s - e), float)) / (2 * step)
        err = np.abs(fd - claimed).max() / (1.0 + np.abs(claimed).max())
        worst = max(worst, float(err))
    return worst


def exact_circle_radius(t, r0=1.0):
    """Radius sqrt(r0^2 - 2 t) of the shrinking circle; errors past extinction."""
    if not t < 0.5 * r0 * r0:
        raise ValueError(f"t = {t} is at or beyond the extinction time {0.5 * r0 * r0}")
    return float(np.sqrt(r0 * r0 - 2.0 * t))


# -- independent isotropic discretization ------------------------------------

def isotropic_reference_residual(x_new, x_old, dt):
    """Backward Euler residual of x_t = x_rho_rho / |x_rho|^2, assembled by hand.

    Scalar lumped weights |d_old|^2 multiply the time difference; the second
    difference of the new nodes forms the stiffness part.  Plain loops on
    purpose: this is the oracle, not the production path.
    """
    Xn = np.asarray(x_new.x if isinstance(x_new, PolygonalCurve) else x_new, float)
    Xo = np.asarray(x_old.x if isinstance(x_old, PolygonalCurve) else x_old, float)
    grid = x_old.grid if isinstance(x_old, PolygonalCurve) else None
    J = Xo.shape[0]
    h = grid.h if grid is not None else np.full(J, 1.0 / J)
    R = np.zeros((J, 2))
    for i in range(J):
        im, ip = (i - 1) % J, (i + 1) % J
        hl, hr = h[im], h[i]
        dl_old = (Xo[i] - Xo[im]) / hl
        dr_old = (Xo[ip] - Xo[i]) / hr
        w = 0.5 * (hl * (dl_old @ dl_old) + hr * (dr_old @ dr_old))
        stiff = (Xn[i] - Xn[im]) / hl - (Xn[ip] - Xn[i]) / hr
        R[i] = w * (Xn[i] - Xo[i]) / dt + stiff
    return R


def isotropic_reference_step(x_old, dt):
    """One implicit step of the hand-assembled isotropic system (dense solve)."""
    Xo = x_old.x
    J = Xo.shape[0]
    h = x_old.grid.h
    A = np.zeros((2 * J, 2 * J))
    b = np.zeros(2 * J)
    for i in range(J):
        im, ip = (i - 1) % J, (i + 1) % J
        hl, hr = h[im], h[i]
        dl_old = (Xo[i] - Xo[im]) / hl
        dr_old = (Xo[ip] - Xo[i]) / hr
        w = 0.5 * (hl * (dl_old @ dl_old) + hr * (dr_old @ dr_old))
        for c in range(2):
            row = 2 * i + c
            A[row, 2 * i + c] += w / dt + 1.0 / hl + 1.0 / hr
            A[row, 2 * im + c] += -1.0 / hl
            A[row, 2 * ip + c] += -1.0 / hr
            b[row] = w * Xo[i, c] / dt
    return np.linalg.solve(A, b).reshape(J, 2)


def circle_tracking_error(J, dt, T, r0=1.0, center=(0.0, 0.0)):
    """Max nodal radius error against sqrt(r0^2 - 2t) over a full isotropic run."""
    bundle = DensityBundle(make_density("isotropic"))
    x0 = sample_initial(circle_map(center, r0), PeriodicGrid.uniform(J))
    worst = [0.0]
    c = np.asarray(center, float)

    def watch(step, t, curve, report):
        radii = np.sqrt(((curve.x - c) ** 2).sum(axis=1))
        worst[0] = max(worst[0], float(np.abs(radii - exact_circle_radius(t, r0)).max()))

    traj = run(x0, bundle, None, SchemeParams(dt=dt, T=T), observers=(watch,))
    if traj.stop_cause != "completed":
        raise RuntimeError(f"tracking run stopped early: {traj.stop_cause}")
    return worst[0]


# -- experimental order of convergence ----------------------------------------

@dataclass
class EocRecord:
    """Errors under mesh doubling and the derived convergence orders."""

    js: list
    errors: list            # combined (L2^2 + H1-seminorm^2)^(1/2) per J
    errors_l2: list
    errors_h1: list
    eoc: list = field(init=False)
    eoc_l2: list = field(init=False)
    eoc_h1: list = field(init=False)

    def __post_init__(self):
        js = list(self.js)
        if any(2 * a != b for a, b in zip(js, js[1:])):
            raise ValueError("grid sizes must double strictly")
        if any(not e > 0.0 for e in self.errors):
            raise ValueError("errors must be positive")
        self.eoc = [float(np.log2(a / b)) for a, b in zip(self.errors, self.errors[1:])]
        self.eoc_l2 = [float(np.log2(a / b))
                       for a, b in zip(self.errors_l2, self.errors_l2[1:])]
        self.eoc_h1 = [float(np.log2(a / b))
                       for a, b in zip(self.errors_h1, self.errors_h1[1:])]


@dataclass
class EocScenario:
    """Flow problem for a convergence study.

    `exact` (optional) maps (t, rho_nodes) to exact positions; without it a
    fine-grid reference run provides the comparison values, restricted to the
    coarse nodes (which are a subset whenever J divides J_ref).
    """

    bundle: DensityBundle
    initial_map: Callable
    T: float
    exact: Optional[Callable] = None
    ref_factor: int = 8
    ref_dt_divisor: int = 4
    newton_tol: float = 1e-10


def _error_norms(x_h, x_ref, grid):
    """Discrete L2 and H1-seminorm errors between nodal vectors on one grid."""
    diff = x_h - x_ref
    w = grid.node_weights()
    l2_sq = float((w * (diff ** 2).sum(axis=1)).sum())
    d_diff = (np.roll(diff, -1, axis=0) - diff) / grid.h[:, None]
    h1_sq = float((grid.h * (d_diff ** 2).sum(axis=1)).sum())
    return l2_sq, h1_sq


def _run_with_errors(J, dt, scenario, reference_at):
    """Run one resolution; track max-over-time L2/H1 errors vs the reference."""
    grid = PeriodicGrid.uniform(J)
    x0 = sample_initial(scenario.initial_map, grid)
    params = SchemeParams(dt=dt, T=scenario.T, newton_tol=scenario.newton_tol)
    worst = [0.0, 0.0, 0.0]

    def watch(step, t, curve, report):
        ref = reference_at(step, t, J)
        l2_sq, h1_sq = _error_norms(curve.x, ref, grid)
        worst[0] = max(worst[0], np.sqrt(l2_sq + h1_sq))
        worst[1] = max(worst[1], np.sqrt(l2_sq))
        worst[2] = max(worst[2], np.sqrt(h1_sq))

    traj = run(x0, scenario.bundle, None, params, observers=(watch,))
    if traj.stop_cause != "completed":
        raise RuntimeError(f"convergence run at J={J} stopped: {traj.stop_cause}")
    return worst


def eoc_study(scenario: EocScenario, j_list: Sequence[int], dt_rule=None):
    """Errors and orders for a doubling sequence of grids.

    dt_rule maps J to the time step (default 0.1 h^2, which subordinates the
    first-order time error to the spatial one).  With a fine-grid reference,
    its step divides every coarse step and its nodes contain every coarse
    node, so comparisons need no interpolation beyond nodal restriction.
    """
    j_list = [int(J) for J in j_list]
    if dt_rule is None:
        dt_rule = lambda J: 0.1 / (J * J)
    if scenario.exact is not None:
        def reference_at(step, t, J):
            return scenario.exact(t, PeriodicGrid.uniform(J).q)
    else:
        j_max = max(j_list)
        j_ref = scenario.ref_factor * j_max
        dt_ref = dt_rule(j_max) / scenario.ref_dt_divisor
        n_ref = int(round(scenario.T / dt_ref))
        if abs(n_ref * dt_ref - scenario.T) > 1e-9:
            raise ConfigurationError("reference step does not divide T")
        strides = {}
        for J in j_list:
            s = dt_rule(J) / dt_ref
            if abs(s - round(s)) > 1e-9:
                raise ConfigurationError(
                    f"dt({J}) is not a multiple of the reference step")
            strides[J] = int(round(s))
        base_stride = min(strides.values())
        keep = j_ref // j_max  # node subsampling of the reference

        grid_ref = PeriodicGrid.uniform(j_ref)
        x0_ref = sample_initial(scenario.initial_map, grid_ref)
        snaps = {0: x0_ref.x[::keep].copy()}

        def capture(step, t, curve, report):
            if step % base_stride == 0:
                snaps[step] = curve.x[::keep].copy()

        params_ref = SchemeParams(dt=dt_ref, T=scenario.T,
                                  newton_tol=scenario.newton_tol)
        traj = run(x0_ref, scenario.bundle, None, params_ref,
                   observers=(capture,))
        if traj.stop_cause != "completed":
            raise RuntimeError(f"reference run stopped: {traj.stop_cause}")

        def reference_at(step, t, J):
            snap = snaps[step * strides[J]]
            return snap[::j_max // J]

    errors, errors_l2, errors_h1 = [], [], []
    for J in j_list:
        tot, l2, h1 = _run_with_errors(J, dt_rule(J), scenario, reference_at)
        errors.append(tot)
        errors_l2.append(l2)
        errors_h1.append(h1)
    return EocRecord(js=j_list, errors=errors, errors_l2=errors_l2,
                     errors_h1=errors_h1)


# -- limiting shape ------------------------------------------------------------

def wulff_boundary(density, n_samples=360):
    """Boundary of the limiting shape: points gamma_p(n(theta)) on |n| = 1.

    Only defined for spatially homogeneous densities (the map is the
    gradient of gamma restricted to the unit circle, which for a smooth
    strictly convex gamma traces the boundary of its convex region).
    """
    if not density.spatially_homogeneous:
        raise ConfigurationError("the limiting-shape map needs a spatially "
                                 "homogeneous density")
    theta = 2.0 * np.pi * np.arange(n_samples) / n_samples
    n = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    z = np.zeros_like(n)
    return density.gamma_p(z, n)


def polyline_is_convex(points):
    """Turning-sign test: consecutive edge cross products share one sign."""
    e = np.roll(points, -1, axis=0) - points
    e_next = np.roll(e, -1, axis=0)
    cross = e[:, 0] * e_next[:, 1] - e[:, 1] * e_next[:, 0]
    return bool(np.all(cross > 0.0) or np.all(cross < 0.0))


# -- property suite (used by the CLI) ------------------------------------------

def _builtin_bundles():
    from .geodesic import MountainSurface, geodesic_bundle
    return {
        "isotropic": DensityBundle(make_density("isotropic")),
        "kfold": DensityBundle(make_density("kfold", k=6, delta=0.028)),
        "elliptic": DensityBundle(make_density("elliptic", delta=0.5)),
        "mountain": geodesic_bundle(MountainSurface()),
    }


def run_property_suite(seed=0, n_samples=1000):
    """Sampled identity and calculus checks over the built-in bundles.

    Returns a list of (name, passed, detail) triples; `anisoflow verify`
    prints them.  Thresholds match the library's contracts: 1e-12 for exact
    algebraic identities, 1e-6 relative for derivative checks at step 1e-6.
    """
    rng = np.random.default_rng(seed)
    results = []

    def record(name, passed, detail=""):
        results.append((name, bool(passed), detail))

    z = rng.uniform(-1.0, 3.0, size=(n_samples, 2))
    p = rng.uniform(-2.0, 2.0, size=(n_samples, 2))
    p[np.abs(p).sum(axis=1) < 1e-3] = (1.0, 0.5)
    lam = rng.uniform(-3.0, 3.0, size=n_samples)

    for name, bundle in _builtin_bundles().items():
        den = bundle.base
        g = den.gamma(z, p)
        hom = np.abs(den.gamma(z, lam[:, None] * p) - np.abs(lam) * g)
        record(f"{name}: homogeneity gamma(z, s p) = |s| gamma",
               np.all(hom <= 1e-12 * (1.0 + np.abs(g))), f"max {hom.max():.2e}")
        euler = np.abs((den.gamma_p(z, p) * p).sum(-1) - g)
        record(f"{name}: Euler relation gamma_p . p = gamma",
               np.all(euler <= 1e-12 * (1.0 + np.abs(g))), f"max {euler.max():.2e}")

        H = bundle.h_matrix(z, p)
        xi = rng.standard_normal((n_samples, 2))
        quad = np.einsum("ij,ijk,ik->i", xi, H, xi)
        q = perp(p)
        gp = den.gamma_p(z, q)
        a, _ = den.weight(z)
        expected = (a * den.gamma(z, q)) ** 2 / (gp ** 2).sum(-1) * (xi ** 2).sum(-1)
        err = np.abs(quad - expected) / (1.0 + np.abs(expected))
        record(f"{name}: H quadratic form identity", np.all(err <= 1e-12),
               f"max {err.max():.2e}")

        split = bundle.phi_z(z, p, "plus") + bundle.phi_z(z, p, "minus") \
            - bundle.phi_z(z, p, "full")
        scale = 1.0 + np.abs(bundle.phi_z(z, p, "full")).max()
        record(f"{name}: split sum Phi_z^+ + Phi_z^- = Phi_z",
               np.abs(split).max() <= 1e-12 * scale,
               f"max {np.abs(split).max():.2e}")

        probe = bundle.monotonicity_probe(z, p, rng.uniform(-2, 2, (n_samples, 2)))
        record(f"{name}: monotone Phi_p", np.all(probe >= -1e-12),
               f"min {probe.min():.2e}")

        sub = slice(0, 40)
        fd_p = fd_check(lambda q_, z_=z[0]: bundle.phi(z_, q_),
                        lambda q_, z_=z[0]: bundle.phi_p(z_, q_), p[sub])
        record(f"{name}: Phi_p matches finite differences", fd_p <= 1e-6,
               f"max rel {fd_p:.2e}")
        fd_z = max(
            fd_check(lambda z_, q_=p[i]: bundle.phi(z_, q_),
                     lambda z_, q_=p[i]: bundle.phi_z(z_, q_), z[sub][:5])
            for i in range(3))
        record(f"{name}: Phi_z matches finite differences", fd_z <= 1e-6,
               f"max rel {fd_z:.2e}")

    # isotropic one-step cross-check against the hand-assembled system
    grid = PeriodicGrid.uniform(16)
    angles = 2 * np.pi * grid.q
    radii = 1.0 + 0.2 * np.cos(2 * angles) + 0.1 * np.sin(3 * angles)
    x0 = PolygonalCurve(grid, np.stack([radii * np.cos(angles),
                                        radii * np.sin(angles)], -1))
    params = SchemeParams(dt=1e-3, T=1e-3)
    x1, _ = solve_step(x0, DensityBundle(make_density("isotropic")), None, params)
    ref = isotropic_reference_step(x0, params.dt)
    err = np.abs(x1.x - ref).max()
    record("isotropic step matches independent assembly", err <= 1e-10,
           f"max {err:.2e}")

    kfold = make_density("kfold", k=6, delta=0.028)
    pts = wulff_boundary(kfold, 360)
    record("kfold limiting shape is convex", polyline_is_convex(pts), "")
    return results
