"""Fully discrete flow scheme: assembly, Newton/Picard solve, time stepping.

One step advances nodal positions X (old curve Z) by solving R(X) = 0 with

    R_i = (1/dt) M_i (X_i - Z_i)
          + S_{e(i,left)} - S_{e(i,right)}
          + (h_l/2) [Phi_z^+(X_i, d_l) + Phi_z^-(Z_i, d_l)]
          + (h_r/2) [Phi_z^+(X_i, d_r) + Phi_z^-(Z_i, d_r)]
          - F_i,

where d_l, d_r are the new-curve derivatives of the elements left/right of
node i, S_e = [Phi_p(Z_right(e), d_e) + Phi_p(Z_left(e), d_e)] / 2 is the
element-averaged implicit stress, M_i = [h_l H(Z_i, d_l^old) + h_r H(Z_i,
d_r^old)] / 2 the lumped mobility block, and F_i the optional forcing term
built from the old curve.  A root is exactly the solution of the mass-lumped
weak form tested against all nodal hat functions.

Every accepted unforced step is checked against the energy estimate

    (Phi(X, X_rho), 1)^h + (1/dt) (H(Z, Z_rho)(X - Z), X - Z)^h
        <= (Phi(Z, Z_rho), 1)^h,

which holds for any dt; violations raise, they are never silently accepted.
The quadratic (Phi, 1)^h energy appears in the estimate, while reports and
diagnostics also carry the anisotropic length (gamma, a)^h.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .anisotropy import perp, vec_norm
from .curve import (PolygonalCurve, discrete_energy, discrete_phi_energy,
                    element_stats)
from .errors import (DegenerateEdgeError, NonconvergenceError,
                     StabilityViolationError)
from .linalg import solve_cyclic_block_tridiag

logger = logging.getLogger(__name__)

STABILITY_RTOL = 1e-9
_MAX_HALVINGS = 8


@dataclass
class SchemeParams:
    """Time step, tolerances, and solver switches for the implicit scheme."""

    dt: float
    T: Optional[float] = None
    newton_tol: float = 1e-10
    newton_max_iter: int = 30
    damping: bool = True
    solver: str = "newton"            # "newton" | "picard"
    jacobian: str = "analytic_if_available"  # | "fd_colored"

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if not self.newton_tol > 0.0:
            raise ValueError("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be at least 1")
        if self.solver not in ("newton", "picard"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.jacobian not in ("analytic_if_available", "fd_colored"):
            raise ValueError(f"unknown jacobian mode {self.jacobian!r}")


@dataclass(frozen=True)
class Forcing:
    """Normal forcing f(z, n); adds f H n to the velocity equation."""

    func: Callable
    f0: Optional[float] = None

    @classmethod
    def constant(cls, f0):
        f0 = float(f0)
        return cls(func=lambda z, n: np.full(z.shape[:-1], f0), f0=f0)

    def __call__(self, z, n):
        return np.asarray(self.func(z, n), dtype=float)


@dataclass
class StepReport:
    """Per-step solver statistics and the ingredients of the energy estimate."""

    iterations: int
    final_residual: float
    energy_before: float
    energy_after: float
    phi_energy_before: float
    phi_energy_after: float
    dissipation: float        # (1/dt) (H(Z)(X-Z), X-Z)^h
    stability_slack: float    # phi_before - phi_after - dissipation
    dt_over_h: float


@dataclass(frozen=True)
class CyclicBlockTridiagonal:
    """Jacobian dR/dX: 2x2 blocks L_i, D_i, U_i coupling nodes i-1, i, i+1."""

    L: np.ndarray
    D: np.ndarray
    U: np.ndarray

    def matvec(self, v):
        from .linalg import cyclic_block_tridiag_matvec
        return cyclic_block_tridiag_matvec(self.L, self.D, self.U, v)

    def to_dense(self):
        from .linalg import cyclic_block_tridiag_dense
        return cyclic_block_tridiag_dense(self.L, self.D, self.U)

    def solve(self, rhs):
        return solve_cyclic_block_tridiag(self.L, self.D, self.U, rhs)


class _StepContext:
    """Old-curve quantities reused by every residual/Jacobian evaluation."""

    def __init__(self, x_old: PolygonalCurve, bundle, forcing, params,
                 known_energies=None):
        grid = x_old.grid
        Z = x_old.x
        if np.any(x_old.edge_lengths() == 0.0):
            raise DegenerateEdgeError("old curve has a collapsed edge")
        self.grid = grid
        self.dt = params.dt
        self.Z = Z
        self.Z_next = np.roll(Z, -1, axis=0)
        self.h = grid.h
        self.hl = grid.h_left()
        self.hr = grid.h_right()
        D_old = x_old.derivatives()
        self.D_old = D_old
        Hm = bundle.h_matrix(Z, np.roll(D_old, 1, axis=0))  # left element at node
        Hp = bundle.h_matrix(Z, D_old)                      # right element at node
        self.M = 0.5 * (self.hl[:, None, None] * Hm + self.hr[:, None, None] * Hp)
        self.homogeneous_z = bundle.spatially_homogeneous
        if forcing is None:
            self.F = None
        else:
            n_el = perp(D_old) / vec_norm(D_old)[:, None]
            n_l = np.roll(n_el, 1, axis=0)
            f_l = forcing(Z, n_l)
            f_r = forcing(Z, n_el)
            self.F = 0.5 * (
                (self.hl * f_l)[:, None] * np.einsum("ijk,ik->ij", Hm, n_l)
                + (self.hr * f_r)[:, None] * np.einsum("ijk,ik->ij", Hp, n_el))
        if known_energies is None:
            self.energy_old = discrete_energy(x_old, bundle)
            self.phi_energy_old = discrete_phi_energy(x_old, bundle)
        else:
            self.energy_old, self.phi_energy_old = known_energies


def _new_derivatives(x, ctx):
    edge = np.roll(x, -1, axis=0) - x
    if np.any(vec_norm(edge) == 0.0):
        raise DegenerateEdgeError("candidate curve has a collapsed edge")
    return edge / ctx.h[:, None]


def _residual_arrays(x, ctx, bundle):
    """Nodal residual for candidate nodes x against the cached old curve."""
    D = _new_derivatives(x, ctx)
    R = np.einsum("ijk,ik->ij", ctx.M, x - ctx.Z) / ctx.dt
    if ctx.homogeneous_z:
        S = bundle.phi_p(ctx.Z, D)  # z argument is ignored
    else:
        S = 0.5 * (bundle.phi_p(ctx.Z_next, D) + bundle.phi_p(ctx.Z, D))
    R += np.roll(S, 1, axis=0) - S
    if not ctx.homogeneous_z:
        Dl = np.roll(D, 1, axis=0)
        g_l = bundle.phi_z(x, Dl, "plus") + bundle.phi_z(ctx.Z, Dl, "minus")
        g_r = bundle.phi_z(x, D, "plus") + bundle.phi_z(ctx.Z, D, "minus")
        R += 0.5 * (ctx.hl[:, None] * g_l + ctx.hr[:, None] * g_r)
    if ctx.F is not None:
        R -= ctx.F
    return R


def _jacobian_analytic(x, ctx, bundle):
    D = _new_derivatives(x, ctx)
    if ctx.homogeneous_z:
        P = bundle.phi_pp(ctx.Z, D)  # z argument is ignored
    else:
        P = 0.5 * (bundle.phi_pp(ctx.Z_next, D) + bundle.phi_pp(ctx.Z, D))
    Pl = np.roll(P, 1, axis=0)
    inv_hl = (1.0 / ctx.hl)[:, None, None]
    inv_hr = (1.0 / ctx.hr)[:, None, None]
    Lb = -Pl * inv_hl
    Ub = -P * inv_hr
    Db = ctx.M / ctx.dt + Pl * inv_hl + P * inv_hr
    if not ctx.homogeneous_z:
        Dl = np.roll(D, 1, axis=0)
        Wl = bundle.phi_zp(x, Dl, "plus") + bundle.phi_zp(ctx.Z, Dl, "minus")
        Wr = bundle.phi_zp(x, D, "plus") + bundle.phi_zp(ctx.Z, D, "minus")
        ZZ = 0.5 * (ctx.hl[:, None, None] * bundle.phi_zz_plus(x, Dl)
                    + ctx.hr[:, None, None] * bundle.phi_zz_plus(x, D))
        Db = Db + ZZ + 0.5 * (Wl - Wr)
        Lb = Lb - 0.5 * Wl
        Ub = Ub + 0.5 * Wr
    return CyclicBlockTridiagonal(L=Lb, D=Db, U=Ub)


def _coloring(J):
    """Cyclic distance-3 coloring: columns of one color never share a row."""
    colors = np.arange(J) % 3
    r = J % 3
    if r:
        colors[3 * (J // 3):] = 3 + np.arange(r)
    return colors


def _jacobian_fd(x, ctx, bundle, base_residual=None):
    J = ctx.grid.J
    eps = 1e-6 * max(1.0, np.abs(x).max())
    colors = _coloring(J)
    Lb = np.zeros((J, 2, 2))
    Db = np.zeros((J, 2, 2))
    Ub = np.zeros((J, 2, 2))
    for c in range(colors.max() + 1):
        idx = np.nonzero(colors == c)[0]
        for comp in range(2):
            v = np.zeros((J, 2))
            v[idx, comp] = eps
            Rp = _residual_arrays(x + v, ctx, bundle)
            Rm = _residual_arrays(x - v, ctx, bundle)
            col = (Rp - Rm) / (2.0 * eps)
            Db[idx, :, comp] = col[idx]
            Ub[(idx - 1) % J, :, comp] = col[(idx - 1) % J]
            Lb[(idx + 1) % J, :, comp] = col[(idx + 1) % J]
    return CyclicBlockTridiagonal(L=Lb, D=Db, U=Ub)


def assemble_residual(x_new: PolygonalCurve, x_old: PolygonalCurve, bundle,
                      forcing=None, params: SchemeParams = None):
    """Nodal residual of the implicit step equation, shape (J, 2)."""
    if params is None:
        raise ValueError("params with the time step are required")
    ctx = _StepContext(x_old, bundle, forcing, params)
    return _residual_arrays(x_new.x, ctx, bundle)


def assemble_jacobian(x_new: PolygonalCurve, x_old: PolygonalCurve, bundle,
                      forcing=None, params: SchemeParams = None):
    """Jacobian dR/dX_new as cyclic block tridiagonal 2x2 blocks."""
    if params is None:
        raise ValueError("params with the time step are required")
    ctx = _StepContext(x_old, bundle, forcing, params)
    if params.jacobian == "analytic_if_available" and bundle.has_analytic_jacobian:
        return _jacobian_analytic(x_new.x, ctx, bundle)
    return _jacobian_fd(x_new.x, ctx, bundle)


def _solve_newton(ctx, bundle, params):
    x = ctx.Z.copy()
    R = _residual_arrays(x, ctx, bundle)
    rnorm = float(np.abs(R).max())
    best = (rnorm, x.copy())
    iterations = 0
    use_analytic = (params.jacobian == "analytic_if_available"
                    and bundle.has_analytic_jacobian)
    while rnorm > params.newton_tol:
        if iterations >= params.newton_max_iter:
            raise NonconvergenceError(
                f"Newton stopped after {iterations} iterations with residual "
                f"{rnorm:.3e} > {params.newton_tol:.1e}",
                best_nodes=best[1], report=None)
        jac = (_jacobian_analytic(x, ctx, bundle) if use_analytic
               else _jacobian_fd(x, ctx, bundle))
        delta = jac.solve(-R)
        if not params.damping:
            x = x + delta
            R = _residual_arrays(x, ctx, bundle)  # raises on collapsed edge
            rnorm = float(np.abs(R).max())
        else:
            alpha = 1.0
            accepted = False
            degenerate_only = True
            for _ in range(_MAX_HALVINGS + 1):
                xc = x + alpha * delta
                try:
                    Rc = _residual_arrays(xc, ctx, bundle)
                except DegenerateEdgeError:
                    alpha *= 0.5
                    continue
                degenerate_only = False
                rc = float(np.abs(Rc).max())
                if rc < rnorm:
                    x, R, rnorm = xc, Rc, rc
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                if degenerate_only:
                    raise DegenerateEdgeError(
                        "every damped Newton candidate collapsed an edge")
                raise NonconvergenceError(
                    f"Newton stalled at residual {rnorm:.3e} after "
                    f"{iterations} iterations (damping exhausted)",
                    best_nodes=best[1], report=None)
        iterations += 1
        if rnorm < best[0]:
            best = (rnorm, x.copy())
    return x, rnorm, iterations


def _solve_picard(ctx, bundle, params):
    """Lagged linearization: freeze z-arguments and the Phi_p coefficient.

    Phi_p is 1-homogeneous, so Phi_p(z, d) = Phi_pp(z, d_k) d at d = d_k;
    solving the linear system with the lagged stiffness reproduces the
    nonlinear solution at the fixed point.
    """
    x = ctx.Z.copy()
    R = _residual_arrays(x, ctx, bundle)
    rnorm = float(np.abs(R).max())
    best = (rnorm, x.copy())
    iterations = 0
    while rnorm > params.newton_tol:
        if iterations >= params.newton_max_iter:
            raise NonconvergenceError(
                f"Picard stopped after {iterations} iterations with residual "
                f"{rnorm:.3e} > {params.newton_tol:.1e}",
                best_nodes=best[1], report=None)
        D = _new_derivatives(x, ctx)
        if ctx.homogeneous_z:
            P = bundle.phi_pp(ctx.Z, D)
        else:
            P = 0.5 * (bundle.phi_pp(ctx.Z_next, D) + bundle.phi_pp(ctx.Z, D))
        Pl = np.roll(P, 1, axis=0)
        inv_hl = (1.0 / ctx.hl)[:, None, None]
        inv_hr = (1.0 / ctx.hr)[:, None, None]
        Lb = -Pl * inv_hl
        Ub = -P * inv_hr
        Db = ctx.M / ctx.dt + Pl * inv_hl + P * inv_hr
        rhs = np.einsum("ijk,ik->ij", ctx.M, ctx.Z) / ctx.dt
        if not ctx.homogeneous_z:
            Dl = np.roll(D, 1, axis=0)
            g_l = bundle.phi_z(x, Dl, "plus") + bundle.phi_z(ctx.Z, Dl, "minus")
            g_r = bundle.phi_z(x, D, "plus") + bundle.phi_z(ctx.Z, D, "minus")
            rhs -= 0.5 * (ctx.hl[:, None] * g_l + ctx.hr[:, None] * g_r)
        if ctx.F is not None:
            rhs += ctx.F
        x = solve_cyclic_block_tridiag(Lb, Db, Ub, rhs)
        R = _residual_arrays(x, ctx, bundle)
        rnorm = float(np.abs(R).max())
        iterations += 1
        if rnorm < best[0]:
            best = (rnorm, x.copy())
    return x, rnorm, iterations


def solve_step(x_old: PolygonalCurve, bundle, forcing, params: SchemeParams,
               _known_energies=None):
    """Advance one time step; returns (new curve, StepReport).

    Raises NonconvergenceError (carrying the best iterate) if the solver
    misses the tolerance, DegenerateEdgeError on collapsed edges, and
    StabilityViolationError if an unforced step breaks the energy estimate.
    """
    ctx = _StepContext(x_old, bundle, forcing, params,
                       known_energies=_known_energies)
    try:
        if params.solver == "picard":
            x, rnorm, iterations = _solve_picard(ctx, bundle, params)
        else:
            x, rnorm, iterations = _solve_newton(ctx, bundle, params)
    except NonconvergenceError as exc:
        if exc.best_nodes is not None:
            exc.report = _report_for(x_old.with_nodes(exc.best_nodes), ctx,
                                     bundle, params, params.newton_max_iter,
                                     float("nan"))
        raise
    x_new = x_old.with_nodes(x)
    report = _report_for(x_new, ctx, bundle, params, iterations, rnorm)
    if forcing is None:
        allowed = -STABILITY_RTOL * (1.0 + abs(ctx.phi_energy_old))
        if report.stability_slack < allowed:
            raise StabilityViolationError(
                "energy estimate violated: slack "
                f"{report.stability_slack:.3e} < {allowed:.3e}")
    return x_new, report


def _report_for(x_new, ctx, bundle, params, iterations, rnorm):
    delta = x_new.x - ctx.Z
    dissipation = float(
        np.einsum("ik,ijk,ij->", delta, ctx.M, delta)) / params.dt
    phi_new = discrete_phi_energy(x_new, bundle)
    return StepReport(
        iterations=iterations,
        final_residual=rnorm,
        energy_before=ctx.energy_old,
        energy_after=discrete_energy(x_new, bundle),
        phi_energy_before=ctx.phi_energy_old,
        phi_energy_after=phi_new,
        dissipation=dissipation,
        stability_slack=ctx.phi_energy_old - phi_new - dissipation,
        dt_over_h=params.dt / float(ctx.h.min()),
    )


@dataclass
class Trajectory:
    """Per-step records of a run plus its stopping information."""

    t: np.ndarray
    energy: np.ndarray
    ratio: np.ndarray
    min_edge: np.ndarray
    newton_iters: np.ndarray
    stability_slack: np.ndarray
    dt_over_h: np.ndarray
    final_curve: PolygonalCurve
    initial_energy: float
    stop_cause: str           # "completed" | "extinction" | "nonconvergence"
    steps_done: int
    error: Optional[Exception] = None
    reports: list = field(default_factory=list, repr=False)


def default_extinction_threshold(grid):
    """Total length below which the curve counts as extinct: 10 h_min * 1e-6."""
    return 10.0 * float(grid.h.min()) * 1e-6


def run(x0: PolygonalCurve, bundle, forcing, params: SchemeParams,
        observers=(), extinction_threshold=None, keep_reports=False):
    """March the flow from t = 0 to T with uniform steps.

    Observers are called after each accepted step as
    ``observer(step_index, t, curve, report)``.  The run stops early when the
    total polygon length falls below the extinction threshold or when a step
    fails to converge; the cause is recorded, not raised.
    """
    if params.T is None:
        raise ValueError("params.T is required for run()")
    n_steps = int(round(params.T / params.dt))
    if abs(n_steps * params.dt - params.T) > 1e-9 * max(1.0, params.T):
        n_steps = int(np.ceil(params.T / params.dt - 1e-12))
    if extinction_threshold is None:
        extinction_threshold = default_extinction_threshold(x0.grid)
    records = {key: [] for key in ("t", "energy", "ratio", "min_edge",
                                   "newton_iters", "stability_slack",
                                   "dt_over_h")}
    reports = []
    x = x0
    initial_energy = discrete_energy(x0, bundle)
    known = (initial_energy, discrete_phi_energy(x0, bundle))
    stop_cause = "completed"
    error = None
    steps_done = 0
    for m in range(n_steps):
        if x.perimeter() < extinction_threshold:
            stop_cause = "extinction"
            break
        try:
            x, rep = solve_step(x, bundle, forcing, params,
                                _known_energies=known)
        except NonconvergenceError as exc:
            exc.step_index = m
            stop_cause = "nonconvergence"
            error = exc
            break
        steps_done = m + 1
        t = steps_done * params.dt
        stats = element_stats(x)
        records["t"].append(t)
        records["energy"].append(rep.energy_after)
        records["ratio"].append(stats.ratio)
        records["min_edge"].append(stats.min_edge)
        records["newton_iters"].append(rep.iterations)
        records["stability_slack"].append(rep.stability_slack)
        records["dt_over_h"].append(rep.dt_over_h)
        if keep_reports:
            reports.append(rep)
        if rep.iterations > 10:
            logger.warning(
                "step %d needed %d iterations (dt/h = %.3g); the time step "
                "may violate the dt <= delta*h regime", m + 1, rep.iterations,
                rep.dt_over_h)
        for obs in observers:
            obs(steps_done, t, x, rep)
    return Trajectory(
        t=np.asarray(records["t"]),
        energy=np.asarray(records["energy"]),
        ratio=np.asarray(records["ratio"]),
        min_edge=np.asarray(records["min_edge"]),
        newton_iters=np.asarray(records["newton_iters"], dtype=int),
        stability_slack=np.asarray(records["stability_slack"]),
        dt_over_h=np.asarray(records["dt_over_h"]),
        final_curve=x,
        initial_energy=initial_energy,
        stop_cause=stop_cause,
        steps_done=steps_done,
        error=error,
        reports=reports,
    )
