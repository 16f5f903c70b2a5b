"""Scenario configuration, execution, and plain-text data export.

Scenarios
---------
kfold-mikula       six-fold anisotropy on the wavy test loop, T = 0.35
kfold-forced       same flow with constant normal forcing 1.15, T = 4
geodesic-centered  geodesic flow on the three-mountain graph, circle of
                   radius 2 around the centroid of the peaks, T = 4
geodesic-offset    same surface, circle centred at (0, 1/2); hits extinction
isotropic-circle   shrinking unit circle (exact solution available), T = 0.1
elliptic-eoc       convergence study for the elliptic density

Config files are UTF-8 ``key=value`` lines with ``#`` comments; command line
flags override file values, scenario defaults fill the rest.  Exit codes:
0 success or clean extinction, 1 configuration error, 2 solver failure.

Outputs are plain CSV with floats at 17 significant digits, so identical
runs produce byte-identical files.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from .anisotropy import make_density
from .curve import PeriodicGrid, circle_map, mikula_map, sample_initial
from .density import DensityBundle
from .errors import ConfigurationError
from .geodesic import MountainSurface, geodesic_bundle, lift
from .scheme import Forcing, SchemeParams, run
from .verify import EocScenario, eoc_study, run_property_suite

DEFAULT_J = 256
DEFAULT_DT = 1e-4

_SCENARIO_DEFAULTS = {
    # name: (T, frames_every, density, forcing)
    "kfold-mikula": (0.35, 500, "kfold:6:0.028", "none"),
    "kfold-forced": (4.0, 5000, "kfold:6:0.028", "const:1.15"),
    "geodesic-centered": (4.0, 10000, "mountain", "none"),
    "geodesic-offset": (4.0, 10000, "mountain", "none"),
    "isotropic-circle": (0.1, 100, "isotropic", "none"),
    "elliptic-eoc": (0.05, 0, "elliptic:0.5", "none"),
}

_CONFIG_KEYS = ("scenario", "J", "dt", "T", "frames_every", "out", "density",
                "forcing", "c_phi", "newton_tol", "newton_max_iter", "solver",
                "jacobian", "damping")


@dataclass
class ScenarioConfig:
    """Fully resolved run configuration; serializes to key=value text."""

    scenario: str
    J: int = DEFAULT_J
    dt: float = DEFAULT_DT
    T: float = None
    frames_every: int = None
    out: str = "out"
    density: str = None
    forcing: str = None
    c_phi: float = 0.0
    newton_tol: float = 1e-10
    newton_max_iter: int = 30
    solver: str = "newton"
    jacobian: str = "analytic_if_available"
    damping: bool = True

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = format(v, ".17g")
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}


def _parse_value(key, raw):
    raw = raw.strip()
    try:
        if key in ("J", "frames_every", "newton_max_iter"):
            return int(raw)
        if key in ("dt", "T", "c_phi", "newton_tol"):
            return float(raw)
        if key == "damping":
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse value for {key!r}: {raw!r}") from exc
    return raw


def parse_config(path=None, overrides=None):
    """Resolve a config from file plus flag overrides plus scenario defaults."""
    values = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key=value")
            key, raw = line.split("=", 1)
            key = key.strip()
            if key not in _CONFIG_KEYS:
                raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, raw)
    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        if key not in _CONFIG_KEYS:
            raise ConfigurationError(f"unknown option {key!r}")
        values[key] = raw if not isinstance(raw, str) else _parse_value(key, raw)
    scenario = values.get("scenario")
    if scenario is None:
        raise ConfigurationError("no scenario given (use --scenario or scenario=...)")
    if scenario not in _SCENARIO_DEFAULTS:
        raise ConfigurationError(
            f"unknown scenario {scenario!r}; choose from "
            + ", ".join(sorted(_SCENARIO_DEFAULTS)))
    T, frames, density, forcing = _SCENARIO_DEFAULTS[scenario]
    values.setdefault("T", T)
    values.setdefault("frames_every", frames)
    values.setdefault("density", density)
    values.setdefault("forcing", forcing)
    return ScenarioConfig(**values)


def _build_density(spec, surface=None):
    parts = str(spec).split(":")
    kind = parts[0]
    if kind == "isotropic":
        return make_density("isotropic")
    if kind == "kfold":
        if len(parts) != 3:
            raise ConfigurationError("density kfold needs kfold:<k>:<delta>")
        return make_density("kfold", k=int(parts[1]), delta=float(parts[2]))
    if kind == "elliptic":
        delta = float(parts[1]) if len(parts) > 1 else 0.5
        return make_density("elliptic", delta=delta)
    if kind == "mountain":
        return None  # bundled through geodesic_bundle
    raise ConfigurationError(f"unknown density spec {spec!r}")


def _build_forcing(spec):
    if spec in (None, "none", ""):
        return None
    parts = str(spec).split(":")
    if parts[0] == "const" and len(parts) == 2:
        return Forcing.constant(float(parts[1]))
    raise ConfigurationError(f"unknown forcing spec {spec!r}")


def _build_scenario(config):
    """Return (bundle, initial_map, forcing, surface_or_None)."""
    name = config.scenario
    if name in ("geodesic-centered", "geodesic-offset"):
        surface = MountainSurface()
        bundle = geodesic_bundle(surface, c_phi=config.c_phi)
        if name == "geodesic-centered":
            center = MountainSurface.CENTERS.mean(axis=0)
        else:
            center = (0.0, 0.5)
        return bundle, circle_map(center, 2.0), _build_forcing(config.forcing), surface
    density = _build_density(config.density)
    bundle = DensityBundle(density)
    if name in ("kfold-mikula", "kfold-forced"):
        # clockwise traversal puts the discrete normals x_rho^perp on the
        # outside, so positive forcing expands the curve
        x0 = mikula_map(clockwise=True)
    elif name == "isotropic-circle":
        x0 = circle_map((0.0, 0.0), 1.0)
    elif name == "elliptic-eoc":
        x0 = circle_map((0.0, 0.0), 1.0)
    else:
        raise ConfigurationError(f"unknown scenario {name!r}")
    return bundle, x0, _build_forcing(config.forcing), None


def _fmt(x):
    return format(float(x), ".17g")


class OutputWriter:
    """Streams frames during the run; diagnostics and summary at the end."""

    def __init__(self, outdir, config, surface=None):
        self.dir = Path(outdir)
        self.frames = self.dir / "frames"
        self.frames.mkdir(parents=True, exist_ok=True)
        self.surface = surface
        self.config = config
        self.frames_written = set()
        (self.dir / "config.txt").write_text(config.to_text(), encoding="utf-8")

    def write_frame(self, step, curve):
        if step in self.frames_written:
            return
        self.frames_written.add(step)
        lines = ["j,x1,x2"]
        for j, (x1, x2) in enumerate(curve.x):
            lines.append(f"{j},{_fmt(x1)},{_fmt(x2)}")
        (self.frames / f"frame_{step:07d}.csv").write_text(
            "\n".join(lines) + "\n", encoding="utf-8")
        if self.surface is not None:
            pts = lift(curve, self.surface)
            lines = ["j,x1,x2,x3"]
            for j, (x1, x2, x3) in enumerate(pts):
                lines.append(f"{j},{_fmt(x1)},{_fmt(x2)},{_fmt(x3)}")
            (self.frames / f"frame3d_{step:07d}.csv").write_text(
                "\n".join(lines) + "\n", encoding="utf-8")

    def write_diagnostics(self, traj):
        lines = ["t,energy,ratio,min_edge,newton_iters,stability_slack,dt_over_h"]
        for i in range(traj.t.size):
            lines.append(",".join([
                _fmt(traj.t[i]), _fmt(traj.energy[i]), _fmt(traj.ratio[i]),
                _fmt(traj.min_edge[i]), str(int(traj.newton_iters[i])),
                _fmt(traj.stability_slack[i]), _fmt(traj.dt_over_h[i])]))
        (self.dir / "diagnostics.csv").write_text(
            "\n".join(lines) + "\n", encoding="utf-8")

    def write_summary(self, traj, exit_code):
        last_t = traj.t[-1] if traj.t.size else 0.0
        last_e = traj.energy[-1] if traj.energy.size else traj.initial_energy
        lines = [
            f"scenario={self.config.scenario}",
            f"steps_done={traj.steps_done}",
            f"final_time={_fmt(last_t)}",
            f"stop_cause={traj.stop_cause}",
            f"initial_energy={_fmt(traj.initial_energy)}",
            f"final_energy={_fmt(last_e)}",
            f"exit_code={exit_code}",
        ]
        if traj.error is not None:
            lines.append(f"error={traj.error}")
        (self.dir / "summary.txt").write_text("\n".join(lines) + "\n",
                                              encoding="utf-8")


def _run_eoc_scenario(config):
    density = _build_density(config.density)
    scenario = EocScenario(bundle=DensityBundle(density),
                           initial_map=circle_map((0.0, 0.0), 1.0),
                           T=config.T)
    record = eoc_study(scenario, [32, 64, 128])
    outdir = Path(config.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.txt").write_text(config.to_text(), encoding="utf-8")
    lines = ["J,error,error_l2,error_h1,eoc,eoc_l2,eoc_h1"]
    for i, J in enumerate(record.js):
        eoc = "" if i == 0 else _fmt(record.eoc[i - 1])
        eoc2 = "" if i == 0 else _fmt(record.eoc_l2[i - 1])
        eoc1 = "" if i == 0 else _fmt(record.eoc_h1[i - 1])
        lines.append(f"{J},{_fmt(record.errors[i])},{_fmt(record.errors_l2[i])},"
                     f"{_fmt(record.errors_h1[i])},{eoc},{eoc2},{eoc1}")
    (outdir / "eoc.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for line in lines:
        print(line)
    return 0


def run_scenario(config: ScenarioConfig) -> int:
    """Execute one scenario; writes artifacts and returns the exit code."""
    if config.scenario == "elliptic-eoc":
        return _run_eoc_scenario(config)
    bundle, x0_map, forcing, surface = _build_scenario(config)
    grid = PeriodicGrid.uniform(config.J)
    x0 = sample_initial(x0_map, grid)
    params = SchemeParams(dt=config.dt, T=config.T,
                          newton_tol=config.newton_tol,
                          newton_max_iter=config.newton_max_iter,
                          damping=config.damping, solver=config.solver,
                          jacobian=config.jacobian)
    writer = OutputWriter(config.out, config, surface)
    writer.write_frame(0, x0)
    stride = config.frames_every

    def frame_obs(step, t, curve, report):
        if stride and step % stride == 0:
            writer.write_frame(step, curve)

    traj = run(x0, bundle, forcing, params, observers=(frame_obs,))
    writer.write_frame(traj.steps_done, traj.final_curve)  # last good state
    writer.write_diagnostics(traj)
    exit_code = 2 if traj.stop_cause == "nonconvergence" else 0
    writer.write_summary(traj, exit_code)
    return exit_code


def _add_run_flags(sub):
    sub.add_argument("--scenario")
    sub.add_argument("--config")
    sub.add_argument("--J", type=int, dest="J")
    sub.add_argument("--dt", type=float)
    sub.add_argument("--T", type=float, dest="T")
    sub.add_argument("--frames-every", type=int, dest="frames_every")
    sub.add_argument("--out")
    sub.add_argument("--density")
    sub.add_argument("--forcing")
    sub.add_argument("--c-phi", type=float, dest="c_phi")
    sub.add_argument("--solver", choices=["newton", "picard"])
    sub.add_argument("--jacobian",
                     choices=["analytic_if_available", "fd_colored"])
    sub.add_argument("--newton-tol", type=float, dest="newton_tol")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="anisoflow",
        description="Energy-stable solver for anisotropic curve shortening flow")
    subs = parser.add_subparsers(dest="command", required=True)
    run_p = subs.add_parser("run", help="run a scenario and export data files")
    _add_run_flags(run_p)
    verify_p = subs.add_parser("verify", help="run the sampled property suites")
    verify_p.add_argument("--seed", type=int, default=0)
    eoc_p = subs.add_parser("eoc", help="experimental order of convergence study")
    eoc_p.add_argument("--density", default="elliptic")
    eoc_p.add_argument("--delta", type=float, default=0.5)
    eoc_p.add_argument("--J", default="32,64,128")
    eoc_p.add_argument("--T", type=float, default=0.05)
    eoc_p.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            overrides = {k: getattr(args, k) for k in _CONFIG_KEYS
                         if hasattr(args, k)}
            config = parse_config(args.config, overrides)
            return run_scenario(config)
        if args.command == "verify":
            results = run_property_suite(seed=args.seed)
            failed = 0
            for name, ok, detail in results:
                status = "PASS" if ok else "FAIL"
                suffix = f" ({detail})" if detail else ""
                print(f"{status}: {name}{suffix}")
                failed += 0 if ok else 1
            print(f"{len(results) - failed}/{len(results)} checks passed")
            return 0 if failed == 0 else 2
        if args.command == "eoc":
            kind = args.density
            spec = f"{kind}:{args.delta}" if kind == "elliptic" else kind
            density = _build_density(spec)
            if density is None or not density.spatially_homogeneous:
                raise ConfigurationError(
                    "eoc studies support spatially homogeneous densities")
            j_list = [int(s) for s in str(args.J).split(",")]
            scenario = EocScenario(bundle=DensityBundle(density),
                                   initial_map=circle_map((0.0, 0.0), 1.0),
                                   T=args.T)
            record = eoc_study(scenario, j_list)
            print("J,error,eoc")
            for i, J in enumerate(record.js):
                eoc = "" if i == 0 else f"{record.eoc[i - 1]:.3f}"
                print(f"{J},{record.errors[i]:.6e},{eoc}")
            if args.out:
                outdir = Path(args.out)
                outdir.mkdir(parents=True, exist_ok=True)
                lines = ["J,error,error_l2,error_h1"]
                for i, J in enumerate(record.js):
                    lines.append(f"{J},{_fmt(record.errors[i])},"
                                 f"{_fmt(record.errors_l2[i])},"
                                 f"{_fmt(record.errors_h1[i])}")
                (outdir / "eoc.csv").write_text("\n".join(lines) + "\n",
                                                encoding="utf-8")
            return 0
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
