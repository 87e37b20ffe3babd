"""Command-line pipeline: simulate, echo, invert, assess, gen-data, pipeline.

Exit codes are stable: 0 success, 2 input/config error, 3 simulation
failure, 4 inversion did not converge, 5 provider failure. Config files
are INI-style key/value sections; every referenced parameter is validated
before any output file is written.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import acoustics, hemogrid, inversion, risk, synthdata
from .acoustics import PulseSpec
from .errors import (
    ConfigurationError,
    DomainError,
    LowConfidenceError,
    ProviderError,
    SimulationError,
    SolverNotFoundError,
    VasosimError,
)
from .hemogrid import ArteryModel, Grid

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_NOT_CONVERGED = 4
EXIT_PROVIDER = 5

DEFAULT_CONFIG_ENV = "VASOSIM_CONFIG"


@dataclass
class RunConfig:
    model: ArteryModel
    grid: Grid
    pulse: PulseSpec
    solver_name: str
    solver_options: inversion.SolverOptions
    lam: float
    provider_name: str
    endpoint: str
    timeout: float
    horizon: int
    step_seconds: float
    policy: risk.AlertPolicy
    weights: tuple
    bias: float
    horizon_decay: float
    fs: float
    duration: float
    scenario_kind: str
    severity: float
    stenosis_center: int
    stenosis_width: float
    noise_rms: float
    sessions: int
    seed: int
    inlet_amplitude: float
    inlet_frequency: float
    bc: str


def load_config(path=None, overrides=None):
    """Parse and fully validate a run configuration.

    Raises ConfigurationError on any malformed or out-of-range value;
    callers map that to exit code 2 before touching the filesystem.
    """
    parser = configparser.ConfigParser()
    if path is None:
        path = os.environ.get(DEFAULT_CONFIG_ENV)
    if path is not None:
        if not os.path.exists(path):
            raise ConfigurationError(f"config file not found: {path}")
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigurationError(f"malformed config {path}: {exc}") from exc

    def get(section, key, cast, default):
        try:
            raw = parser.get(section, key, fallback=None)
            if overrides and (section, key) in overrides:
                raw = overrides[(section, key)]
            if raw is None:
                return default
            return cast(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigurationError(
                f"bad value for [{section}] {key}: {exc}") from exc

    try:
        model = ArteryModel(
            r0=get("model", "r0", float, 2e-3),
            beta=get("model", "beta", float, 1.5e7),
            p_ext=get("model", "p_ext", float, 0.0),
            rho=get("model", "rho", float, 1060.0),
            mu=get("model", "mu", float, 3.5e-3),
            alpha=get("model", "alpha", float, 3.0),
            re=get("model", "re", float, 100.0),
            c0=get("model", "c0", float, 1540.0),
        )
        grid = Grid(
            nx=get("grid", "nx", int, 64),
            nt=get("grid", "nt", int, 200),
            dx=get("grid", "dx", float, 1e-3),
            dt=get("grid", "dt", float, 2e-6),
            s_max=get("grid", "s_max", float, 5.0),
            cfl=get("grid", "cfl", float, 0.5),
        )
        omega = get("pulse", "omega", float, 2 * np.pi * 1e5)
        c = get("pulse", "c", float, model.c0)
        pulse = PulseSpec.axial(
            omega=omega,
            amp_forward=get("pulse", "amp_forward", float, 1.0),
            amp_reflected=get("pulse", "amp_reflected", float, 0.0),
            c=c,
        )
        fs = get("pulse", "fs", float, 8 * omega / (2 * np.pi))
        duration = get("pulse", "duration", float,
                       2.4 * grid.nx * grid.dx / c)
        solver_name = get("solver", "name", str, "gauss-descent")
        if solver_name not in inversion.solver_names():
            raise ConfigurationError(f"unknown solver {solver_name!r}")
        solver_options = inversion.SolverOptions(
            max_iter=get("solver", "max_iter", int, 500),
            grad_tol=get("solver", "grad_tol", float, 1e-8),
            step_tol=get("solver", "step_tol", float, 1e-12),
            fd_step=get("solver", "fd_step", float, 1e-6),
        )
        lam = get("solver", "lambda", float, 1e-4)
        if lam < 0:
            raise ConfigurationError("lambda must be nonnegative")
        provider_name = get("risk", "provider", str, "logistic")
        if provider_name not in ("logistic", "llm"):
            raise ConfigurationError(f"unknown provider {provider_name!r}")
        policy = risk.AlertPolicy(
            critical_prob=get("risk", "critical_prob", float, 0.8),
            critical_horizon=get("risk", "critical_horizon", int, 2),
            warn_prob=get("risk", "warn_prob", float, 0.5),
        )
        weights = (
            get("risk", "w_stenosis", float, 6.0),
            get("risk", "w_density", float, 2.0),
            get("risk", "w_horizon", float, 1.0),
        )
        cfg = RunConfig(
            model=model, grid=grid, pulse=pulse,
            solver_name=solver_name, solver_options=solver_options, lam=lam,
            provider_name=provider_name,
            endpoint=get("risk", "endpoint", str, ""),
            timeout=get("risk", "timeout", float, 5.0),
            horizon=get("risk", "horizon", int, 24),
            step_seconds=get("risk", "step_seconds", float, 3600.0),
            policy=policy, weights=weights,
            bias=get("risk", "bias", float, -4.0),
            horizon_decay=get("risk", "horizon_decay", float, 0.2),
            fs=fs, duration=duration,
            scenario_kind=get("scenario", "kind", str, "progressive-occlusion"),
            severity=get("scenario", "severity", float, 0.5),
            stenosis_center=get("scenario", "stenosis_center", int, grid.nx // 2),
            stenosis_width=get("scenario", "stenosis_width", float, 3.0),
            noise_rms=get("scenario", "noise_rms", float, 0.01),
            sessions=get("scenario", "sessions", int, 3),
            seed=get("scenario", "seed", int, 0),
            inlet_amplitude=get("simulate", "inlet_amplitude", float, 0.0),
            inlet_frequency=get("simulate", "inlet_frequency", float, 0.0),
            bc=get("simulate", "bc", str, "inlet"),
        )
        if cfg.horizon < 1:
            raise ConfigurationError("horizon must be >= 1")
        if cfg.provider_name == "llm" and not cfg.endpoint:
            raise ConfigurationError("llm provider requires an endpoint")
        if cfg.bc not in ("periodic", "inlet"):
            raise ConfigurationError(f"unknown boundary condition {cfg.bc!r}")
    except DomainError as exc:
        raise ConfigurationError(str(exc)) from exc
    return cfg


def _make_provider(cfg: RunConfig):
    if cfg.provider_name == "logistic":
        return risk.logistic_provider(cfg.weights, cfg.bias, cfg.horizon_decay)
    return risk.llm_provider(cfg.endpoint, timeout=cfg.timeout,
                             step_seconds=cfg.step_seconds)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(cfg: RunConfig, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    g = cfg.grid
    if cfg.inlet_amplitude != 0.0:
        freq = cfg.inlet_frequency or 1.0 / (g.nt * g.dt)
        inlet = cfg.inlet_amplitude * np.sin(
            2 * np.pi * freq * np.arange(g.nt) * g.dt)
    else:
        inlet = None
    radii_field, states = hemogrid.solve_flow(cfg.model, g, inlet=inlet,
                                              bc=cfg.bc)
    radii_path = os.path.join(out_dir, "radii.csv")
    hemogrid.write_radii_csv(radii_path, radii_field)
    volumes = np.array([float(np.sum(s.area)) * g.dx for s in states])
    summary = {
        "min_radius_m": float(np.min(radii_field.values)),
        "max_radius_m": float(np.max(radii_field.values)),
        "volume_drift_rel": float(np.max(np.abs(volumes - volumes[0]))
                                  / volumes[0]),
        "steps": g.nt,
    }
    _write_json(os.path.join(out_dir, "flow_summary.json"), summary)
    return radii_path, summary


def cmd_echo(cfg: RunConfig, radii_path, out_dir, column=-1):
    os.makedirs(out_dir, exist_ok=True)
    radii_field = hemogrid.read_radii_csv(radii_path, s_max=cfg.grid.s_max,
                                          cfl=1.0)
    nt = radii_field.grid.nt
    j = column if column >= 0 else nt + column
    if not 0 <= j < nt:
        raise ConfigurationError(f"column {column} out of range for nt={nt}")
    grid = radii_field.grid
    trace = acoustics.synthesize_echo(radii_field.column(j), cfg.pulse, grid,
                                      cfg.model, fs=cfg.fs,
                                      duration=max(cfg.duration,
                                                   2 * grid.nx * grid.dx / cfg.pulse.c))
    echo_path = os.path.join(out_dir, "echo.csv")
    acoustics.write_echo_csv(echo_path, trace)
    return echo_path


def cmd_invert(cfg: RunConfig, echo_path, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    observed = acoustics.read_echo_csv(echo_path)
    problem = inversion.InverseProblem(
        observed=observed, pulse=cfg.pulse, grid=cfg.grid, model=cfg.model,
        lam=cfg.lam)
    solver = inversion.get_solver(cfg.solver_name)
    solution = solver(problem, cfg.solver_options)
    path = os.path.join(out_dir, "solution.json")
    _write_json(path, solution.to_dict())
    return path, solution


def _report_from_solution(cfg, solution_dict, session_id="cli", timestamp=0.0,
                          density_fractional_change=0.0, tof=0.0):
    radii = np.asarray(solution_dict["radii_m"], dtype=float)
    stenosis = float(np.clip(1.0 - np.min(radii) / cfg.model.r0, 0.0, 1.0))
    return risk.BiophysicsReport(
        stenosis_index=stenosis,
        density_fractional_change=density_fractional_change,
        tof=tof, timestamp=timestamp, session_id=session_id,
        residual_norm=float(solution_dict.get("residual_norm", 0.0)),
        converged=bool(solution_dict.get("converged", True)),
    )


def cmd_assess(cfg: RunConfig, input_path, out_dir, provider=None, sink=None):
    os.makedirs(out_dir, exist_ok=True)
    with open(input_path) as fh:
        data = json.load(fh)
    if "radii_m" in data:
        report = _report_from_solution(cfg, data)
    else:
        report = risk.BiophysicsReport(
            stenosis_index=data["stenosis_index"],
            density_fractional_change=data.get("density_fractional_change", 0.0),
            tof=data.get("tof_s", 0.0),
            timestamp=data.get("timestamp", 0.0),
            session_id=data.get("session_id", "cli"),
            residual_norm=data.get("residual_norm", 0.0),
            converged=data.get("converged", True),
        )
    if provider is None:
        provider = _make_provider(cfg)
    curve = risk.likelihood_curve(report, provider, cfg.horizon)
    tte = risk.compute_tte(curve, cfg.step_seconds)
    with open(os.path.join(out_dir, "probs.csv"), "w") as fh:
        fh.write("step,prob\n")
        fh.write(f"0,{curve.prob_now!r}\n")
        for i, p in enumerate(curve.probs, start=1):
            fh.write(f"{i},{p!r}\n")
    payload = risk.dispatch_alert(
        tte, curve.prob_now, cfg.policy,
        sink if payload_triggers(curve.prob_now, tte, cfg.policy) else None,
        session_id=report.session_id, timestamp=report.timestamp,
        recommendation=getattr(provider, "last_recommendation", None))
    _write_json(os.path.join(out_dir, "tte.json"),
                {**tte.to_dict(), "prob_now": curve.prob_now,
                 "alert": payload.to_dict()})
    return tte, curve, payload


def payload_triggers(prob_now, tte, policy):
    return (prob_now >= policy.warn_prob
            or prob_now >= policy.critical_prob
            or tte.tte_step <= policy.critical_horizon)


def cmd_gen_data(cfg: RunConfig, out_dir, seed=None):
    spec = synthdata.ScenarioSpec(
        kind=cfg.scenario_kind, grid=cfg.grid, model=cfg.model,
        pulse=cfg.pulse, severity=cfg.severity,
        stenosis_center=cfg.stenosis_center,
        stenosis_width=cfg.stenosis_width, noise_rms=cfg.noise_rms,
        seed=cfg.seed if seed is None else seed, sessions=cfg.sessions,
        fs=cfg.fs, duration=cfg.duration, horizon=cfg.horizon)
    sessions = synthdata.generate_scenario(spec)
    manifest = synthdata.write_dataset(sessions, out_dir, spec=spec)
    return spec, sessions, manifest


def cmd_pipeline(cfg: RunConfig, out_dir, seed=None, provider=None):
    """generate -> echo (from dataset) -> invert -> assess, one manifest."""
    os.makedirs(out_dir, exist_ok=True)
    data_dir = os.path.join(out_dir, "dataset")
    spec, sessions, _ = cmd_gen_data(cfg, data_dir, seed=seed)
    if provider is None:
        provider = _make_provider(cfg)
    sink = risk.FileSink(os.path.join(out_dir, "alerts.jsonl"))
    incident = acoustics.incident_pulse(spec.pulse, spec.fs, spec.duration)

    tof_ref = None
    results = []
    for sess in sessions:
        problem = inversion.InverseProblem(
            observed=sess.echo, pulse=spec.pulse, grid=spec.grid,
            model=spec.model, lam=cfg.lam)
        solver = inversion.get_solver(cfg.solver_name)
        solution = solver(problem, cfg.solver_options)
        sol_path = os.path.join(out_dir, f"solution_{sess.session_index:04d}.json")
        _write_json(sol_path, solution.to_dict())

        try:
            tof = acoustics.estimate_tof(incident, sess.echo)
            tof_s = tof.tof
        except (LowConfidenceError, VasosimError):
            tof, tof_s = None, 0.0
        if tof_ref is None and tof is not None:
            tof_ref = tof
        if tof is not None and tof_ref is not None and tof_ref.tof > 0 \
                and tof.tof > 0:
            density = acoustics.density_change(tof_ref, tof).fractional_change
        else:
            density = 0.0

        timestamp = sess.session_index * cfg.step_seconds
        report = _report_from_solution(
            cfg, solution.to_dict(), session_id=sess.echo.session_id,
            timestamp=timestamp, density_fractional_change=density,
            tof=tof_s)
        curve = risk.likelihood_curve(report, provider, cfg.horizon)
        tte = risk.compute_tte(curve, cfg.step_seconds)
        triggered = payload_triggers(curve.prob_now, tte, cfg.policy)
        payload = risk.dispatch_alert(
            tte, curve.prob_now, cfg.policy, sink if triggered else None,
            session_id=report.session_id, timestamp=timestamp,
            recommendation=getattr(provider, "last_recommendation", None))
        results.append({
            "session": sess.session_index,
            "label_v": sess.label_v,
            "stenosis_index": report.stenosis_index,
            "prob_now": curve.prob_now,
            "tte": tte.to_dict(),
            "severity": payload.severity,
            "alert_written": triggered,
            "solution_file": os.path.basename(sol_path),
        })
    _write_json(os.path.join(out_dir, "results.json"), results)

    checksums = {}
    for root, _, files in os.walk(out_dir):
        for name in sorted(files):
            if name == "pipeline_manifest.json":
                continue
            full = os.path.join(root, name)
            rel = os.path.relpath(full, out_dir)
            checksums[rel] = _sha256(full)
    manifest = {"format_version": synthdata.FORMAT_VERSION,
                "seed": spec.seed, "checksums": checksums}
    _write_json(os.path.join(out_dir, "pipeline_manifest.json"), manifest)
    return manifest, results


# ---------------------------------------------------------------------------
# argument parsing and dispatch

def build_parser():
    parser = argparse.ArgumentParser(
        prog="vasosim",
        description="Arterial flow simulation, echo inversion and episode "
                    "risk pipeline")
    parser.add_argument("--config", help="INI config path "
                        f"(default ${DEFAULT_CONFIG_ENV})")
    parser.add_argument("--seed", type=int, help="override scenario seed")
    parser.add_argument("--solver", help="inversion solver name")
    parser.add_argument("--provider", choices=["logistic", "llm"])
    parser.add_argument("--endpoint", help="llm provider URL")
    parser.add_argument("--lambda", dest="lam", type=float,
                        help="regularization weight")
    parser.add_argument("--max-iter", type=int)
    parser.add_argument("--out", default="out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate")
    p = sub.add_parser("echo")
    p.add_argument("radii_path")
    p.add_argument("--column", type=int, default=-1)
    p = sub.add_parser("invert")
    p.add_argument("echo_path")
    p = sub.add_parser("assess")
    p.add_argument("input_path")
    sub.add_parser("gen-data")
    sub.add_parser("pipeline")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.solver is not None:
        overrides[("solver", "name")] = args.solver
    if args.provider is not None:
        overrides[("risk", "provider")] = args.provider
    if args.endpoint is not None:
        overrides[("risk", "endpoint")] = args.endpoint
    if args.lam is not None:
        overrides[("solver", "lambda")] = str(args.lam)
    if args.max_iter is not None:
        overrides[("solver", "max_iter")] = str(args.max_iter)
    if args.seed is not None:
        overrides[("scenario", "seed")] = str(args.seed)
    try:
        cfg = load_config(args.config, overrides=overrides)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "simulate":
            cmd_simulate(cfg, args.out)
        elif args.command == "echo":
            cmd_echo(cfg, args.radii_path, args.out, column=args.column)
        elif args.command == "invert":
            _, solution = cmd_invert(cfg, args.echo_path, args.out)
            if not solution.converged:
                print("inversion did not converge", file=sys.stderr)
                return EXIT_NOT_CONVERGED
        elif args.command == "assess":
            cmd_assess(cfg, args.input_path, args.out)
        elif args.command == "gen-data":
            cmd_gen_data(cfg, args.out)
        elif args.command == "pipeline":
            cmd_pipeline(cfg, args.out)
    except SimulationError as exc:
        print(f"simulation failed at step {exc.step_index}: {exc}",
              file=sys.stderr)
        return EXIT_SIMULATION
    except ProviderError as exc:
        print(f"provider failure: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (ConfigurationError, SolverNotFoundError, DomainError,
            FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
