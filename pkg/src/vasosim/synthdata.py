"""Deterministic synthetic scenario generation and dataset I/O.

Scenarios build ground-truth radii columns (baseline, static stenosis, or
a stenosis deepening linearly across sessions), perturb them with a short
pulsatile flow run, synthesize noisy echoes, and label each session with
the binary episode indicator. All randomness derives from one seed plus
the session index, so session ordering never changes content.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field, asdict

import numpy as np

from . import acoustics, hemogrid
from .acoustics import EchoTrace, PulseSpec
from .errors import CorruptionError, DomainError, VersionError
from .hemogrid import ArteryModel, Grid

__all__ = [
    "ScenarioSpec",
    "LabeledSession",
    "generate_scenario",
    "write_dataset",
    "read_dataset",
    "FORMAT_VERSION",
]

FORMAT_VERSION = 1

KINDS = ("baseline", "static-stenosis", "progressive-occlusion")


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    grid: Grid
    model: ArteryModel
    pulse: PulseSpec
    severity: float = 0.0
    stenosis_center: int = 0
    stenosis_width: float = 3.0
    noise_rms: float = 0.0
    seed: int = 0
    sessions: int = 1
    fs: float = 0.0          # 0 -> derived from the pulse frequency
    duration: float = 0.0    # 0 -> round trip over the segment with margin
    horizon: int = 24
    occlusion_threshold: float = 0.6
    perturbation_pa: float = 10.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown scenario kind {self.kind!r}")
        if not 0 <= self.severity < 1:
            raise DomainError("severity must lie in [0, 1)")
        if self.sessions < 1:
            raise DomainError("sessions must be >= 1")
        if self.kind != "baseline":
            half = 3 * self.stenosis_width
            if not (0 <= self.stenosis_center - half
                    and self.stenosis_center + half < self.grid.nx):
                raise DomainError("stenosis geometry does not fit inside the grid")
        if self.fs == 0.0:
            object.__setattr__(self, "fs",
                               8.0 * self.pulse.omega / (2 * np.pi))
        if self.duration == 0.0:
            object.__setattr__(
                self, "duration",
                2.4 * self.grid.nx * self.grid.dx / self.pulse.c)


@dataclass(frozen=True)
class LabeledSession:
    radii_truth: np.ndarray
    echo: EchoTrace
    label_v: int
    future_labels: np.ndarray
    session_index: int

    def __post_init__(self):
        radii = np.asarray(self.radii_truth, dtype=float)
        radii.setflags(write=False)
        object.__setattr__(self, "radii_truth", radii)
        labels = np.asarray(self.future_labels, dtype=int)
        labels.setflags(write=False)
        object.__setattr__(self, "future_labels", labels)
        if self.label_v not in (0, 1):
            raise DomainError("label_v must be 0 or 1")
        if not np.all(np.isin(labels, (0, 1))):
            raise DomainError("future_labels entries must be 0 or 1")


def _dip_depth(spec: ScenarioSpec, session_index):
    """Fractional radius reduction at the stenosis center for one session."""
    if spec.kind == "baseline":
        return 0.0
    if spec.kind == "static-stenosis":
        return spec.severity
    if spec.sessions == 1:
        return spec.severity
    return spec.severity * session_index / (spec.sessions - 1)


def _truth_column(spec: ScenarioSpec, depth):
    r = np.full(spec.grid.nx, spec.model.r0)
    if depth > 0:
        i = np.arange(spec.grid.nx)
        dip = np.exp(-0.5 * ((i - spec.stenosis_center) / spec.stenosis_width) ** 2)
        r = r * (1 - depth * dip)
    return r


def _label_from_radii(radii, spec: ScenarioSpec):
    return int(np.min(radii) / spec.model.r0 < spec.occlusion_threshold)


def _perturbed_truth(spec: ScenarioSpec, base_column):
    """Short pulsatile run starting from the stenotic geometry; the final
    radii column carries the physiological perturbation."""
    g = spec.grid
    period = g.nt * g.dt
    inlet = spec.perturbation_pa * np.sin(2 * np.pi * np.arange(g.nt) * g.dt / period)
    radii_field, _ = hemogrid.solve_flow(spec.model, g, inlet=inlet, bc="inlet",
                                         initial_radii=base_column)
    return radii_field.column(g.nt - 1)


def generate_scenario(spec: ScenarioSpec):
    """Build the labeled sessions for one scenario; pure function of spec."""
    sessions = []
    for s in range(spec.sessions):
        depth = _dip_depth(spec, s)
        truth = _perturbed_truth(spec, _truth_column(spec, depth))
        clean = acoustics.synthesize_echo(truth, spec.pulse, spec.grid,
                                          spec.model, fs=spec.fs,
                                          duration=spec.duration,
                                          session_id=f"s{s:04d}")
        rng = np.random.default_rng([spec.seed & 0xFFFFFFFFFFFFFFFF, s])
        clean_rms = float(np.sqrt(np.mean(clean.samples**2)))
        scale = clean_rms if clean_rms > 0 else 0.01 * spec.pulse.amp_forward
        noise = rng.normal(0.0, spec.noise_rms * scale, clean.samples.size) \
            if spec.noise_rms > 0 else np.zeros(clean.samples.size)
        echo = EchoTrace(samples=clean.samples + noise, fs=spec.fs,
                         session_id=f"s{s:04d}")

        label = _label_from_radii(truth, spec)
        # future labels from the per-session depth trend, capped below full
        # occlusion; baseline and static scenarios keep their current depth
        if spec.kind == "progressive-occlusion" and spec.sessions > 1:
            increment = spec.severity / (spec.sessions - 1)
        else:
            increment = 0.0
        future = []
        for h in range(1, spec.horizon + 1):
            d_future = min(depth + increment * h, 0.95)
            future.append(int(1 - d_future < spec.occlusion_threshold))
        sessions.append(LabeledSession(
            radii_truth=truth, echo=echo, label_v=label,
            future_labels=np.array(future), session_index=s))
    return sessions


# ---------------------------------------------------------------------------
# dataset layout: manifest.json + per-session radii/echo CSV

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write(path, writer):
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".",
                               prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _spec_to_json(spec: ScenarioSpec):
    g, m, p = spec.grid, spec.model, spec.pulse
    return {
        "kind": spec.kind,
        "severity": spec.severity,
        "stenosis_center": spec.stenosis_center,
        "stenosis_width": spec.stenosis_width,
        "noise_rms": spec.noise_rms,
        "seed": spec.seed,
        "sessions": spec.sessions,
        "fs": spec.fs,
        "duration": spec.duration,
        "horizon": spec.horizon,
        "occlusion_threshold": spec.occlusion_threshold,
        "perturbation_pa": spec.perturbation_pa,
        "grid": {"nx": g.nx, "nt": g.nt, "dx": g.dx, "dt": g.dt,
                 "s_max": g.s_max, "cfl": g.cfl},
        "model": {"r0": m.r0, "beta": m.beta, "p_ext": m.p_ext, "rho": m.rho,
                  "mu": m.mu, "alpha": m.alpha, "re": m.re, "c0": m.c0},
        "pulse": {"omega": p.omega, "amp_forward": p.amp_forward,
                  "amp_reflected": p.amp_reflected, "k_x": p.k_x,
                  "k_r": p.k_r, "c": p.c},
    }


def spec_from_json(d):
    return ScenarioSpec(
        kind=d["kind"], severity=d["severity"],
        stenosis_center=d["stenosis_center"],
        stenosis_width=d["stenosis_width"], noise_rms=d["noise_rms"],
        seed=d["seed"], sessions=d["sessions"], fs=d["fs"],
        duration=d["duration"], horizon=d["horizon"],
        occlusion_threshold=d["occlusion_threshold"],
        perturbation_pa=d["perturbation_pa"],
        grid=Grid(**d["grid"]), model=ArteryModel(**d["model"]),
        pulse=PulseSpec(**d["pulse"]),
    )


def write_dataset(sessions, path, spec: ScenarioSpec | None = None):
    """Write sessions + manifest under ``path``; returns the manifest dict."""
    os.makedirs(path, exist_ok=True)
    entries = []
    checksums = {}
    for sess in sessions:
        radii_name = f"session_{sess.session_index:04d}_radii.csv"
        echo_name = f"session_{sess.session_index:04d}_echo.csv"
        radii_path = os.path.join(path, radii_name)

        dx = spec.grid.dx if spec is not None else 1.0
        dt = spec.grid.dt if spec is not None else 1.0

        def write_radii(fh, sess=sess, dx=dx, dt=dt):
            n = sess.radii_truth.size
            fh.write(f"# {n},1,{dx!r},{dt!r}\n")
            fh.write(",".join(f"{float(v)!r}" for v in sess.radii_truth) + "\n")

        _atomic_write(radii_path, write_radii)
        echo_path = os.path.join(path, echo_name)

        def write_echo(fh, sess=sess):
            tr = sess.echo
            fh.write(f"# fs={tr.fs!r} session={tr.session_id}\n")
            fh.write("t_s,p_pa\n")
            for i, v in enumerate(tr.samples):
                fh.write(f"{float(tr.t0 + i / tr.fs)!r},{float(v)!r}\n")

        _atomic_write(echo_path, write_echo)
        checksums[radii_name] = _sha256(radii_path)
        checksums[echo_name] = _sha256(echo_path)
        entries.append({
            "index": sess.session_index,
            "label_v": sess.label_v,
            "future_labels": [int(v) for v in sess.future_labels],
            "radii_file": radii_name,
            "echo_file": echo_name,
            "fs": sess.echo.fs,
            "t0": sess.echo.t0,
            "session_id": sess.echo.session_id,
        })
    manifest = {
        "format_version": FORMAT_VERSION,
        "spec": _spec_to_json(spec) if spec is not None else None,
        "sessions": entries,
        "checksums": checksums,
    }
    _atomic_write(os.path.join(path, "manifest.json"),
                  lambda fh: json.dump(manifest, fh, indent=2, sort_keys=True))
    return manifest


def read_dataset(path):
    """Load sessions back; verifies per-file checksums and the format tag."""
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionError(
            f"unsupported dataset format {manifest.get('format_version')!r}")
    for name, digest in manifest["checksums"].items():
        actual = _sha256(os.path.join(path, name))
        if actual != digest:
            raise CorruptionError(f"{name}: checksum mismatch")
    sessions = []
    for entry in manifest["sessions"]:
        with open(os.path.join(path, entry["radii_file"])) as fh:
            fh.readline()
            radii = np.array([float(v) for v in fh.readline().split(",")])
        t, p = [], []
        with open(os.path.join(path, entry["echo_file"])) as fh:
            fh.readline()
            fh.readline()
            for line in fh:
                line = line.strip()
                if line:
                    a, b = line.split(",")
                    t.append(float(a))
                    p.append(float(b))
        echo = EchoTrace(samples=np.array(p), fs=entry["fs"], t0=entry["t0"],
                         session_id=entry["session_id"])
        sessions.append(LabeledSession(
            radii_truth=radii, echo=echo, label_v=entry["label_v"],
            future_labels=np.array(entry["future_labels"]),
            session_index=entry["index"]))
    return sessions
