"""Discretized non-bifurcated artery model.

A single arterial segment is resolved on a uniform space-time grid. The
cross-sectional area field is advanced with a conservative first-order
upwind scheme for

    dD/dt + d(uD)/dx = 0

and the axial velocity with an explicit Euler step of the 1D axisymmetric
reduction of the nondimensional viscous momentum balance

    (alpha^2/Re) du/dt + u du/dx + dp/dx - (1/Re) d2u/dx2 = 0.

The system is closed by a linear-elastic tube law mapping area to pressure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SimulationError, StabilityError

__all__ = [
    "Grid",
    "ArteryModel",
    "RadiiField",
    "FlowState",
    "area_from_radius",
    "radius_from_area",
    "tube_law",
    "area_from_pressure",
    "step_continuity",
    "step_momentum",
    "solve_flow",
    "write_radii_csv",
    "read_radii_csv",
    "read_waveform_csv",
]


@dataclass(frozen=True)
class Grid:
    """Uniform space-time grid for one arterial segment.

    ``s_max`` is the configured maximum signal speed used to enforce the
    CFL bound ``dt <= cfl * dx / s_max`` at construction time.
    """

    nx: int
    nt: int
    dx: float
    dt: float
    s_max: float = 5.0
    cfl: float = 0.5

    def __post_init__(self):
        if self.nx < 2:
            raise DomainError(f"nx must be >= 2, got {self.nx}")
        if self.nt < 1:
            raise DomainError(f"nt must be >= 1, got {self.nt}")
        if self.dx <= 0 or self.dt <= 0:
            raise DomainError("dx and dt must be positive")
        if not (0 < self.cfl <= 1):
            raise DomainError(f"cfl must be in (0, 1], got {self.cfl}")
        if self.s_max <= 0:
            raise DomainError("s_max must be positive")
        limit = self.cfl * self.dx / self.s_max
        if self.dt > limit * (1 + 1e-12):
            raise DomainError(
                f"dt={self.dt} violates CFL bound {limit} "
                f"(cfl={self.cfl}, dx={self.dx}, s_max={self.s_max})"
            )

    @property
    def length(self):
        return self.nx * self.dx

    @property
    def x(self):
        """Cell-center coordinates."""
        return (np.arange(self.nx) + 0.5) * self.dx


@dataclass(frozen=True)
class ArteryModel:
    """Physical parameters of the segment wall and the blood within it."""

    r0: float = 2e-3
    beta: float = 1.5e7  # gives pulse-wave speed sqrt(beta*sqrt(D0)/(2 rho)) ~ 5 m/s
    p_ext: float = 0.0
    rho: float = 1060.0
    mu: float = 3.5e-3
    alpha: float = 3.0
    re: float = 100.0
    c0: float = 1540.0

    def __post_init__(self):
        for name in ("r0", "beta", "rho", "mu", "alpha", "re", "c0"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")

    @property
    def d0(self):
        """Baseline cross-sectional area pi*r0^2."""
        return math.pi * self.r0 * self.r0


@dataclass(frozen=True)
class RadiiField:
    """Radius r(i, j) over the space-time grid, shape (nx, nt)."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.shape != (self.grid.nx, self.grid.nt):
            raise DomainError(
                f"radii shape {values.shape} does not match grid "
                f"({self.grid.nx}, {self.grid.nt})"
            )
        if not np.all(values > 0):
            raise DomainError("all radii must be positive")

    def column(self, j):
        """Radii at time index j."""
        return self.values[:, j].copy()


@dataclass
class FlowState:
    """Area, velocity and pressure fields at a single time index."""

    area: np.ndarray
    velocity: np.ndarray
    pressure: np.ndarray
    time_index: int = 0

    def __post_init__(self):
        self.area = np.asarray(self.area, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.pressure = np.asarray(self.pressure, dtype=float)
        if not (self.area.shape == self.velocity.shape == self.pressure.shape):
            raise DomainError("area, velocity and pressure must share a shape")
        if not np.all(self.area > 0):
            raise DomainError("area values must be positive")

    @classmethod
    def from_radii_column(cls, radii, model: ArteryModel, time_index=0):
        """Build a resting state whose area is pi*r^2 of the given column."""
        radii = np.asarray(radii, dtype=float)
        if not np.all(radii > 0):
            raise DomainError("radii must be positive")
        area = np.pi * radii**2
        pressure = tube_law(area, model)
        return cls(
            area=area,
            velocity=np.zeros_like(area),
            pressure=pressure,
            time_index=time_index,
        )

    def radii(self):
        return radius_from_area(self.area)


def area_from_radius(r):
    """Cross-sectional area D = pi*r^2 for positive radius (scalar or array)."""
    r = np.asarray(r, dtype=float)
    if not np.all(r > 0):
        raise DomainError("radius must be positive")
    out = np.pi * r * r
    return float(out) if out.ndim == 0 else out

def radius_from_area(d):
    """Inverse of :func:`area_from_radius`: r = sqrt(D/pi)."""
    d = np.asarray(d, dtype=float)
    if not np.all(d > 0):
        raise DomainError("area must be positive")
    out = np.sqrt(d / np.pi)
    return float(out) if out.ndim == 0 else out


def tube_law(d, model: ArteryModel):
    """Linear-elastic wall closure p = p_ext + beta*(sqrt(D) - sqrt(D0))."""
    d = np.asarray(d, dtype=float)
    if not np.all(d > 0):
        raise DomainError("area must be positive")
    out = model.p_ext + model.beta * (np.sqrt(d) - math.sqrt(model.d0))
    return float(out) if out.ndim == 0 else out


def area_from_pressure(p, model: ArteryModel):
    """Invert the tube law; rejects pressures that would collapse the lumen."""
    p = np.asarray(p, dtype=float)
    root = math.sqrt(model.d0) + (p - model.p_ext) / model.beta
    if not np.all(root > 0):
        raise DomainError("pressure below lumen-collapse limit of the tube law")
    out = root * root
    return float(out) if out.ndim == 0 else out


def _interface_flux(d, u, bc):
    """Upwind flux of F = u*D at the nx+1 cell interfaces."""
    if bc == "periodic":
        dl = d
        dr = np.roll(d, -1)
        uh = 0.5 * (u + np.roll(u, -1))
        flux = np.where(uh >= 0, uh * dl, uh * dr)
        return np.concatenate(([flux[-1]], flux))
    # fixed ends: zero-gradient ghost cells
    dg = np.concatenate(([d[0]], d, [d[-1]]))
    ug = np.concatenate(([u[0]], u, [u[-1]]))
    uh = 0.5 * (ug[:-1] + ug[1:])
    return np.where(uh >= 0, uh * dg[:-1], uh * dg[1:])


def step_continuity(state: FlowState, grid: Grid, bc="periodic"):
    """Advance the area field one conservative upwind step.

    With periodic boundaries the discrete total volume sum(D)*dx is
    conserved to rounding because the update is in flux-difference form.
    """
    d, u = state.area, state.velocity
    if d.shape != (grid.nx,):
        raise DomainError("state dimensions do not match grid")
    courant = np.max(np.abs(u)) * grid.dt / grid.dx
    if courant > 1:
        raise StabilityError(f"continuity CFL violated: |u|dt/dx = {courant:.3g} > 1")
    flux = _interface_flux(d, u, bc)
    d_new = d - (grid.dt / grid.dx) * (flux[1:] - flux[:-1])
    return FlowState(
        area=d_new,
        velocity=u.copy(),
        pressure=state.pressure.copy(),
        time_index=state.time_index + 1,
    )


def _shift(a, k, bc):
    if bc == "periodic":
        return np.roll(a, -k)
    out = np.empty_like(a)
    if k == 1:
        out[:-1] = a[1:]
        out[-1] = a[-1]
    else:
        out[1:] = a[:-1]
        out[0] = a[0]
    return out


def step_momentum(state: FlowState, grid: Grid, model: ArteryModel,
                  bc="periodic", nonlinear=True):
    """Advance the velocity one explicit Euler step of the reduced momentum
    balance, with upwind advection and central pressure/diffusion stencils.

    Fields are treated in nondimensional form; the factor Re/alpha^2
    multiplies the whole right-hand side.
    """
    u, p = state.velocity, state.pressure
    if u.shape != (grid.nx,):
        raise DomainError("state dimensions do not match grid")
    scale = model.re / model.alpha**2
    nu_eff = 1.0 / model.alpha**2  # (Re/alpha^2) * (1/Re)
    diff_number = nu_eff * grid.dt / grid.dx**2
    if diff_number > 0.5:
        raise StabilityError(
            f"momentum diffusion number {diff_number:.3g} exceeds 0.5"
        )
    adv_courant = scale * np.max(np.abs(u)) * grid.dt / grid.dx
    if adv_courant > 1:
        raise StabilityError(
            f"momentum advective Courant number {adv_courant:.3g} exceeds 1"
        )

    u_p = _shift(u, 1, bc)
    u_m = _shift(u, -1, bc)
    p_p = _shift(p, 1, bc)
    p_m = _shift(p, -1, bc)

    dpdx = (p_p - p_m) / (2 * grid.dx)
    d2u = (u_p - 2 * u + u_m) / grid.dx**2
    rhs = -dpdx + (1.0 / model.re) * d2u
    if nonlinear:
        dudx_up = np.where(u >= 0, (u - u_m) / grid.dx, (u_p - u) / grid.dx)
        rhs = rhs - u * dudx_up
    u_new = u + grid.dt * scale * rhs
    return FlowState(
        area=state.area.copy(),
        velocity=u_new,
        pressure=p.copy(),
        time_index=state.time_index + 1,
    )


def solve_flow(model: ArteryModel, grid: Grid, inlet=None, bc="periodic",
               initial_radii=None):
    """Run the coupled continuity/momentum loop and record the radii history.

    Parameters
    ----------
    inlet : callable t -> Pa, array of length nt, or None
        Gauge pressure imposed at x=0 (added to p_ext) when
        ``bc == "inlet"``. Ignored for periodic runs.
    bc : "periodic" or "inlet"
        "inlet" drives the first cell from the waveform through the tube
        law and applies a zero-gradient outlet.
    initial_radii : optional radii column, defaults to constant r0.

    Returns
    -------
    (RadiiField, list[FlowState])
        Radii history with column j the state after j steps, and the
        per-step flow states (the list has nt entries, index 0 initial).
    """
    if bc not in ("periodic", "inlet"):
        raise DomainError(f"unknown boundary condition {bc!r}")
    if initial_radii is None:
        initial_radii = np.full(grid.nx, model.r0)
    initial_radii = np.asarray(initial_radii, dtype=float)
    # the initial column doubles as the rest geometry of the wall closure,
    # so every initial state is an equilibrium under zero forcing
    sqrt_d_rest = np.sqrt(np.pi) * initial_radii

    def closure(d):
        return model.p_ext + model.beta * (np.sqrt(d) - sqrt_d_rest)

    state = FlowState.from_radii_column(initial_radii, model)
    state.pressure = closure(state.area)

    if inlet is None:
        waveform = np.zeros(grid.nt)
    elif callable(inlet):
        waveform = np.array([inlet(j * grid.dt) for j in range(grid.nt)], dtype=float)
    else:
        waveform = np.asarray(inlet, dtype=float)
        if waveform.shape != (grid.nt,):
            raise DomainError("inlet waveform length must equal nt")

    radii = np.empty((grid.nx, grid.nt))
    states = []
    step_bc = "periodic" if bc == "periodic" else "fixed"
    for j in range(grid.nt):
        if bc == "inlet":
            # drive the inlet cell through the wall closure, zero-gradient outlet
            state.pressure[0] = model.p_ext + waveform[j]
            root = sqrt_d_rest[0] + waveform[j] / model.beta
            if root <= 0:
                raise SimulationError(
                    f"inlet pressure collapses the lumen at step {j}",
                    step_index=j)
            state.area[0] = root * root
            state.area[-1] = state.area[-2]
            state.velocity[-1] = state.velocity[-2]
            state.pressure[-1] = state.pressure[-2]
        if not (np.all(np.isfinite(state.area)) and np.all(state.area > 0)
                and np.all(np.isfinite(state.velocity))):
            raise SimulationError(f"solver diverged at step {j}", step_index=j)
        radii[:, j] = radius_from_area(state.area)
        states.append(FlowState(state.area.copy(), state.velocity.copy(),
                                state.pressure.copy(), time_index=j))
        if j == grid.nt - 1:
            break
        try:
            state = step_momentum(state, grid, model, bc=step_bc)
            state = step_continuity(state, grid, bc=step_bc)
        except StabilityError as exc:
            raise SimulationError(f"solver unstable at step {j}: {exc}",
                                  step_index=j) from exc
        state.pressure = closure(state.area)
        state.time_index = j + 1
    return RadiiField(values=radii, grid=grid), states


# ---------------------------------------------------------------------------
# file formats

def write_radii_csv(path, radii: RadiiField):
    """CSV with header '# nx,nt,dx,dt' then nt rows of nx radii in meters."""
    g = radii.grid
    with open(path, "w") as fh:
        fh.write(f"# {g.nx},{g.nt},{g.dx!r},{g.dt!r}\n")
        for j in range(g.nt):
            fh.write(",".join(f"{float(v)!r}" for v in radii.values[:, j]) + "\n")


def read_radii_csv(path, s_max=5.0, cfl=1.0):
    from .errors import ConfigurationError

    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ConfigurationError(f"{path}: missing '# nx,nt,dx,dt' header")
        try:
            nx_s, nt_s, dx_s, dt_s = header.lstrip("# ").split(",")
            nx, nt, dx, dt = int(nx_s), int(nt_s), float(dx_s), float(dt_s)
        except ValueError as exc:
            raise ConfigurationError(f"{path}: malformed header {header!r}") from exc
        rows = []
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    values = np.array(rows, dtype=float).T
    if values.shape != (nx, nt):
        raise ConfigurationError(
            f"{path}: body shape {values.shape} does not match header ({nx}, {nt})"
        )
    grid = Grid(nx=nx, nt=nt, dx=dx, dt=dt, s_max=s_max, cfl=cfl)
    return RadiiField(values=values, grid=grid)


def read_waveform_csv(path):
    """Two-column CSV t_s,p_pa; returns (t, p) arrays."""
    from .errors import ConfigurationError

    t, p = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("t_s"):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ConfigurationError(f"{path}: expected two columns, got {line!r}")
            t.append(float(parts[0]))
            p.append(float(parts[1]))
    return np.array(t), np.array(p)
