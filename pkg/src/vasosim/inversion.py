"""Radii recovery by regularized nonlinear least squares.

The reference solver is projected gradient descent with backtracking line
search on

    J(r) = 0.5 ||F(r) - y||^2 + lambda ||L (r - prior)||^2

where F is the single-scattering echo forward map and L the interior
second-difference operator. A solver registry lets a learned surrogate
replace the optimizer behind the same call signature.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .acoustics import EchoTrace, PulseSpec, synthesize_echo
from .errors import (
    DomainError,
    NumericalError,
    RegistrationError,
    SolverNotFoundError,
)
from .hemogrid import ArteryModel, Grid

__all__ = [
    "InverseProblem",
    "SolverOptions",
    "InverseSolution",
    "objective",
    "gradient",
    "invert_radii",
    "register_solver",
    "get_solver",
    "solver_names",
    "second_difference_matrix",
]


@dataclass(frozen=True)
class InverseProblem:
    observed: EchoTrace
    pulse: PulseSpec
    grid: Grid
    model: ArteryModel
    lam: float = 1e-4
    prior: np.ndarray | None = None
    bounds: tuple[float, float] = (1e-4, 1e-2)

    def __post_init__(self):
        if self.lam < 0:
            raise DomainError("lambda must be nonnegative")
        r_min, r_max = self.bounds
        if not (0 < r_min < r_max):
            raise DomainError("bounds must satisfy 0 < r_min < r_max")
        prior = self.prior
        if prior is None:
            prior = np.full(self.grid.nx, self.model.r0)
        prior = np.asarray(prior, dtype=float)
        if prior.shape != (self.grid.nx,):
            raise DomainError("prior length must equal grid.nx")
        if np.any(prior < r_min) or np.any(prior > r_max):
            raise DomainError("prior must lie within bounds")
        object.__setattr__(self, "prior", prior)

    @property
    def duration(self):
        return self.observed.samples.size / self.observed.fs

    def forward(self, radii):
        """Forward map F: radii column -> echo samples."""
        trace = synthesize_echo(radii, self.pulse, self.grid, self.model,
                                fs=self.observed.fs, duration=self.duration)
        return trace.samples


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 500
    grad_tol: float = 1e-8   # relative to the initial gradient norm
    step_tol: float = 1e-12  # relative step size ||dr||/||r||
    fd_step: float = 1e-6    # relative finite-difference step
    ls_shrink: float = 0.5
    ls_c1: float = 1e-4
    obj_floor: float = 1e-20

    def __post_init__(self):
        if self.max_iter < 1:
            raise DomainError("max_iter must be >= 1")
        if self.grad_tol <= 0 or self.step_tol <= 0 or self.fd_step <= 0:
            raise DomainError("tolerances must be positive")
        if not (0 < self.ls_shrink < 1):
            raise DomainError("line-search shrink factor must be in (0, 1)")


@dataclass(frozen=True)
class InverseSolution:
    radii: np.ndarray
    residual_norm: float
    objective_value: float
    iterations: int
    converged: bool
    gradient_norm_final: float

    def to_dict(self):
        return {
            "radii_m": [float(v) for v in self.radii],
            "residual_norm": self.residual_norm,
            "objective_value": self.objective_value,
            "iterations": self.iterations,
            "converged": self.converged,
            "gradient_norm_final": self.gradient_norm_final,
        }


@lru_cache(maxsize=32)
def second_difference_matrix(n):
    """Second-difference smoothing operator with endpoint anchors.

    The two identity rows remove the null space of the interior stencil
    (linear ramps), so the penalty-dominated limit actually returns the
    prior. Shape (n, n).
    """
    L = np.zeros((n, n))
    L[0, 0] = 1.0
    L[-1, -1] = 1.0
    for i in range(n - 2):
        L[i + 1, i] = 1.0
        L[i + 1, i + 1] = -2.0
        L[i + 1, i + 2] = 1.0
    L.setflags(write=False)
    return L


def _check_bounds(radii, problem):
    r_min, r_max = problem.bounds
    if np.any(radii < r_min - 1e-15) or np.any(radii > r_max + 1e-15):
        raise DomainError("radii outside bounds")


def objective(radii, problem: InverseProblem):
    """Data misfit plus smoothing penalty; see module docstring."""
    radii = np.asarray(radii, dtype=float)
    _check_bounds(radii, problem)
    residual = problem.forward(radii) - problem.observed.samples
    data_term = 0.5 * float(residual @ residual)
    L = second_difference_matrix(problem.grid.nx)
    smooth = L @ (radii - problem.prior)
    return data_term + problem.lam * float(smooth @ smooth)


def gradient(radii, problem: InverseProblem, options: SolverOptions):
    """Forward finite-difference gradient of :func:`objective`."""
    return _fd_gradient(radii, problem, options, central=False)


def _fd_gradient(radii, problem, options, central):
    radii = np.asarray(radii, dtype=float)
    g = np.empty(radii.size)
    f0 = None if central else objective(radii, problem)
    if f0 is not None and not np.isfinite(f0):
        raise NumericalError("objective is non-finite at the base point")
    r_min, r_max = problem.bounds
    for i in range(radii.size):
        h = options.fd_step * abs(radii[i])
        probe = radii.copy()
        if central:
            probe[i] = radii[i] + h
            f_plus = objective(np.clip(probe, r_min, r_max), problem)
            probe[i] = radii[i] - h
            f_minus = objective(np.clip(probe, r_min, r_max), problem)
            g[i] = (f_plus - f_minus) / (2 * h)
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericalError(f"non-finite objective probing component {i}")
        else:
            probe[i] = min(radii[i] + h, r_max)
            h_eff = probe[i] - radii[i]
            if h_eff == 0:  # at the upper bound, step backwards
                probe[i] = radii[i] - h
                h_eff = -h
            f1 = objective(probe, problem)
            if not np.isfinite(f1):
                raise NumericalError(f"non-finite objective probing component {i}")
            g[i] = (f1 - f0) / h_eff
    return g


def central_gradient(radii, problem, options):
    """Central-difference gradient; the validation oracle for :func:`gradient`."""
    return _fd_gradient(radii, problem, options, central=True)


def invert_radii(problem: InverseProblem, options: SolverOptions | None = None):
    """Projected gradient descent with backtracking line search.

    The projection clips iterates to the bound box. Accepted objective
    values are non-increasing; line-search failure is reported through
    ``converged=False`` rather than an exception.
    """
    if options is None:
        options = SolverOptions()
    r_min, r_max = problem.bounds
    x = np.clip(problem.prior.copy(), r_min, r_max)
    f = objective(x, problem)

    g = gradient(x, problem, options)
    g_norm0 = float(np.linalg.norm(g))
    g_norm = g_norm0

    def residual_norm(radii):
        return float(np.linalg.norm(problem.forward(radii)
                                    - problem.observed.samples))

    if f <= options.obj_floor or g_norm0 == 0.0:
        return InverseSolution(radii=x, residual_norm=residual_norm(x),
                               objective_value=f, iterations=0, converged=True,
                               gradient_norm_final=g_norm0)

    # initial step sized so the first trial moves ~1% of the prior scale
    t = 0.01 * float(np.max(np.abs(x))) / float(np.max(np.abs(g)))
    converged = False
    it = 0
    for it in range(1, options.max_iter + 1):
        accepted = False
        t_try = t
        for _ in range(60):
            x_new = np.clip(x - t_try * g, r_min, r_max)
            step = x_new - x
            if np.all(step == 0):
                break
            f_new = objective(x_new, problem)
            # Armijo sufficient decrease on the projected step
            if f_new <= f + options.ls_c1 * float(g @ step):
                accepted = True
                break
            t_try *= options.ls_shrink
        if not accepted:
            break
        step_rel = float(np.linalg.norm(step)) / max(float(np.linalg.norm(x)), 1e-300)
        g_new = gradient(x_new, problem, options)
        # Barzilai-Borwein spectral step seeds the next line search
        dg = g_new - g
        sg = float(step @ dg)
        t = float(step @ step) / sg if sg > 0 else t_try / options.ls_shrink
        x, f, g = x_new, f_new, g_new
        g_norm = float(np.linalg.norm(g))
        if g_norm <= options.grad_tol * g_norm0 or f <= options.obj_floor:
            converged = True
            break
        if step_rel < options.step_tol:
            converged = True
            break
    return InverseSolution(radii=x, residual_norm=residual_norm(x),
                           objective_value=f, iterations=it,
                           converged=converged, gradient_norm_final=g_norm)


def check_solver_conformance(solver, problem: InverseProblem,
                             options: SolverOptions | None = None):
    """Verify a solver implementation honors the interface contract.

    Checks output type, radii shape, bound feasibility, the iteration cap
    and determinism across two identical calls. Raises DomainError on the
    first violation; returns the solution on success.
    """
    if options is None:
        options = SolverOptions()
    sol = solver(problem, options)
    if not isinstance(sol, InverseSolution):
        raise DomainError("solver must return an InverseSolution")
    radii = np.asarray(sol.radii, dtype=float)
    if radii.shape != (problem.grid.nx,):
        raise DomainError("solution radii shape must equal grid.nx")
    r_min, r_max = problem.bounds
    if np.any(radii < r_min) or np.any(radii > r_max):
        raise DomainError("solution radii violate bounds")
    if sol.iterations > options.max_iter:
        raise DomainError("iterations exceed max_iter")
    sol2 = solver(problem, options)
    if not np.array_equal(np.asarray(sol2.radii), radii):
        raise DomainError("solver is not deterministic")
    return sol


# ---------------------------------------------------------------------------
# solver registry

_REGISTRY: dict[str, object] = {}


def register_solver(name, solver):
    """Register a named solver callable (problem, options) -> InverseSolution."""
    if name in _REGISTRY:
        raise RegistrationError(f"solver {name!r} already registered")
    _REGISTRY[name] = solver
    return name


def get_solver(name):
    try:
        return _REGISTRY[name]
    except KeyError:
        raise SolverNotFoundError(name) from None


def solver_names():
    return sorted(_REGISTRY)


register_solver("gauss-descent", invert_radii)
