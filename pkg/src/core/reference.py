"""
reference solution module for spikelab.
computes ground-truth fields per system (closed forms, spectral exponential
integrators, split-step fourier, cole-hopf, adaptive runge-kutta) and caches
them on disk.
"""

import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import numpy as np
import scipy.fft
import scipy.sparse
from scipy.integrate import solve_ivp

from .systems import SystemSpec, get_system
from ..utils.config import Config
from ..utils.exceptions import DomainError, SolverDivergedError, UnsupportedSystemError

CACHE_FORMAT_VERSION = 2

InitialCondition = Callable[[np.ndarray], np.ndarray]


@dataclass
class ReferenceField:
    """
    reference values on a grid.
    values has shape (Nt, Nx, C) for pdes and (Nt, C) for odes.
    """

    system: str
    x: Optional[np.ndarray]
    t: np.ndarray
    values: np.ndarray
    solver: str
    estimated_error: Optional[float] = None

    def flat_values(self) -> np.ndarray:
        """values flattened time-major to (Nt * Nx, C)."""
        return self.values.reshape(-1, self.values.shape[-1])


def _mesh_columns(x: np.ndarray, t: np.ndarray):
    T, X = np.meshgrid(t, x, indexing='ij')
    return X.reshape(-1, 1), T.reshape(-1, 1)


def _rms(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean((a - b) ** 2)))


def _check_times(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if t.size == 0 or np.any(np.diff(t) < 0) or t[0] < 0:
        raise DomainError("evaluation times must be non-negative and sorted")
    return t


# closed forms

ANALYTIC_SYSTEMS = ('heat', 'advection', 'kdv')


def solve_analytic(spec: Any, x: np.ndarray, t: np.ndarray) -> ReferenceField:
    """
    closed-form reference (heat by separation of variables, advection by
    characteristics, kdv soliton) on the grid x by t.
    """
    spec = get_system(spec)
    if spec.name not in ANALYTIC_SYSTEMS:
        raise UnsupportedSystemError(f"no closed-form reference for {spec.name}")
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    X, T = _mesh_columns(x, t)
    values = spec.exact_solution(X, T, spec.coefficients)
    return ReferenceField(
        system=spec.name, x=x, t=t,
        values=values.reshape(len(t), len(x), -1),
        solver='analytic', estimated_error=0.0,
    )


# spectral bases

class FourierBasis:
    """periodic grid on [a, a + L) with n points."""

    def __init__(self, domain, n: int):
        self.a, b = domain
        self.length = b - self.a
        self.n = n
        self.x = self.a + self.length * np.arange(n) / n
        self.k = 2.0 * np.pi * np.fft.fftfreq(n, d=self.length / n)
        # odd derivatives drop the nyquist mode
        self.k_odd = self.k.copy()
        if n % 2 == 0:
            self.k_odd[n // 2] = 0.0
        self.dealias = np.abs(np.fft.fftfreq(n) * n) < n / 3.0

    def forward(self, u: np.ndarray) -> np.ndarray:
        return np.fft.fft(u)

    def backward(self, v: np.ndarray) -> np.ndarray:
        return np.fft.ifft(v)

    def evaluate(self, v: np.ndarray, x: np.ndarray) -> np.ndarray:
        basis = np.exp(1j * np.outer(np.asarray(x) - self.a, self.k))
        return (v @ basis.T) / self.n


class CosineBasis:
    """even-extension (neumann) grid on [a, b] with n + 1 points."""

    def __init__(self, domain, n: int):
        self.a, b = domain
        self.length = b - self.a
        self.n = n
        self.x = self.a + self.length * np.arange(n + 1) / n
        self.k = np.pi * np.arange(n + 1) / self.length
        self.weights = np.ones(n + 1) / n
        self.weights[0] *= 0.5
        self.weights[-1] *= 0.5

    def forward(self, u: np.ndarray) -> np.ndarray:
        return scipy.fft.dct(u, type=1)

    def backward(self, v: np.ndarray) -> np.ndarray:
        return scipy.fft.idct(v, type=1)

    def evaluate(self, v: np.ndarray, x: np.ndarray) -> np.ndarray:
        basis = np.cos(np.outer(np.asarray(x) - self.a, self.k))
        return (v * self.weights) @ basis.T


class EtdRk4Stepper:
    """
    exponential time differencing rk4 for v' = L v + N(v) with diagonal L.
    phi-function coefficients come from contour means around each L dt.
    """

    def __init__(self, linear: np.ndarray, nonlinear: Callable[[np.ndarray], np.ndarray],
                 dt: float, contour_points: int):
        self.dt = dt
        self.nonlinear = nonlinear
        lin = dt * linear
        self.exp_full = np.exp(lin)
        self.exp_half = np.exp(0.5 * lin)
        roots = np.exp(2j * np.pi * (np.arange(contour_points) + 0.5) / contour_points)
        lr = lin[:, None] + roots[None, :]
        lr3 = lr ** 3
        exp_lr = np.exp(lr)
        coeffs = [
            dt * ((np.exp(0.5 * lr) - 1.0) / lr).mean(axis=1),
            dt * ((-4.0 - lr + exp_lr * (4.0 - 3.0 * lr + lr ** 2)) / lr3).mean(axis=1),
            dt * ((2.0 + lr + exp_lr * (lr - 2.0)) / lr3).mean(axis=1),
            dt * ((-4.0 - 3.0 * lr - lr ** 2 + exp_lr * (4.0 - lr)) / lr3).mean(axis=1),
        ]
        if np.isrealobj(linear):
            coeffs = [c.real for c in coeffs]
            self.exp_full, self.exp_half = self.exp_full.real, self.exp_half.real
        self.q, self.f1, self.f2, self.f3 = coeffs

    def step(self, v: np.ndarray) -> np.ndarray:
        n0 = self.nonlinear(v)
        a = self.exp_half * v + self.q * n0
        n1 = self.nonlinear(a)
        b = self.exp_half * v + self.q * n1
        n2 = self.nonlinear(b)
        c = self.exp_half * a + self.q * (2.0 * n2 - n0)
        n3 = self.nonlinear(c)
        return self.exp_full * v + self.f1 * n0 + 2.0 * self.f2 * (n1 + n2) + self.f3 * n3


def _march(make_stepper: Callable[[float], Any], v0: np.ndarray, t_eval: np.ndarray,
           dt: float, system: str) -> np.ndarray:
    limit = Config.REFERENCE_PARAMS['blowup_limit']
    steppers: Dict[float, Any] = {}
    v, t_now = v0, 0.0
    snapshots = []
    for target in t_eval:
        span = target - t_now
        if span > 1e-14:
            n_steps = max(1, int(math.ceil(span / dt - 1e-9)))
            h = span / n_steps
            key = round(h, 14)
            if key not in steppers:
                steppers[key] = make_stepper(h)
            stepper = steppers[key]
            for i in range(n_steps):
                v = stepper.step(v)
                peak = np.max(np.abs(v))
                if not np.isfinite(peak) or peak > limit:
                    raise SolverDivergedError(
                        f"{system} reference diverged near t = {t_now + (i + 1) * h:.4g} (max coefficient {peak:.3g})"
                    )
            t_now = target
        snapshots.append(np.array(v, copy=True))
    return np.stack(snapshots)


def _initial(spec: SystemSpec, initial_condition: Optional[InitialCondition], x: np.ndarray) -> np.ndarray:
    fn = initial_condition or spec.initial_condition
    return fn(x)


def _with_error_estimate(run: Callable[[float], np.ndarray], dt: float, estimate_error: bool):
    values = run(dt)
    if not estimate_error:
        return values, None
    return values, _rms(values, run(0.5 * dt))


# spectral exponential solvers

SPECTRAL_ETD_SYSTEMS = ('allen-cahn', 'reaction-diffusion', 'cahn-hilliard')


def _spectral_problem(spec: SystemSpec, modes: int):
    c = spec.coefficients
    if spec.name == 'cahn-hilliard':
        basis = FourierBasis(spec.spatial_domain, modes)
        k2 = basis.k ** 2
        linear = -c['epsilon'] ** 2 * k2 ** 2 + k2

        def nonlinear(v):
            u = basis.backward(v).real
            return -k2 * basis.forward(u ** 3) * basis.dealias

        return basis, linear, nonlinear

    basis = CosineBasis(spec.spatial_domain, modes)
    diffusion = c['epsilon'] if spec.name == 'allen-cahn' else c['D']
    linear = -diffusion * basis.k ** 2
    if spec.name == 'allen-cahn':
        reaction = lambda u: u - u ** 3
    else:
        reaction = lambda u: u * (1.0 - u)

    def nonlinear(v):
        return basis.forward(reaction(basis.backward(v)))

    return basis, linear, nonlinear


def solve_spectral_etd(
    spec: Any,
    x: np.ndarray,
    t: np.ndarray,
    modes: int = Config.REFERENCE_PARAMS['spectral_modes'],
    dt: float = Config.REFERENCE_PARAMS['spectral_dt'],
    initial_condition: Optional[InitialCondition] = None,
    estimate_error: bool = False,
) -> ReferenceField:
    """
    spectral reference for allen-cahn, reaction-diffusion (cosine basis, neumann)
    and cahn-hilliard (fourier basis, periodic).

    the stiff diagonal linear part is integrated exactly and the nonlinearity
    explicitly with etdrk4 stages, so the step size is not limited by the
    linear stiffness.

    args:
        spec: system
        x, t: output grid
        modes: spectral resolution
        dt: nominal time step
        initial_condition: optional override of the system ic
        estimate_error: rerun at dt/2 and record the rms difference

    returns:
        ReferenceField
    """
    spec = get_system(spec)
    if spec.name not in SPECTRAL_ETD_SYSTEMS:
        raise UnsupportedSystemError(f"spectral etd solver does not handle {spec.name}")
    t = _check_times(t)
    x = np.asarray(x, dtype=np.float64)
    basis, linear, nonlinear = _spectral_problem(spec, modes)
    v0 = basis.forward(_initial(spec, initial_condition, basis.x)[:, 0])
    contour = Config.REFERENCE_PARAMS['contour_points']

    def run(step: float) -> np.ndarray:
        snaps = _march(lambda h: EtdRk4Stepper(linear, nonlinear, h, contour), v0, t, step, spec.name)
        return basis.evaluate(snaps, x).real

    values, error = _with_error_estimate(run, dt, estimate_error)
    return ReferenceField(spec.name, x, t, values[..., None], 'spectral-etdrk4', error)


ETDRK4_SYSTEMS = ('kuramoto-sivashinsky', 'kdv')


def solve_etdrk4(
    spec: Any,
    x: np.ndarray,
    t: np.ndarray,
    modes: Optional[int] = None,
    dt: Optional[float] = None,
    initial_condition: Optional[InitialCondition] = None,
    estimate_error: bool = False,
) -> ReferenceField:
    """
    fourier etdrk4 reference for kuramoto-sivashinsky on [0, 2 pi] (512 modes)
    and kdv on periodic [0, 1] (256 modes).
    """
    spec = get_system(spec)
    if spec.name not in ETDRK4_SYSTEMS:
        raise UnsupportedSystemError(f"etdrk4 solver does not handle {spec.name}")
    params = Config.REFERENCE_PARAMS
    is_ks = spec.name == 'kuramoto-sivashinsky'
    modes = modes or (params['etdrk4_modes'] if is_ks else params['spectral_modes'])
    dt = dt or (params['etdrk4_dt'] if is_ks else params['spectral_dt'])
    t = _check_times(t)
    x = np.asarray(x, dtype=np.float64)

    basis = FourierBasis(spec.spatial_domain, modes)
    if is_ks:
        linear = basis.k ** 2 - basis.k ** 4
    else:
        linear = 1j * basis.k_odd ** 3
    advect = -0.5j * basis.k_odd * basis.dealias

    def nonlinear(v):
        u = basis.backward(v).real
        return advect * basis.forward(u * u)

    v0 = basis.forward(_initial(spec, initial_condition, basis.x)[:, 0]).astype(complex)
    contour = params['contour_points']

    def run(step: float) -> np.ndarray:
        snaps = _march(lambda h: EtdRk4Stepper(linear, nonlinear, h, contour), v0, t, step, spec.name)
        return basis.evaluate(snaps, x).real

    values, error = _with_error_estimate(run, dt, estimate_error)
    return ReferenceField(spec.name, x, t, values[..., None], 'etdrk4', error)


class _SplitStepStepper:
    """strang splitting: half nonlinear phase, exact linear fourier step, half phase."""

    def __init__(self, basis: FourierBasis, dt: float):
        self.basis = basis
        self.half = 0.5 * dt
        self.linear = np.exp(-1j * basis.k ** 2 * dt)

    def step(self, v: np.ndarray) -> np.ndarray:
        u = self.basis.backward(v)
        u = u * np.exp(1j * np.abs(u) ** 2 * self.half)
        u = self.basis.backward(self.linear * self.basis.forward(u))
        u = u * np.exp(1j * np.abs(u) ** 2 * self.half)
        return self.basis.forward(u)


def solve_split_step(
    spec: Any,
    x: np.ndarray,
    t: np.ndarray,
    modes: int = Config.REFERENCE_PARAMS['split_step_modes'],
    dt: float = Config.REFERENCE_PARAMS['split_step_dt'],
    initial_condition: Optional[InitialCondition] = None,
    estimate_error: bool = False,
) -> ReferenceField:
    """
    split-step fourier reference for i u_t + u_xx + |u|^2 u = 0; channels (re, im).
    """
    spec = get_system(spec)
    if spec.name != 'schrodinger':
        raise UnsupportedSystemError(f"split-step solver does not handle {spec.name}")
    t = _check_times(t)
    x = np.asarray(x, dtype=np.float64)
    basis = FourierBasis(spec.spatial_domain, modes)
    u0 = _initial(spec, initial_condition, basis.x)
    v0 = basis.forward(u0[:, 0] + 1j * u0[:, 1])

    def run(step: float) -> np.ndarray:
        snaps = _march(lambda h: _SplitStepStepper(basis, h), v0, t, step, spec.name)
        field = basis.evaluate(snaps, x)
        return np.stack([field.real, field.imag], axis=-1)

    values, error = _with_error_estimate(run, dt, estimate_error)
    return ReferenceField(spec.name, x, t, values, 'split-step', error)


def grid_mass(values: np.ndarray, spacing: float) -> np.ndarray:
    """periodic-grid integral of |u|^2 per snapshot (rectangle rule is spectrally exact)."""
    return np.sum(np.abs(values) ** 2, axis=-1) * spacing


# ordinary differential equations

ODE_SYSTEMS = ('lorenz', 'seir')
# tolerance ratio of the refinement rerun
ODE_REFINEMENT = 1e-3


def solve_ode_adaptive(
    spec: Any,
    t: np.ndarray,
    tol: float = Config.REFERENCE_PARAMS['ode_tol'],
    initial_state: Optional[np.ndarray] = None,
    estimate_error: bool = False,
) -> ReferenceField:
    """
    rk45 reference with rtol = atol = tol, sampled on the requested times.

    with estimate_error the run is repeated at tol * ODE_REFINEMENT and the
    rms gap between the two is recorded.
    """
    spec = get_system(spec)
    if spec.name not in ODE_SYSTEMS:
        raise UnsupportedSystemError(f"adaptive ode solver does not handle {spec.name}")
    t = _check_times(t)
    y0 = np.asarray(
        initial_state if initial_state is not None else spec.initial_condition(np.zeros(1))[0],
        dtype=np.float64,
    )

    def rhs(_, y):
        return spec.ode_rhs(y[None, :], spec.coefficients)[0]

    def run(tolerance: float) -> np.ndarray:
        solution = solve_ivp(rhs, (0.0, float(t[-1])), y0, method='RK45', t_eval=t,
                             rtol=tolerance, atol=tolerance)
        if not solution.success:
            raise SolverDivergedError(f"{spec.name} integration failed: {solution.message}")
        return solution.y.T

    values = run(tol)
    error = _rms(values, run(tol * ODE_REFINEMENT)) if estimate_error else None
    return ReferenceField(spec.name, None, t, values, 'rk45', error)


# burgers

def solve_cole_hopf(
    spec: Any,
    x: np.ndarray,
    t: np.ndarray,
    nodes: int = Config.REFERENCE_PARAMS['hermite_nodes'],
    estimate_error: bool = False,
) -> ReferenceField:
    """
    burgers reference for u0 = -sin(pi x) through the hopf transform of the
    heat kernel, integrated with gauss-hermite quadrature (log-sum-exp stable).
    """
    spec = get_system(spec)
    if spec.name != 'burgers':
        raise UnsupportedSystemError(f"cole-hopf solver does not handle {spec.name}")
    nu = spec.coefficients['nu']
    x = np.asarray(x, dtype=np.float64)
    t = _check_times(t)

    def run(n: int) -> np.ndarray:
        s, w = np.polynomial.hermite.hermgauss(n)
        T, X = np.meshgrid(t, x, indexing='ij')
        spread = np.sqrt(4.0 * nu * T)[..., None]
        y = X[..., None] - spread * s
        exponent = -np.cos(np.pi * y) / (2.0 * np.pi * nu)
        weights = w * np.exp(exponent - exponent.max(axis=-1, keepdims=True))
        u = -np.sum(weights * np.sin(np.pi * y), axis=-1) / np.sum(weights, axis=-1)
        return np.where(T > 0, u, -np.sin(np.pi * X))

    values = run(nodes)
    error = _rms(values, run(2 * nodes)) if estimate_error else None
    return ReferenceField(spec.name, x, t, values[..., None], 'cole-hopf', error)


def solve_burgers_fd(spec: Any, x: np.ndarray, t: np.ndarray, points: int = 2001) -> ReferenceField:
    """fine-grid method-of-lines burgers run used to validate the cole-hopf path."""
    spec = get_system(spec)
    if spec.name != 'burgers':
        raise UnsupportedSystemError(f"finite-difference solver does not handle {spec.name}")
    nu = spec.coefficients['nu']
    t = _check_times(t)
    grid = np.linspace(0.0, 1.0, points)
    dx = grid[1] - grid[0]

    def rhs(_, u_inner):
        u = np.concatenate([[0.0], u_inner, [0.0]])
        ux = (u[2:] - u[:-2]) / (2.0 * dx)
        uxx = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / dx ** 2
        return -u[1:-1] * ux + nu * uxx

    n_inner = points - 2
    sparsity = scipy.sparse.diags([1, 1, 1], [-1, 0, 1], shape=(n_inner, n_inner))
    solution = solve_ivp(
        rhs, (0.0, float(t[-1])), -np.sin(np.pi * grid[1:-1]), method='BDF',
        t_eval=t, rtol=1e-9, atol=1e-11, jac_sparsity=sparsity,
    )
    if not solution.success:
        raise SolverDivergedError(f"burgers finite differences failed: {solution.message}")
    full = np.zeros((len(t), points))
    full[:, 1:-1] = solution.y.T
    values = np.stack([np.interp(x, grid, row) for row in full])
    return ReferenceField(spec.name, np.asarray(x), t, values[..., None], 'finite-difference', None)


# dispatch and cache

def _solve(spec: SystemSpec, x: Optional[np.ndarray], t: np.ndarray, estimate_error: bool) -> ReferenceField:
    solver = spec.reference_solver
    if solver == 'rk45':
        return solve_ode_adaptive(spec, t, estimate_error=estimate_error)
    if solver == 'analytic':
        return solve_analytic(spec, x, t)
    if solver == 'cole-hopf':
        return solve_cole_hopf(spec, x, t, estimate_error=estimate_error)
    if solver == 'spectral-etdrk4':
        return solve_spectral_etd(spec, x, t, estimate_error=estimate_error)
    if solver == 'etdrk4':
        return solve_etdrk4(spec, x, t, estimate_error=estimate_error)
    if solver == 'split-step':
        return solve_split_step(spec, x, t, estimate_error=estimate_error)
    raise UnsupportedSystemError(f"no reference solver '{solver}' for {spec.name}")


class ReferenceCache:
    """
    disk cache of reference fields.

    each entry is an .npz holding a json header (format version, system,
    grid spec, solver tag, sha256 of the values) and the row-major values;
    writes go to a temp file renamed into place.
    """

    def __init__(self, directory: Optional[str] = None):
        self.directory = Path(directory or os.getenv('SPIKELAB_CACHE', Config.CACHE_DIR))
        self.directory.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def _digest(values: np.ndarray) -> str:
        return hashlib.sha256(np.ascontiguousarray(values).tobytes()).hexdigest()

    def key(self, spec: SystemSpec, x: Optional[np.ndarray], t: np.ndarray) -> str:
        h = hashlib.sha256()
        h.update(spec.name.encode())
        h.update(spec.reference_solver.encode())
        h.update(json.dumps(Config.REFERENCE_PARAMS, sort_keys=True).encode())
        h.update(str(Config.CAHN_HILLIARD_IC_SEED).encode())
        if x is not None:
            h.update(np.ascontiguousarray(x, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(t, dtype=np.float64).tobytes())
        nx = 0 if x is None else len(x)
        return f"{spec.name}_{nx}x{len(t)}_{h.hexdigest()[:16]}"

    def load(self, key: str) -> Optional[ReferenceField]:
        path = self.directory / f"{key}.npz"
        if not path.exists():
            return None
        try:
            with np.load(path, allow_pickle=False) as data:
                header = json.loads(str(data['header']))
                values = data['values']
                x = data['x'] if header['has_x'] else None
                t = data['t']
        except (OSError, ValueError, KeyError) as exc:
            print(f"[WARNING] unreadable reference cache {path.name}: {exc}")
            return None
        if header.get('format_version') != CACHE_FORMAT_VERSION or header.get('hash') != self._digest(values):
            print(f"[WARNING] reference cache {path.name} failed validation; regenerating")
            return None
        return ReferenceField(header['system'], x, t, values, header['solver'], header['estimated_error'])

    def save(self, key: str, field: ReferenceField) -> Path:
        header = {
            'format_version': CACHE_FORMAT_VERSION,
            'system': field.system,
            'solver': field.solver,
            'grid': {'nx': 0 if field.x is None else len(field.x), 'nt': len(field.t)},
            'has_x': field.x is not None,
            'estimated_error': field.estimated_error,
            'hash': self._digest(field.values),
        }
        path = self.directory / f"{key}.npz"
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix='.tmp')
        try:
            with os.fdopen(fd, 'wb') as handle:
                np.savez(
                    handle,
                    header=np.array(json.dumps(header)),
                    values=np.ascontiguousarray(field.values),
                    x=np.zeros(0) if field.x is None else field.x,
                    t=field.t,
                )
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.remove(tmp)
        return path


def _flag_error(field: ReferenceField) -> ReferenceField:
    error = field.estimated_error
    if error is not None and not error < Config.REFERENCE_ERROR_TOLERANCE:
        print(f"[WARNING] {field.system} {field.solver} reference estimated error {error:.2e} "
              f">= {Config.REFERENCE_ERROR_TOLERANCE:g}")
    return field


def compute_reference(
    spec: Any,
    x: Optional[np.ndarray],
    t: np.ndarray,
    cache: Optional[ReferenceCache] = None,
    estimate_error: bool = True,
) -> ReferenceField:
    """
    reference field on the grid x by t using the system's solver, via the cache.

    the self-convergence estimate is stored with the cached field; estimates at
    or above Config.REFERENCE_ERROR_TOLERANCE print a warning.

    args:
        spec: system
        x: spatial grid (None for odes)
        t: sorted times
        cache: optional ReferenceCache
        estimate_error: run the solver's refinement check

    returns:
        ReferenceField
    """
    spec = get_system(spec)
    x = None if spec.is_ode or x is None else np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if cache is None:
        return _flag_error(_solve(spec, x, t, estimate_error))
    key = cache.key(spec, x, t)
    field = cache.load(key)
    if field is None or (estimate_error and field.estimated_error is None):
        field = _flag_error(_solve(spec, x, t, estimate_error))
        cache.save(key, field)
    return field
