"""
benchmark registry for spikelab.
defines residual operators, domains, initial/boundary conditions, ood
windows and collocation sampling for nine 1d pdes and two odes.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np
import torch
from scipy.stats import qmc

from . import autodiff as ad
from .autodiff import eval_with_input_derivs
from ..utils.config import Config
from ..utils.exceptions import UnknownSystemError

MultiIndex = Tuple[int, ...]
Range = Tuple[float, float]

# pde multi-indices are ordered (x, t)
U, UX, UXX, UXXX, UXXXX, UT = (0, 0), (1, 0), (2, 0), (3, 0), (4, 0), (0, 1)
# ode multi-indices carry t only
Y, YT = (0,), (1,)


@dataclass(frozen=True)
class Window:
    """evaluation window; x_range is None for odes."""

    name: str
    x_range: Optional[Range]
    t_range: Range


@dataclass(frozen=True)
class RecoveryEquation:
    """one regression u_t-like target = sum_j c_j column_j with known c_j."""

    name: str
    target: np.ndarray
    terms: List[Tuple[str, np.ndarray, float]]


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """one benchmark system."""

    name: str
    display_name: str
    state_dim: int
    spatial_domain: Optional[Range]
    coefficients: Mapping[str, float]
    ic_label: str
    initial_condition: Callable[[np.ndarray], np.ndarray]
    bc_kind: Optional[str]
    residual_orders: Tuple[MultiIndex, ...]
    residual_fn: Callable[[Dict[MultiIndex, Any], Mapping[str, float]], Any]
    reference_solver: str
    windows: Mapping[str, Window]
    max_derivative_order: int
    periodic_orders: Tuple[int, ...] = (0,)
    conserved_quantities: Tuple[str, ...] = ()
    time_window: Range = (0.0, 1.0)
    channel_names: Tuple[str, ...] = ('u',)
    exact_solution: Optional[Callable[[Any, Any, Mapping[str, float]], Any]] = None
    recovery_fn: Optional[Callable[[Dict[MultiIndex, np.ndarray], Mapping[str, float]], List[RecoveryEquation]]] = None
    ode_rhs: Optional[Callable[[Any, Mapping[str, float]], Any]] = None
    notes: str = ''

    @property
    def is_ode(self) -> bool:
        return self.spatial_domain is None

    @property
    def input_dim(self) -> int:
        return 1 if self.is_ode else 2

    def describe(self) -> Dict[str, Any]:
        """structured dump for run manifests."""
        return {
            'name': self.name,
            'display_name': self.display_name,
            'state_dim': self.state_dim,
            'spatial_domain': list(self.spatial_domain) if self.spatial_domain else None,
            'time_window': list(self.time_window),
            'coefficients': dict(self.coefficients),
            'ic': self.ic_label,
            'bc': self.bc_kind,
            'periodic_orders': list(self.periodic_orders),
            'conserved_quantities': list(self.conserved_quantities),
            'max_derivative_order': self.max_derivative_order,
            'reference_solver': self.reference_solver,
            'windows': {
                k: {'x': list(w.x_range) if w.x_range else None, 't': list(w.t_range)}
                for k, w in self.windows.items()
            },
            'notes': self.notes,
        }


@dataclass
class CollocationSet:
    """latin hypercube training points."""

    interior: np.ndarray
    boundary_left: np.ndarray
    boundary_right: np.ndarray
    initial: np.ndarray
    initial_values: np.ndarray
    seed: int

    @property
    def counts(self) -> Tuple[int, int, int]:
        return (
            len(self.interior),
            len(self.boundary_left) + len(self.boundary_right),
            len(self.initial),
        )


def _col(d: Dict[MultiIndex, Any], alpha: MultiIndex, channel: int = 0) -> Any:
    return d[alpha][..., channel:channel + 1]


# residual operators (return (N, channels))

def _heat(d, c):
    return d[UT] - c['alpha'] * d[UXX]


def _advection(d, c):
    return d[UT] + c['c'] * d[UX]


def _burgers(d, c):
    return d[UT] + d[U] * d[UX] - c['nu'] * d[UXX]


def _allen_cahn(d, c):
    u = d[U]
    return d[UT] - c['epsilon'] * d[UXX] - u + u * u * u


def _kdv(d, c):
    return d[UT] + d[U] * d[UX] + d[UXXX]


def _reaction_diffusion(d, c):
    u = d[U]
    return d[UT] - c['D'] * d[UXX] - u * (1.0 - u)


def _cahn_hilliard(d, c):
    u, ux, uxx = d[U], d[UX], d[UXX]
    chem_xx = 6.0 * u * ux * ux + (3.0 * u * u - 1.0) * uxx
    return d[UT] + c['epsilon'] ** 2 * d[UXXXX] - chem_xx


def _kuramoto_sivashinsky(d, c):
    return d[UT] + d[U] * d[UX] + d[UXX] + d[UXXXX]


def _schrodinger(d, c):
    a, b = _col(d, U, 0), _col(d, U, 1)
    modulus = a * a + b * b
    real = -_col(d, UT, 1) + _col(d, UXX, 0) + modulus * a
    imag = _col(d, UT, 0) + _col(d, UXX, 1) + modulus * b
    return ad.concat([real, imag])


def _lorenz_rhs(u, c):
    x, y, z = u[..., 0:1], u[..., 1:2], u[..., 2:3]
    return ad.concat([
        c['sigma'] * (y - x),
        x * (c['rho'] - z) - y,
        x * y - c['beta'] * z,
    ])


def _seir_rhs(u, c):
    s, e, i = u[..., 0:1], u[..., 1:2], u[..., 2:3]
    infection = c['beta'] * s * i / c['N']
    return ad.concat([
        -infection,
        infection - c['sigma'] * e,
        c['sigma'] * e - c['gamma'] * i,
        c['gamma'] * i,
    ])


def _ode_residual(rhs):
    def residual_fn(d, c):
        return d[YT] - rhs(d[Y], c)
    return residual_fn


# closed-form solutions of the registered equations (jets, tensors or arrays)

def _heat_exact(x, t, c):
    return ad.sin(math.pi * x) * ad.exp(-c['alpha'] * math.pi ** 2 * t)


def _advection_exact(x, t, c):
    return ad.sin(2.0 * math.pi * (x - c['c'] * t))


BURGERS_FRONT = {'speed': 0.5, 'amplitude': 0.1}


def _burgers_exact(x, t, c):
    speed, amp = BURGERS_FRONT['speed'], BURGERS_FRONT['amplitude']
    return speed - amp * ad.tanh(amp * (x - speed * t - 0.5) / (2.0 * c['nu']))


def _allen_cahn_exact(x, t, c):
    kappa = 1.0 / math.sqrt(2.0 * c['epsilon'])
    speed = -1.5 * math.sqrt(2.0 * c['epsilon'])
    return 0.5 * (1.0 + ad.tanh(0.5 * kappa * (x - 0.5 - speed * t)))


def _kdv_exact(x, t, c):
    th = ad.tanh((x - 0.5 - 2.0 * t / 3.0) / math.sqrt(6.0))
    return 2.0 * (1.0 - th * th)


def _reaction_diffusion_exact(x, t, c):
    z = (x - 0.5) / math.sqrt(6.0 * c['D']) - 5.0 * t / 6.0
    w = 0.5 * (1.0 - ad.tanh(0.5 * z))
    return w * w


SCHRODINGER_SOLITON = {'amplitude': 1.0, 'velocity': 2.0}


def _schrodinger_exact(x, t, c):
    a, v = SCHRODINGER_SOLITON['amplitude'], SCHRODINGER_SOLITON['velocity']
    envelope = math.sqrt(2.0) * a * ad.sech(a * (x - 0.5 - v * t))
    phase = 0.5 * v * x + (a * a - 0.25 * v * v) * t
    return ad.concat([envelope * ad.cos(phase), envelope * ad.sin(phase)])


# initial conditions (numpy, x of shape (N,))

def _sech(x):
    return 1.0 / np.cosh(x)


def _cahn_hilliard_ic_coefficients() -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(Config.CAHN_HILLIARD_IC_SEED)
    modes = Config.CAHN_HILLIARD_IC_MODES
    a, b = rng.standard_normal(modes), rng.standard_normal(modes)
    scale = 0.1 / math.sqrt(0.5 * np.sum(a * a + b * b))
    return a * scale, b * scale


def _cahn_hilliard_ic(x):
    a, b = _cahn_hilliard_ic_coefficients()
    k = 2.0 * math.pi * np.arange(1, len(a) + 1)
    phase = np.outer(x, k)
    return (np.cos(phase) @ a + np.sin(phase) @ b)[:, None]


# coefficient recovery libraries (numpy derivative fields)

def _flat(a):
    return np.asarray(a).reshape(-1)


def _recover_heat(d, c):
    return [RecoveryEquation('u_t', _flat(d[UT]), [('u_xx', _flat(d[UXX]), c['alpha'])])]


def _recover_advection(d, c):
    return [RecoveryEquation('u_t', _flat(d[UT]), [('u_x', _flat(d[UX]), -c['c'])])]


def _recover_burgers(d, c):
    u = _flat(d[U])
    return [RecoveryEquation('u_t', _flat(d[UT]), [
        ('u*u_x', u * _flat(d[UX]), -1.0),
        ('u_xx', _flat(d[UXX]), c['nu']),
    ])]


def _recover_allen_cahn(d, c):
    u = _flat(d[U])
    return [RecoveryEquation('u_t', _flat(d[UT]), [
        ('u_xx', _flat(d[UXX]), c['epsilon']),
        ('u-u^3', u - u ** 3, 1.0),
    ])]


def _recover_kdv(d, c):
    u = _flat(d[U])
    return [RecoveryEquation('u_t', _flat(d[UT]), [
        ('u*u_x', u * _flat(d[UX]), -1.0),
        ('u_xxx', _flat(d[UXXX]), -1.0),
    ])]


def _recover_reaction_diffusion(d, c):
    u = _flat(d[U])
    return [RecoveryEquation('u_t', _flat(d[UT]), [
        ('u_xx', _flat(d[UXX]), c['D']),
        ('u(1-u)', u * (1.0 - u), 1.0),
    ])]


def _recover_cahn_hilliard(d, c):
    u, ux, uxx = _flat(d[U]), _flat(d[UX]), _flat(d[UXX])
    return [RecoveryEquation('u_t', _flat(d[UT]), [
        ('u_xxxx', _flat(d[UXXXX]), -c['epsilon'] ** 2),
        ('(u^3-u)_xx', 6.0 * u * ux ** 2 + (3.0 * u ** 2 - 1.0) * uxx, 1.0),
    ])]


def _recover_kuramoto_sivashinsky(d, c):
    u = _flat(d[U])
    return [RecoveryEquation('u_t', _flat(d[UT]), [
        ('u*u_x', u * _flat(d[UX]), -1.0),
        ('u_xx', _flat(d[UXX]), -1.0),
        ('u_xxxx', _flat(d[UXXXX]), -1.0),
    ])]


def _recover_schrodinger(d, c):
    a, b = _flat(_col(d, U, 0)), _flat(_col(d, U, 1))
    a_xx, b_xx = _flat(_col(d, UXX, 0)), _flat(_col(d, UXX, 1))
    modulus = a ** 2 + b ** 2
    target = np.concatenate([_flat(_col(d, UT, 0)), _flat(_col(d, UT, 1))])
    return [RecoveryEquation('u_t (re, im stacked)', target, [
        ('i*u_xx', np.concatenate([-b_xx, a_xx]), 1.0),
        ('i*|u|^2 u', np.concatenate([-modulus * b, modulus * a]), 1.0),
    ])]


def _recover_lorenz(d, c):
    x, y, z = (_flat(_col(d, Y, i)) for i in range(3))
    dx, dy, dz = (_flat(_col(d, YT, i)) for i in range(3))
    return [
        RecoveryEquation('dx/dt', dx, [('y-x', y - x, c['sigma'])]),
        RecoveryEquation('dy/dt + y + x*z', dy + y + x * z, [('x', x, c['rho'])]),
        RecoveryEquation('dz/dt - x*y', dz - x * y, [('-z', -z, c['beta'])]),
    ]


def _recover_seir(d, c):
    s, e, i = (_flat(_col(d, Y, k)) for k in range(3))
    ds, di = _flat(_col(d, YT, 0)), _flat(_col(d, YT, 2))
    return [
        RecoveryEquation('dS/dt', ds, [('-S*I/N', -s * i / c['N'], c['beta'])]),
        RecoveryEquation('dI/dt', di, [('E', e, c['sigma']), ('-I', -i, c['gamma'])]),
    ]


def _pde_windows(domain: Range, table: Window) -> Dict[str, Window]:
    return {
        'in_domain': Window('in_domain', domain, (0.0, 1.0)),
        'ood_table': table,
        'ood_time': Window('ood_time', domain, (3.0, 5.0)),
        'ood_space': Window('ood_space', (3.0, 5.0), (0.0, 1.0)),
    }


def _ode_windows(table_end: float) -> Dict[str, Window]:
    return {
        'in_domain': Window('in_domain', None, (0.0, 1.0)),
        'ood_table': Window('ood_table', None, (1.0, table_end)),
        'ood_time': Window('ood_time', None, (3.0, 5.0)),
    }


def _time_table(domain: Range) -> Window:
    return Window('ood_table', domain, (1.0, 3.0))


PDE_ORDERS_2 = (U, UX, UXX, UT)


def _build_registry() -> Dict[str, SystemSpec]:
    unit = (0.0, 1.0)
    two_pi = (0.0, 2.0 * math.pi)
    specs = [
        SystemSpec(
            name='heat', display_name='Heat', state_dim=1, spatial_domain=unit,
            coefficients={'alpha': 0.01}, ic_label='sin(pi x)',
            initial_condition=lambda x: np.sin(np.pi * x)[:, None],
            bc_kind='dirichlet', residual_orders=(U, UXX, UT), residual_fn=_heat,
            reference_solver='analytic', windows=_pde_windows(unit, _time_table(unit)),
            max_derivative_order=2, exact_solution=_heat_exact, recovery_fn=_recover_heat,
        ),
        SystemSpec(
            name='advection', display_name='Advection', state_dim=1, spatial_domain=unit,
            coefficients={'c': 1.0}, ic_label='sin(2 pi x)',
            initial_condition=lambda x: np.sin(2.0 * np.pi * x)[:, None],
            bc_kind='periodic', residual_orders=(U, UX, UT), residual_fn=_advection,
            reference_solver='analytic',
            windows=_pde_windows(unit, Window('ood_table', (1.0, 3.0), (0.0, 1.0))),
            max_derivative_order=1, conserved_quantities=('mass', 'energy'),
            exact_solution=_advection_exact, recovery_fn=_recover_advection,
        ),
        SystemSpec(
            name='burgers', display_name='Burgers', state_dim=1, spatial_domain=unit,
            coefficients={'nu': 0.01}, ic_label='-sin(pi x)',
            initial_condition=lambda x: -np.sin(np.pi * x)[:, None],
            bc_kind='dirichlet', residual_orders=PDE_ORDERS_2, residual_fn=_burgers,
            reference_solver='cole-hopf', windows=_pde_windows(unit, _time_table(unit)),
            max_derivative_order=2, exact_solution=_burgers_exact, recovery_fn=_recover_burgers,
            notes='closed form used for surrogates is a viscous travelling front',
        ),
        SystemSpec(
            name='allen-cahn', display_name='Allen-Cahn', state_dim=1, spatial_domain=unit,
            coefficients={'epsilon': 0.01}, ic_label='x^2 cos(pi x)',
            initial_condition=lambda x: (x ** 2 * np.cos(np.pi * x))[:, None],
            bc_kind='neumann', residual_orders=PDE_ORDERS_2, residual_fn=_allen_cahn,
            reference_solver='spectral-etdrk4', windows=_pde_windows(unit, _time_table(unit)),
            max_derivative_order=2, exact_solution=_allen_cahn_exact, recovery_fn=_recover_allen_cahn,
        ),
        SystemSpec(
            name='kdv', display_name='KdV', state_dim=1, spatial_domain=unit,
            coefficients={}, ic_label='2 sech^2(x - 0.5)',
            initial_condition=lambda x: (2.0 * _sech(x - 0.5) ** 2)[:, None],
            bc_kind='periodic', residual_orders=(U, UX, UXXX, UT), residual_fn=_kdv,
            reference_solver='etdrk4', windows=_pde_windows(unit, _time_table(unit)),
            max_derivative_order=3, conserved_quantities=('mass', 'energy'),
            exact_solution=_kdv_exact, recovery_fn=_recover_kdv,
            notes='closed form is the amplitude-2 soliton 2 sech^2((x - 0.5 - 2t/3)/sqrt(6))',
        ),
        SystemSpec(
            name='reaction-diffusion', display_name='Reaction-Diffusion', state_dim=1,
            spatial_domain=unit, coefficients={'D': 0.01}, ic_label='exp(-50 (x - 0.5)^2)',
            initial_condition=lambda x: np.exp(-50.0 * (x - 0.5) ** 2)[:, None],
            bc_kind='neumann', residual_orders=PDE_ORDERS_2, residual_fn=_reaction_diffusion,
            reference_solver='spectral-etdrk4', windows=_pde_windows(unit, _time_table(unit)),
            max_derivative_order=2, exact_solution=_reaction_diffusion_exact,
            recovery_fn=_recover_reaction_diffusion, notes='reaction term R(u) = u(1 - u)',
        ),
        SystemSpec(
            name='cahn-hilliard', display_name='Cahn-Hilliard', state_dim=1, spatial_domain=unit,
            coefficients={'epsilon': 0.05}, ic_label='0.1 N(0,1) (8-mode Fourier series, fixed seed)',
            initial_condition=_cahn_hilliard_ic, bc_kind='periodic', periodic_orders=(0, 1),
            residual_orders=(U, UX, UXX, UXXXX, UT), residual_fn=_cahn_hilliard,
            reference_solver='spectral-etdrk4', windows=_pde_windows(unit, _time_table(unit)),
            max_derivative_order=4, recovery_fn=_recover_cahn_hilliard,
        ),
        SystemSpec(
            name='kuramoto-sivashinsky', display_name='Kuramoto-Sivashinsky', state_dim=1,
            spatial_domain=two_pi, coefficients={}, ic_label='cos(x)(1 + sin(x))',
            initial_condition=lambda x: (np.cos(x) * (1.0 + np.sin(x)))[:, None],
            bc_kind='periodic', residual_orders=(U, UX, UXX, UXXXX, UT),
            residual_fn=_kuramoto_sivashinsky, reference_solver='etdrk4',
            windows=_pde_windows(two_pi, _time_table(two_pi)), max_derivative_order=4,
            recovery_fn=_recover_kuramoto_sivashinsky,
        ),
        SystemSpec(
            name='schrodinger', display_name='Schrodinger', state_dim=2, spatial_domain=unit,
            coefficients={}, ic_label='sech(x - 0.5) exp(2ix)',
            initial_condition=lambda x: np.stack(
                [_sech(x - 0.5) * np.cos(2.0 * x), _sech(x - 0.5) * np.sin(2.0 * x)], axis=-1),
            bc_kind='periodic', residual_orders=PDE_ORDERS_2, residual_fn=_schrodinger,
            reference_solver='split-step', windows=_pde_windows(unit, _time_table(unit)),
            max_derivative_order=2, conserved_quantities=('mass',), channel_names=('u_re', 'u_im'),
            exact_solution=_schrodinger_exact, recovery_fn=_recover_schrodinger,
        ),
        SystemSpec(
            name='lorenz', display_name='Lorenz', state_dim=3, spatial_domain=None,
            coefficients={'sigma': 10.0, 'rho': 28.0, 'beta': 8.0 / 3.0}, ic_label='(1, 1, 1)',
            initial_condition=lambda x: np.array([[1.0, 1.0, 1.0]]),
            bc_kind=None, residual_orders=(Y, YT), residual_fn=_ode_residual(_lorenz_rhs),
            reference_solver='rk45', windows=_ode_windows(15.0), max_derivative_order=1,
            channel_names=('x', 'y', 'z'), recovery_fn=_recover_lorenz, ode_rhs=_lorenz_rhs,
        ),
        SystemSpec(
            name='seir', display_name='SEIR', state_dim=4, spatial_domain=None,
            coefficients={'beta': 0.4, 'sigma': 0.2, 'gamma': 0.1, 'N': 1.0},
            ic_label='(0.99, 0.01, 0, 0)',
            initial_condition=lambda x: np.array([[0.99, 0.01, 0.0, 0.0]]),
            bc_kind=None, residual_orders=(Y, YT), residual_fn=_ode_residual(_seir_rhs),
            reference_solver='rk45', windows=_ode_windows(3.0), max_derivative_order=1,
            conserved_quantities=('population',), channel_names=('S', 'E', 'I', 'R'),
            recovery_fn=_recover_seir, ode_rhs=_seir_rhs,
        ),
    ]
    return {spec.name: spec for spec in specs}


SYSTEMS: Dict[str, SystemSpec] = _build_registry()


def get_system(name: str) -> SystemSpec:
    """look up a system by registry name."""
    if isinstance(name, SystemSpec):
        return name
    key = str(name).strip().lower()
    if key not in SYSTEMS:
        raise UnknownSystemError(f"unknown system '{name}'; registered: {', '.join(SYSTEMS)}")
    return SYSTEMS[key]


def exact_field(spec: SystemSpec) -> Callable[[Any], Any]:
    """callable on (N, d) points or jets evaluating the system's closed form."""
    if spec.exact_solution is None:
        raise UnknownSystemError(f"{spec.name} has no closed-form solution")

    def field_fn(points):
        return spec.exact_solution(points[..., 0:1], points[..., 1:2], spec.coefficients)

    return field_fn


def residual(spec: Any, params: Callable[[Any], Any], point: Any) -> Any:
    """
    evaluate the differential-equation residual of a field.

    args:
        spec: SystemSpec or registry name
        params: network (or any callable accepting jets)
        point: coordinates (N, d) ordered (x, t), or (N, 1) times for odes

    returns:
        residual values (N, channels)
    """
    spec = get_system(spec)
    derivs = eval_with_input_derivs(params, point, spec.residual_orders)
    return spec.residual_fn(derivs, spec.coefficients)


def _lhs(n: int, lower: List[float], upper: List[float], rng: np.random.Generator) -> np.ndarray:
    if n == 0:
        return np.zeros((0, len(lower)))
    sampler = qmc.LatinHypercube(d=len(lower), seed=rng)
    return qmc.scale(sampler.random(n), lower, upper)


def sample_collocation(
    spec: Any,
    seed: int,
    counts: Optional[Tuple[int, int, int]] = None,
) -> CollocationSet:
    """
    latin hypercube collocation points inside the training window.

    args:
        spec: SystemSpec or registry name
        seed: sampling seed
        counts: (interior, boundary, initial); defaults per system kind

    returns:
        CollocationSet
    """
    spec = get_system(spec)
    rng = np.random.default_rng(seed)
    t0, t1 = spec.time_window

    if spec.is_ode:
        n_col, _, _ = counts or Config.ODE_COLLOCATION
        interior = _lhs(n_col, [t0], [t1], rng)
        initial = np.array([[t0]])
        return CollocationSet(
            interior=interior,
            boundary_left=np.zeros((0, 1)),
            boundary_right=np.zeros((0, 1)),
            initial=initial,
            initial_values=spec.initial_condition(initial[:, 0]),
            seed=seed,
        )

    n_col, n_bc, n_ic = counts or Config.PDE_COLLOCATION
    a, b = spec.spatial_domain
    interior = _lhs(n_col, [a, t0], [b, t1], rng)
    times = _lhs(n_bc // 2, [t0], [t1], rng)[:, 0]
    xs = _lhs(n_ic, [a], [b], rng)[:, 0]
    return CollocationSet(
        interior=interior,
        boundary_left=np.stack([np.full_like(times, a), times], axis=-1),
        boundary_right=np.stack([np.full_like(times, b), times], axis=-1),
        initial=np.stack([xs, np.full_like(xs, t0)], axis=-1),
        initial_values=spec.initial_condition(xs),
        seed=seed,
    )


def _tensor(a: np.ndarray) -> torch.Tensor:
    return torch.as_tensor(a, dtype=torch.float64)


def ic_bc_loss(spec: Any, params: Callable[[Any], Any], points: CollocationSet) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    mean-squared initial and boundary mismatch.

    dirichlet pins u to zero, neumann pins u_x to zero, periodic compares u
    (and the x-derivatives listed in periodic_orders) at both endpoints.

    returns:
        (L_IC, L_BC) as torch scalars
    """
    spec = get_system(spec)
    u0 = params(_tensor(points.initial))
    loss_ic = torch.mean((u0 - _tensor(points.initial_values)) ** 2)

    if spec.bc_kind is None or len(points.boundary_left) == 0:
        return loss_ic, torch.zeros((), dtype=torch.float64)

    left, right = _tensor(points.boundary_left), _tensor(points.boundary_right)
    if spec.bc_kind == 'dirichlet':
        mismatch = [params(left), params(right)]
    elif spec.bc_kind == 'neumann':
        mismatch = [eval_with_input_derivs(params, pts, [UX])[UX] for pts in (left, right)]
    else:
        orders = [(k, 0) for k in spec.periodic_orders]
        d_left = eval_with_input_derivs(params, left, orders)
        d_right = eval_with_input_derivs(params, right, orders)
        mismatch = [d_left[alpha] - d_right[alpha] for alpha in orders]
    loss_bc = torch.mean(torch.cat(mismatch, dim=0) ** 2)
    return loss_ic, loss_bc
