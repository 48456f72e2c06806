"""
evaluation module for spikelab.
computes in-domain and out-of-distribution errors, generator sparsity and
stability, valid prediction time, conservation, latent correlations,
coefficient recovery and the extrapolation bound diagnostic.
"""

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd
import torch
from scipy.integrate import trapezoid
from sklearn.metrics import mean_squared_error, r2_score

from .autodiff import eval_with_input_derivs
from .linalg import eigenvalues, least_squares
from .model import GeneratorMatrix, PikeModel, monomial_names
from .model_trainer import propagate, sample_koopman_pairs
from .reference import ReferenceCache, ReferenceField, compute_reference
from .systems import CollocationSet, SystemSpec, Window, get_system, residual
from ..utils.config import Config, TrainConfig
from ..utils.exceptions import UnsupportedSystemError

SCHEMA_VERSION = 1
CORRELATION_TARGETS = ('u', 'u_x', 'u_xx', 'u_t', 'u*u_x', 'u^3')


def _as_numpy(value: Any) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        return value.detach().cpu().numpy()
    return np.asarray(value)


def _matrix(A: Any) -> np.ndarray:
    if isinstance(A, GeneratorMatrix):
        return A.numpy()
    return _as_numpy(A).astype(np.float64)


@dataclass(frozen=True)
class MetricGrid:
    """
    held-out uniform grid over one window, offset by half a cell so it never
    lands on a lattice shared with the collocation points.
    """

    window: str
    x: Optional[np.ndarray]
    t: np.ndarray
    disjoint: bool = True

    @classmethod
    def for_window(cls, spec: Any, window: str = 'in_domain', shape: Optional[Tuple[int, int]] = None) -> 'MetricGrid':
        spec = get_system(spec)
        w = spec.windows[window]
        if spec.is_ode:
            n_t = shape[1] if shape else Config.ODE_GRID_POINTS
            return cls(window, None, _cell_centres(w.t_range, n_t))
        n_x, n_t = shape or Config.PDE_GRID_SHAPE
        return cls(window, _cell_centres(w.x_range, n_x), _cell_centres(w.t_range, n_t))

    @classmethod
    def from_window(cls, w: Window, n_x: int, n_t: int) -> 'MetricGrid':
        x = None if w.x_range is None else _cell_centres(w.x_range, n_x)
        return cls(w.name, x, _cell_centres(w.t_range, n_t))

    @property
    def is_ode(self) -> bool:
        return self.x is None

    def points(self) -> np.ndarray:
        """(N, d) coordinates ordered time-major."""
        if self.x is None:
            return self.t[:, None]
        T, X = np.meshgrid(self.t, self.x, indexing='ij')
        return np.stack([X.ravel(), T.ravel()], axis=-1)


def _cell_centres(bounds: Tuple[float, float], n: int) -> np.ndarray:
    a, b = bounds
    return a + (np.arange(n) + 0.5) * (b - a) / n


def _chunked(fn: Callable[[torch.Tensor], Any], points: np.ndarray, chunk: int = 4096) -> np.ndarray:
    pts = torch.as_tensor(points, dtype=torch.float64)
    parts = []
    with torch.no_grad():
        for start in range(0, len(pts), chunk):
            parts.append(_as_numpy(fn(pts[start:start + chunk])))
    return np.concatenate(parts, axis=0)


def predict_field(params: Any, spec: Any, x: Optional[np.ndarray], t: np.ndarray) -> np.ndarray:
    """network values shaped like a ReferenceField: (Nt, Nx, C) or (Nt, C)."""
    spec = get_system(spec)
    t = np.asarray(t, dtype=np.float64)
    if spec.is_ode or x is None:
        return _chunked(params, t[:, None])
    grid = MetricGrid('custom', np.asarray(x, dtype=np.float64), t)
    return _chunked(params, grid.points()).reshape(len(t), len(x), -1)


# core metrics

def physics_mse(params: Any, spec: Any, grid: MetricGrid) -> float:
    """mean squared residual norm over the grid's window."""
    spec = get_system(spec)
    r = _chunked(lambda pts: residual(spec, params, pts), grid.points())
    return float(np.mean(np.sum(r ** 2, axis=-1)))


def solution_mse(params: Any, spec: Any, reference: ReferenceField) -> float:
    """mean squared difference between u_theta and the reference on its grid."""
    predicted = predict_field(params, spec, reference.x, reference.t)
    return float(mean_squared_error(reference.flat_values(), predicted.reshape(-1, predicted.shape[-1])))


class SparsityStats(NamedTuple):
    percent_zero: float
    nonzero_count: int
    total: int


def sparsity_stats(A: Any, threshold: float = Config.SPARSITY_THRESHOLD) -> SparsityStats:
    """share of generator entries with |A_ij| < threshold."""
    M = _matrix(A)
    nonzero = int(np.count_nonzero(np.abs(M) >= threshold))
    total = int(M.size)
    return SparsityStats(100.0 * (total - nonzero) / total, nonzero, total)


class StabilityCheck(NamedTuple):
    abscissa: float
    stable: bool


def stability_check(A: Any, threshold: float = Config.STABILITY_THRESHOLD) -> StabilityCheck:
    abscissa = eigenvalues(_matrix(A)).spectral_abscissa
    return StabilityCheck(abscissa, abscissa <= threshold)


class ValidTime(NamedTuple):
    valid_time: float
    horizon: float
    lyapunov_ratio: Optional[float]
    short_term_mse: float


def _ode_horizon(spec: SystemSpec) -> float:
    return spec.windows['ood_table'].t_range[1]


def valid_prediction_time(
    params: Any,
    spec: Any,
    reference: Optional[ReferenceField] = None,
    threshold: float = Config.VALID_TIME_THRESHOLD,
    cache: Optional[ReferenceCache] = None,
) -> ValidTime:
    """
    first grid time at which ||x_hat - x*|| / ||x*|| exceeds the threshold.

    args:
        params: network or callable on (N, 1) times
        spec: lorenz or seir
        reference: dense reference trajectory (default: rk45 on [0, horizon])
        threshold: relative error limit
        cache: optional reference cache

    returns:
        ValidTime (the horizon when the error never exceeds the threshold)
    """
    spec = get_system(spec)
    if not spec.is_ode:
        raise UnsupportedSystemError(f"valid prediction time applies to odes, not {spec.name}")
    if reference is None:
        t = np.linspace(0.0, _ode_horizon(spec), Config.ODE_GRID_POINTS)
        reference = compute_reference(spec, None, t, cache)
    t = reference.t
    predicted = predict_field(params, spec, None, t)
    truth = reference.values
    rel = np.linalg.norm(predicted - truth, axis=-1) / np.maximum(np.linalg.norm(truth, axis=-1), 1e-300)
    exceeded = np.flatnonzero(rel > threshold)
    valid = float(t[exceeded[0]]) if exceeded.size else float(t[-1])

    short_window = Config.LYAPUNOV_TIME if spec.name == 'lorenz' else 1.0
    mask = t <= short_window
    short_mse = float(mean_squared_error(truth[mask], predicted[mask])) if mask.any() else float('nan')
    ratio = valid / Config.LYAPUNOV_TIME if spec.name == 'lorenz' else None
    return ValidTime(valid, float(t[-1]), ratio, short_mse)


def conservation_from_values(spec: Any, x: Optional[np.ndarray], values: np.ndarray) -> Dict[str, float]:
    """
    relative standard deviation over time of each conserved quantity.

    the spread is normalized by max(|mean Q|, mean of the integral of |q|) so a
    quantity whose mean is near zero does not divide by zero.
    """
    spec = get_system(spec)
    stats = {}
    if spec.is_ode:
        population = values.sum(axis=-1)
        scale = max(abs(population.mean()), np.abs(values).sum(axis=-1).mean())
        stats['population'] = float(population.std() / scale) if scale > 0 else 0.0
        return stats

    def rel_std(density: np.ndarray) -> float:
        q = trapezoid(density, x, axis=1)
        scale = max(abs(q.mean()), trapezoid(np.abs(density), x, axis=1).mean())
        return float(q.std() / scale) if scale > 0 else 0.0

    if spec.name == 'schrodinger':
        stats['mass'] = rel_std(np.sum(values ** 2, axis=-1))
        return stats
    u = values[..., 0]
    for quantity in spec.conserved_quantities:
        stats[quantity] = rel_std(u if quantity == 'mass' else u ** 2)
    return stats


def conservation_stats(params: Any, spec: Any, grid: MetricGrid) -> Dict[str, float]:
    """conserved-quantity drift of the network over the grid's times (full-span x for quadrature)."""
    spec = get_system(spec)
    if not spec.conserved_quantities:
        raise UnsupportedSystemError(f"{spec.name} declares no conserved quantities")
    x = None
    if not spec.is_ode:
        window = spec.windows[grid.window] if grid.window in spec.windows else spec.windows['in_domain']
        x = np.linspace(*window.x_range, len(grid.x))
    return conservation_from_values(spec, x, predict_field(params, spec, x, grid.t))


def correlation_table(features: np.ndarray, targets: Dict[str, np.ndarray]) -> Dict[str, Dict[str, Any]]:
    """
    max |pearson correlation| over feature columns for each target.

    zero-variance columns contribute 0 and set the flag.
    """
    F = np.asarray(features, dtype=np.float64)
    F = F - F.mean(axis=0)
    f_norm = np.linalg.norm(F, axis=0)
    table = {}
    for name, target in targets.items():
        y = np.asarray(target, dtype=np.float64).reshape(-1)
        y = y - y.mean()
        y_norm = np.linalg.norm(y)
        degenerate = (f_norm < 1e-12) | (y_norm < 1e-12)
        with np.errstate(divide='ignore', invalid='ignore'):
            corr = np.where(degenerate, 0.0, (y @ F) / (f_norm * y_norm))
        table[name] = {
            'max_abs_corr': float(np.max(np.abs(corr))) if corr.size else 0.0,
            'best_feature': int(np.argmax(np.abs(corr))) if corr.size else -1,
            'zero_variance': bool(degenerate.any()),
        }
    return table


def latent_correlations(model: PikeModel, spec: Any, grid: MetricGrid) -> Dict[str, Dict[str, Any]]:
    """correlations of latent features with finite-difference derivative fields of u_theta."""
    spec = get_system(spec)
    if spec.is_ode:
        raise UnsupportedSystemError("latent correlations are defined for spatial fields")
    if model.embedding.latent is None:
        raise UnsupportedSystemError("embedding has no latent branch")
    values = predict_field(model.solution, spec, grid.x, grid.t)
    u = values[..., 0]
    u_x = np.gradient(u, grid.x, axis=1)
    targets = {
        'u': u,
        'u_x': u_x,
        'u_xx': np.gradient(u_x, grid.x, axis=1),
        'u_t': np.gradient(u, grid.t, axis=0),
        'u*u_x': u * u_x,
        'u^3': u ** 3,
    }
    latent = _chunked(model.embedding.latent, values.reshape(-1, values.shape[-1]))
    return correlation_table(latent, {k: targets[k].reshape(-1) for k in CORRELATION_TARGETS})


@dataclass
class RecoveredCoefficient:
    equation: str
    term: str
    true: float
    recovered: float
    rel_error: float
    r_squared: float


def recover_coefficients(params: Any, spec: Any, grid: MetricGrid) -> List[RecoveredCoefficient]:
    """
    least-squares fit of the known equation's coefficients from derivative
    fields of params at the grid points.
    """
    spec = get_system(spec)
    if spec.recovery_fn is None:
        raise UnsupportedSystemError(f"no recovery library for {spec.name}")
    points = torch.as_tensor(grid.points(), dtype=torch.float64)
    with torch.no_grad():
        derivs = eval_with_input_derivs(params, points, spec.residual_orders)
    derivs = {alpha: _as_numpy(v) for alpha, v in derivs.items()}

    rows = []
    for equation in spec.recovery_fn(derivs, spec.coefficients):
        Theta = np.stack([column for _, column, _ in equation.terms], axis=-1)
        fit = least_squares(Theta, equation.target)
        for (term, _, true), value in zip(equation.terms, fit.coefficients):
            rows.append(RecoveredCoefficient(
                equation=equation.name,
                term=term,
                true=float(true),
                recovered=float(value),
                rel_error=abs(value - true) / abs(true) if true != 0 else abs(value),
                r_squared=fit.r_squared,
            ))
    return rows


# extrapolation bound

def growth_factor(rho: float, delta: float) -> float:
    """(e^{rho delta} - 1) / rho, with the limit delta as rho -> 0."""
    if abs(rho) < 1e-8:
        return delta
    return math.expm1(rho * delta) / rho


def bound_value(lipschitz: float, epsilon_k: float, rho: float, delta: float, training_error: float) -> float:
    return lipschitz * epsilon_k * growth_factor(rho, delta) + training_error


@dataclass
class BoundRecord:
    epsilon_k: float
    rho0: float
    lipschitz: float
    delta: float
    training_error: float
    bound: float
    observed_error: float
    satisfied: bool


def _rms_norm(diff: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.sum(diff.reshape(-1, diff.shape[-1]) ** 2, axis=-1))))


def koopman_residual_rms(model: PikeModel, points: np.ndarray, h: float = Config.BOUND_FD_STEP) -> float:
    """rms of ||A z - dz/dt|| with dz/dt by central differences in t."""
    A = model.generator.A.detach()

    def lie_residual(pts: torch.Tensor) -> torch.Tensor:
        plus, minus = pts.clone(), pts.clone()
        plus[:, -1] += h
        minus[:, -1] -= h
        z_dot = (model.observables(plus) - model.observables(minus)) / (2.0 * h)
        return model.observables(pts) @ A.T - z_dot

    return _rms_norm(_chunked(lie_residual, points))


def ood_bound_diagnostic(
    model: PikeModel,
    spec: Any,
    delta: float = Config.BOUND_DELTA,
    reference: Optional[ReferenceField] = None,
    training_error: Optional[float] = None,
    cache: Optional[ReferenceCache] = None,
    shape: Optional[Tuple[int, int]] = None,
) -> BoundRecord:
    """
    compare the predicted extrapolation bound with the observed error on
    [T, T + delta]. violations are reported, not raised.

    args:
        model: trained PikeModel
        spec: system
        delta: extrapolation horizon
        reference: reference on [T, T + delta] (computed when omitted)
        training_error: rms error inside the training window (computed when omitted)
        cache: optional reference cache
        shape: grid resolution override

    returns:
        BoundRecord
    """
    spec = get_system(spec)
    t_end = spec.time_window[1]
    n_x, n_t = shape or ((1, Config.ODE_GRID_POINTS) if spec.is_ode else Config.PDE_GRID_SHAPE)
    train_grid = MetricGrid.from_window(spec.windows['in_domain'], n_x, n_t)

    if training_error is None:
        ref_train = compute_reference(spec, train_grid.x, train_grid.t, cache)
        training_error = _rms_norm(predict_field(model.solution, spec, ref_train.x, ref_train.t) - ref_train.values)
    if reference is None:
        window = Window('bound', None if spec.is_ode else spec.spatial_domain, (t_end, t_end + delta))
        grid = MetricGrid.from_window(window, n_x, n_t)
        reference = compute_reference(spec, grid.x, grid.t, cache)
    observed = _rms_norm(predict_field(model.solution, spec, reference.x, reference.t) - reference.values)

    epsilon_k = koopman_residual_rms(model, train_grid.points())
    rho0 = stability_check(model.generator).abscissa
    lipschitz = model.solution.spectral_norm_product()
    bound = bound_value(lipschitz, epsilon_k, rho0, delta, training_error)
    return BoundRecord(
        epsilon_k=epsilon_k,
        rho0=rho0,
        lipschitz=lipschitz,
        delta=delta,
        training_error=training_error,
        bound=bound,
        observed_error=observed,
        satisfied=bool(observed <= bound),
    )


# supplementary readouts

def koopman_r2(model: PikeModel, spec: Any, interior: np.ndarray, integrator: Optional[str],
               dt: float = Config.TRAINING_PARAMS['koopman_dt'], seed: int = 12345,
               batch_size: int = Config.TRAINING_PARAMS['koopman_batch']) -> float:
    """r-squared of generator-propagated observables against the observed next step."""
    with torch.no_grad():
        pairs = sample_koopman_pairs(spec, model, interior, dt, seed, batch_size)
        predicted = propagate(pairs.z_now, model.generator.A, dt, integrator or 'expm')
    return float(r2_score(_as_numpy(pairs.z_next), _as_numpy(predicted), multioutput='variance_weighted'))


def library_dynamics(A: Any, spec: Any, poly_degree: int = Config.EMBEDDING_PARAMS['poly_degree'],
                     threshold: float = Config.SPARSITY_THRESHOLD) -> List[str]:
    """dg_i/dt = sum_j A_ij g_j over the library block, dropping |A_ij| < threshold."""
    spec = get_system(spec)
    names = monomial_names(spec.state_dim, poly_degree, list(spec.channel_names))
    M = _matrix(A)[:len(names), :len(names)]
    lines = []
    for i, name in enumerate(names):
        terms = [f"{M[i, j]:+.4g}*{names[j]}" for j in range(len(names)) if abs(M[i, j]) >= threshold]
        lines.append(f"d({name})/dt = " + (' '.join(terms) if terms else '0'))
    return lines


# run report

def _clean(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    return value


@dataclass
class RunReport:
    """every metric of one (system, variant, seed) run; missing ones listed in not_applicable."""

    system: str
    variant: str
    seed: int
    windows: Dict[str, Dict[str, Optional[float]]] = field(default_factory=dict)
    sparsity: Dict[str, Any] = field(default_factory=dict)
    stability: Dict[str, Any] = field(default_factory=dict)
    valid_time: Optional[Dict[str, Any]] = None
    conservation: Optional[Dict[str, float]] = None
    latent_correlations: Optional[Dict[str, Dict[str, Any]]] = None
    coefficients: Optional[List[Dict[str, Any]]] = None
    bound: Optional[Dict[str, Any]] = None
    koopman_r2: Optional[float] = None
    library_dynamics: List[str] = field(default_factory=list)
    reference_errors: Dict[str, Optional[float]] = field(default_factory=dict)
    not_applicable: List[str] = field(default_factory=list)
    config: Dict[str, Any] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> Dict[str, Any]:
        return _clean(asdict(self))

    def to_json(self, path: str) -> str:
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        return str(path)

    @classmethod
    def from_json(cls, path: str) -> 'RunReport':
        with open(path, 'r') as f:
            data = json.load(f)
        return cls(**data)

    def to_frame(self) -> pd.DataFrame:
        """flat (family, metric, value) rows."""
        rows = []
        for window, metrics in self.windows.items():
            for name, value in metrics.items():
                rows.append(('window', f"{window}.{name}", value))
        for family in ('sparsity', 'stability', 'valid_time', 'conservation', 'bound'):
            block = getattr(self, family)
            for name, value in (block or {}).items():
                rows.append((family, name, value))
        for target, entry in (self.latent_correlations or {}).items():
            rows.append(('latent_correlation', target, entry['max_abs_corr']))
        for row in self.coefficients or []:
            rows.append(('coefficient', f"{row['equation']}:{row['term']}", row['recovered']))
            rows.append(('coefficient_rel_error', f"{row['equation']}:{row['term']}", row['rel_error']))
        rows.append(('koopman', 'r2', self.koopman_r2))
        frame = pd.DataFrame(rows, columns=['family', 'metric', 'value'])
        frame['value'] = frame['value'].map(lambda v: float(v) if isinstance(v, (bool, int, float)) else v)
        return frame

    def to_csv(self, path: str) -> str:
        self.to_frame().to_csv(path, index=False)
        return str(path)

    def flat_metrics(self) -> Dict[str, float]:
        """numeric metrics keyed family.metric."""
        frame = self.to_frame()
        out = {}
        for family, metric, value in frame.itertuples(index=False):
            if isinstance(value, (int, float)) and value is not None and math.isfinite(value):
                out[f"{family}.{metric}"] = float(value)
        return out


def _solution_reference_available(spec: SystemSpec, window: str) -> bool:
    # out-of-domain space is only meaningful for closed forms and periodic fourier references
    if window != 'ood_space':
        return True
    return spec.reference_solver == 'analytic' or spec.bc_kind == 'periodic'


def evaluate_run(
    model: PikeModel,
    spec: Any,
    config: TrainConfig,
    collocation: Optional[CollocationSet] = None,
    cache: Optional[ReferenceCache] = None,
    shape: Optional[Tuple[int, int]] = None,
    verbose: bool = True,
) -> RunReport:
    """
    build the RunReport of a trained model.

    args:
        model: trained PikeModel
        spec: system
        config: TrainConfig of the run
        collocation: training points (for the koopman r-squared pairs)
        cache: reference cache
        shape: (n_x, n_t) grid override for quick runs
        verbose: print [METRICS] lines

    returns:
        RunReport
    """
    spec = get_system(spec)
    report = RunReport(system=spec.name, variant=config.variant, seed=config.seed, config=config.to_dict())
    n_x, n_t = shape or ((1, Config.ODE_GRID_POINTS) if spec.is_ode else Config.PDE_GRID_SHAPE)
    grids = {name: MetricGrid.from_window(w, n_x, n_t) for name, w in spec.windows.items()}

    in_domain_error = None
    for name, grid in grids.items():
        entry: Dict[str, Optional[float]] = {'physics_mse': physics_mse(model.solution, spec, grid)}
        if _solution_reference_available(spec, name):
            reference = compute_reference(spec, grid.x, grid.t, cache)
            entry['solution_mse'] = solution_mse(model.solution, spec, reference)
            report.reference_errors[name] = reference.estimated_error
            if name == 'in_domain':
                predicted = predict_field(model.solution, spec, reference.x, reference.t)
                in_domain_error = _rms_norm(predicted - reference.values)
        else:
            entry['solution_mse'] = None
            report.not_applicable.append(f"{name}.solution_mse")
        report.windows[name] = entry
        if verbose:
            print(f"[METRICS] {spec.name}/{config.variant} {name}: physics {entry['physics_mse']:.3e}"
                  + (f", solution {entry['solution_mse']:.3e}" if entry['solution_mse'] is not None else ''))

    sparsity = sparsity_stats(model.generator)
    report.sparsity = sparsity._asdict()
    report.stability = stability_check(model.generator)._asdict()

    if spec.is_ode:
        report.valid_time = valid_prediction_time(model.solution, spec, cache=cache)._asdict()
    else:
        report.not_applicable.append('valid_time')

    if spec.conserved_quantities:
        report.conservation = conservation_stats(model.solution, spec, grids['in_domain'])
    else:
        report.not_applicable.append('conservation')

    if not spec.is_ode and model.embedding.latent is not None:
        report.latent_correlations = latent_correlations(model, spec, grids['in_domain'])
    else:
        report.not_applicable.append('latent_correlations')

    if spec.recovery_fn is not None:
        report.coefficients = [asdict(row) for row in recover_coefficients(model.solution, spec, grids['in_domain'])]
    else:
        report.not_applicable.append('coefficients')

    report.bound = asdict(ood_bound_diagnostic(model, spec, training_error=in_domain_error, cache=cache, shape=(n_x, n_t)))

    collocation_points = collocation.interior if collocation is not None else grids['in_domain'].points()
    report.koopman_r2 = koopman_r2(model, spec, collocation_points, config.integrator, config.koopman_dt)
    report.library_dynamics = library_dynamics(model.generator, spec, config.poly_degree)

    if verbose:
        print(f"[METRICS] sparsity {sparsity.percent_zero:.1f}% ({sparsity.nonzero_count} nonzero), "
              f"abscissa {report.stability['abscissa']:.4f}, koopman r2 {report.koopman_r2:.3f}")
    return report


def save_report(report: RunReport, run_dir: str) -> Tuple[str, str]:
    """write report.json and metrics.csv into run_dir."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    return report.to_json(run_dir / 'report.json'), report.to_csv(run_dir / 'metrics.csv')
