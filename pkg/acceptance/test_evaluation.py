import json
import math

import numpy as np
import pytest
import torch

from src.core.evaluator import (
    MetricGrid,
    RunReport,
    conservation_from_values,
    correlation_table,
    evaluate_run,
    growth_factor,
    bound_value,
    koopman_residual_rms,
    library_dynamics,
    ood_bound_diagnostic,
    physics_mse,
    predict_field,
    recover_coefficients,
    save_report,
    solution_mse,
    sparsity_stats,
    stability_check,
    valid_prediction_time,
)
from src.core.model_trainer import build_model
from src.core.reference import compute_reference, solve_analytic, solve_ode_adaptive
from src.core.systems import exact_field, get_system, sample_collocation
from src.utils.config import TrainConfig
from src.utils.exceptions import UnsupportedSystemError

TINY = dict(hidden_layers=1, hidden_units=6, observable_dim=6)
RECOVERABLE = ['heat', 'advection', 'burgers', 'allen-cahn', 'kdv', 'reaction-diffusion', 'schrodinger']


def _interpolating(reference):
    """callable on (N, 1) time tensors returning the reference trajectory."""
    def fn(pts):
        t = pts[:, 0].numpy()
        columns = [np.interp(t, reference.t, reference.values[:, c]) for c in range(reference.values.shape[1])]
        return torch.as_tensor(np.stack(columns, axis=-1))
    return fn


def test_metric_grid_avoids_window_edges():
    grid = MetricGrid.for_window('heat', 'in_domain', (4, 2))
    assert np.allclose(grid.x, [0.125, 0.375, 0.625, 0.875])
    assert np.allclose(grid.t, [0.25, 0.75])
    assert grid.points().shape == (8, 2)
    ode = MetricGrid.for_window('lorenz', 'ood_table', (1, 10))
    assert ode.is_ode and ode.t[0] > 1.0 and ode.t[-1] < 15.0


def test_physics_mse_of_closed_form():
    spec = get_system('heat')
    grid = MetricGrid.for_window(spec, 'in_domain', (20, 20))
    assert physics_mse(exact_field(spec), spec, grid) <= 1e-10


def test_physics_mse_of_zero_advection():
    grid = MetricGrid.for_window('advection', 'in_domain', (10, 10))
    assert physics_mse(lambda j: j[..., 0:1] * 0.0, 'advection', grid) == 0.0


def test_solution_mse_of_exact_network():
    spec = get_system('heat')
    grid = MetricGrid.for_window(spec, 'in_domain', (16, 8))
    reference = solve_analytic(spec, grid.x, grid.t)
    assert solution_mse(exact_field(spec), spec, reference) <= 1e-28


def test_solution_mse_of_zero_network_on_heat():
    x = (np.arange(1000) + 0.5) / 1000
    reference = solve_analytic('heat', x, np.array([0.0]))
    mse = solution_mse(lambda p: p[:, 0:1] * 0.0, 'heat', reference)
    assert mse == pytest.approx(0.5, rel=1e-12), f"mean of sin^2 should be 1/2, got {mse}"


def test_predict_field_shapes():
    model = build_model('schrodinger', TrainConfig.for_variant('pinn', **TINY))
    assert predict_field(model.solution, 'schrodinger', np.zeros(5), np.zeros(3)).shape == (3, 5, 2)
    ode = build_model('seir', TrainConfig.for_variant('pinn', hidden_layers=1, hidden_units=6, observable_dim=16))
    assert predict_field(ode.solution, 'seir', None, np.linspace(0, 1, 7)).shape == (7, 4)


def test_sparsity_of_zero_generator():
    stats = sparsity_stats(np.zeros((64, 64)))
    assert stats.percent_zero == 100.0 and stats.nonzero_count == 0 and stats.total == 4096


def test_sparsity_counts_and_threshold_boundary():
    A = np.zeros((10, 10))
    A[0, 1], A[3, 3], A[9, 0] = 0.5, -2.0, 1e-3
    A[5, 5] = 1e-4
    A[6, 6] = 0.99e-4
    stats = sparsity_stats(A)
    assert stats.nonzero_count == 4, "entries at exactly the threshold count as nonzero"
    assert stats.percent_zero / 100.0 + stats.nonzero_count / stats.total == pytest.approx(1.0)


def test_stability_check():
    assert stability_check(np.zeros((3, 3))) == (0.0, True)
    unstable = stability_check(np.diag([-1.0, 0.2112]))
    assert unstable.abscissa == pytest.approx(0.2112) and not unstable.stable


def test_valid_time_of_perfect_model():
    t = np.linspace(0.0, 3.0, 200)
    reference = solve_ode_adaptive('seir', t)
    result = valid_prediction_time(_interpolating(reference), 'seir', reference=reference)
    assert result.valid_time == pytest.approx(3.0) and result.horizon == pytest.approx(3.0)
    assert result.lyapunov_ratio is None and result.short_term_mse <= 1e-28


def test_valid_time_of_zero_model_is_zero():
    reference = solve_ode_adaptive('lorenz', np.linspace(0.0, 2.0, 100))
    result = valid_prediction_time(lambda p: torch.zeros(len(p), 3, dtype=torch.float64), 'lorenz',
                                   reference=reference)
    assert result.valid_time == 0.0 and result.lyapunov_ratio == 0.0


def test_valid_time_monotone_in_threshold():
    t = np.linspace(0.0, 3.0, 300)
    reference = solve_ode_adaptive('seir', t)
    truth = _interpolating(reference)
    drifting = lambda p: truth(p) * (1.0 + 0.3 * p[:, 0:1])
    times = [valid_prediction_time(drifting, 'seir', reference=reference, threshold=tau).valid_time
             for tau in (0.2, 0.5, 0.8)]
    assert times == sorted(times), f"valid time should not shrink as the threshold grows: {times}"
    assert times[0] < times[-1]


def test_valid_time_rejects_pdes():
    with pytest.raises(UnsupportedSystemError):
        valid_prediction_time(lambda p: p, 'heat')


def test_conservation_of_constant_field():
    x = np.linspace(0.0, 1.0, 50)
    values = np.full((10, 50, 1), 0.7)
    stats = conservation_from_values('advection', x, values)
    assert stats['mass'] <= 1e-14 and stats['energy'] <= 1e-14


def test_conservation_of_zero_mean_field_is_finite():
    x = np.linspace(0.0, 1.0, 101)
    t = np.linspace(0.0, 1.0, 7)
    values = np.sin(2.0 * np.pi * (x[None, :] - t[:, None]))[..., None]
    stats = conservation_from_values('advection', x, values)
    assert math.isfinite(stats['mass']) and stats['mass'] <= 1e-3


def test_seir_reference_conserves_population():
    reference = solve_ode_adaptive('seir', np.linspace(0.0, 1.0, 50))
    assert conservation_from_values('seir', None, reference.values)['population'] <= 1e-9


def test_schrodinger_mass_uses_modulus():
    x = np.linspace(0.0, 1.0, 41)
    phase = np.linspace(0.0, 3.0, 5)[:, None]
    values = np.stack([np.cos(phase + 0 * x), np.sin(phase + 0 * x)], axis=-1)
    assert conservation_from_values('schrodinger', x, values)['mass'] <= 1e-14


def test_correlation_table():
    rng = np.random.default_rng(0)
    target = rng.standard_normal(100)
    features = np.stack([rng.standard_normal(100), target, np.ones(100)], axis=-1)
    table = correlation_table(features, {'u': target})
    assert table['u']['max_abs_corr'] == pytest.approx(1.0)
    assert table['u']['best_feature'] == 1
    assert table['u']['zero_variance'], "the constant column must be flagged"


@pytest.mark.parametrize('name', RECOVERABLE)
def test_coefficient_recovery_on_closed_forms(name):
    spec = get_system(name)
    rows = recover_coefficients(exact_field(spec), spec, MetricGrid.for_window(spec, 'in_domain', (20, 20)))
    assert rows, f"{name}: no coefficients recovered"
    for row in rows:
        assert row.rel_error <= 1e-6, f"{name} {row.term}: recovered {row.recovered} vs {row.true}"
        assert row.r_squared >= 1.0 - 1e-10


def test_growth_factor_limits():
    assert growth_factor(0.0, 2.0) == 2.0
    assert growth_factor(1e-8, 1.0) == pytest.approx(1.0, rel=1e-6)
    assert growth_factor(0.5, 1.0) == pytest.approx(math.expm1(0.5) / 0.5)
    assert growth_factor(-0.5, 2.0) < growth_factor(0.0, 2.0) < growth_factor(0.5, 2.0)
    assert growth_factor(0.3, 1.0) < growth_factor(0.3, 2.0)


def test_bound_reduces_to_training_error():
    assert bound_value(3.0, 0.0, 0.4, 1.0, 0.02) == 0.02


def test_bound_monotone_in_horizon():
    values = [bound_value(2.0, 0.1, rho, delta, 0.01) for rho in (-0.3, 0.0, 0.4) for delta in (0.5, 1.0, 2.0)]
    for start in range(0, 9, 3):
        row = values[start:start + 3]
        assert row == sorted(row) and all(math.isfinite(v) for v in row), f"bound should grow with delta: {row}"


def test_koopman_residual_of_constant_observables():
    model = build_model('heat', TrainConfig.for_variant('pike-expm', **TINY))
    with torch.no_grad():
        model.solution.layers[0].weight[:, 1] = 0.0
    points = MetricGrid.for_window('heat', 'in_domain', (5, 5)).points()
    assert koopman_residual_rms(model, points) == 0.0, "A = 0 and dz/dt = 0 leave no residual"


def test_bound_diagnostic_runs_on_small_model():
    model = build_model('heat', TrainConfig.for_variant('pike-expm', **TINY))
    record = ood_bound_diagnostic(model, 'heat', shape=(10, 10))
    assert record.rho0 == 0.0 and record.delta == 1.0
    assert record.bound == pytest.approx(record.lipschitz * record.epsilon_k * 1.0 + record.training_error)
    assert record.satisfied == (record.observed_error <= record.bound)


def test_library_dynamics_lists_kept_terms():
    A = np.zeros((6, 6))
    A[1, 2] = -0.5
    lines = library_dynamics(A, 'heat')
    assert lines[0] == 'd(1)/dt = 0'
    assert lines[1] == 'd(u)/dt = -0.5*u^2'


def test_evaluate_run_fills_every_family(tmp_path):
    config = TrainConfig.for_variant('pike-expm', **TINY)
    model = build_model('heat', config)
    collocation = sample_collocation('heat', 0, counts=(64, 8, 8))
    report = evaluate_run(model, 'heat', config, collocation=collocation, shape=(8, 8), verbose=False)
    assert set(report.windows) == {'in_domain', 'ood_table', 'ood_time', 'ood_space'}
    assert report.windows['ood_space']['solution_mse'] is not None, "heat has a closed form everywhere"
    assert 'valid_time' in report.not_applicable and 'conservation' in report.not_applicable
    assert report.coefficients and report.bound and report.latent_correlations
    assert report.sparsity['percent_zero'] == 100.0 and report.stability['stable']

    again = evaluate_run(model, 'heat', config, collocation=collocation, shape=(8, 8), verbose=False)
    assert again.to_dict() == report.to_dict(), "evaluation must be deterministic"

    json_path, csv_path = save_report(report, str(tmp_path))
    loaded = RunReport.from_json(json_path)
    assert loaded.to_dict() == json.loads(json.dumps(report.to_dict()))
    assert (tmp_path / 'metrics.csv').exists()


def test_evaluate_run_skips_ood_space_for_dirichlet_systems():
    config = TrainConfig.for_variant('pinn', **TINY)
    model = build_model('burgers', config)
    report = evaluate_run(model, 'burgers', config, shape=(6, 4), verbose=False)
    assert report.windows['ood_space']['solution_mse'] is None
    assert 'ood_space.solution_mse' in report.not_applicable


def test_report_json_maps_nan_to_null(tmp_path):
    report = RunReport(system='heat', variant='pinn', seed=0, koopman_r2=float('nan'))
    path = report.to_json(str(tmp_path / 'report.json'))
    with open(path) as f:
        data = json.load(f)
    assert data['koopman_r2'] is None
    assert 'koopman.r2' not in report.flat_metrics()


def test_cached_reference_matches_direct(tmp_path):
    from src.core.reference import ReferenceCache
    grid = MetricGrid.for_window('heat', 'ood_time', (6, 6))
    direct = compute_reference('heat', grid.x, grid.t)
    cached = compute_reference('heat', grid.x, grid.t, ReferenceCache(str(tmp_path)))
    assert np.array_equal(direct.values, cached.values)
