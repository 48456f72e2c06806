import json
import math

import pandas as pd
import pytest

import src.main as cli
from src.core.evaluator import RunReport
from src.monitoring.model_monitor import acceptance_checks, compare_reports
from src.utils.config import load_config_file
from src.utils.exceptions import DomainError, TrainingDivergedError

SMALL_INI = """
[model]
hidden_layers = 1
hidden_units = 8

[embedding]
observable_dim = 8

[training]
physics_batch = 64
koopman_batch = 32
"""


@pytest.fixture
def small_config(tmp_path, monkeypatch):
    monkeypatch.setenv('SPIKELAB_CACHE', str(tmp_path / 'cache'))
    path = tmp_path / 'small.ini'
    path.write_text(SMALL_INI)
    return str(path)


def _report(variant, physics, percent_zero=50.0, **extra):
    return RunReport(
        system='heat', variant=variant, seed=0,
        windows={'in_domain': {'physics_mse': physics, 'solution_mse': 1e-4}},
        sparsity={'percent_zero': percent_zero, 'nonzero_count': 10, 'total': 64},
        stability={'abscissa': -0.1, 'stable': True},
        config={'integrator': None if variant == 'pinn' else 'expm'},
        **extra,
    )


def test_config_file_overrides(small_config):
    overrides = load_config_file(small_config)
    assert overrides == {'hidden_layers': 1, 'hidden_units': 8, 'observable_dim': 8,
                         'physics_batch': 64, 'koopman_batch': 32}


def test_config_file_rejects_unknown_keys(tmp_path):
    path = tmp_path / 'bad.ini'
    path.write_text("[training]\nlearning_rat = 0.1\n")
    with pytest.raises(DomainError):
        load_config_file(str(path))


def test_unknown_system_is_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        cli.main(['run', '--system', 'navier-stokes'])
    assert excinfo.value.code == 2


def test_unknown_variant_is_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        cli.main(['run', '--variant', 'pike-leapfrog'])
    assert excinfo.value.code == 2


def test_invalid_steps_is_usage_error(tmp_path):
    assert cli.main(['run', '--steps', '-1', '--out', str(tmp_path)]) == cli.EXIT_USAGE


def test_missing_config_file_is_usage_error(tmp_path):
    assert cli.main(['run', '--config', str(tmp_path / 'nope.ini'), '--out', str(tmp_path)]) == cli.EXIT_USAGE


def test_compare_identical_reports():
    table = compare_reports([_report('pinn', 1e-2), _report('pike-expm', 1e-2)])
    assert table.loc['window.in_domain.physics_mse', 'improvement_pike-expm'] == 1.0


def test_compare_improvement_direction():
    table = compare_reports([_report('pinn', 2e-2, percent_zero=20.0), _report('spike-expm', 1e-2, percent_zero=80.0)])
    assert table.loc['window.in_domain.physics_mse', 'improvement_spike-expm'] == pytest.approx(2.0)
    assert table.loc['sparsity.percent_zero', 'improvement_spike-expm'] == pytest.approx(4.0)
    assert table.loc['window.in_domain.physics_mse', 'best'] == 'spike-expm'


def test_compare_marks_missing_metrics():
    with_r2 = _report('pike-expm', 1e-2, koopman_r2=0.9)
    table = compare_reports([_report('pinn', 1e-2), with_r2])
    assert table.loc['koopman.r2', 'pinn'] == 'N/A'
    assert table.loc['koopman.r2', 'improvement_pike-expm'] == 'N/A'


def test_compare_needs_one_system():
    other = _report('pike-expm', 1e-2)
    other.system = 'burgers'
    with pytest.raises(ValueError):
        compare_reports([_report('pinn', 1e-2), other])


def test_acceptance_checks_on_crafted_report():
    report = _report('pike-expm', 5e-4, coefficients=[
        {'equation': 'u_t', 'term': 'u_xx', 'true': 0.01, 'recovered': 0.0102, 'rel_error': 0.02, 'r_squared': 0.99},
    ])
    results = {c.name: c for c in acceptance_checks(report)}
    assert set(results) == {'stability', 'heat_physics', 'heat_solution', 'coefficient_recovery'}
    assert all(c.passed for c in results.values())

    failing = _report('pike-expm', 5e-2)
    results = {c.name: c for c in acceptance_checks(failing)}
    assert not results['heat_physics'].passed
    assert not results['coefficient_recovery'].passed, "missing recovery rows must fail"


def test_acceptance_checks_skip_unrelated_runs():
    assert acceptance_checks(_report('pinn', 1.0)) == []


def test_divergence_maps_to_exit_three(tmp_path, small_config, monkeypatch):
    def diverge(spec, config, output_dir=None, verbose=True):
        raise TrainingDivergedError('koopman', 7, None)

    monkeypatch.setattr(cli, 'train', diverge)
    code = cli.main(['run', '--system', 'heat', '--variant', 'pike-expm', '--steps', '10',
                     '--config', small_config, '--out', str(tmp_path / 'out')])
    assert code == cli.EXIT_DIVERGED
    manifest = json.loads((tmp_path / 'out' / 'manifest.json').read_text())
    assert manifest['runs'][0]['status'] == 'diverged'


def test_run_metrics_only_and_rerun(tmp_path, small_config):
    out = tmp_path / 'out'
    code = cli.main(['run', '--system', 'heat', '--variant', 'pinn', '--steps', '2',
                     '--config', small_config, '--out', str(out)])
    assert code == cli.EXIT_OK

    run_dir = out / 'heat' / 'pinn' / '0'
    for name in ('report.json', 'metrics.csv', 'loss.csv', 'checkpoint.pt', 'checkpoint_metadata.json'):
        assert (run_dir / name).exists(), f"missing {name}"
    assert list((run_dir / 'plots').glob('*.svg')), "plots should be written as svg"
    assert (out / 'summary.csv').exists() and (out / 'summary_ood.csv').exists()

    manifest = json.loads((out / 'manifest.json').read_text())
    assert manifest['systems'] == ['heat'] and manifest['variants'] == ['pinn'] and manifest['seeds'] == [0]
    assert len(manifest['code_hash']) == 64
    assert len(pd.read_csv(run_dir / 'loss.csv')) == 2

    report = RunReport.from_json(str(run_dir / 'report.json'))
    assert report.system == 'heat' and report.variant == 'pinn'
    assert report.windows['in_domain']['physics_mse'] >= 0.0
    assert math.isfinite(report.bound['bound'])

    # evaluating the saved checkpoint reproduces the report bit for bit
    again = tmp_path / 'again'
    code = cli.main(['run', '--system', 'heat', '--variant', 'pinn', '--out', str(again),
                     '--metrics-only', str(run_dir / 'checkpoint.pt')])
    assert code == cli.EXIT_OK
    assert (again / 'heat' / 'pinn' / '0' / 'report.json').read_bytes() == (run_dir / 'report.json').read_bytes()

    # re-executing the manifest retrains to the same report
    replay = tmp_path / 'replay'
    assert cli.main(['rerun', str(out / 'manifest.json'), '--out', str(replay)]) == cli.EXIT_OK
    assert (replay / 'heat' / 'pinn' / '0' / 'report.json').read_bytes() == (run_dir / 'report.json').read_bytes()

    # the compare subcommand reads report files
    table_path = tmp_path / 'compare.csv'
    second = replay / 'heat' / 'pinn' / '0' / 'report.json'
    assert cli.main(['compare', str(run_dir / 'report.json'), str(second), '--out', str(table_path)]) == cli.EXIT_OK
    assert table_path.exists()


def test_lambda_grid_builds_four_jobs_per_seed(tmp_path):
    pipeline = cli.SpikeLabPipeline(str(tmp_path))
    jobs = pipeline.build_jobs(['heat'], ['pinn'], [0, 1], {'steps': 1}, ablation='lambda-grid')
    assert len(jobs) == 8
    labels = {job['label'] for job in jobs}
    assert 'spike-expm_lk0.1_ls0.01' in labels and 'pike-expm_lk0.01_ls0' in labels
    for job in jobs:
        config = cli.TrainConfig.for_variant(job['variant'], **job['overrides'])
        assert config.lambda_sparse == job['overrides']['lambda_sparse']


def test_compare_keeps_every_duplicate_run():
    reports = [_report('pinn', 1e-2), _report('spike-expm', 5e-3), _report('spike-expm', 4e-3),
               _report('spike-expm', 2e-3)]
    table = compare_reports(reports)
    columns = [c for c in table.columns if c.startswith('spike-expm')]
    assert columns == ['spike-expm', 'spike-expm-seed0', 'spike-expm-seed0-2'], f"labels {columns}"
    assert table.loc['window.in_domain.physics_mse', 'spike-expm-seed0-2'] == 2e-3
    assert table.loc['window.in_domain.physics_mse', 'best'] == 'spike-expm-seed0-2'


def test_monitor_logs_run_to_file_store(tmp_path, monkeypatch):
    import mlflow
    from src.monitoring.model_monitor import ModelMonitor

    monkeypatch.delenv('MLFLOW_TRACKING_URI', raising=False)
    run_dir = tmp_path / 'run'
    run_dir.mkdir()
    report = _report('spike-expm', 1e-3, koopman_r2=float('nan'), coefficients=[
        {'equation': 'u_t', 'term': 'u*u_x', 'true': -1.0, 'recovered': -0.98, 'rel_error': 0.02, 'r_squared': 0.99},
    ])
    report.windows['ood_time'] = {'physics_mse': float('nan'), 'solution_mse': 0.5}
    report.to_json(str(run_dir / 'report.json'))

    monitor = ModelMonitor(experiment_name='spikelab-tests', tracking_uri=str(tmp_path / 'mlruns'))
    assert monitor.tracking_uri.startswith('file://')
    run_id = monitor.log_run(report, str(run_dir), seconds_per_1000_steps=float('nan'))

    logged = mlflow.get_run(run_id)
    metrics, params = logged.data.metrics, logged.data.params
    assert params['system'] == 'heat' and params['integrator'] == 'expm'
    assert metrics['window.in_domain.physics_mse'] == 1e-3
    assert metrics['window.ood_time.solution_mse'] == 0.5
    assert metrics['coefficient.u_t_uxu_x'] == -0.98, f"sanitized names: {sorted(metrics)}"
    assert not any(':' in name or '*' in name for name in metrics)
    assert 'window.ood_time.physics_mse' not in metrics and 'koopman.r2' not in metrics
    assert 'cost.seconds_per_1000_steps' not in metrics, "non-finite cost must be skipped"
    artifacts = [a.path for a in mlflow.MlflowClient().list_artifacts(run_id)]
    assert 'report.json' in artifacts
