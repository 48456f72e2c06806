"""
monitoring module for spikelab.
tracks runs in mlflow, compares run reports against the pinn baseline and
evaluates the acceptance checks.
"""

import logging
import math
import os
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import mlflow
import numpy as np
import pandas as pd

warnings.filterwarnings('ignore')

# suppress mlflow warnings
os.environ['MLFLOW_ENABLE_ARTIFACTS_PROGRESS_BAR'] = 'false'
logging.getLogger('mlflow').setLevel(logging.ERROR)

from ..core.evaluator import RunReport
from ..utils.config import Config

HIGHER_IS_BETTER = ('sparsity.percent_zero', 'valid_time.valid_time', 'valid_time.lyapunov_ratio', 'koopman.r2')
NOT_COMPARED = ('sparsity.total', 'valid_time.horizon', 'bound.delta', 'stability.stable', 'bound.satisfied')


class ModelMonitor:
    """
    model monitoring class following single responsibility principle.
    responsible for experiment tracking of finished runs.
    """

    def __init__(
        self,
        experiment_name: str = Config.EXPERIMENT_NAME,
        tracking_uri: str = Config.TRACKING_URI,
    ):
        """
        initialize model monitor with mlflow configuration.

        args:
            experiment_name: name of mlflow experiment
            tracking_uri: path or uri of the tracking store
        """
        self.experiment_name = experiment_name
        # env var wins over the configured default
        raw_tracking_uri = os.getenv("MLFLOW_TRACKING_URI", tracking_uri)
        self.tracking_uri = self._normalize_tracking_uri(raw_tracking_uri)
        mlflow.set_tracking_uri(self.tracking_uri)
        mlflow.set_experiment(experiment_name)

    @staticmethod
    def _normalize_tracking_uri(tracking_uri: str) -> str:
        """normalize tracking uri for local usage."""
        if not tracking_uri:
            tracking_uri = Config.TRACKING_URI
        if "://" in tracking_uri:
            return tracking_uri
        abs_path = Path(tracking_uri).expanduser().resolve()
        return f"file://{abs_path.as_posix()}"

    def log_run(self, report: RunReport, run_dir: str, seconds_per_1000_steps: Optional[float] = None) -> str:
        """
        log one finished run: config as params, finite metrics, and the run directory as artifacts.

        returns:
            run_id of the logged run
        """
        with mlflow.start_run(run_name=f"{report.system}_{report.variant}_{report.seed}") as run:
            mlflow.log_param("system", report.system)
            for name, value in report.config.items():
                mlflow.log_param(name, value)
            metrics = report.flat_metrics()
            if seconds_per_1000_steps is not None:
                metrics['cost.seconds_per_1000_steps'] = seconds_per_1000_steps
            for name, value in metrics.items():
                if value is None or not np.isfinite(value):
                    continue
                mlflow.log_metric(name.replace(':', '_').replace('*', 'x').replace('^', 'p'), value)
            if Path(run_dir).exists():
                mlflow.log_artifacts(str(run_dir))
            return run.info.run_id


def _label(report: RunReport, labels: List[str]) -> str:
    label = report.variant
    if label in labels:
        label = f"{report.variant}-seed{report.seed}"
    base, counter = label, 2
    while label in labels:
        label = f"{base}-{counter}"
        counter += 1
    return label


def compare_reports(reports: Sequence[Any], baseline: str = 'pinn') -> pd.DataFrame:
    """
    improvement table of each report against the baseline variant.

    improvement is baseline / variant for lower-is-better metrics and
    variant / baseline otherwise; missing values are 'N/A'.

    args:
        reports: RunReport objects or report.json paths (same system, at least two)
        baseline: variant used as the reference column

    returns:
        dataframe indexed by metric with value columns, improvement columns and 'best'
    """
    loaded = [r if isinstance(r, RunReport) else RunReport.from_json(r) for r in reports]
    if len(loaded) < 2:
        raise ValueError("compare needs at least two reports")
    systems = {r.system for r in loaded}
    if len(systems) != 1:
        raise ValueError(f"reports cover several systems: {sorted(systems)}")

    labels: List[str] = []
    values: Dict[str, Dict[str, float]] = {}
    for report in loaded:
        label = _label(report, labels)
        labels.append(label)
        values[label] = {k: v for k, v in report.flat_metrics().items() if k not in NOT_COMPARED}
    base_label = next((l for l, r in zip(labels, loaded) if r.variant == baseline), labels[0])

    metrics = sorted(set().union(*[v.keys() for v in values.values()]))
    rows = []
    for metric in metrics:
        higher = metric in HIGHER_IS_BETTER
        row: Dict[str, Any] = {'metric': metric}
        present = {}
        for label in labels:
            value = values[label].get(metric)
            row[label] = value if value is not None else 'N/A'
            if value is not None:
                present[label] = value
        base = present.get(base_label)
        for label in labels:
            if label == base_label:
                continue
            value = present.get(label)
            if base is None or value is None:
                ratio = 'N/A'
            elif higher:
                ratio = value / base if base != 0 else (1.0 if value == 0 else math.inf)
            else:
                ratio = base / value if value != 0 else (1.0 if base == 0 else math.inf)
            row[f"improvement_{label}"] = ratio
        if present:
            pick = max if higher else min
            row['best'] = pick(present, key=present.get)
        else:
            row['best'] = 'N/A'
        rows.append(row)
    return pd.DataFrame(rows).set_index('metric')


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _coefficient(report: RunReport, term: str) -> Optional[Dict[str, Any]]:
    for row in report.coefficients or []:
        if row['term'] == term:
            return row
    return None


def acceptance_checks(report: RunReport) -> List[CheckResult]:
    """
    desk-scale checks applicable to the report's system and variant.

    returns:
        list of CheckResult (empty when nothing applies)
    """
    results = []
    integrator = report.config.get('integrator')

    if integrator == 'expm' and report.system in ('heat', 'burgers', 'lorenz'):
        abscissa = report.stability.get('abscissa')
        ok = abscissa is not None and abscissa <= Config.STABILITY_THRESHOLD
        results.append(CheckResult('stability', ok, f"spectral abscissa {abscissa} <= {Config.STABILITY_THRESHOLD}"))

    if report.system == 'seir' and report.conservation:
        drift = report.conservation.get('population')
        ok = drift is not None and drift <= 1e-3
        results.append(CheckResult('seir_population', ok, f"population rel std {drift} <= 1e-3"))

    if report.system == 'heat' and report.variant == 'pike-expm':
        window = report.windows.get('in_domain', {})
        physics = window.get('physics_mse')
        solution = window.get('solution_mse')
        rms = math.sqrt(solution) if solution is not None else None
        results.append(CheckResult('heat_physics', physics is not None and physics <= 1e-3,
                                   f"in-domain physics mse {physics} <= 1e-3"))
        results.append(CheckResult('heat_solution', rms is not None and rms <= 5e-2,
                                   f"in-domain solution rms {rms} <= 5e-2"))

    if report.variant == 'pike-expm' and report.system in ('heat', 'burgers'):
        term = 'u_xx' if report.system == 'heat' else 'u*u_x'
        row = _coefficient(report, term)
        ok = row is not None and row['rel_error'] <= 0.1 and row['r_squared'] >= 0.95
        detail = "missing" if row is None else f"{term}: rel error {row['rel_error']:.3g}, r2 {row['r_squared']:.4f}"
        results.append(CheckResult('coefficient_recovery', ok, detail))

    return results
