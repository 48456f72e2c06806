"""
main execution script for spikelab experiments.
trains, evaluates and reports pinn / pike / spike runs, compares reports and
re-executes manifests.
"""

import argparse
import hashlib
import json
import sys
import time
import warnings
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import torch
from joblib import Parallel, delayed

from src.core.evaluator import MetricGrid, RunReport, evaluate_run, predict_field, save_report
from src.core.model_trainer import train
from src.core.reference import ReferenceCache, compute_reference
from src.core.systems import SYSTEMS, get_system, sample_collocation
from src.monitoring.model_monitor import ModelMonitor, acceptance_checks, compare_reports
from src.utils.config import Config, TrainConfig, load_config_file
from src.utils.exceptions import DomainError, SpikeLabError, TrainingDivergedError, UnknownSystemError
from src.utils.model_manager import ModelManager
from src.utils.visualizer import Visualizer

warnings.filterwarnings('ignore')

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
MANIFEST_VERSION = 1


def _banner(title: str) -> None:
    print("\n" + "=" * 80)
    print(title)
    print("=" * 80)


def code_hash() -> str:
    """sha256 over the package sources in sorted path order."""
    root = Path(__file__).resolve().parent
    digest = hashlib.sha256()
    for path in sorted(root.rglob('*.py')):
        digest.update(path.relative_to(root).as_posix().encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


def _write_plots(run_dir: Path, spec, model, history: Optional[pd.DataFrame], cache: ReferenceCache) -> List[str]:
    plots = Visualizer(str(run_dir / 'plots'))
    title = f"{spec.display_name}"
    files = []
    if history is not None and len(history):
        files.append(plots.plot_loss_curves(history, f"{title}: training loss"))

    in_grid = MetricGrid.for_window(spec, 'in_domain')
    ood_grid = MetricGrid.for_window(spec, 'ood_time')
    ref_in = compute_reference(spec, in_grid.x, in_grid.t, cache)
    ref_ood = compute_reference(spec, ood_grid.x, ood_grid.t, cache)
    pred_in = predict_field(model.solution, spec, ref_in.x, ref_in.t)
    pred_ood = predict_field(model.solution, spec, ref_ood.x, ref_ood.t)

    if spec.is_ode:
        files.append(plots.plot_trajectory(ref_in.t, pred_in, ref_in.values, spec.channel_names, f"{title}: trajectory"))
    else:
        files.append(plots.plot_solution_slices(
            ref_in.x, ref_in.t, pred_in, ref_in.values, f"{title}: solution slices", slices=(0, len(ref_in.t) // 2, -1)
        ))

    def rms_per_time(pred, ref):
        diff = (pred - ref).reshape(len(ref), -1)
        return np.sqrt(np.mean(diff ** 2, axis=-1))

    t = np.concatenate([ref_in.t, ref_ood.t])
    error = np.concatenate([rms_per_time(pred_in, ref_in.values), rms_per_time(pred_ood, ref_ood.values)])
    files.append(plots.plot_ood_error(t, error, f"{title}: error vs t", train_end=spec.time_window[1]))
    files.append(plots.plot_generator(model.generator.numpy(), f"{title}: generator |A|"))
    return files


def execute_run(job: Dict[str, Any]) -> Dict[str, Any]:
    """
    train (or load) and evaluate one (system, variant, seed) run.

    args:
        job: system, variant, seed, overrides, out, cache_dir, threads,
             metrics_only (checkpoint path or None), check, label

    returns:
        dictionary with status, paths, timings and check results
    """
    torch.set_num_threads(int(job['threads']))
    spec = get_system(job['system'])
    cache = ReferenceCache(job.get('cache_dir'))
    label = job.get('label') or job['variant']
    run_dir = Path(job['out']) / spec.name / label / str(job['seed'])
    run_dir.mkdir(parents=True, exist_ok=True)
    result = {'system': spec.name, 'variant': job['variant'], 'label': label, 'seed': job['seed'],
              'run_dir': str(run_dir), 'status': 'ok', 'files': [], 'checks': []}

    history = None
    try:
        if job.get('metrics_only'):
            model, metadata = ModelManager(str(run_dir)).load_checkpoint(job['metrics_only'])
            config = TrainConfig.from_dict(metadata.get('config', {}))
            result['seconds'] = 0.0
            result['seconds_per_1000_steps'] = None
        else:
            config = TrainConfig.for_variant(job['variant'], seed=job['seed'], **job.get('overrides', {}))
            training = train(spec, config, output_dir=str(run_dir))
            model, history = training.model, training.history
            result['seconds'] = training.seconds
            result['seconds_per_1000_steps'] = training.seconds_per_1000_steps
            result['files'] += [str(run_dir / 'loss.csv'), training.checkpoint_path,
                                str(run_dir / 'checkpoint_metadata.json')]
    except TrainingDivergedError as exc:
        print(f"[ERROR] {spec.name}/{label}/seed {job['seed']}: {exc}")
        result.update(status='diverged', error=str(exc), checkpoint=exc.checkpoint_path)
        return result

    collocation = sample_collocation(spec, config.seed)
    report = evaluate_run(model, spec, config, collocation=collocation, cache=cache)
    result['files'] += list(save_report(report, str(run_dir)))
    result['files'] += _write_plots(run_dir, spec, model, history, cache)
    result['report'] = str(run_dir / 'report.json')

    if job.get('check'):
        for check in acceptance_checks(report):
            tag = "[CHECK]" if check.passed else "[CHECK] FAILED"
            print(f"{tag} {spec.name}/{label}/seed {job['seed']} {check.name}: {check.detail}")
            result['checks'].append({'name': check.name, 'passed': check.passed, 'detail': check.detail})
    return result


class SpikeLabPipeline:
    """
    main pipeline class following open/closed principle.
    orchestrates training, evaluation, tables and the manifest.
    """

    def __init__(self, out_dir: str, workers: int = 1, track: bool = False, check: bool = False,
                 cache_dir: Optional[str] = None):
        """
        initialize the pipeline.

        args:
            out_dir: output root
            workers: joblib worker count
            track: log finished runs to mlflow
            check: evaluate acceptance checks per run
            cache_dir: reference cache directory (default: SPIKELAB_CACHE or Config.CACHE_DIR)
        """
        self.out_dir = Path(out_dir)
        self.workers = max(1, int(workers))
        self.check = check
        self.cache_dir = cache_dir
        self.monitor = ModelMonitor() if track else None
        self.threads = torch.get_num_threads() if self.workers == 1 else 1

    def build_jobs(self, systems: Sequence[str], variants: Sequence[str], seeds: Sequence[int],
                   overrides: Dict[str, Any], ablation: Optional[str] = None,
                   metrics_only: Optional[str] = None) -> List[Dict[str, Any]]:
        base = {'out': str(self.out_dir), 'cache_dir': self.cache_dir, 'threads': self.threads,
                'check': self.check, 'metrics_only': metrics_only}
        jobs = []
        for system in systems:
            for seed in seeds:
                if ablation == 'lambda-grid':
                    for lk in Config.LAMBDA_GRID['lambda_koopman']:
                        for ls in Config.LAMBDA_GRID['lambda_sparse']:
                            variant = 'spike-expm' if ls > 0 else 'pike-expm'
                            jobs.append(dict(base, system=system, variant=variant, seed=seed,
                                             label=f"{variant}_lk{lk:g}_ls{ls:g}",
                                             overrides=dict(overrides, lambda_koopman=lk, lambda_sparse=ls)))
                    continue
                for variant in variants:
                    jobs.append(dict(base, system=system, variant=variant, seed=seed, overrides=dict(overrides)))
        return jobs

    def execute(self, jobs: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
        _banner(f"RUNNING {len(jobs)} JOB(S) ON {self.workers} WORKER(S)")
        if self.workers == 1:
            return [execute_run(job) for job in jobs]
        return Parallel(n_jobs=self.workers)(delayed(execute_run)(job) for job in jobs)

    def write_tables(self, results: List[Dict[str, Any]], ablation: bool) -> List[str]:
        rows = []
        for result in results:
            if result['status'] != 'ok':
                continue
            report = RunReport.from_json(result['report'])
            rows.append({
                'system': report.system,
                'variant': result['label'],
                'seed': report.seed,
                'lambda_koopman': report.config.get('lambda_koopman'),
                'lambda_sparse': report.config.get('lambda_sparse'),
                'physics_mse': report.windows['in_domain']['physics_mse'],
                'ood_time_physics_mse': report.windows['ood_time']['physics_mse'],
                'sparsity_pct': report.sparsity['percent_zero'],
                'abscissa': report.stability['abscissa'],
                'koopman_r2': report.koopman_r2,
            })
        files = []
        if not rows:
            return files
        frame = pd.DataFrame(rows)
        if ablation:
            path = self.out_dir / 'ablation.csv'
            frame[['system', 'variant', 'seed', 'lambda_koopman', 'lambda_sparse', 'physics_mse',
                   'sparsity_pct', 'abscissa', 'koopman_r2']].to_csv(path, index=False)
            return [str(path)]
        for column, name in (('physics_mse', 'summary.csv'), ('ood_time_physics_mse', 'summary_ood.csv')):
            table = frame.pivot_table(index='system', columns='variant', values=column, aggfunc='mean')
            path = self.out_dir / name
            table.to_csv(path)
            files.append(str(path))
        return files

    def run(self, args: argparse.Namespace, systems: List[str], variants: List[str],
            overrides: Dict[str, Any]) -> int:
        """execute every requested run and write tables and the manifest; returns the exit code."""
        _banner("SPIKELAB - PHYSICS-INFORMED KOOPMAN EXPERIMENTS")
        started = datetime.now().isoformat()
        self.out_dir.mkdir(parents=True, exist_ok=True)
        jobs = self.build_jobs(systems, variants, args.seed, overrides, args.ablation, args.metrics_only)
        start = time.perf_counter()
        results = self.execute(jobs)
        elapsed = time.perf_counter() - start

        files = [f for result in results for f in result['files']]
        files += self.write_tables(results, ablation=args.ablation == 'lambda-grid')

        if self.monitor is not None:
            for result in results:
                if result['status'] == 'ok':
                    self.monitor.log_run(RunReport.from_json(result['report']), result['run_dir'],
                                         result.get('seconds_per_1000_steps'))

        _banner("SUMMARY")
        for result in results:
            cost = result.get('seconds_per_1000_steps')
            cost_text = f", {cost:.1f}s / 1000 steps" if cost else ''
            print(f"[{'OK' if result['status'] == 'ok' else 'ERROR'}] {result['system']}/{result['label']}"
                  f"/seed {result['seed']}: {result['status']}{cost_text}")

        manifest = {
            'manifest_version': MANIFEST_VERSION,
            'code_hash': code_hash(),
            'command': 'run',
            'systems': systems,
            'variants': variants,
            'seeds': list(args.seed),
            'overrides': overrides,
            'ablation': args.ablation,
            'metrics_only': args.metrics_only,
            'check': self.check,
            'workers': self.workers,
            'threads': self.threads,
            'config': TrainConfig().to_dict(),
            'started_at': started,
            'finished_at': datetime.now().isoformat(),
            'elapsed_seconds': elapsed,
            'runs': [{k: v for k, v in r.items() if k != 'files'} for r in results],
            'outputs': sorted(set(files)),
        }
        manifest_path = self.out_dir / 'manifest.json'
        with open(manifest_path, 'w') as f:
            json.dump(manifest, f, indent=2, default=str)
        print(f"  → Manifest saved to: {manifest_path}")

        if any(r['status'] == 'diverged' for r in results):
            return EXIT_DIVERGED
        failed_checks = any(not c['passed'] for r in results for c in r['checks'])
        if failed_checks or any(r['status'] != 'ok' for r in results):
            return EXIT_FAILED
        print("[OK] ALL RUNS COMPLETE")
        return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='spikelab', description="PINN / PIKE / SPIKE experiment runner")
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help='train and evaluate runs')
    run.add_argument('--system', default='heat', help="system name or 'all'")
    run.add_argument('--variant', default='pinn', help="variant name or 'all'")
    run.add_argument('--steps', type=int, default=None, help='optimizer steps (default 5000)')
    run.add_argument('--seed', type=int, action='append', default=None, help='seed (repeatable)')
    run.add_argument('--out', default=Config.OUTPUT_DIR, help='output directory')
    run.add_argument('--ablation', choices=['lambda-grid'], default=None, help='run the lambda smoke grid')
    run.add_argument('--metrics-only', default=None, metavar='CHECKPOINT',
                     help='evaluate a saved checkpoint instead of training')
    run.add_argument('--config', default=None, help='INI file with [training]/[model]/[embedding] overrides')
    run.add_argument('--workers', type=int, default=1, help='parallel runs')
    run.add_argument('--check', action='store_true', help='evaluate acceptance checks')
    run.add_argument('--track', action='store_true', help='log runs to mlflow')

    compare = sub.add_parser('compare', help='compare run reports against the pinn baseline')
    compare.add_argument('reports', nargs='+', help='report.json paths')
    compare.add_argument('--baseline', default='pinn')
    compare.add_argument('--out', default=None, help='write the table as CSV')

    rerun = sub.add_parser('rerun', help='re-execute a manifest')
    rerun.add_argument('manifest')
    rerun.add_argument('--out', required=True, help='new output directory')
    return parser


def _expand(value: str, choices: Sequence[str], kind: str, parser: argparse.ArgumentParser) -> List[str]:
    if value == 'all':
        return list(choices)
    names = [v.strip().lower() for v in value.split(',')]
    for name in names:
        if name not in choices:
            parser.error(f"unknown {kind} '{name}'; expected one of {', '.join(choices)} or 'all'")
    return names


def _run_command(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    systems = _expand(args.system, list(SYSTEMS), 'system', parser)
    variants = _expand(args.variant, list(Config.VARIANTS), 'variant', parser)
    args.seed = args.seed or [0]
    overrides = load_config_file(args.config) if args.config else {}
    if args.steps is not None:
        overrides['steps'] = args.steps
    if args.metrics_only and (len(systems) != 1 or len(variants) != 1 or len(args.seed) != 1):
        parser.error("--metrics-only evaluates exactly one system, variant and seed")
    for variant in variants:
        TrainConfig.for_variant(variant, **overrides)
    pipeline = SpikeLabPipeline(args.out, workers=args.workers, track=args.track, check=args.check)
    return pipeline.run(args, systems, variants, overrides)


def _compare_command(args: argparse.Namespace) -> int:
    _banner("REPORT COMPARISON")
    table = compare_reports(args.reports, baseline=args.baseline)
    print(table.to_string())
    if args.out:
        table.to_csv(args.out)
        print(f"  → Comparison saved to: {args.out}")
    return EXIT_OK


def _rerun_command(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    with open(args.manifest, 'r') as f:
        manifest = json.load(f)
    if manifest.get('manifest_version') != MANIFEST_VERSION:
        parser.error(f"unsupported manifest version {manifest.get('manifest_version')}")
    if manifest.get('code_hash') != code_hash():
        print("[WARNING] code changed since the manifest was written; results may differ")
    replay = argparse.Namespace(
        seed=manifest['seeds'], ablation=manifest.get('ablation'),
        metrics_only=manifest.get('metrics_only'), out=args.out,
    )
    pipeline = SpikeLabPipeline(args.out, workers=manifest.get('workers', 1), check=manifest.get('check', False))
    pipeline.threads = manifest.get('threads', pipeline.threads)
    return pipeline.run(replay, manifest['systems'], manifest['variants'], manifest.get('overrides', {}))


def main(argv: Optional[Sequence[str]] = None) -> int:
    """main entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == 'run':
            return _run_command(args, parser)
        if args.command == 'compare':
            return _compare_command(args)
        return _rerun_command(args, parser)
    except TrainingDivergedError as exc:
        print(f"[ERROR] {exc}")
        return EXIT_DIVERGED
    except (DomainError, UnknownSystemError) as exc:
        print(f"[ERROR] {exc}")
        return EXIT_USAGE
    except (SpikeLabError, FileNotFoundError) as exc:
        print(f"[ERROR] {exc}")
        return EXIT_FAILED
    except ValueError as exc:
        print(f"[ERROR] {exc}")
        return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())
