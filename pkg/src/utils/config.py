"""
configuration module for spikelab experiments.
contains architecture and training parameters, file paths, and metric constants.
"""

import os
import configparser
from dataclasses import dataclass, fields, asdict
from typing import Dict, Any, Tuple, Optional

from .exceptions import DomainError


class Config:
    """configuration class following single responsibility principle."""

    # file paths
    BASE_DIR = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    OUTPUT_DIR = os.path.join(BASE_DIR, 'out')
    CACHE_DIR = os.getenv('SPIKELAB_CACHE', os.path.join(BASE_DIR, '.reference_cache'))

    # solution network (4 hidden tanh layers of 128 units)
    ARCHITECTURE_PARAMS: Dict[str, Any] = {
        'hidden_layers': 4,
        'hidden_units': 128,
    }

    # observable embedding
    EMBEDDING_PARAMS: Dict[str, Any] = {
        'observable_dim': 64,
        'poly_degree': 2,
        'learn_library_projection': False,
    }

    # optimizer and schedule
    TRAINING_PARAMS: Dict[str, Any] = {
        'steps': 5000,
        'learning_rate': 1e-3,
        'betas': (0.9, 0.999),
        'eps': 1e-8,
        'koopman_dt': 0.01,
        'physics_batch': 2048,
        'koopman_batch': 512,
        'full_batch': False,
        'lambda_ic': 1.0,
        'lambda_bc': 1.0,
        'checkpoint_every': 1000,
        'log_every': 500,
    }

    # variant -> (integrator, lambda_koopman, lambda_sparse)
    VARIANTS: Dict[str, Tuple[Optional[str], float, float]] = {
        'pinn': (None, 0.0, 0.0),
        'pike-euler': ('euler', 0.1, 0.0),
        'pike-rk4': ('rk4', 0.1, 0.0),
        'pike-expm': ('expm', 0.1, 0.0),
        'spike-expm': ('expm', 0.1, 0.01),
    }

    # collocation counts (interior, boundary, initial)
    PDE_COLLOCATION = (10000, 200, 100)
    ODE_COLLOCATION = (5000, 0, 1)

    # held-out metric grid
    PDE_GRID_SHAPE = (100, 100)
    ODE_GRID_POINTS = 1000

    # metric thresholds
    SPARSITY_THRESHOLD = 1e-4
    STABILITY_THRESHOLD = 0.01
    VALID_TIME_THRESHOLD = 0.5
    LYAPUNOV_TIME = 1.1
    BOUND_DELTA = 1.0
    BOUND_FD_STEP = 1e-3

    # self-convergence estimates of reference fields must stay below this
    REFERENCE_ERROR_TOLERANCE = 1e-6

    # reference solvers
    REFERENCE_PARAMS: Dict[str, Any] = {
        'spectral_modes': 256,
        'spectral_dt': 1e-4,
        'etdrk4_modes': 512,
        'etdrk4_dt': 1e-3,
        'split_step_modes': 256,
        'split_step_dt': 1e-5,
        'ode_tol': 1e-10,
        'hermite_nodes': 160,
        'contour_points': 32,
        'blowup_limit': 1e8,
    }
    CAHN_HILLIARD_IC_SEED = 0
    CAHN_HILLIARD_IC_MODES = 8

    # lambda smoke grid
    LAMBDA_GRID: Dict[str, Tuple[float, ...]] = {
        'lambda_koopman': (0.01, 0.1),
        'lambda_sparse': (0.0, 0.01),
    }

    # experiment tracking
    EXPERIMENT_NAME = 'spikelab'
    TRACKING_URI = './mlruns'


@dataclass(frozen=True)
class TrainConfig:
    """hyperparameters of one training run; built from Config defaults per variant."""

    variant: str = 'pinn'
    integrator: Optional[str] = None
    lambda_koopman: float = 0.0
    lambda_sparse: float = 0.0
    lambda_ic: float = Config.TRAINING_PARAMS['lambda_ic']
    lambda_bc: float = Config.TRAINING_PARAMS['lambda_bc']
    koopman_dt: float = Config.TRAINING_PARAMS['koopman_dt']
    steps: int = Config.TRAINING_PARAMS['steps']
    learning_rate: float = Config.TRAINING_PARAMS['learning_rate']
    betas: Tuple[float, float] = Config.TRAINING_PARAMS['betas']
    eps: float = Config.TRAINING_PARAMS['eps']
    physics_batch: int = Config.TRAINING_PARAMS['physics_batch']
    koopman_batch: int = Config.TRAINING_PARAMS['koopman_batch']
    full_batch: bool = Config.TRAINING_PARAMS['full_batch']
    checkpoint_every: int = Config.TRAINING_PARAMS['checkpoint_every']
    log_every: int = Config.TRAINING_PARAMS['log_every']
    hidden_layers: int = Config.ARCHITECTURE_PARAMS['hidden_layers']
    hidden_units: int = Config.ARCHITECTURE_PARAMS['hidden_units']
    observable_dim: int = Config.EMBEDDING_PARAMS['observable_dim']
    poly_degree: int = Config.EMBEDDING_PARAMS['poly_degree']
    learn_library_projection: bool = Config.EMBEDDING_PARAMS['learn_library_projection']
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @classmethod
    def for_variant(cls, variant: str, **overrides: Any) -> 'TrainConfig':
        """
        build the configuration of a named variant.

        args:
            variant: one of Config.VARIANTS
            overrides: field values replacing the defaults

        returns:
            validated TrainConfig
        """
        if variant not in Config.VARIANTS:
            raise DomainError(
                f"unknown variant '{variant}'; expected one of {sorted(Config.VARIANTS)}"
            )
        integrator, lambda_koopman, lambda_sparse = Config.VARIANTS[variant]
        values = {
            'variant': variant,
            'integrator': integrator,
            'lambda_koopman': lambda_koopman,
            'lambda_sparse': lambda_sparse,
        }
        values.update(overrides)
        return cls(**values)

    def validate(self) -> None:
        if self.variant == 'pinn' and (self.lambda_koopman != 0.0 or self.lambda_sparse != 0.0):
            raise DomainError("pinn variant requires lambda_koopman = lambda_sparse = 0")
        if self.variant.startswith('spike') and self.lambda_sparse <= 0.0:
            raise DomainError("spike variants require lambda_sparse > 0")
        if self.variant != 'pinn' and self.integrator not in ('euler', 'rk4', 'expm'):
            raise DomainError(f"invalid integrator '{self.integrator}' for {self.variant}")
        if self.steps < 0 or self.physics_batch <= 0 or self.koopman_batch <= 0:
            raise DomainError("steps must be >= 0 and batch sizes positive")
        if self.koopman_dt <= 0:
            raise DomainError("koopman_dt must be positive")

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values['betas'] = list(self.betas)
        return values

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'TrainConfig':
        values = dict(values)
        if 'betas' in values:
            values['betas'] = tuple(values['betas'])
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})


def _cast(raw: str, default: Any) -> Any:
    if isinstance(default, bool):
        return raw.strip().lower() in ('1', 'true', 'yes', 'on')
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(float(part) for part in raw.split(','))
    if default is None:
        return None if raw.strip().lower() in ('', 'none') else raw.strip()
    return raw.strip()


def load_config_file(path: str) -> Dict[str, Any]:
    """
    read TrainConfig overrides from a flat INI file.

    sections [training], [model] and [embedding] are merged; keys must be
    TrainConfig field names.

    args:
        path: path to the ini file

    returns:
        dictionary of typed overrides
    """
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise DomainError(f"config file not found: {path}")

    defaults = {f.name: f.default for f in fields(TrainConfig)}
    overrides: Dict[str, Any] = {}
    for section in ('training', 'model', 'embedding'):
        if not parser.has_section(section):
            continue
        for key, raw in parser.items(section):
            if key not in defaults:
                raise DomainError(f"unknown config key '{key}' in [{section}]")
            overrides[key] = _cast(raw, defaults[key])
    return overrides
