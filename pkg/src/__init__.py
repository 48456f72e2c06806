"""
spikelab package.
physics-informed networks regularized by a learned koopman generator,
with reference solvers and evaluation metrics for 1d pde and ode benchmarks.
"""

from .utils.config import Config, TrainConfig
from .core.model_trainer import ModelTrainer
from .core.evaluator import RunReport
from .utils.visualizer import Visualizer
from .utils.model_manager import ModelManager
from .monitoring.model_monitor import ModelMonitor

__all__ = [
    'Config',
    'TrainConfig',
    'ModelTrainer',
    'RunReport',
    'Visualizer',
    'ModelManager',
    'ModelMonitor',
]

__version__ = '1.0.0'
