"""
utility modules for configuration, errors, persistence and visualization.
"""

from .config import Config, TrainConfig
from .exceptions import SpikeLabError
from .visualizer import Visualizer
from .model_manager import ModelManager

__all__ = [
    'Config',
    'TrainConfig',
    'SpikeLabError',
    'Visualizer',
    'ModelManager',
]
