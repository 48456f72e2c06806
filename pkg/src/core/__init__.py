"""
core modules for spikelab.
contains linear algebra, jets, networks, the system registry, reference
solvers, training and evaluation.
"""

from .linalg import expm, eigenvalues, least_squares
from .autodiff import Jet, eval_with_input_derivs, grad_params
from .model import Architecture, EmbeddingSpec, MlpParams, ObservableEmbedding, GeneratorMatrix, PikeModel
from .systems import SYSTEMS, SystemSpec, get_system, residual, sample_collocation
from .reference import ReferenceField, ReferenceCache, compute_reference
from .model_trainer import ModelTrainer, koopman_loss, total_loss, train
from .evaluator import MetricGrid, RunReport, evaluate_run

__all__ = [
    'expm',
    'eigenvalues',
    'least_squares',
    'Jet',
    'eval_with_input_derivs',
    'grad_params',
    'Architecture',
    'EmbeddingSpec',
    'MlpParams',
    'ObservableEmbedding',
    'GeneratorMatrix',
    'PikeModel',
    'SYSTEMS',
    'SystemSpec',
    'get_system',
    'residual',
    'sample_collocation',
    'ReferenceField',
    'ReferenceCache',
    'compute_reference',
    'ModelTrainer',
    'koopman_loss',
    'total_loss',
    'train',
    'MetricGrid',
    'RunReport',
    'evaluate_run',
]
