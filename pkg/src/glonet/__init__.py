"""Conditional generative optimization of silicon metagratings."""

from .adjoint import EvaluationResult, evaluate, efficiency
from .network import Architecture, GeneratorParameters, init_weights, load_checkpoint, save_checkpoint
from .rcwa import MaterialConfig, OperatingCondition, RcwaSettings, simulate
from .trainer import TrainingConfig, generate_ensemble, train

__version__ = "0.1.0"
