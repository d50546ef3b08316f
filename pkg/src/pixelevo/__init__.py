"""Decoupled pixel-to-action learning: a growing residual dictionary feeds
binary sparse codes to a tiny recurrent network evolved with XNES."""

from .compressor import (CompressorConfig, ContractError, Dictionary, TrainingSet, clipped_residual,
                         drsc_encode, idvq_train, idvq_train_step, reconstruct, training_set_offer)
from .controller import Controller, ControllerShape, expand_inputs, genotype_layout
from .environment import EnvError, PixelAdapter, PixelEnv, make_env
from .harness import RunConfig, build_env, evaluate_checkpoint, init_state, run_generation, train
from .optimizer import SearchDistribution, ask, default_hyper, expand_dims, tell

__version__ = "0.1.0"
