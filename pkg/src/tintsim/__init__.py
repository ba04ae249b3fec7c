"""Transformer-in-transformer simulators, built and verified at desk scale.

A simulator ("TinT") is a larger transformer whose one forward pass
runs an auxiliary transformer's forward pass, its (approximate)
backward pass, and a gradient-descent update, with the auxiliary
weights living in prefix token embeddings. This package constructs
such simulators from auxiliary weights, runs them, and checks every
construction against exact reference implementations.
"""

from ._backend import BACKEND_NAME, get_backend
from .aux_reference import (AttnParams, AuxBlock, AuxConfig, AuxModel, FfnParams,
                            GluParams, GradSet, LossSpec, NormParams,
                            finetune_eval, random_model)
from .checkpoint import load_checkpoint, model_tensors, save_checkpoint
from .errors import (BudgetError, CheckpointError, ConfigError, ConstructionError,
                     DegenerateInputError, DimensionError, PreconditionError,
                     TintError)
from .presets import PRESET_NAMES, preset_config, preset_model_and_tokens
from .tensor_core import Tensor, activation_eval, matmul, softmax_rows
from .tint_builder import (CountReport, FormattedInput, SimResult, TinTConfig,
                           TinTStack, build_tint, count_params, format_input,
                           run_simulation)
from .tint_kernels import (TintAttnParams, gelu_multiply, group_norm,
                           hsplit_dimwise, hsplit_splitwise, linear_as_softmax,
                           tint_attention)
from .tint_modules import PrefixLayout, decode_prefix, encode_prefix
from .verify import run_suites

__version__ = "0.1.0"

__all__ = [
    "AttnParams", "AuxBlock", "AuxConfig", "AuxModel", "BACKEND_NAME",
    "BudgetError", "CheckpointError", "ConfigError", "ConstructionError",
    "CountReport", "DegenerateInputError", "DimensionError", "FfnParams",
    "FormattedInput", "GluParams", "GradSet", "LossSpec", "NormParams",
    "PRESET_NAMES", "PrefixLayout", "PreconditionError", "SimResult", "Tensor",
    "TinTConfig", "TinTStack", "TintAttnParams", "TintError", "activation_eval",
    "build_tint", "count_params", "decode_prefix", "encode_prefix",
    "finetune_eval", "format_input", "gelu_multiply", "get_backend",
    "group_norm", "hsplit_dimwise", "hsplit_splitwise", "linear_as_softmax",
    "load_checkpoint", "matmul", "model_tensors", "preset_config",
    "preset_model_and_tokens", "random_model", "run_simulation", "run_suites",
    "save_checkpoint", "softmax_rows", "tint_attention",
]
