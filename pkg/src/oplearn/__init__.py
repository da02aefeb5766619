"""Operator learning for a backward parabolic Cauchy problem.

The package builds an orthonormal basis of the first Sobolev space from
weighted Hermite functions, manufactures training data by Feynman-Kac
Monte Carlo, and fits two operator models (a coefficient-space network
per evaluation point and a branch/trunk network) whose training,
evaluation and reporting are driven by the ``oplearn`` command line.
"""

from .dataset import (DatasetHeader, generate_test_set,
                      generate_training_set, load_dataset, stream_batches)
from .deeponet import (SensorGrid, forward_don_batch, load_checkpoint_don,
                       save_checkpoint_don, sensor_matrix, train_don)
from .errors import (CheckpointError, ConfigError, ConstructionError,
                     ContractError, DataFormatError, NumericError,
                     OplearnError, SimulationError)
from .frechet_net import (TrainConfig, forward_batch, load_checkpoint,
                          save_checkpoint, train)
from .harness import (ExperimentConfig, TrainSettings, config_hash,
                      load_config, main, save_config)
from .hermite import (HermiteEval, gram_matrix, gram_w12,
                      hermite_derivatives, hermite_matrix, hermite_values)
from .sobolev_basis import (BasisSet, CompactSetSpec, FunctionElement,
                            build_basis, evaluate, evaluate_many,
                            sample_compact, w12_inner)
from .stochastic import PathConfig, ProblemSpec, mc_solution

__version__ = "0.1.0"

__all__ = [
    "BasisSet", "CheckpointError", "CompactSetSpec", "ConfigError",
    "ConstructionError", "ContractError", "DataFormatError",
    "DatasetHeader", "ExperimentConfig", "FunctionElement", "HermiteEval",
    "NumericError", "OplearnError", "PathConfig", "ProblemSpec",
    "SensorGrid", "SimulationError", "TrainConfig", "TrainSettings",
    "build_basis", "config_hash", "evaluate", "evaluate_many",
    "forward_batch", "forward_don_batch", "generate_test_set",
    "generate_training_set", "gram_matrix", "gram_w12",
    "hermite_derivatives", "hermite_matrix", "hermite_values",
    "load_checkpoint", "load_checkpoint_don", "load_config",
    "load_dataset", "main", "mc_solution", "sample_compact",
    "save_checkpoint", "save_checkpoint_don", "save_config",
    "sensor_matrix", "stream_batches", "train", "train_don", "w12_inner",
]
