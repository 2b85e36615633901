"""Soft decision forests with deterministic-annealing split learning.

Each tree routes a sample softly through sigmoid split nodes fed by a shared
feature learner. Leaves hold either categorical label distributions
(distribution learning and classification) or Gaussians (regression), and
are refit in closed form between rounds of SGD on the feature learner.
"""

__version__ = "0.1.0"

from . import kernels
from .errors import (
    ConfigError, DDRFError, DimensionError, InvalidInputError, ParseError, StateError,
    TrainingDivergedError,
)
from .tree import RoutingResult, TreeTopology, route, route_activations, split_activation
from .leaves import CategoricalLeaves, GaussianLeaves, generate_label_distribution
from .splits import (
    AnnealedLossValue, SplitGradient, classification_split_gradient, cool_split_temperature,
    ldl_split_gradient, regression_split_gradient,
)
from .leaf_update import (
    LeafBuffer, classification_leaf_update, ldl_leaf_update, regression_leaf_update,
    tempered_posterior, update_leaves, warm_leaf_schedule,
)
from .learner import LearnerSpec, ParameterVector, backward, forward, init_params, sgd_step
from .forest import (
    Forest, ScheduleState, TrainConfig, TrainingLog, build_forest, load_checkpoint,
    save_checkpoint, train,
)
from .data import Dataset, load_csv, save_csv, synth_inhomogeneous, train_test_split
from .metrics import EvalReport, cumulative_score, evaluate
from .baseline import baseline_l2_regression, fit_l2_regression
from .experiment import parse_config, run_experiment
