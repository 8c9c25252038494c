"""Memory-efficient factored optimizers with Hamiltonian descent monitors."""

from .hamiltonian import DescentReport, OdeState, OdeSystem, check_descent, integrate, stationarity_probe
from .optimizers import (
    Algo,
    HyperParams,
    InvalidHyperParams,
    Optimizer,
    OptimizerState,
    ParamPolicy,
    default_hyper,
    init_state,
    state_element_count,
    step,
)
from .problems import (
    DiagQuadratic,
    LogisticRegression,
    MatrixRosenbrock,
    StochasticOracle,
    TwoLayerMLP,
    gradient_check,
    make_objective,
)
from .schedules import Schedule, lr_at

__version__ = "0.1.0"
