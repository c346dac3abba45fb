"""Differentiable simulation and training of quantum recurrent neural networks."""

from .kernels import BACKEND_NAME
from .model import (
    CellTopology,
    InitConfig,
    OverheadMonitor,
    ParameterSet,
    QrnnModel,
    cell_step,
    generate,
    init_parameters,
    parameter_count,
    run_sequence,
)
from .neuron import NeuronSpec, activation, apply_effective, param_count, success_weight
from .statevector import StateVector, new_basis

__version__ = "0.1.0"
