"""Vanilla and Stable ChebNet layers with exact gradients, a Jacobian stability
lab and synthetic long-range benchmarks."""

from ._kernels import BACKEND
from .graph import (
    GraphError,
    ScaledLaplacianOp,
    SparseGraph,
    build_graph,
    cheb_basis,
    estimate_lambda_max,
    scaled_laplacian_apply,
)
from .layers import (
    Activation,
    ChebLayerParams,
    Dense,
    Mode,
    ModelConfig,
    ModelSpec,
    Readout,
    cheb_conv_forward,
    effective_weights,
    init_model,
    model_forward,
    stable_cheb_forward,
)

__version__ = "0.1.0"
