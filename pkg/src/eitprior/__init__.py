"""Difference EIT reconstruction with an untrained shallow-MLP image prior.

The package is organized around a small pipeline: discretize a region
(:mod:`~eitprior.grid`), build a phantom (:mod:`~eitprior.phantom`),
simulate measurements and linearize the forward map
(:mod:`~eitprior.sensing`), reconstruct (:mod:`~eitprior.recon` with
:mod:`~eitprior.mlp`, :mod:`~eitprior.regularizers`,
:mod:`~eitprior.optim`), and evaluate (:mod:`~eitprior.metrics`).
:mod:`~eitprior.fileio` provides the on-disk formats and
:mod:`~eitprior.cli` the command-line front end.
"""

from .grid import (
    GridSpec,
    ImageField,
    RegionMask,
    embed,
    extract,
    make_circular_mask,
    make_cylindrical_mask,
    make_full_mask,
    make_polygon_mask,
)
from .metrics import SsimParams, mssim, relative_error
from .mlp import MlpParams, NoiseInput, backward, draw_noise, forward, init_params
from .optim import AdamState, adam_step
from .phantom import PhantomSpec, ShapePrimitive, builtin_case, phantom_from_json, rasterize
from .recon import (
    ALGORITHMS,
    DivergenceError,
    ReconConfig,
    ReconResult,
    baseline_reconstruct,
    normalize_for_eval,
    reconstruct,
    rsip_reconstruct,
)
from .regularizers import LapKernel, default_kernel, lap_value_grad, tv_value_grad
from .sensing import (
    ElectrodeLayout,
    Protocol,
    SolverError,
    VoltageFrame,
    add_noise,
    adjacent_protocol,
    circular_layout,
    combined_3d_protocol,
    cross_layer_protocol,
    jacobian,
    normalize_conductivity,
    normalize_measurements,
    simulate_voltages,
    solve_potential,
    two_layer_layout,
)

__version__ = "0.1.0"
