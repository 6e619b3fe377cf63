"""Distributed average consensus with dithered quantized messages over
randomly failing links: simulation (QC and finite-alphabet QCF) and the
matching analytic performance bounds."""

from .bounds import (
    BoundInputs,
    BoundReport,
    DeltaDesign,
    DivergentSeriesError,
    LyapunovConstants,
    eps_consensus_lb,
    g_constant,
    g_factor,
    i_epsilon,
    lyapunov_constants,
    mean_contraction_bound,
    mean_propagate,
    mse_bound,
    mss_bound,
    optimize_delta,
    prod_one_plus_g,
    ratio_approx,
    state_sup_bound,
    sum_alpha_sq,
    theta_deviation_bound,
    zero_rate_lb,
)
from .consensus import (
    ConsensusConfig,
    EnsembleStats,
    RunOutcome,
    StepRecord,
    Trajectory,
    monte_carlo,
    qc_step,
    run_qc,
    run_qcf,
    trial_streams,
)
from .graph import (
    LinkFailureModel,
    SpectralSummary,
    Topology,
    circulant_graph,
    complete_graph,
    laplacian,
    mean_laplacian,
    path_graph,
    read_edge_list,
    ring_graph,
    sample_topology,
    spectral,
)
from .quantize import DitherSource, QuantizerSpec, dithered_quantize, quantize
from .weights import WeightSequence, alpha, persistence_check

__version__ = "0.1.0"
