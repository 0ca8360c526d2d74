"""Networked control over a correlated fading channel: simulation and policies.

Subpackages follow the system layers: numerics kernels, plant and channel
models, the adaptive primitive quantizer, the certainty-equivalent
estimator/controller, the closed-form event-driven power policy with its
baselines, the value-iteration oracle, and the Monte Carlo harness.
"""

from .channel import ChannelState, FadingChannel, sample_outcome, ser, step_channel
from .errors import (
    ConfigError,
    DegenerateSpectrum,
    GainUnstable,
    InfeasibleRates,
    NcsError,
    NoConvergence,
    NonDiagonalizable,
    TargetUnreachable,
    Unsupported,
)
from .estimation import ControllerGain, ce_control, make_gain, step_delta, update_estimate
from .harness import (
    Metrics,
    SimConfig,
    build_policy,
    build_system,
    default_config,
    fig2_scalar_config,
    monte_carlo,
    run_batch,
    run_episode,
    sweep_eta,
    sweep_power,
)
from .numerics import (
    EigenDecomposition,
    eigendecompose,
    lambert_w0,
    matrix_exponential,
    noise_covariance,
    solve_dare,
)
from .plant import ContinuousPlant, SampledPlant, discretize, sample_disturbance, step_plant, whiten
from .policy import (
    ApproxValueFn,
    PowerDecision,
    approx_value,
    check_necessary,
    check_sufficient,
    compute_constants,
    copc_policy,
    decide_power,
    eval_A1,
    eval_A2,
    eval_b1,
    fpc_policy,
    instability_measure,
    make_value_fn,
)
from .quantizer import (
    QuantizeResult,
    QuantizerState,
    QuantizerStructure,
    allocate_rates,
    build_structure,
    init_state,
    quantize,
    update_range,
    update_shift,
)

__version__ = "0.1.0"
