"""Multi-basis exponential-decay (MBE) spiking neurons and training-free
conversion of small Transformer blocks into spike-driven form."""

__version__ = "0.1.0"

from .errors import ConversionError, FitFailure, InvalidArgument, NotFittedError, StoreVersionError
from .neuron import (
    FreeScheduleNeuron,
    FSParams,
    MBEBasis,
    MBENeuron,
    SpikeRecord,
    binary_fs_params,
    decay_schedule,
    forward,
    readout,
    simulate_spikes,
)
from .fitting import (
    ApproximatorCache,
    FitConfig,
    FittedApproximator,
    FSFit,
    TargetFn,
    TargetId,
    evaluate_mse,
    fit_fs,
    fit_mbe,
    fit_mbe_no_decay,
    sample_target,
)
from .arith import (
    IdentityEncoder,
    IntensityMatrix,
    SpikeTrain,
    decode,
    encode,
    intensity_matrix,
    make_identity_encoder,
    spike_matmul,
    spike_multiply,
)
from .ops import (
    LayerNormEncoders,
    SoftmaxEncoders,
    SpikingOpSet,
    frexp_decompose,
    spiking_activation,
    spiking_exp,
    spiking_inv_sqrt,
    spiking_layernorm,
    spiking_reciprocal,
    spiking_softmax,
)
from .metrics import (
    BoundInputs,
    BoundTerms,
    EnergyConstants,
    FiringStats,
    bound_fs,
    bound_mbe,
    energy_fp_mult,
    energy_mbe,
    energy_ratio,
    firing_rate,
    gelu_energy_comparison,
)
from .transformer import (
    CalibrationProfile,
    Fidelity,
    FloatTransformer,
    RefTransformerConfig,
    RunStats,
    SpikingTransformer,
    audit_sites,
    build_opset,
    build_reference,
    calibrate,
    compare,
    convert,
    forward_float,
    forward_spiking,
)
