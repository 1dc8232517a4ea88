"""mrxfer: accelerated-MRI reconstruction with CS/SPIRiT baselines, cascaded
networks with data- and calibration-consistency projections, and a
train-then-fine-tune transfer workflow, verifiable on synthetic data."""

from .cascade import (
    CascadeModel,
    ConvLayer,
    Subnetwork,
    build_cascade_model,
    build_subnetwork,
    cascade_forward,
    cascade_forward_multi,
    cascade_forward_single,
    dc_layer,
    model_parameters,
    subnet_forward,
)
from .cs import CsParams, cs_gradient, cs_objective, nlcg_reconstruct
from .datasim import (
    Dataset,
    DomainSpec,
    add_sinusoidal_phase,
    analytic_coil_maps,
    apply_coils,
    build_domain,
    check_disjoint_splits,
    coil_combine,
    domain_splits,
    make_phantom,
)
from .errors import (
    BadMagicError,
    ConstraintError,
    DtypeMismatchError,
    FormatError,
    InvalidArgumentError,
    MrxferError,
    NumericalError,
    TruncatedPayloadError,
)
from .metrics import MetricsRecord, convergence_samples, psnr, ssim
from .numerics import (
    WaveletCoeffs,
    dwt2,
    fft2c,
    idwt2,
    ifft2c,
    soft_threshold,
    soft_threshold_array,
)
from .sampling import (
    MaskBank,
    SamplingMask,
    generate_mask,
    generate_mask_bank,
    undersample,
    verify_poisson_property,
    zero_filled_recon,
)
from .spirit import (
    SpiritKernel,
    apply_G,
    apply_G_adjoint,
    calibrate_kernel,
    cc_projection,
    extract_calibration,
    iters_for_accel,
    pocs_spirit,
)
from .training import (
    AdamState,
    GradientTape,
    TrainConfig,
    TrainSample,
    adam_step,
    backward,
    evaluate_model,
    fine_tune,
    recon_loss,
    train_sequential,
)

__version__ = "0.1.0"
