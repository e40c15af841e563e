"""Multi-focus image fusion: learned per-pixel quality scores, confidence-
weighted edge-preserving smoothing on a bilateral grid, weighted-sum fusion,
and objective fusion metrics."""

from .config import Config, resolve_config
from .errors import (
    FocusFuseError,
    FormatError,
    InputError,
    ModelError,
    NumericError,
    PipelineStageError,
)
from .focus_maps import confidence_map, pre_estimate
from .image import (
    extract_patch,
    gaussian_blur,
    gaussian_kernel,
    load_f32map,
    load_gray,
    load_pgm,
    local_normalize,
    save_f32map,
    save_map_pgm,
    save_pgm,
)
from .metrics import (
    MetricsReport,
    evaluate_fusion,
    ncie,
    ncie_from_correlation,
    nonlinear_correlation,
    psnr,
    q_g,
    q_nmi,
)
from .pipeline import (
    FusionResult,
    diff_map,
    dump_intermediates,
    fuse,
    make_multifocus_pair,
    normalize_weights,
    run_pipeline,
)
from .qnn import (
    HyperParams,
    QnnModel,
    TrainingSet,
    backprop_grads,
    forward,
    gen_training_data,
    init_model,
    load_model,
    save_model,
    score_map,
    train,
)
from .solver import (
    BilateralGrid,
    SolverParams,
    SolveResult,
    bistochastize,
    build_grid,
    dense_oracle_solve,
    solve,
    solve_with_block_motion,
)

__version__ = "0.1.0"
