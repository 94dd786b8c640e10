"""Training-free diffusion-based composition of satellite image patches.

The package pairs a deterministic DDIM sampler and inverter with latent mean
shifting and edge-gated latent fusion, scores candidates with a boundary
harmony classifier, and ships classical baselines plus evaluation metrics.
"""

from .baselines import PoissonConfig, copy_paste, poisson_blend, solve_poisson
from .errors import (
    ConfigError,
    ContractError,
    ConvergenceError,
    HarmoniDiffError,
    ImageFormatError,
    ManifestError,
    MetricUndefinedError,
    NumericError,
    PlacementError,
    ScorerFormatError,
)
from .harmonize import (
    Candidate,
    CandidateSet,
    HarmonizeConfig,
    compose,
    edge_mask,
    edge_width,
    fuse_step,
    latent_mean_shift,
    select_best,
)
from .harness import (
    BenchReport,
    Manifest,
    RunConfig,
    contact_sheet,
    load_config,
    load_manifest,
    run_benchmark,
)
from .imagecore import (
    dilate,
    erode,
    load_image,
    rescale_by_gsd,
    save_image,
    sobel_gradient_magnitude,
    to_grayscale,
)
from .latent import IdentityCodec, PatchAverageCodec, decode, downscale_mask, encode, make_codec
from .metrics import (
    FeatureStats,
    HarmonyScorer,
    bgd_abs,
    feature_stats,
    frechet_distance,
    harmony_score,
    train_scorer,
)
from .scheduler import (
    ConstantPredictor,
    GaussianPredictor,
    Guidance,
    LatentTrajectory,
    NoiseSchedule,
    ZeroPredictor,
    analytic_gaussian_predictor,
    build_schedule,
    ddim_invert_step,
    ddim_step,
    invert_trajectory,
    predict_x0,
    sample,
)
from .tasks import CompositionTask, place_source, prompt_for

__version__ = "0.1.0"
