"""Boost-and-Skip diffusion sampling lab.

A small numerical library plus experiment CLI for studying minority-focused
diffusion sampling: discrete variance-preserving noise schedules, exact
Gaussian/mixture score oracles, a trainable 2D score network, stochastic and
probability-flow reverse integrators, boosted/skipped/temperature samplers,
and the closed-form moment, region, and contraction predictions they are
tested against.
"""

from bnslab.schedule import NoiseSchedule, SkipPlan, build_linear_schedule, alpha_continuous, plan_skip
from bnslab.score import (
    GaussianSpec,
    MixtureSpec,
    MlpScoreNet,
    TrainConfig,
    ScoreField,
    gaussian_marginal,
    gaussian_score,
    mixture_score,
    gaussian_field,
    mixture_field,
    net_field,
    dsm_train,
    net_score,
)
from bnslab.dynamics import (
    RngStream,
    RecordFlags,
    Trajectory,
    forward_perturb,
    ancestral_step,
    ode_step,
    posterior_mean,
    estimation_error,
    run_reverse,
)
from bnslab.samplers import SamplerConfig, SampleBatch, draw_init, sample, sample_grid
from bnslab.theory import (
    MomentPrediction,
    AmplificationRegion,
    ContractionReport,
    predict_bns_sde,
    predict_bns_ode,
    amplification_region,
    contraction_rate,
    contraction_bound,
    tv_contraction_factor,
    tempered_target_moments,
)
from bnslab.toydata import (
    CirclesSpec,
    CirclesGeometry,
    sample_circles,
    circles_sampler,
    circles_ring_mixture,
)
from bnslab.metrics import (
    CirclesReport,
    DensityStats,
    empirical_moments,
    avg_knn,
    lof,
    circles_report,
    histogram_tv,
)
from bnslab.spectral import (
    NoiseField,
    band_energy,
    draw_noise_field,
    filter_noise,
    read_field_csv,
    write_field_csv,
)

__version__ = "0.1.0"
