"""Multi-task and transfer learning for binary Gaussian mixture models.

Penalized EM procedures that shrink per-task estimates toward jointly
estimated (or transferred) centers, with cluster-label alignment
preprocessing, cross-validated tuning, and a reproducible simulation
benchmark harness.
"""

from .align import (
    Alignment,
    AlignmentDiagnostics,
    align_exhaustive,
    align_greedy,
    align_transfer,
    alignment_diagnostics,
    alignment_score,
    apply_alignment,
    apply_alignment_theta,
)
from .core import (
    DegenerateComponentError,
    GmmParams,
    NotPositiveDefiniteError,
    ParamDistance,
    TaskData,
    ThetaEstimate,
    bayes_classify,
    distance_d,
    log_likelihood,
    mahalanobis_delta,
    misclustering_error,
    posterior_gamma,
)
from .em import (
    MtlFitResult,
    TuningSchedule,
    em_single_task,
    fit_mtl_gmm,
    tuning_lambda,
    zero_schedule,
)
from .modelselect import CvGrid, cv_select_mtl, cv_select_tl
from .prox import (
    JointPenalizedSolution,
    ProxProblem,
    prox_scalar_w,
    prox_vector_beta,
    prox_vector_mu,
    solve_joint_penalized,
    weighted_geometric_median,
)
from .simbench import (
    EmSettings,
    MetricRow,
    RateProbeResult,
    RepMetrics,
    SimConfig,
    SimData,
    SimulationResult,
    gen_mtl_sim1,
    gen_mtl_sim2,
    gen_tl_sim1,
    gen_tl_sim2,
    rate_probe,
    run_replications,
    run_sweep,
)
from .transfer import TlFitResult, TlSchedule, fit_tl_gmm, tl_tuning_lambda, zero_tl_schedule

__version__ = "0.1.0"

__all__ = [
    "Alignment",
    "AlignmentDiagnostics",
    "CvGrid",
    "DegenerateComponentError",
    "EmSettings",
    "GmmParams",
    "JointPenalizedSolution",
    "MetricRow",
    "MtlFitResult",
    "NotPositiveDefiniteError",
    "ParamDistance",
    "ProxProblem",
    "RateProbeResult",
    "RepMetrics",
    "SimConfig",
    "SimData",
    "SimulationResult",
    "TaskData",
    "ThetaEstimate",
    "TlFitResult",
    "TlSchedule",
    "TuningSchedule",
    "align_exhaustive",
    "align_greedy",
    "align_transfer",
    "alignment_diagnostics",
    "alignment_score",
    "apply_alignment",
    "apply_alignment_theta",
    "bayes_classify",
    "cv_select_mtl",
    "cv_select_tl",
    "distance_d",
    "em_single_task",
    "fit_mtl_gmm",
    "fit_tl_gmm",
    "gen_mtl_sim1",
    "gen_mtl_sim2",
    "gen_tl_sim1",
    "gen_tl_sim2",
    "log_likelihood",
    "mahalanobis_delta",
    "misclustering_error",
    "posterior_gamma",
    "prox_scalar_w",
    "prox_vector_beta",
    "prox_vector_mu",
    "rate_probe",
    "run_replications",
    "run_sweep",
    "solve_joint_penalized",
    "tl_tuning_lambda",
    "tuning_lambda",
    "weighted_geometric_median",
    "zero_schedule",
    "zero_tl_schedule",
]
