"""Design, simulation and statistical analysis of loophole-free Hardy tests."""

__version__ = "0.1.0"

from .analysis import (
    PBRResult,
    ZTestResult,
    hardy_value_from_counts,
    nosignaling_ztests,
    pbr_pvalue,
)
from .design import (
    HardyDesign,
    HardyReport,
    ImperfectionModel,
    design_angles,
    hardy_value_from_distribution,
    ideal_hardy_probabilities,
    max_hardy_value,
    optimal_design,
    optimal_theta,
    predict_distribution,
)
from .distributions import JointDistribution, NoSignalingDistribution
from .projections import (
    LHVDistribution,
    deterministic_strategy_distribution,
    kl_divergence,
    project_lhv,
    project_no_signaling,
)
from .quantum import (
    DensityMatrix,
    Observable,
    TwoQubitPureState,
    born_joint,
    fidelity,
    make_state,
    observable_from_angle,
    werner,
)
from .records import CountsTable, TrialRecord
from .simulate import (
    SimulationConfig,
    SimulationResult,
    sample_pair_count,
    simulate,
    simulate_trial,
)
from .spacetime import SpacetimeConfig, check_locality, check_measurement_independence
from .tomography import TomoCounts, likelihood, reconstruct, rho_from_t

__all__ = [
    "__version__",
    "CountsTable",
    "DensityMatrix",
    "HardyDesign",
    "HardyReport",
    "ImperfectionModel",
    "JointDistribution",
    "LHVDistribution",
    "NoSignalingDistribution",
    "Observable",
    "PBRResult",
    "SimulationConfig",
    "SimulationResult",
    "SpacetimeConfig",
    "TomoCounts",
    "TrialRecord",
    "TwoQubitPureState",
    "ZTestResult",
    "born_joint",
    "check_locality",
    "check_measurement_independence",
    "design_angles",
    "deterministic_strategy_distribution",
    "fidelity",
    "hardy_value_from_counts",
    "hardy_value_from_distribution",
    "ideal_hardy_probabilities",
    "kl_divergence",
    "likelihood",
    "make_state",
    "max_hardy_value",
    "nosignaling_ztests",
    "observable_from_angle",
    "optimal_design",
    "optimal_theta",
    "pbr_pvalue",
    "predict_distribution",
    "project_lhv",
    "project_no_signaling",
    "reconstruct",
    "rho_from_t",
    "sample_pair_count",
    "simulate",
    "simulate_trial",
    "werner",
]
