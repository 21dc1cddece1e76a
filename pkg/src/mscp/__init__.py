"""Multi-scale conformal prediction.

Per-scale conformity scoring and p-values, prediction-set intersection,
miscoverage-budget allocation, a synthetic multi-scale data generator, and
a Monte Carlo study harness with a CLI front end.
"""

from .conformal import (
    CalibrationScores,
    ConformityScorer,
    LabelSpace,
    PredictionSet,
    conformal_pvalue,
    prediction_set,
    pvalue_matrix,
    score_calibration,
    transductive_pvalue,
)
from .errors import (
    EmptyCalibration,
    EmptyEvaluation,
    EmptyTraining,
    IncompatibleSets,
    InfeasibleAllocation,
    InvalidAlpha,
    InvalidConfig,
    InvalidDistribution,
    MscpError,
    ParseError,
    ShapeError,
    UsageError,
)
from .experiments import (
    AsymptoticConfig,
    DependenceConfig,
    MethodResult,
    NoiseTableConfig,
    NoiseTableRow,
    SweepConfig,
    SweepResult,
    empirical_coverage,
    minimal_oracle_set,
    run_asymptotic_study,
    run_coverage_sweep,
    run_dependence_study,
    run_noise_table,
)
from .models import (
    LogisticModel,
    OracleModel,
    TrainConfig,
    logistic_scorer,
    oracle_scorer,
    predict_proba,
    train_logistic,
)
from .multiscale import (
    AllocationPlan,
    SizeCurve,
    allocate_optimal,
    allocate_uniform,
    estimate_size_curve,
    intersect_sets,
    multiscale_predict,
)
from .synth import (
    Dataset,
    SplitIndices,
    SynthConfig,
    generate_dataset,
    oracle_conditional,
    read_dataset_csv,
    split_dataset,
    write_dataset_csv,
)

__version__ = "0.1.0"
