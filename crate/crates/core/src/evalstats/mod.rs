//! Simulated replications of the selection and classification studies and
//! the statistics used to analyse them.

pub mod experiment;
pub mod oracle;
pub mod report;
pub mod stats;

pub use experiment::{
    default_breeds, load_breeds, run_classification_experiment, run_selection_experiment,
    ClassificationExperimentConfig, ExperimentError, ExperimentKind, SelectionExperimentConfig, Trial, TrialSet,
};
pub use oracle::{coverage_oracle, Classifier, CoverageOracle, ImageRegion, ModelClassifier, OracleError};
pub use report::{report, MeasureReport, ModeSummary, Omnibus, PairwiseRow, StatsReport};
pub use stats::{
    bonferroni, friedman, friedman_wilcoxon, greenhouse_geisser_epsilon, one_way_anova, paired_t, pairwise_tests,
    rm_anova_gg, wilcoxon_signed_rank,
};
