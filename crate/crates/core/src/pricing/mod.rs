//! American put pricing as a robust optimal stopping problem.

mod binomial;
mod experiment;
mod features;
mod lattice;
mod solver;

pub use binomial::{binomial_cdf, binomial_upper_tail, clopper_pearson, fit_model, UncertainUpProbability, RATIO_TOL};
pub use experiment::{
    evaluate_policies, learn_policies, paired_t_test, percentile_nearest_rank, render_svg, run_experiment, run_repetition,
    run_setting, write_payoffs_csv, write_summary_csv, ExperimentConfig, LearnedPolicies, FeatureConfig, MarketConfig, PairedTest,
    PercentileRow, Repetition, RunsConfig, SettingResult, SolverConfig,
};
pub use features::RbfFeatures;
pub use lattice::{
    build_stopping_rmdp, check_stopping_assumption, never_stop, sigma_binary_continuation, BernoulliPriceModel,
    OptionSpec, StoppingAssumption, StoppingLattice, CONTINUE, EXERCISE,
};
pub use solver::{should_exercise, PricingArpi, PricingSamples, PricingSolution};
