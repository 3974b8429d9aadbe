//! Exact reference computations for small tabular instances.

mod front;
mod gradient;
mod mixing;
mod td;
mod values;

pub use front::{
    brute_force_pareto_front, dominates, eps_non_dominated, strictly_dominates, FrontPoint, ParetoFront,
    DEDUP_TOL, FRONT_GUARD,
};
pub use gradient::{
    estimate_smoothness, exact_policy_gradient, gradient_matrix, pareto_stationarity_gap, GradientMeasure,
};
pub use mixing::{estimate_mixing, MixingFit, TV_FLOOR};
pub use td::{
    analysis_constants, negative_definiteness_margin, td_fixed_point, td_matrix, AnalysisConstants, ObjectiveTd,
    LAMBDA_A_MIN, MIXING_HORIZON, SMOOTHNESS_STEP,
};
pub use values::{
    discounted_occupancy_weights, evaluate, exact_values, exact_values_average, exact_values_discounted,
    objective_vector, stationary_distribution, stationary_residual, ExactEvaluation, ObjectiveValues,
    DENSE_STATE_LIMIT,
};
