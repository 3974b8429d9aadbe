//! Multi-objective actor-critic with weighted-Chebyshev exploration on tabular MOMDPs.
//!
//! The crate has a sampled learner (`critic`, `actor`), exact dense-algebra
//! references (`oracle`), a sweep driver (`explorer`) and a command-line front end (`cli`).

// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actor;
pub mod cli;
pub mod critic;
pub mod error;
pub mod explorer;
pub mod fixtures;
pub mod momdp;
pub mod oracle;
pub mod par;
pub mod policy;
pub mod qp;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};
pub use momdp::{MarkovStream, MomdpSpec, TabularMomdp};
pub use policy::{FeatureMap, ProbTable, SoftmaxPolicy};

/// Reward criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Discounted,
    Average,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Discounted => "discounted",
            Mode::Average => "average",
        })
    }
}
