// Negated float comparisons are deliberate: they route NaN to the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clean;
pub mod cohort;
pub mod container;
pub mod dataset;
pub mod evaluation;
pub mod features;
pub mod folds;
pub mod glm;
pub mod ingest;
pub mod learners;
pub mod linalg;
pub mod metrics;
pub mod neural;
pub mod run;
pub mod severity;
pub mod super_learner;
pub mod synth;
pub mod types;
