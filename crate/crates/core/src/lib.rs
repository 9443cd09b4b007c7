//! Positive-unlabeled contrastive learning: PU data generation, contrastive losses with
//! analytic gradients, PU-aware 2-means pseudo-labeling, linear heads with PU risk
//! estimators, and Monte Carlo labs that check the associated bounds.

pub mod classifier_head;
pub mod cli;
pub mod contrastive;
pub mod encoder;
pub mod error;
pub mod generalization_lab;
pub mod numerics;
pub mod pu_data;
pub mod pupl;
pub mod suites;
pub mod theory_lab;

pub use error::{Error, Result};
