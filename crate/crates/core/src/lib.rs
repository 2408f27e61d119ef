//! Recommender-training toolkit: a compact DLRM-style ranking model whose
//! content-embedding projections are co-trained with the ranking objective,
//! plus user-user and item-item InfoNCE contrastive losses whose positive
//! pairs come from SWING similarity over the interaction graph.

pub mod autodiff;
pub mod dataio;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod swing;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
