//! Aqueous solubility (log S) prediction from SMILES.
//!
//! The pipeline runs SMILES perception ([`smiles`]), graph featurization
//! ([`featurize`]), a GCN -> Transformer -> LSTM -> pooling -> MLP regressor
//! ([`model`]) built on a small reverse-mode tensor engine ([`autodiff`]),
//! cross-validated training ([`train`]) and two feature-importance procedures
//! ([`interpret`]).

pub mod smiles;
pub mod featurize;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod io;
pub mod model;
pub mod train;
pub mod interpret;
