//! Structure-aware multi-head attention network for early fake news
//! detection, with a synthetic corpus generator and evaluation harness.

pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod graphs;
pub mod model;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod train;
