pub mod error;
pub mod frontier;
pub mod ga;
pub mod io;
pub mod market_data;
pub mod market_model;
pub mod mv_optimizer;
pub mod qp;
pub mod risk_models;

pub use error::{Error, Result};
