pub mod amp_decoder;
pub mod coupling;
pub mod error;
pub mod par;
pub mod potential_region;
pub mod priors;
pub mod quadrature;
pub mod sim;
pub mod state_evolution;

pub use error::{Error, Result};
