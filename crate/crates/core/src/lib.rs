//! Penalized Weibull mixture cure frailty models for high-dimensional survival data.

pub mod data;
pub mod em;
pub mod gmifs;
pub mod io;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod simulate;
pub mod special;
pub mod tuning;

pub use data::{DataError, SurvivalDataset};
pub use model::{ModelError, ParamSet};
