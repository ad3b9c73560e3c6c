//! Scenario downscaling engine.
//!
//! Calibrates a spatial-econometric city growth model, projects city
//! populations and urban/agricultural expansion under SSP1-3 assumptions,
//! and downscales country totals of urban population, non-urban population
//! and GDP to grid cells with an ensemble of square-root dasymetric
//! sub-models whose weights are learned by stage-wise boosting.
//!
//! Module map:
//!
//! - [`worldmodel`]: cities, grid cells, countries, trade, scenarios, geodesy.
//! - [`connectivity`]: geographic and trade-based connectivity matrices.
//! - [`citygrowth`]: spatial 2SLS estimation, range search and projection.
//! - [`potential`]: urbanization potential fields and their calibration.
//! - [`expansion`]: urban/agricultural area projection with grid capacity.
//! - [`downscaler`]: dasymetric sub-models, boosting and the GDP chain.
//! - [`pipeline`]: configuration, synthetic worlds, stages and validation.

pub mod citygrowth;
pub mod connectivity;
pub mod downscaler;
mod error;
pub mod expansion;
pub mod linalg;
pub mod pipeline;
pub mod potential;
pub mod stats;
pub mod worldmodel;

pub use error::{Error, Result};
