//! Transition densities of one-dimensional SDEs driven by symmetric
//! (tempered) α-stable noise, computed with the parametrix series and
//! checked against a Monte Carlo oracle.

pub mod error;
pub mod fourier;
pub mod frozen_density;
pub mod levy_noise;
pub mod mc_oracle;
pub mod parametrix;
pub mod quadrature;
pub mod sde_model;
pub mod scalar;

pub use error::{Error, Result};
pub use levy_noise::{Interval, Tempering, TemperedStableSpec};
pub use scalar::Real;

pub type TemperedStableSpecF64 = TemperedStableSpec<f64>;
pub type TemperedStableSpecF32 = TemperedStableSpec<f32>;
pub type SdeModelF64 = sde_model::SdeModel<f64>;
pub type SdeModelF32 = sde_model::SdeModel<f32>;
pub type LatticeF64 = frozen_density::Lattice<f64>;
pub type DensityGridF64 = frozen_density::DensityGrid<f64>;
pub type ParametrixConfigF64 = parametrix::ParametrixConfig<f64>;
pub type SeriesResultF64 = parametrix::SeriesResult<f64>;
pub type StabilityRowF64 = parametrix::StabilityRow<f64>;
pub type SimulationPlanF64 = mc_oracle::SimulationPlan<f64>;
pub type DensityEstimateF64 = mc_oracle::DensityEstimate<f64>;
