//! Simulation designs and Monte Carlo experiments for the two-sample tests.

mod design;
mod experiment;

pub use design::{
    build_population, draw_innovations, draw_panel, haar_orthogonal, lambda1, lambda2,
    DesignName, Frame, Innovation, Population, SimDesign,
};
pub use experiment::{
    concentration_limit, run_concentration, run_null_distribution, run_size_power,
    ConcentrationSpec, ExperimentSpec, NullDistribution, Preset, RateCell, SizePowerTable,
};
