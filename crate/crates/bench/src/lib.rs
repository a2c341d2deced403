//! Fixtures shared by the benchmarks.

use pcbreak::simlab::{build_population, draw_panel, DesignName, Innovation, SimDesign};
use pcbreak::PanelData;

/// A t(8) panel from one of the simulation designs.
pub fn design_panel(name: DesignName, n: usize, t: usize, seed: u64) -> PanelData {
    let design = SimDesign::new(name, n, Innovation::StudentT8, 1);
    let population = build_population(&design).expect("valid design");
    draw_panel(&population, t, Innovation::StudentT8, seed).expect("valid panel")
}
