//! Shared fixtures for the benchmarks.

use causal_twin::{DetectorState, PlantTemplate, TimeSeriesFrame};

/// A 51-variable plant with `rows` rows of normal operation.
pub fn plant_frame(rows: usize, seed: u64) -> (PlantTemplate, TimeSeriesFrame) {
    let plant = PlantTemplate::swat51(seed);
    let frame = plant.generate(rows, seed + 1).expect("built-in plant generates");
    (plant, frame)
}

/// Detector on the plant's true model, warmed past its cold start.
pub fn warm_detector(plant: &PlantTemplate, frame: &TimeSeriesFrame) -> DetectorState {
    let mut det = DetectorState::new(plant.scm.clone());
    for t in 0..=plant.scm.max_lag() {
        let _ = det.step(t as i64, frame.row(t));
    }
    det
}
