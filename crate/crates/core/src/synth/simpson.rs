//! Confounded flow/pressure data where the operating mode reverses the
//! pooled correlation.
//!
//! The mode (normal, backwash, cleaning) follows a sticky Markov chain and
//! shifts both flow and pressure. In the coupled variant pressure also
//! rises with flow inside every mode, yet the pooled correlation is
//! negative. In the uncoupled variant there is no flow → pressure edge at
//! all and the pooled dependence is entirely spurious.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::data::{PhysicalClass, TimeSeriesFrame, VariableMeta};
use crate::stats;

pub const FLOW: usize = 0;
pub const PRESSURE: usize = 1;
pub const MODE: usize = 2;
const MODES: usize = 3;
const STAY: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimpsonVariant {
    Coupled,
    Uncoupled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpsonData {
    pub frame: TimeSeriesFrame,
    pub variant: SimpsonVariant,
    pub pooled_correlation: f64,
    pub within_mode_correlation: [f64; MODES],
}

pub fn generate_simpson(seed: u64, t_len: usize, variant: SimpsonVariant) -> Result<SimpsonData, SynthError> {
    if t_len < 1000 {
        return Err(SynthError::Invalid(format!("need at least 1000 rows, got {t_len}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mode = 0usize;
    let mut values = Vec::with_capacity(t_len * 3);
    for t in 0..t_len {
        if t > 0 && rng.random::<f64>() > STAY {
            mode = (mode + rng.random_range(1..MODES)) % MODES;
        }
        let m = mode as f64;
        let e_f: f64 = rng.sample(StandardNormal);
        let e_p: f64 = rng.sample(StandardNormal);
        let flow = 10.0 - 3.0 * m + 0.5 * e_f;
        let pressure = match variant {
            SimpsonVariant::Coupled => 6.0 * m + 0.8 * flow + 0.3 * e_p,
            SimpsonVariant::Uncoupled => 2.0 + 3.0 * m + 0.5 * e_p,
        };
        values.extend_from_slice(&[flow, pressure, m]);
    }
    let meta = vec![
        VariableMeta::continuous("flow", PhysicalClass::Flow, 1),
        VariableMeta::continuous("pressure", PhysicalClass::Pressure, 1),
        VariableMeta::continuous("mode", PhysicalClass::Controller, 1),
    ];
    let frame = TimeSeriesFrame::new(meta, (0..t_len as i64).collect(), values, None)?;
    let flow = frame.column(FLOW);
    let pressure = frame.column(PRESSURE);
    let modes = frame.column(MODE);
    let pooled = stats::correlation(&flow, &pressure);
    let mut within = [0.0; MODES];
    for (k, w) in within.iter_mut().enumerate() {
        let rows: Vec<usize> = (0..t_len).filter(|&t| modes[t] == k as f64).collect();
        let f: Vec<f64> = rows.iter().map(|&t| flow[t]).collect();
        let p: Vec<f64> = rows.iter().map(|&t| pressure[t]).collect();
        *w = if rows.len() > 3 { stats::correlation(&f, &p) } else { f64::NAN };
    }
    let ok = match variant {
        SimpsonVariant::Coupled => pooled < 0.0 && within.iter().all(|&w| w > 0.0),
        SimpsonVariant::Uncoupled => pooled < -0.3,
    };
    if !ok {
        return Err(SynthError::Invalid(format!(
            "self-check failed: pooled {pooled:.3}, within {within:?}"
        )));
    }
    Ok(SimpsonData {
        frame,
        variant,
        pooled_correlation: pooled,
        within_mode_correlation: within,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coupled_flips_sign() {
        let d = generate_simpson(1, 5000, SimpsonVariant::Coupled).unwrap();
        assert!(d.pooled_correlation < 0.0);
        assert!(d.within_mode_correlation.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn short_series_rejected() {
        assert!(generate_simpson(1, 999, SimpsonVariant::Uncoupled).is_err());
    }
}
