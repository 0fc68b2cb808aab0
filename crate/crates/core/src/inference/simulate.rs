//! Forward simulation of a (possibly mutilated) SCM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{InferenceError, Intervention};
use crate::data::TimeSeriesFrame;
use crate::qmc;
use crate::scm::Scm;
use crate::stats;

/// Row-by-row evaluator shared by interventional, counterfactual, attack
/// and defense replays.
///
/// Buffers are row-major `T × n`. Continuous noise is additive in raw units;
/// binary noise is a latent uniform with `V = 1` iff `u < p`.
#[derive(Debug, Clone)]
pub struct Engine<'a> {
    scm: &'a Scm,
    order: Vec<usize>,
}

impl<'a> Engine<'a> {
    pub fn new(scm: &'a Scm) -> Self {
        let order = scm
            .graph()
            .contemporaneous_order()
            .expect("model graphs are acyclic at lag 0");
        Self { scm, order }
    }

    pub fn scm(&self) -> &Scm {
        self.scm
    }

    /// Evaluation order within a row.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Value of `var` at row `t` implied by its equation and `noise`.
    #[inline]
    pub fn natural(&self, buf: &[f64], t: usize, var: usize, noise: f64) -> f64 {
        let n = self.scm.n_vars();
        let m = self.scm.structural_mean(var, |p, l| buf[(t - l) * n + p]);
        if self.scm.is_binary(var) {
            let u = if noise.is_nan() { 0.5 } else { noise };
            if u < m {
                1.0
            } else {
                0.0
            }
        } else if noise.is_nan() {
            m
        } else {
            m + noise
        }
    }

    /// Fills rows `start..end` of `buf`. `hook(t, var, natural, buf)` sees
    /// each value before it is stored and returns the value to keep.
    ///
    /// With `factual`, a variable whose parents all equal their factual
    /// values bit for bit keeps its factual value, so replays with
    /// abducted noise reproduce the evidence exactly.
    pub fn run<H>(
        &self,
        buf: &mut [f64],
        start: usize,
        end: usize,
        noise: &[f64],
        factual: Option<&[f64]>,
        mut hook: H,
    ) where
        H: FnMut(usize, usize, f64, &[f64]) -> f64,
    {
        let n = self.scm.n_vars();
        assert!(start >= self.scm.max_lag(), "history shorter than max lag");
        assert!(buf.len() >= end * n && noise.len() >= end * n);
        let mut changed = factual.map(|_| vec![false; end * n]);
        for t in start..end {
            for &var in &self.order {
                let natural = match (factual, changed.as_ref()) {
                    (Some(f), Some(ch))
                        if self
                            .scm
                            .equation(var)
                            .parents
                            .iter()
                            .all(|&(p, l)| !ch[(t - l) * n + p]) =>
                    {
                        f[t * n + var]
                    }
                    _ => self.natural(buf, t, var, noise[t * n + var]),
                };
                let v = hook(t, var, natural, buf);
                buf[t * n + var] = v;
                if let (Some(f), Some(ch)) = (factual, changed.as_mut()) {
                    ch[t * n + var] = v.to_bits() != f[t * n + var].to_bits();
                }
            }
        }
    }
}

/// Source of exogenous noise for [`simulate_do`].
#[derive(Debug, Clone, PartialEq)]
pub enum Exogenous {
    /// Noise for every simulated row, row-major `horizon × n`, as returned
    /// by [`abduct`]. Yields exactly one trajectory.
    Fixed(Vec<f64>),
    /// Draw `samples` independent noise paths from the model.
    Sampled { samples: usize, seed: u64 },
}

/// One simulated path, row-major `horizon × n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub n: usize,
    pub values: Vec<f64>,
}

impl Trajectory {
    pub fn value(&self, t: usize, var: usize) -> f64 {
        self.values[t * self.n + var]
    }

    pub fn horizon(&self) -> usize {
        self.values.len() / self.n.max(1)
    }
}

/// Monte Carlo point estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Model residuals of `frame` (the abduction step): raw-unit noise for
/// continuous variables and midpoint latents for binary ones.
pub fn abduct(scm: &Scm, frame: &TimeSeriesFrame) -> Result<Vec<f64>, InferenceError> {
    Ok(scm.residuals(frame)?)
}

fn check_history(scm: &Scm, history: &[f64]) -> Result<(), InferenceError> {
    let n = scm.n_vars();
    let needed = scm.max_lag();
    if history.len() != needed * n {
        return Err(InferenceError::BadHistory { needed, n });
    }
    Ok(())
}

fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fills `noise` (rows after the history) with model draws from uniforms.
fn noise_from_uniforms(scm: &Scm, uniforms: &[f64], noise: &mut [f64]) {
    let n = scm.n_vars();
    for (k, &u) in uniforms.iter().enumerate() {
        let var = k % n;
        noise[k] = if scm.is_binary(var) {
            u
        } else {
            scm.sigma(var) * stats::normal_quantile(u)
        };
    }
}

/// Samples trajectories of the mutilated model `do(intervention)` for
/// `horizon` steps after `history` (the last `max_lag` rows, row-major).
pub fn simulate_do(
    scm: &Scm,
    intervention: &Intervention,
    history: &[f64],
    exogenous: &Exogenous,
    horizon: usize,
) -> Result<Vec<Trajectory>, InferenceError> {
    intervention.validate(scm)?;
    check_history(scm, history)?;
    if horizon == 0 {
        return Err(InferenceError::EmptyHorizon);
    }
    let n = scm.n_vars();
    let lag = scm.max_lag();
    let engine = Engine::new(scm);
    let run_one = |noise_tail: &[f64]| -> Trajectory {
        let total = lag + horizon;
        let mut buf = vec![0.0; total * n];
        buf[..lag * n].copy_from_slice(history);
        let mut noise = vec![0.0; total * n];
        noise[lag * n..].copy_from_slice(noise_tail);
        engine.run(&mut buf, lag, total, &noise, None, |_, var, natural, _| {
            intervention.get(var).unwrap_or(natural)
        });
        Trajectory {
            n,
            values: buf[lag * n..].to_vec(),
        }
    };
    match exogenous {
        Exogenous::Fixed(noise) => {
            if noise.len() != horizon * n {
                return Err(InferenceError::BadHistory { needed: horizon, n });
            }
            Ok(vec![run_one(noise)])
        }
        Exogenous::Sampled { samples, seed } => Ok((0..*samples)
            .into_par_iter()
            .map(|s| {
                let mut rng = seeded_rng(*seed, s as u64);
                let u: Vec<f64> = (0..horizon * n).map(|_| open_unit(&mut rng)).collect();
                let mut noise = vec![0.0; horizon * n];
                noise_from_uniforms(scm, &u, &mut noise);
                run_one(&noise)
            })
            .collect()),
    }
}

fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// `E[outcome at the last step | do(intervention)]` over `samples` noise
/// paths. Low-dimensional problems use a Halton sequence, larger ones
/// pseudo-random draws.
pub fn interventional_mean(
    scm: &Scm,
    intervention: &Intervention,
    outcome: usize,
    history: &[f64],
    horizon: usize,
    samples: usize,
    seed: u64,
) -> Result<Estimate, InferenceError> {
    intervention.validate(scm)?;
    check_history(scm, history)?;
    if horizon == 0 {
        return Err(InferenceError::EmptyHorizon);
    }
    if outcome >= scm.n_vars() {
        return Err(InferenceError::GraphHashMismatch(outcome));
    }
    let n = scm.n_vars();
    let lag = scm.max_lag();
    let dims = horizon * n;
    let total = lag + horizon;
    let engine = Engine::new(scm);
    let chunk = 4096;
    let chunks = samples.div_ceil(chunk);
    let (sum, sum_sq) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut buf = vec![0.0; total * n];
            let mut noise = vec![0.0; total * n];
            let mut u = vec![0.0; dims];
            let mut rng = seeded_rng(seed, c as u64);
            let (mut s, mut s2) = (0.0, 0.0);
            for i in c * chunk..((c + 1) * chunk).min(samples) {
                if dims <= qmc::MAX_DIM {
                    qmc::halton(i as u64, &mut u);
                } else {
                    for x in u.iter_mut() {
                        *x = open_unit(&mut rng);
                    }
                }
                buf[..lag * n].copy_from_slice(history);
                noise_from_uniforms(scm, &u, &mut noise[lag * n..]);
                engine.run(&mut buf, lag, total, &noise, None, |_, var, natural, _| {
                    intervention.get(var).unwrap_or(natural)
                });
                let y = buf[(total - 1) * n + outcome];
                s += y;
                s2 += y * y;
            }
            (s, s2)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let m = samples.max(1) as f64;
    let mean = sum / m;
    let var = (sum_sq / m - mean * mean).max(0.0);
    Ok(Estimate {
        mean,
        std_error: (var / m).sqrt(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::VariableKind;
    use crate::graph::{CausalGraph, Edge};
    use crate::scm::{EquationForm, FitFlags, Standardization, StructuralEquation};

    fn eq_gauss(target: usize, parents: Vec<(usize, usize)>, lin: Vec<f64>, sigma: f64) -> StructuralEquation {
        StructuralEquation {
            target,
            parents,
            form: EquationForm::GaussianAdditive {
                intercept: 0.0,
                linear: lin,
                quadratic: 0.0,
                sigma,
            },
            flags: FitFlags::default(),
        }
    }

    /// X → Y → Z at lag 0 with unit coefficients in raw units.
    pub(crate) fn unit_chain(sigma: f64) -> Scm {
        let g = CausalGraph::new(
            vec!["X".into(), "Y".into(), "Z".into()],
            1,
            0.05,
            vec![Edge::new(0, 0, 1), Edge::new(1, 0, 2)],
        )
        .unwrap();
        Scm::from_parts(
            g,
            vec![VariableKind::ContinuousSensor; 3],
            vec![Standardization { mean: 0.0, std: 1.0 }; 3],
            vec![
                eq_gauss(0, vec![], vec![], sigma),
                eq_gauss(1, vec![(0, 0)], vec![1.0], sigma),
                eq_gauss(2, vec![(1, 0)], vec![1.0], sigma),
            ],
        )
        .unwrap()
    }

    #[test]
    fn do_propagates_through_unit_chain() {
        let scm = unit_chain(1e-9);
        let zeros = vec![0.0; 3];
        let tr = simulate_do(
            &scm,
            &Intervention::single(0, 1.0),
            &zeros,
            &Exogenous::Fixed(vec![0.0; 3]),
            1,
        )
        .unwrap();
        assert_eq!(tr[0].value(0, 2), 1.0);
    }

    #[test]
    fn intervened_variable_is_forced_in_every_sample() {
        let scm = unit_chain(1.0);
        let tr = simulate_do(
            &scm,
            &Intervention::single(1, -2.0),
            &[0.0; 3],
            &Exogenous::Sampled { samples: 50, seed: 3 },
            4,
        )
        .unwrap();
        assert!(tr.iter().all(|t| (0..4).all(|s| t.value(s, 1) == -2.0)));
    }

    #[test]
    fn sampled_runs_are_deterministic() {
        let scm = unit_chain(1.0);
        let go = || {
            simulate_do(&scm, &Intervention::empty(), &[0.0; 3], &Exogenous::Sampled { samples: 8, seed: 9 }, 3)
                .unwrap()
        };
        assert_eq!(go(), go());
    }

    #[test]
    fn interventional_mean_linear() {
        let scm = unit_chain(1.0);
        let e = interventional_mean(&scm, &Intervention::single(0, 2.0), 2, &[0.0; 3], 1, 100_000, 1).unwrap();
        assert!((e.mean - 2.0).abs() < 5e-3, "{e:?}");
    }

    #[test]
    fn bad_assignment_rejected() {
        let scm = unit_chain(1.0);
        let iv = Intervention::single(7, 1.0);
        assert!(matches!(
            simulate_do(&scm, &iv, &[0.0; 3], &Exogenous::Fixed(vec![0.0; 3]), 1),
            Err(InferenceError::GraphHashMismatch(7))
        ));
        assert!(Intervention::new(vec![(0, 1.0), (0, 2.0)]).is_err());
    }
}
