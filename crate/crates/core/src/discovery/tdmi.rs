//! Time-delay mutual information with equal-frequency binning.

use super::DiscoveryError;

/// Code for a missing sample.
pub const MISSING: u16 = u16::MAX;

/// A series discretised into bins.
#[derive(Debug, Clone)]
pub struct BinnedSeries {
    pub codes: Vec<u16>,
    pub n_bins: usize,
}

impl BinnedSeries {
    pub fn is_constant(&self) -> bool {
        self.n_bins <= 1
    }
}

/// Mutual information in nats, with a flag raised when either input was
/// constant (the estimate is then exactly 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiEstimate {
    pub nats: f64,
    pub constant: bool,
}

/// Equal-frequency discretisation. Series with at most `bins` distinct
/// values (binary actuators included) keep their natural levels. Ties always
/// share a bin so the result does not depend on input order.
pub fn equal_frequency_bins(x: &[f64], bins: usize) -> BinnedSeries {
    let bins = bins.max(1);
    let mut idx: Vec<usize> = (0..x.len()).filter(|&i| !x[i].is_nan()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut codes = vec![MISSING; x.len()];
    let n = idx.len();
    if n == 0 {
        return BinnedSeries { codes, n_bins: 0 };
    }
    let mut distinct = 1;
    for w in idx.windows(2) {
        if x[w[1]] != x[w[0]] {
            distinct += 1;
        }
    }
    if distinct <= bins {
        let mut level = 0u16;
        for (k, &i) in idx.iter().enumerate() {
            if k > 0 && x[i] != x[idx[k - 1]] {
                level += 1;
            }
            codes[i] = level;
        }
        return BinnedSeries {
            codes,
            n_bins: distinct,
        };
    }
    let mut k = 0;
    let mut code = 0u16;
    let mut prev_bin = None;
    while k < n {
        let bin = k * bins / n;
        let mut j = k;
        while j < n && x[idx[j]] == x[idx[k]] {
            j += 1;
        }
        // bins skipped by large tie groups are compacted away
        if prev_bin.is_some_and(|p| p != bin) {
            code += 1;
        }
        prev_bin = Some(bin);
        for &i in &idx[k..j] {
            codes[i] = code;
        }
        k = j;
    }
    BinnedSeries {
        codes,
        n_bins: code as usize + 1,
    }
}

/// Plug-in mutual information between two code sequences of equal length.
/// Pairs with a missing side are skipped.
pub fn mutual_information(a: &BinnedSeries, b: &BinnedSeries) -> f64 {
    mi_codes(&a.codes, a.n_bins, &b.codes, b.n_bins)
}

pub(crate) fn mi_codes(a: &[u16], na: usize, b: &[u16], nb: usize) -> f64 {
    if na <= 1 || nb <= 1 {
        return 0.0;
    }
    let mut joint = vec![0u32; na * nb];
    let mut total = 0u32;
    for (&x, &y) in a.iter().zip(b) {
        if x == MISSING || y == MISSING {
            continue;
        }
        joint[x as usize * nb + y as usize] += 1;
        total += 1;
    }
    if total == 0 {
        return 0.0;
    }
    let mut pa = vec![0u32; na];
    let mut pb = vec![0u32; nb];
    for i in 0..na {
        for j in 0..nb {
            let c = joint[i * nb + j];
            pa[i] += c;
            pb[j] += c;
        }
    }
    let n = total as f64;
    let mut mi = 0.0;
    for i in 0..na {
        for j in 0..nb {
            let c = joint[i * nb + j];
            if c == 0 {
                continue;
            }
            let c = c as f64;
            mi += c * (c * n / (pa[i] as f64 * pb[j] as f64)).ln();
        }
    }
    (mi / n).max(0.0)
}

/// MI between `x(t − lag)` and `y(t)`.
pub fn tdmi(x: &[f64], y: &[f64], lag: usize, bins: usize) -> Result<MiEstimate, DiscoveryError> {
    let len = x.len().min(y.len());
    let aligned = len.saturating_sub(lag);
    if aligned <= bins * bins {
        return Err(DiscoveryError::SeriesTooShort {
            len: aligned,
            needed: bins * bins,
        });
    }
    let xs = &x[..len - lag];
    let ys = &y[lag..len];
    let bx = equal_frequency_bins(xs, bins);
    let by = equal_frequency_bins(ys, bins);
    if bx.is_constant() || by.is_constant() {
        return Ok(MiEstimate {
            nats: 0.0,
            constant: true,
        });
    }
    Ok(MiEstimate {
        nats: mutual_information(&bx, &by),
        constant: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn bins_are_balanced_and_tie_stable() {
        let x: Vec<f64> = (0..1600).map(|i| ((i * 7919) % 1600) as f64).collect();
        let b = equal_frequency_bins(&x, 16);
        assert_eq!(b.n_bins, 16);
        let mut counts = vec![0; 16];
        for &c in &b.codes {
            counts[c as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c == 100));

        let ties = [1.0, 1.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = equal_frequency_bins(&ties, 4);
        assert_eq!(b.codes[0], b.codes[1]);
        assert_eq!(b.codes[1], b.codes[2]);
    }

    #[test]
    fn binary_uses_natural_bins() {
        let x = [0.0, 1.0, 1.0, 0.0, 1.0];
        let b = equal_frequency_bins(&x, 16);
        assert_eq!(b.n_bins, 2);
        assert_eq!(b.codes, vec![0, 1, 1, 0, 1]);
    }

    #[test]
    fn shifted_copy_peaks_at_true_lag() {
        let x = noise(1, 5000);
        let mut y = vec![0.0; 5000];
        y[3..].copy_from_slice(&x[..4997]);
        let mis: Vec<f64> = (0..=5).map(|l| tdmi(&x, &y, l, 16).unwrap().nats).collect();
        let best = mis
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(best, 3);
        // a copied series carries the full binned entropy, ln 16
        assert!((mis[3] - 16f64.ln()).abs() < 0.01);
    }

    #[test]
    fn independent_noise_below_surrogate_bound() {
        let x = noise(2, 10_000);
        let y = noise(3, 10_000);
        let mi = tdmi(&x, &y, 0, 16).unwrap();
        assert!(mi.nats < 0.02, "{}", mi.nats);
    }

    #[test]
    fn constant_series_is_zero_and_flagged() {
        let x = vec![2.5; 1000];
        let y = noise(4, 1000);
        let mi = tdmi(&x, &y, 1, 16).unwrap();
        assert_eq!(mi.nats, 0.0);
        assert!(mi.constant);
    }

    #[test]
    fn too_short_rejected() {
        let x = noise(5, 200);
        assert!(matches!(
            tdmi(&x, &x, 0, 16),
            Err(DiscoveryError::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn symmetric_at_fixed_alignment() {
        let x = noise(6, 3000);
        let y: Vec<f64> = x.iter().zip(noise(7, 3000)).map(|(a, b)| a + b).collect();
        let a = tdmi(&x, &y, 0, 16).unwrap().nats;
        let b = tdmi(&y, &x, 0, 16).unwrap().nats;
        assert!((a - b).abs() < 1e-12);
    }
}
