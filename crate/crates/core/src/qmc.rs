//! Halton low-discrepancy sequences.

const PRIMES: [u32; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131,
];

/// Largest dimension served by [`halton`].
pub const MAX_DIM: usize = PRIMES.len();

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Point `index` of the Halton sequence in `out.len()` dimensions. Index 0
/// is skipped so no coordinate is exactly 0.
pub fn halton(index: u64, out: &mut [f64]) {
    assert!(out.len() <= MAX_DIM, "Halton dimension {} too large", out.len());
    for (d, o) in out.iter_mut().enumerate() {
        *o = radical_inverse(index + 1, PRIMES[d] as u64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_two_prefix() {
        let pts: Vec<f64> = (0..4)
            .map(|i| {
                let mut p = [0.0];
                halton(i, &mut p);
                p[0]
            })
            .collect();
        assert_eq!(pts, vec![0.5, 0.25, 0.75, 0.125]);
    }

    #[test]
    fn uniform_mean() {
        let n = 20_000;
        let mut acc = [0.0; 5];
        let mut p = [0.0; 5];
        for i in 0..n {
            halton(i, &mut p);
            for d in 0..5 {
                acc[d] += p[d];
            }
        }
        for a in acc {
            assert!((a / n as f64 - 0.5).abs() < 1e-3);
        }
    }
}
