//! Statistical tests used by adversaries and property checks: a small
//! randomness battery (frequency, runs, serial, byte chi-square) and
//! goodness-of-fit / two-sample chi-square tests.

use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

/// Expands bytes into bits, most significant bit first.
pub fn unpack_bits(bytes: &[u8]) -> Vec<u8> {
    bytes
        .iter()
        .flat_map(|b| (0..8).rev().map(move |i| (b >> i) & 1))
        .collect()
}

fn chi_square_sf(stat: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    if !stat.is_finite() {
        return 0.0;
    }
    ChiSquared::new(dof as f64)
        .expect("dof > 0")
        .sf(stat.max(0.0))
}

/// Frequency (monobit) test over a 0/1 sequence.
pub fn monobit_bits(bits: &[u8]) -> f64 {
    if bits.is_empty() {
        return 1.0;
    }
    let s: i64 = bits.iter().map(|&b| if b == 1 { 1 } else { -1 }).sum();
    let s_obs = (s.unsigned_abs() as f64) / (bits.len() as f64).sqrt();
    erfc(s_obs / std::f64::consts::SQRT_2)
}

pub fn monobit(bytes: &[u8]) -> f64 {
    monobit_bits(&unpack_bits(bytes))
}

/// Runs test over a 0/1 sequence. Returns 0 when the frequency
/// pre-condition fails.
pub fn runs_bits(bits: &[u8]) -> f64 {
    let n = bits.len();
    if n < 2 {
        return 1.0;
    }
    let nf = n as f64;
    let pi = bits.iter().filter(|&&b| b == 1).count() as f64 / nf;
    if (pi - 0.5).abs() >= 2.0 / nf.sqrt() {
        return 0.0;
    }
    let v = 1 + bits.windows(2).filter(|w| w[0] != w[1]).count();
    let num = (v as f64 - 2.0 * nf * pi * (1.0 - pi)).abs();
    let den = 2.0 * (2.0 * nf).sqrt() * pi * (1.0 - pi);
    erfc(num / den)
}

pub fn runs(bytes: &[u8]) -> f64 {
    runs_bits(&unpack_bits(bytes))
}

fn psi_squared(bits: &[u8], m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let n = bits.len();
    let mut counts = vec![0u64; 1 << m];
    for i in 0..n {
        let mut v = 0usize;
        for j in 0..m {
            v = (v << 1) | bits[(i + j) % n] as usize;
        }
        counts[v] += 1;
    }
    let sum_sq: f64 = counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
    (1u64 << m) as f64 / n as f64 * sum_sq - n as f64
}

/// Serial test with overlapping `m`-bit patterns (m ≥ 2). Returns both
/// p-values.
pub fn serial_bits(bits: &[u8], m: usize) -> (f64, f64) {
    assert!(m >= 2, "serial test needs m >= 2");
    if bits.len() < m {
        return (1.0, 1.0);
    }
    let p0 = psi_squared(bits, m);
    let p1 = psi_squared(bits, m - 1);
    let p2 = psi_squared(bits, m - 2);
    let d1 = p0 - p1;
    let d2 = p0 - 2.0 * p1 + p2;
    let a1 = 2f64.powi(m as i32 - 2);
    let a2 = 2f64.powi(m as i32 - 3);
    (gamma_ur(a1, (d1 / 2.0).max(0.0)), gamma_ur(a2, (d2 / 2.0).max(0.0)))
}

pub fn serial(bytes: &[u8], m: usize) -> (f64, f64) {
    serial_bits(&unpack_bits(bytes), m)
}

pub fn byte_histogram(bytes: &[u8]) -> Vec<u64> {
    let mut h = vec![0u64; 256];
    for &b in bytes {
        h[b as usize] += 1;
    }
    h
}

/// Pearson goodness-of-fit. Returns `(statistic, p)`.
pub fn chi_square_test(observed: &[f64], expected: &[f64]) -> (f64, f64) {
    assert_eq!(observed.len(), expected.len());
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .filter(|(_, &e)| e > 0.0)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = observed.len().saturating_sub(1);
    (stat, chi_square_sf(stat, dof))
}

/// Goodness-of-fit against the uniform distribution over the bins.
pub fn chi_square_uniform(counts: &[u64]) -> (f64, f64) {
    let total: u64 = counts.iter().sum();
    if total == 0 || counts.len() < 2 {
        return (0.0, 1.0);
    }
    let e = total as f64 / counts.len() as f64;
    let obs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    chi_square_test(&obs, &vec![e; counts.len()])
}

/// Two-sample chi-square homogeneity test for binned data with possibly
/// different sample sizes. Bins empty in both samples are ignored.
pub fn two_sample_chi_square(a: &[u64], b: &[u64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    if na == 0 || nb == 0 {
        return if na == nb { 1.0 } else { 0.0 };
    }
    let ra = (nb as f64 / na as f64).sqrt();
    let rb = (na as f64 / nb as f64).sqrt();
    let mut stat = 0.0;
    let mut used = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        if x + y == 0 {
            continue;
        }
        let d = ra * x as f64 - rb * y as f64;
        stat += d * d / (x + y) as f64;
        used += 1;
    }
    chi_square_sf(stat, used.saturating_sub(1))
}

/// Buckets values from `[0, range)` into `bins` equal-width bins.
pub fn bin_counts(values: impl IntoIterator<Item = u64>, range: u64, bins: usize) -> Vec<u64> {
    let bins = bins.max(1);
    let mut out = vec![0u64; bins];
    let range = range.max(1);
    for v in values {
        let idx = ((v.min(range - 1) as u128 * bins as u128) / range as u128) as usize;
        out[idx] += 1;
    }
    out
}

/// Half-width of a normal-approximation 95% interval for a proportion.
pub fn binomial_ci95(successes: u64, trials: u64) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    let p = successes as f64 / trials as f64;
    1.96 * (p * (1.0 - p) / trials as f64).sqrt()
}

/// Named p-values from the randomness battery.
#[derive(Debug, Clone)]
pub struct RandomnessBattery {
    pub results: Vec<(&'static str, f64)>,
}

impl RandomnessBattery {
    pub fn run(bytes: &[u8]) -> Self {
        let bits = unpack_bits(bytes);
        let (s1, s2) = serial_bits(&bits, 3);
        let (_, bytes_p) = chi_square_uniform(&byte_histogram(bytes));
        RandomnessBattery {
            results: vec![
                ("monobit", monobit_bits(&bits)),
                ("runs", runs_bits(&bits)),
                ("serial_1", s1),
                ("serial_2", s2),
                ("byte_chi_square", bytes_p),
            ],
        }
    }

    pub fn min_p(&self) -> f64 {
        self.results
            .iter()
            .map(|(_, p)| *p)
            .fold(1.0, f64::min)
    }

    pub fn passes(&self, alpha: f64) -> bool {
        self.min_p() > alpha
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::SeededRng;

    fn bits(s: &str) -> Vec<u8> {
        s.bytes().map(|c| c - b'0').collect()
    }

    const TOL: f64 = 1e-6;

    // Worked examples from the NIST SP 800-22 test descriptions.
    const NIST_100: &str = "1100100100001111110110101010001000100001011010001100001000110100110001001100011001100010100010111000";

    #[test]
    fn monobit_reference_value() {
        assert!((monobit_bits(&bits(NIST_100)) - 0.109599).abs() < TOL);
    }

    #[test]
    fn runs_reference_values() {
        assert!((runs_bits(&bits("1001101011")) - 0.147232).abs() < TOL);
        assert!((runs_bits(&bits(NIST_100)) - 0.500798).abs() < TOL);
    }

    #[test]
    fn serial_reference_value() {
        let (p1, p2) = serial_bits(&bits("0011011101"), 3);
        assert!((p1 - 0.808792).abs() < TOL, "{p1}");
        assert!((p2 - 0.670320).abs() < TOL, "{p2}");
    }

    #[test]
    fn chi_square_reference_values() {
        let (x2, p) = chi_square_test(&[1.0, 2.0, 3.0, 4.0], &[2.0, 3.0, 4.0, 1.0]);
        assert!((x2 - 10.083333333333334).abs() < 1e-9);
        assert!((p - 0.017870892893625558).abs() < 1e-9);
        let (x2, p) = chi_square_test(&[24.0, 20.0, 27.0, 29.0], &[19.0, 25.0, 26.0, 30.0]);
        assert!((x2 - 2.3875843454790822).abs() < 1e-9);
        assert!((p - 0.49594997742093094).abs() < 1e-9);
    }

    #[test]
    fn identical_samples_are_homogeneous() {
        let a = vec![10, 20, 30, 0];
        assert!((two_sample_chi_square(&a, &a) - 1.0).abs() < 1e-12);
        let scaled: Vec<u64> = a.iter().map(|x| x * 3).collect();
        assert!((two_sample_chi_square(&a, &scaled) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_samples_are_rejected() {
        let a = vec![100, 0, 100, 0];
        let b = vec![0, 100, 0, 100];
        assert!(two_sample_chi_square(&a, &b) < 1e-10);
    }

    #[test]
    fn empty_samples() {
        assert_eq!(two_sample_chi_square(&[0, 0], &[0, 0]), 1.0);
        assert_eq!(two_sample_chi_square(&[1, 0], &[0, 0]), 0.0);
        assert_eq!(chi_square_uniform(&[]), (0.0, 1.0));
    }

    #[test]
    fn battery_accepts_rng_and_rejects_constants() {
        let noise = SeededRng::new(77).bytes(100_000);
        assert!(RandomnessBattery::run(&noise).passes(0.01));
        assert!(!RandomnessBattery::run(&vec![0u8; 4096]).passes(0.01));
        let text = b"HIDDEN-MARKER ".repeat(300);
        assert!(!RandomnessBattery::run(&text).passes(0.01));
    }

    #[test]
    fn binning() {
        assert_eq!(bin_counts([0, 1, 2, 3, 9], 10, 5), vec![2, 2, 0, 0, 1]);
        assert_eq!(bin_counts([5], 1, 3), vec![1, 0, 0]);
    }

    #[test]
    fn ci_half_width() {
        assert!((binomial_ci95(500, 1000) - 1.96 * 0.5 / 1000f64.sqrt()).abs() < 1e-12);
        assert_eq!(binomial_ci95(0, 0), 0.0);
    }
}
