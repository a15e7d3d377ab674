use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Paired differences at most this large are treated as zero.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Paired difference `a - b` summarized with a percentile bootstrap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub n: usize,
    pub mean_diff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean difference over the standard deviation of the differences.
    pub effect_size: f64,
    /// Instances where `a` is lower, equal, higher.
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

impl PairedComparison {
    /// Zero lies inside the interval.
    pub fn within_noise(&self) -> bool {
        self.ci_low <= 0.0 && 0.0 <= self.ci_high
    }
}

pub fn paired_bootstrap(a: &[f64], b: &[f64], resamples: usize, level: f64, seed: u64) -> PairedComparison {
    assert_eq!(a.len(), b.len(), "paired samples differ in length");
    // Differences at rounding level count as ties.
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).map(|x| if x.abs() <= TIE_TOLERANCE { 0.0 } else { x }).collect();
    let n = d.len();
    let mean_diff = mean(&d);
    let sd = std_dev(&d);
    let effect_size = if sd > 0.0 { mean_diff / sd } else if mean_diff == 0.0 { 0.0 } else { mean_diff.signum() * f64::INFINITY };
    let wins = d.iter().filter(|&&x| x < 0.0).count();
    let losses = d.iter().filter(|&&x| x > 0.0).count();
    let (mut ci_low, mut ci_high) = (mean_diff, mean_diff);
    if n > 0 && resamples > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut means: Vec<f64> = (0..resamples).map(|_| (0..n).map(|_| d[rng.gen_range(0..n)]).sum::<f64>() / n as f64).collect();
        means.sort_by(f64::total_cmp);
        let tail = (1.0 - level) / 2.0;
        let at = |q: f64| means[((q * resamples as f64).floor() as usize).min(resamples - 1)];
        ci_low = at(tail);
        ci_high = at(1.0 - tail);
    }
    PairedComparison { n, mean_diff, ci_low, ci_high, effect_size, wins, ties: n - wins - losses, losses }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_by_hand() {
        assert_eq!(mean(&[1.0, 2.0, 6.0]), 3.0);
        // deviations -2, -1, 3 -> 14 / 2
        assert!((std_dev(&[1.0, 2.0, 6.0]) - 7f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_shift_has_a_degenerate_interval() {
        let b = [1.0, 2.0, 3.0, 4.0];
        let a: Vec<f64> = b.iter().map(|x| x - 0.5).collect();
        let c = paired_bootstrap(&a, &b, 500, 0.95, 0);
        assert_eq!((c.mean_diff, c.ci_low, c.ci_high), (-0.5, -0.5, -0.5));
        assert_eq!((c.wins, c.ties, c.losses), (4, 0, 0));
        assert!(!c.within_noise());
    }

    #[test]
    fn interval_brackets_the_mean() {
        let a = [0.1, 0.4, -0.2, 0.3, 0.0, 0.2];
        let b = [0.0; 6];
        let c = paired_bootstrap(&a, &b, 2000, 0.95, 3);
        assert!(c.ci_low <= c.mean_diff && c.mean_diff <= c.ci_high);
        assert!(c.ci_low >= -0.2 && c.ci_high <= 0.4);
        assert_eq!(c.ties, 1);
    }

    #[test]
    fn rounding_noise_is_a_tie() {
        let c = paired_bootstrap(&[1e-16, 0.0], &[0.0, 1e-16], 100, 0.95, 0);
        assert_eq!((c.mean_diff, c.effect_size, c.ties), (0.0, 0.0, 2));
    }
}
