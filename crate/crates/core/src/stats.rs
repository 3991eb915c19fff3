//! Small statistical utilities shared by the samplers and diagnostics.

use serde::{Deserialize, Serialize};

/// Welford accumulator for mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMoments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningMoments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_err(&self) -> f64 {
        if self.count == 0 {
            return f64::INFINITY;
        }
        (self.variance() / self.count as f64).sqrt()
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            mean: self.mean(),
            se: self.std_err(),
        }
    }
}

impl FromIterator<f64> for RunningMoments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = RunningMoments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// Point estimate with standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn new(mean: f64, se: f64) -> Self {
        Self { mean, se }
    }

    /// `|a - b| / sqrt(se_a^2 + se_b^2)`.
    pub fn z_score(&self, other: &Estimate) -> f64 {
        let se = self.se.hypot(other.se);
        if se == 0.0 {
            if self.mean == other.mean {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - other.mean).abs() / se
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// `log(mean(exp(x)))` with max subtraction.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + (xs.iter().map(|x| (x - m).exp()).sum::<f64>() / xs.len() as f64).ln()
}

/// Linear-interpolated empirical quantile, `q` in `[0, 1]`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Effective sample size of a stationary series from its autocorrelations,
/// truncated by Geyer's initial positive sequence rule.
pub fn autocorrelation_ess(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let m = mean(xs);
    let centered: Vec<f64> = xs.iter().map(|x| x - m).collect();
    let c0 = centered.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return n as f64;
    }
    let autocov = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let mut tau = -1.0;
    let mut lag = 0;
    let mut prev_pair = f64::INFINITY;
    while lag + 1 < n {
        let pair = (autocov(lag) + autocov(lag + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        // Initial monotone sequence.
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        lag += 2;
    }
    (n as f64 / tau.max(1e-12)).min(n as f64)
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_survival(lambda))
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = 2.0 * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Percentile bootstrap interval of a statistic over resamples of `xs`.
pub fn bootstrap_interval<R: rand::Rng + ?Sized>(
    xs: &[f64],
    statistic: impl Fn(&[f64]) -> f64,
    resamples: usize,
    level: f64,
    rng: &mut R,
) -> (f64, f64) {
    let n = xs.len();
    let mut buf = vec![0.0; n];
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = xs[rng.gen_range(0..n)];
            }
            statistic(&buf)
        })
        .collect();
    stats.sort_by(|a, b| a.total_cmp(b));
    let alpha = 0.5 * (1.0 - level);
    (quantile(&stats, alpha), quantile(&stats, 1.0 - alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, -2.0, 7.5, 3.25];
        let m: RunningMoments = xs.iter().copied().collect();
        assert!((m.mean() - mean(&xs)).abs() < 1e-14);
        assert!((m.variance() - variance(&xs)).abs() < 1e-13);
        let mut a: RunningMoments = xs[..2].iter().copied().collect();
        let b: RunningMoments = xs[2..].iter().copied().collect();
        a.merge(&b);
        assert!((a.variance() - m.variance()).abs() < 1e-13);
        assert_eq!(a.count(), 5);
    }

    #[test]
    fn log_mean_exp_is_stable() {
        let xs = [1000.0, 1000.0];
        assert!((log_mean_exp(&xs) - 1000.0).abs() < 1e-12);
        let ys = [0.0, (3.0f64).ln()];
        assert!((log_mean_exp(&ys) - 2.0f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn ess_of_iid_and_ar1() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let iid: Vec<f64> = (0..20_000).map(|_| normal.sample(&mut rng)).collect();
        let ess = autocorrelation_ess(&iid);
        assert!(ess > 15_000.0, "{ess}");
        let mut x = 0.0;
        let ar: Vec<f64> = (0..50_000)
            .map(|_| {
                x = 0.9 * x + normal.sample(&mut rng);
                x
            })
            .collect();
        // Integrated time 19 for phi = 0.9.
        let ess = autocorrelation_ess(&ar);
        assert!(ess > 50_000.0 / 19.0 * 0.7 && ess < 50_000.0 / 19.0 * 1.3, "{ess}");
    }

    #[test]
    fn ks_two_sample_behaviour() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let a: Vec<f64> = (0..2000).map(|_| normal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..2000).map(|_| normal.sample(&mut rng)).collect();
        let c: Vec<f64> = b.iter().map(|x| x + 0.3).collect();
        assert!(ks_two_sample(&a, &b).1 > 0.01);
        assert!(ks_two_sample(&a, &c).1 < 1e-6);
        assert!((kolmogorov_survival(1.36) - 0.0494).abs() < 1e-3);
    }

    #[test]
    fn quantile_interpolates() {
        let xs = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
        assert!((quantile(&xs, 0.5) - 2.5).abs() < 1e-15);
    }
}
