//! Maxima of sampled fields: centering, the derivative-martingale statistic
//! and Gumbel fits.

use std::f64::consts::PI;

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::RealField;

/// Minimum sample size accepted by [`gumbel_fit`].
pub const MIN_FIT_SAMPLES: usize = 50;

/// `(2 ln(1/eps) - 3/4 ln ln(1/eps)) / sqrt(2 pi)`, defined for `eps < 1/e`.
pub fn m_eps(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < (-1.0f64).exp()) {
        return Err(Error::Domain(format!(
            "centering needs 0 < eps < 1/e, got {epsilon}"
        )));
    }
    let log_inv = -epsilon.ln();
    Ok((2.0 * log_inv - 0.75 * log_inv.ln()) / (2.0 * PI).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxRecord {
    pub epsilon: f64,
    pub raw_max: f64,
    pub m_eps: f64,
    pub centered: f64,
    pub z_statistic: Option<f64>,
}

/// Maximum over sites minus the centering for the field's lattice spacing.
pub fn centered_max(f: &RealField) -> Result<MaxRecord> {
    let epsilon = f.geometry().epsilon();
    let m = m_eps(epsilon)?;
    let raw_max = f.max();
    Ok(MaxRecord {
        epsilon,
        raw_max,
        m_eps: m,
        centered: raw_max - m,
        z_statistic: None,
    })
}

/// [`centered_max`] together with the derivative-martingale statistic.
pub fn max_record(f: &RealField) -> Result<MaxRecord> {
    let mut rec = centered_max(f)?;
    rec.z_statistic = Some(derivative_martingale(f));
    Ok(rec)
}

/// `eps^2 sum_x (2 ln(1/eps)/sqrt(2 pi) - f(x)) exp(-2 ln(1/eps) + sqrt(8 pi) f(x))`.
pub fn derivative_martingale(f: &RealField) -> f64 {
    let eps = f.geometry().epsilon();
    let log_inv = -eps.ln();
    let shift = 2.0 * log_inv / (2.0 * PI).sqrt();
    let rate = (8.0 * PI).sqrt();
    let sum: f64 = f
        .values()
        .iter()
        .map(|&x| (shift - x) * (rate * x - 2.0 * log_inv).exp())
        .sum();
    eps * eps * sum
}

pub fn gumbel_cdf(x: f64, location: f64, scale: f64) -> f64 {
    (-(-(x - location) / scale).exp()).exp()
}

pub fn gumbel_log_pdf(x: f64, location: f64, scale: f64) -> f64 {
    let z = (x - location) / scale;
    -scale.ln() - z - (-z).exp()
}

pub fn gumbel_log_likelihood(samples: &[f64], location: f64, scale: f64) -> f64 {
    samples.iter().map(|&x| gumbel_log_pdf(x, location, scale)).sum()
}

/// One-sample Kolmogorov-Smirnov distance against a continuous CDF.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GumbelFit {
    pub location: f64,
    pub scale: f64,
    pub ks_distance: f64,
    pub log_likelihood: f64,
}

/// Maximum-likelihood Gumbel fit.
///
/// The scale solves the profile equation
/// `beta = mean(x) - sum x w / sum w`, `w = exp(-x / beta)`, by bisection;
/// data are shifted to start at zero so the weights stay in `(0, 1]`.
pub fn gumbel_fit(samples: &[f64]) -> Result<GumbelFit> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(Error::DegenerateSample(format!(
            "need at least {MIN_FIT_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateSample("samples must be finite".into()));
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Err(Error::DegenerateSample("all samples are equal".into()));
    }
    let ys: Vec<f64> = samples.iter().map(|x| x - lo).collect();
    let mean_y = ys.iter().sum::<f64>() / ys.len() as f64;
    let profile = |beta: f64| {
        let (mut sw, mut syw) = (0.0, 0.0);
        for &y in &ys {
            let w = (-y / beta).exp();
            sw += w;
            syw += y * w;
        }
        beta - mean_y + syw / sw
    };
    let range = hi - lo;
    let (mut a, mut b) = (range * 1e-12, range);
    while profile(b) < 0.0 {
        b *= 2.0;
    }
    while b - a > 1e-10 * b {
        let mid = 0.5 * (a + b);
        if profile(mid) < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let scale = 0.5 * (a + b);
    let mean_w = ys.iter().map(|y| (-y / scale).exp()).sum::<f64>() / ys.len() as f64;
    let location = lo - scale * mean_w.ln();
    Ok(GumbelFit {
        location,
        scale,
        ks_distance: ks_distance(samples, |x| gumbel_cdf(x, location, scale)),
        log_likelihood: gumbel_log_likelihood(samples, location, scale),
    })
}

/// Two-component Gumbel location mixture with a shared scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub weight: f64,
    pub locations: [f64; 2],
    pub scale: f64,
    pub log_likelihood: f64,
    /// Log-likelihood gain over the single Gumbel fit.
    pub gain: f64,
}

struct MixtureCost<'a> {
    samples: &'a [f64],
}

impl MixtureCost<'_> {
    fn unpack(p: &[f64]) -> (f64, [f64; 2], f64) {
        let weight = 1.0 / (1.0 + (-p[3]).exp());
        (weight, [p[0], p[1]], p[2].exp())
    }

    fn log_likelihood(&self, p: &[f64]) -> f64 {
        let (w, loc, scale) = Self::unpack(p);
        self.samples
            .iter()
            .map(|&x| {
                let a = w.ln() + gumbel_log_pdf(x, loc[0], scale);
                let b = (1.0 - w).ln() + gumbel_log_pdf(x, loc[1], scale);
                let m = a.max(b);
                m + ((a - m).exp() + (b - m).exp()).ln()
            })
            .sum()
    }
}

impl CostFunction for MixtureCost<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let ll = self.log_likelihood(p);
        Ok(if ll.is_finite() { -ll } else { f64::INFINITY })
    }
}

/// Fit the mixture by Nelder-Mead from several split starting points. The
/// single fit is itself a mixture, so the reported gain is never negative.
pub fn mixture_fit(samples: &[f64]) -> Result<MixtureFit> {
    let single = gumbel_fit(samples)?;
    let (mu, beta) = (single.location, single.scale);
    let cost = MixtureCost { samples };
    let mut best = vec![mu, mu, beta.ln(), 0.0];
    let mut best_ll = single.log_likelihood;
    for split in [0.5, 1.0, 2.0, 4.0] {
        let start = vec![mu - split * beta, mu + 0.5 * split * beta, beta.ln(), 0.0];
        let mut simplex = vec![start.clone()];
        for (i, step) in [0.5 * beta, 0.5 * beta, 0.2, 1.0].into_iter().enumerate() {
            let mut v = start.clone();
            v[i] += step;
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-10)
            .map_err(|e| Error::Domain(e.to_string()))?;
        let res = Executor::new(MixtureCost { samples }, solver)
            .configure(|s| s.max_iters(4000))
            .run()
            .map_err(|e| Error::Domain(e.to_string()))?;
        if let Some(p) = res.state.best_param {
            let ll = cost.log_likelihood(&p);
            if ll > best_ll {
                best_ll = ll;
                best = p;
            }
        }
    }
    let (weight, locations, scale) = MixtureCost::unpack(&best);
    Ok(MixtureFit {
        weight,
        locations,
        scale,
        log_likelihood: best_ll,
        gain: best_ll - single.log_likelihood,
    })
}

/// Rows `(x, empirical CDF, fitted CDF)` at the sorted samples.
pub fn cdf_table(samples: &[f64], fit: &GumbelFit) -> Vec<(f64, f64, f64)> {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| (x, (i + 1) as f64 / n, gumbel_cdf(x, fit.location, fit.scale)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gff::sample_gff;
    use crate::seed::{derive_rng, Label};
    use crate::spectral::LatticeGeometry;
    use rand::Rng;
    use rand_distr::{Distribution, Gumbel, Normal};

    #[test]
    fn centering_spot_value() {
        // Digits from an independent evaluation of the same expression.
        let expect = (2.0 * 64f64.ln() - 0.75 * 64f64.ln().ln()) / (2.0 * PI).sqrt();
        assert!((m_eps(1.0 / 64.0).unwrap() - expect).abs() < 1e-14);
        assert!((m_eps(1.0 / 64.0).unwrap() - 2.8918652712).abs() < 1e-9);
        assert!(m_eps(0.5).is_err());
        assert!(m_eps(0.0).is_err());
    }

    #[test]
    fn centering_increasing_and_prefactor() {
        let mut prev = f64::NEG_INFINITY;
        for k in 4..=10 {
            let m = m_eps(2f64.powi(-k)).unwrap();
            assert!(m > prev);
            prev = m;
        }
        let ratio = |eps: f64| m_eps(eps).unwrap() / (-2.0 * eps.ln() / (2.0 * PI).sqrt());
        assert!((ratio(1e-100) - 1.0).abs() < (ratio(1e-3) - 1.0).abs());
        assert!((ratio(1e-300) - 1.0).abs() < 0.01);
    }

    #[test]
    fn constant_field_max() {
        let g = LatticeGeometry::new(16, 1.0).unwrap();
        let rec = centered_max(&RealField::constant(g, 0.7)).unwrap();
        assert!((rec.centered - (0.7 - m_eps(1.0 / 16.0).unwrap())).abs() < 1e-15);
        let f = sample_gff(&g, 1);
        assert_eq!(
            centered_max(&f).unwrap().centered,
            centered_max(&f.translate(5, 11)).unwrap().centered
        );
    }

    #[test]
    fn martingale_of_zero_field() {
        let g = LatticeGeometry::new(32, 1.0).unwrap();
        let eps: f64 = 1.0 / 32.0;
        let z = derivative_martingale(&RealField::zeros(g));
        let expect = 2.0 / (2.0 * PI).sqrt() * (1.0 / eps).ln() * eps * eps;
        assert!((z - expect).abs() < 1e-15);
    }

    #[test]
    fn martingale_constant_shift() {
        let g = LatticeGeometry::new(8, 1.0).unwrap();
        let f = sample_gff(&g, 4).scale(0.3);
        let c = 0.25;
        let eps: f64 = 1.0 / 8.0;
        let log_inv = -eps.ln();
        let rate = (8.0 * PI).sqrt();
        let shift = 2.0 * log_inv / (2.0 * PI).sqrt();
        // Expand the shifted sum by hand.
        let expect: f64 = eps * eps
            * (rate * c).exp()
            * f.values()
                .iter()
                .map(|&x| (shift - x - c) * (rate * x - 2.0 * log_inv).exp())
                .sum::<f64>();
        let got = derivative_martingale(&f.map(|x| x + c));
        assert!((got - expect).abs() < 1e-10 * expect.abs().max(1.0));
    }

    #[test]
    fn recovers_synthetic_gumbel() {
        let mut rng = derive_rng(3, &[Label::Str("gumbel")]);
        let dist = Gumbel::new(0.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..100_000).map(|_| dist.sample(&mut rng)).collect();
        let fit = gumbel_fit(&xs).unwrap();
        assert!(fit.location.abs() < 0.02, "{fit:?}");
        assert!((fit.scale - 1.0).abs() < 0.02, "{fit:?}");
        assert!(fit.ks_distance < 0.01);
    }

    #[test]
    fn fit_is_stationary_point() {
        let mut rng = derive_rng(4, &[Label::Str("gumbel")]);
        let dist = Gumbel::new(1.5, 0.3).unwrap();
        let xs: Vec<f64> = (0..500).map(|_| dist.sample(&mut rng)).collect();
        let fit = gumbel_fit(&xs).unwrap();
        let ll = |m: f64, b: f64| gumbel_log_likelihood(&xs, m, b);
        let h = 1e-5;
        for (dm, db) in [(h, 0.0), (-h, 0.0), (0.0, h), (0.0, -h)] {
            assert!(ll(fit.location + dm, fit.scale + db) <= fit.log_likelihood + 1e-8);
        }
    }

    #[test]
    fn location_equivariance() {
        let mut rng = derive_rng(5, &[Label::Str("gumbel")]);
        let xs: Vec<f64> = (0..300).map(|_| rng.gen::<f64>().powi(2)).collect();
        let a = gumbel_fit(&xs).unwrap();
        let c = 3.25;
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let b = gumbel_fit(&shifted).unwrap();
        assert!((b.location - a.location - c).abs() < 1e-9);
        assert!((b.scale - a.scale).abs() < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(gumbel_fit(&[1.0; 100]).is_err());
        assert!(gumbel_fit(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn mixture_detects_shifted_components() {
        let mut rng = derive_rng(6, &[Label::Str("mixture")]);
        let g = Gumbel::new(0.0, 0.2).unwrap();
        let xs: Vec<f64> = (0..4000)
            .map(|_| g.sample(&mut rng) + if rng.gen::<f64>() < 0.5 { -0.8 } else { 0.0 })
            .collect();
        let fit = mixture_fit(&xs).unwrap();
        assert!(fit.gain > 50.0, "{fit:?}");
        let (lo, hi) = (fit.locations[0].min(fit.locations[1]), fit.locations[0].max(fit.locations[1]));
        assert!((lo + 0.8).abs() < 0.05 && hi.abs() < 0.05, "{fit:?}");
    }

    #[test]
    fn mixture_never_worse_than_single() {
        let mut rng = derive_rng(7, &[Label::Str("mixture")]);
        let n = Normal::new(0.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..500).map(|_| n.sample(&mut rng)).collect();
        assert!(mixture_fit(&xs).unwrap().gain >= 0.0);
    }

    #[test]
    fn ks_distance_of_exact_quantiles() {
        let n = 1000;
        let xs: Vec<f64> = (0..n)
            .map(|i| {
                let u: f64 = (i as f64 + 0.5) / n as f64;
                -(-u.ln()).ln()
            })
            .collect();
        assert!((ks_distance(&xs, |x| gumbel_cdf(x, 0.0, 1.0)) - 0.5 / n as f64).abs() < 1e-12);
    }
}
