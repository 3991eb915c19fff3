//! Backward Polchinski flow on a scale grid.
//!
//! The renormalised gradient `grad v_t(phi)` is estimated by self-normalized
//! importance sampling over Gaussian fields `zeta` with covariance `c_t`,
//! weights `exp(-v0_cut(phi + zeta))`. The flow is integrated from `t = inf`
//! to `t = 0`, freezing the gradient at the larger endpoint of every
//! interval and applying the exact covariance increment spectrally, while the
//! Gaussian part is the exact decomposed GFF path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gff::{sample_scale_path, GaussianSampler, GffPath, ScaleGrid};
use crate::norms::sobolev_weights;
use crate::seed::{derive_seed, Label};
use crate::spectral::{
    apply_multiplier, covariance_increment, forward_fft, q_from_operator, variance_c_eps,
    LatticeGeometry, RealField, Scale,
};
use crate::stats::{bootstrap_interval, mean, Estimate, RunningMoments};
use crate::wick::WickPolynomial;

/// Parameters of the flow: model, scale grid and inner Monte Carlo size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub geometry: LatticeGeometry,
    pub polynomial: WickPolynomial,
    pub grid: ScaleGrid,
    pub mc_inner: usize,
    pub seed: u64,
    /// Reuse one inner noise stream for every scale step of a replica.
    pub common_random_numbers: bool,
}

impl FlowConfig {
    pub fn new(
        geometry: LatticeGeometry,
        polynomial: WickPolynomial,
        grid: ScaleGrid,
        mc_inner: usize,
        seed: u64,
    ) -> Result<Self> {
        if mc_inner < 2 {
            return Err(Error::Config(format!("mc_inner must be >= 2, got {mc_inner}")));
        }
        let c = variance_c_eps(&geometry);
        if (polynomial.wick_variance() - c).abs() > 1e-12 * c {
            return Err(Error::Config(format!(
                "Wick variance {} does not match the lattice variance {c}",
                polynomial.wick_variance()
            )));
        }
        Ok(Self {
            geometry,
            polynomial,
            grid,
            mc_inner,
            seed,
            common_random_numbers: false,
        })
    }

    pub fn with_common_random_numbers(mut self, on: bool) -> Self {
        self.common_random_numbers = on;
        self
    }
}

/// Importance-sampling estimate of `grad v_t(phi)`.
#[derive(Debug, Clone)]
pub struct GradEstimate {
    pub mean: RealField,
    /// Delta-method standard error per site.
    pub std_err: Vec<f64>,
    /// Kish effective sample size `(sum w)^2 / sum w^2`.
    pub ess: f64,
}

/// Streaming weighted mean with running max-log rescaling.
struct WeightedMean {
    max_log: f64,
    sw: f64,
    sw2: f64,
    sg: Vec<f64>,
    sw2g: Vec<f64>,
    sw2g2: Vec<f64>,
}

impl WeightedMean {
    fn new(sites: usize) -> Self {
        Self {
            max_log: f64::NEG_INFINITY,
            sw: 0.0,
            sw2: 0.0,
            sg: vec![0.0; sites],
            sw2g: vec![0.0; sites],
            sw2g2: vec![0.0; sites],
        }
    }

    fn push(&mut self, log_w: f64, g: &[f64]) {
        if log_w > self.max_log {
            let r = (self.max_log - log_w).exp();
            let r2 = r * r;
            self.sw *= r;
            self.sw2 *= r2;
            for x in &mut self.sg {
                *x *= r;
            }
            for x in &mut self.sw2g {
                *x *= r2;
            }
            for x in &mut self.sw2g2 {
                *x *= r2;
            }
            self.max_log = log_w;
        }
        let w = (log_w - self.max_log).exp();
        let w2 = w * w;
        self.sw += w;
        self.sw2 += w2;
        for (i, &gi) in g.iter().enumerate() {
            self.sg[i] += w * gi;
            self.sw2g[i] += w2 * gi;
            self.sw2g2[i] += w2 * gi * gi;
        }
    }

    fn finish(self) -> (Vec<f64>, Vec<f64>, f64) {
        let mean: Vec<f64> = self.sg.iter().map(|s| s / self.sw).collect();
        let se = mean
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                let v = self.sw2g2[i] - 2.0 * m * self.sw2g[i] + m * m * self.sw2;
                (v.max(0.0)).sqrt() / self.sw
            })
            .collect();
        (mean, se, self.sw * self.sw / self.sw2)
    }
}

/// Self-normalized estimate of `grad v_t(phi) = E[grad v0_cut(phi + zeta) w] / E[w]`
/// with `zeta ~ N(0, c_t)` and `w = exp(-v0_cut(phi + zeta))`, using
/// `cfg.mc_inner` draws from the stream `noise_seed`.
pub fn grad_v_t_estimate(
    phi: &RealField,
    t: Scale,
    cfg: &FlowConfig,
    noise_seed: u64,
) -> Result<GradEstimate> {
    let geom = cfg.geometry;
    let sites = geom.sites();
    let m = cfg.mc_inner;
    if cfg.polynomial.is_zero() {
        return Ok(GradEstimate {
            mean: RealField::zeros(geom),
            std_err: vec![0.0; sites],
            ess: m as f64,
        });
    }
    let sampler = GaussianSampler::for_scale(geom, t);
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let eps2 = geom.epsilon().powi(2);
    let mut acc = WeightedMean::new(sites);
    let mut shifted = vec![0.0; sites];
    let mut grad = vec![0.0; sites];
    let mut process = |zeta: &RealField, acc: &mut WeightedMean| -> Result<()> {
        for ((s, &p), &z) in shifted.iter_mut().zip(phi.values()).zip(zeta.values()) {
            *s = p + z;
        }
        let (_, cut) = cfg.polynomial.energy_and_gradient(&shifted, eps2, &mut grad);
        if !cut.is_finite() {
            return Err(Error::DegenerateWeights {
                t: t.to_string(),
                ess: 0.0,
            });
        }
        acc.push(-cut, &grad);
        Ok(())
    };
    let mut drawn = 0;
    while drawn < m {
        let (a, b) = sampler.sample_pair(&mut rng);
        process(&a, &mut acc)?;
        drawn += 1;
        if drawn < m {
            process(&b, &mut acc)?;
            drawn += 1;
        }
    }
    let (mean, std_err, ess) = acc.finish();
    if !(ess >= 2.0) {
        return Err(Error::DegenerateWeights {
            t: t.to_string(),
            ess,
        });
    }
    Ok(GradEstimate {
        mean: RealField::from_parts(geom, mean),
        std_err,
        ess,
    })
}

/// Coupled realization of the interacting field, the GFF and their difference.
#[derive(Debug, Clone)]
pub struct CouplingSample {
    pub grid: ScaleGrid,
    pub phi_p: Vec<RealField>,
    pub phi_gff: Vec<RealField>,
    pub phi_delta: Vec<RealField>,
    /// Gradient estimate used on interval `[t_{j+1}, t_j]`, indexed by `j`.
    pub gradients: Vec<RealField>,
    /// Effective sample size of each gradient estimate.
    pub ess: Vec<f64>,
}

impl CouplingSample {
    /// Interacting field at `t = 0`.
    pub fn phi_p_terminal(&self) -> &RealField {
        &self.phi_p[self.phi_p.len() - 1]
    }

    pub fn phi_delta_terminal(&self) -> &RealField {
        &self.phi_delta[self.phi_delta.len() - 1]
    }

    /// Largest violation of `phi_p = phi_delta + phi_gff` over all scales and sites.
    pub fn coupling_residual(&self) -> f64 {
        self.phi_p
            .iter()
            .zip(&self.phi_delta)
            .zip(&self.phi_gff)
            .flat_map(|((p, d), g)| {
                p.values()
                    .iter()
                    .zip(d.values())
                    .zip(g.values())
                    .map(|((p, d), g)| (p - d - g).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Seed of the inner noise stream for scale step `step`.
pub fn inner_noise_seed(cfg: &FlowConfig, path_seed: u64, step: usize) -> u64 {
    if cfg.common_random_numbers {
        derive_seed(cfg.seed, &[Label::Str("flow-noise"), Label::Int(path_seed)])
    } else {
        derive_seed(
            cfg.seed,
            &[Label::Str("flow-noise"), Label::Int(path_seed), Label::from(step)],
        )
    }
}

/// Backward Euler integration of the flow along a GFF path.
pub fn integrate_backward(cfg: &FlowConfig, gff_path: &GffPath) -> Result<CouplingSample> {
    if gff_path.grid() != &cfg.grid {
        return Err(Error::InvalidGrid("GFF path grid differs from the flow grid".into()));
    }
    if gff_path.geometry() != &cfg.geometry {
        return Err(Error::Config("GFF path geometry differs from the flow geometry".into()));
    }
    if !cfg.polynomial.cutoff_e().is_finite() {
        return Err(Error::Config("the flow requires a finite energy cut-off".into()));
    }
    let geom = cfg.geometry;
    let ops = geom.operator_table();
    let grid = &cfg.grid;
    let steps = grid.intervals();
    let mut phi_p = Vec::with_capacity(grid.len());
    let mut phi_delta = Vec::with_capacity(grid.len());
    let mut gradients = Vec::with_capacity(steps);
    let mut ess = Vec::with_capacity(steps);
    phi_delta.push(RealField::zeros(geom));
    phi_p.push(gff_path.fields()[0].clone());
    for j in 0..steps {
        let (upper, lower) = (grid.time(j), grid.time(j + 1));
        let noise = inner_noise_seed(cfg, gff_path.seed(), j);
        let est = grad_v_t_estimate(&phi_p[j], upper, cfg, noise)?;
        let increment: Vec<f64> = ops
            .iter()
            .map(|&a| covariance_increment(a, upper, lower))
            .collect();
        let drift = apply_multiplier(&est.mean, &increment);
        let delta = phi_delta[j].sub(&drift);
        let p = delta.add(&gff_path.fields()[j + 1]);
        if p.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { scale_index: j + 1 });
        }
        phi_delta.push(delta);
        phi_p.push(p);
        gradients.push(est.mean);
        ess.push(est.ess);
    }
    Ok(CouplingSample {
        grid: grid.clone(),
        phi_p,
        phi_gff: gff_path.fields().to_vec(),
        phi_delta,
        gradients,
        ess,
    })
}

/// Seed of the GFF path of replica `r`.
pub fn replica_path_seed(master: u64, r: usize) -> u64 {
    derive_seed(master, &[Label::Str("replica"), Label::from(r), Label::Str("gff")])
}

/// Run replica `r`: sample its GFF path and integrate the flow along it.
pub fn flow_replica(cfg: &FlowConfig, r: usize) -> Result<CouplingSample> {
    let path = sample_scale_path(&cfg.geometry, &cfg.grid, replica_path_seed(cfg.seed, r));
    integrate_backward(cfg, &path)
}

/// Map `summarize` over replicas `0..replicas` in parallel, keeping replica
/// order. Each full sample is dropped as soon as it has been summarized.
pub fn map_replicas<T: Send>(
    cfg: &FlowConfig,
    replicas: std::ops::Range<usize>,
    summarize: impl Fn(usize, CouplingSample) -> T + Sync,
) -> Result<Vec<T>> {
    replicas
        .into_par_iter()
        .map(|r| flow_replica(cfg, r).map(|s| summarize(r, s)))
        .collect()
}

/// Empirical mean with standard error and a 95% percentile-bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub mean: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Moment curves over the scale grid for one `(alpha, r)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCurve {
    pub alpha: f64,
    pub exponent: f64,
    /// `E ||Phi^Delta_t||^r_{H^alpha}` per grid time.
    pub norm: Vec<CurvePoint>,
    /// `E ||Phi^Delta_t - Phi^Delta_0||^r_{H^alpha}` per grid time.
    pub continuity: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceReport {
    pub times: Vec<Scale>,
    pub samples: usize,
    pub curves: Vec<MomentCurve>,
    /// `E sum_j ||q_{t_j} grad v_{t_j}||^2_{L^2} (t_j - t_{j+1})` over interior steps.
    pub drift_action: Estimate,
}

/// Streaming collector of the per-sample norms behind a [`DifferenceReport`].
#[derive(Debug, Clone)]
pub struct DifferenceAccumulator {
    grid: ScaleGrid,
    alphas: Vec<f64>,
    exponents: Vec<f64>,
    /// `[alpha][time][sample]`
    norms: Vec<Vec<Vec<f64>>>,
    continuity: Vec<Vec<Vec<f64>>>,
    drift_action: Vec<f64>,
}

impl DifferenceAccumulator {
    pub fn new(grid: ScaleGrid, alphas: &[f64], exponents: &[f64]) -> Self {
        let k = grid.len();
        Self {
            grid,
            alphas: alphas.to_vec(),
            exponents: exponents.to_vec(),
            norms: vec![vec![Vec::new(); k]; alphas.len()],
            continuity: vec![vec![Vec::new(); k]; alphas.len()],
            drift_action: Vec::new(),
        }
    }

    /// Per-sample summary, computable on worker threads.
    pub fn summarize(&self, sample: &CouplingSample) -> SampleNorms {
        let geom = *sample.phi_delta[0].geometry();
        let weights: Vec<Vec<f64>> = self
            .alphas
            .iter()
            .map(|&a| sobolev_weights(&geom, a))
            .collect();
        let terminal = forward_fft(sample.phi_delta_terminal());
        let mut norms = vec![Vec::with_capacity(self.grid.len()); self.alphas.len()];
        let mut continuity = vec![Vec::with_capacity(self.grid.len()); self.alphas.len()];
        for d in &sample.phi_delta {
            let spec = forward_fft(d);
            let mut diff = spec.clone();
            for (c, t) in diff.coeffs_mut().iter_mut().zip(terminal.coeffs()) {
                *c -= t;
            }
            for (ai, w) in weights.iter().enumerate() {
                norms[ai].push(spec.weighted_energy(w).sqrt());
                continuity[ai].push(diff.weighted_energy(w).sqrt());
            }
        }
        SampleNorms {
            norms,
            continuity,
            drift_action: drift_action(sample),
        }
    }

    pub fn push(&mut self, s: SampleNorms) {
        for (ai, per_time) in s.norms.into_iter().enumerate() {
            for (ti, v) in per_time.into_iter().enumerate() {
                self.norms[ai][ti].push(v);
            }
        }
        for (ai, per_time) in s.continuity.into_iter().enumerate() {
            for (ti, v) in per_time.into_iter().enumerate() {
                self.continuity[ai][ti].push(v);
            }
        }
        self.drift_action.push(s.drift_action);
    }

    pub fn finish(self) -> Result<DifferenceReport> {
        let samples = self.drift_action.len();
        if samples == 0 {
            return Err(Error::EmptyInput("no coupling samples".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(0, &[Label::Str("difference-bootstrap")]));
        let mut curves = Vec::new();
        for (ai, &alpha) in self.alphas.iter().enumerate() {
            for &r in &self.exponents {
                let mut point = |xs: &[f64]| -> CurvePoint {
                    let powered: Vec<f64> = xs.iter().map(|x| x.powf(r)).collect();
                    let m: RunningMoments = powered.iter().copied().collect();
                    let (lo, hi) = if powered.iter().all(|&x| x == 0.0) {
                        (0.0, 0.0)
                    } else {
                        bootstrap_interval(&powered, mean, 200, 0.95, &mut rng)
                    };
                    CurvePoint {
                        mean: m.mean(),
                        se: m.std_err(),
                        ci_low: lo,
                        ci_high: hi,
                    }
                };
                let norm = self.norms[ai].iter().map(|xs| point(xs)).collect();
                let continuity = self.continuity[ai].iter().map(|xs| point(xs)).collect();
                curves.push(MomentCurve {
                    alpha,
                    exponent: r,
                    norm,
                    continuity,
                });
            }
        }
        let action: RunningMoments = self.drift_action.iter().copied().collect();
        Ok(DifferenceReport {
            times: self.grid.times().to_vec(),
            samples,
            curves,
            drift_action: action.estimate(),
        })
    }
}

/// Norms of one coupling sample, `[alpha][time]`.
#[derive(Debug, Clone)]
pub struct SampleNorms {
    norms: Vec<Vec<f64>>,
    continuity: Vec<Vec<f64>>,
    drift_action: f64,
}

/// `sum_j ||q_{t_j} g_j||^2_{L^2} (t_j - t_{j+1})` over steps with finite `t_j`.
pub fn drift_action(sample: &CouplingSample) -> f64 {
    let geom = *sample.phi_delta[0].geometry();
    let ops = geom.operator_table();
    let mut total = 0.0;
    for (j, g) in sample.gradients.iter().enumerate() {
        let (upper, lower) = (sample.grid.time(j), sample.grid.time(j + 1));
        if upper.is_infinite() {
            continue;
        }
        let q2: Vec<f64> = ops.iter().map(|&a| q_from_operator(a, upper).powi(2)).collect();
        total += forward_fft(g).weighted_energy(&q2) * (upper.value() - lower.value());
    }
    total
}

/// Moments of `||Phi^Delta_t||_{H^alpha}` and of the continuity statistic
/// `||Phi^Delta_t - Phi^Delta_0||_{H^alpha}` per grid time.
pub fn difference_diagnostics(
    samples: &[CouplingSample],
    alphas: &[f64],
    moment_exponents: &[f64],
) -> Result<DifferenceReport> {
    let first = samples
        .first()
        .ok_or_else(|| Error::EmptyInput("no coupling samples".into()))?;
    let mut acc = DifferenceAccumulator::new(first.grid.clone(), alphas, moment_exponents);
    let summaries: Vec<SampleNorms> = samples.par_iter().map(|s| acc.summarize(s)).collect();
    for s in summaries {
        acc.push(s);
    }
    acc.finish()
}
