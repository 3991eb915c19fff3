//! Variational (Boué-Dupuis) representation of the log-Laplace transform.
//!
//! A drift is piecewise constant in scale: one field per interior grid time
//! `t_j`, held on `[t_{j+1}, t_j]`. The integrated drift
//! `I_{s,t}(u) = int_s^t q_tau u_tau dtau` is applied with the exact per-mode
//! operator `int_a^b q_tau dtau = log((b A + 1)/(a A + 1)) / A`,
//! `A = -Laplacian + m^2`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{map_replicas, CouplingSample, FlowConfig};
use crate::gff::{GaussianSampler, ScaleGrid};
use crate::seed::{derive_seed, Label};
use crate::spectral::{
    covariance_table, forward_fft, inverse_fft, q_from_operator, LatticeGeometry, RealField,
    Scale, SpectralField,
};
use crate::stats::{log_mean_exp, Estimate, RunningMoments};
use crate::wick::v0_cut;

/// `int_lower^upper q_tau(k) dtau` for the operator value `a`.
pub fn integrated_q(a: f64, upper: Scale, lower: Scale) -> f64 {
    let lo = lower.value().max(0.0);
    match upper {
        Scale::Infinite => f64::INFINITY,
        Scale::Finite(hi) => ((hi - lo) * a / (lo * a + 1.0)).ln_1p() / a,
    }
}

/// Piecewise-constant drift on the interior intervals of a scale grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftPath {
    grid: ScaleGrid,
    fields: Vec<RealField>,
}

impl DriftPath {
    /// `fields[i]` is held on the interval below grid time `i + 1`.
    pub fn new(grid: ScaleGrid, fields: Vec<RealField>) -> Result<Self> {
        let expected = grid.len().saturating_sub(2);
        if fields.len() != expected {
            return Err(Error::InvalidGrid(format!(
                "drift needs {expected} fields, got {}",
                fields.len()
            )));
        }
        if fields.iter().any(|f| f.values().iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidField("drift values must be finite".into()));
        }
        Ok(Self { grid, fields })
    }

    pub fn zeros(geom: &LatticeGeometry, grid: &ScaleGrid) -> Self {
        let k = grid.len().saturating_sub(2);
        Self {
            grid: grid.clone(),
            fields: vec![RealField::zeros(*geom); k],
        }
    }

    pub fn grid(&self) -> &ScaleGrid {
        &self.grid
    }

    pub fn fields(&self) -> &[RealField] {
        &self.fields
    }

    /// Drift on interval `j`, i.e. `[t_{j+1}, t_j]`, for `1 <= j <= K-1`.
    pub fn on_interval(&self, j: usize) -> &RealField {
        &self.fields[j - 1]
    }

    /// Width `t_j - t_{j+1}` of interior interval `j`.
    pub fn width(&self, j: usize) -> f64 {
        self.grid.time(j).value() - self.grid.time(j + 1).value()
    }

    /// `sum_j ||u_j||^2_{L^2} (t_j - t_{j+1})`.
    pub fn action(&self) -> f64 {
        self.action_between(0, self.grid.len() - 1)
    }

    /// Action restricted to the intervals between grid indices `from <= to`.
    fn action_between(&self, from: usize, to: usize) -> f64 {
        (from.max(1)..to)
            .map(|j| {
                let u = self.on_interval(j);
                u.inner(u) * self.width(j)
            })
            .sum()
    }

    /// Action of the drift over `[s, t]` for grid times `s <= t`.
    pub fn action_on(&self, s: Scale, t: Scale) -> Result<f64> {
        let (is, it) = (self.grid.index_of(s)?, self.grid.index_of(t)?);
        if it > is {
            return Err(Error::Domain(format!("need s <= t, got s = {s}, t = {t}")));
        }
        Ok(self.action_between(it, is))
    }
}

/// Precomputed per-interval operators for one geometry and grid.
#[derive(Debug, Clone)]
pub struct DriftOperators {
    geometry: LatticeGeometry,
    /// `int q` table per interior interval `j = 1..K-1`, stored at `j - 1`.
    integrated: Vec<Vec<f64>>,
    widths: Vec<f64>,
}

impl DriftOperators {
    pub fn new(geometry: &LatticeGeometry, grid: &ScaleGrid) -> Self {
        let ops = geometry.operator_table();
        let k = grid.len().saturating_sub(2);
        let integrated = (1..=k)
            .map(|j| {
                ops.iter()
                    .map(|&a| integrated_q(a, grid.time(j), grid.time(j + 1)))
                    .collect()
            })
            .collect();
        let widths = (1..=k)
            .map(|j| grid.time(j).value() - grid.time(j + 1).value())
            .collect();
        Self {
            geometry: *geometry,
            integrated,
            widths,
        }
    }

    /// `sum_j Q_j u_j^` over interval indices `from..to`, in spectral form.
    fn integrate_spectral(&self, spectra: &[SpectralField], from: usize, to: usize) -> SpectralField {
        let mut out = SpectralField::zeros(self.geometry);
        for j in from.max(1)..to {
            let table = &self.integrated[j - 1];
            for ((o, c), m) in out.coeffs_mut().iter_mut().zip(spectra[j - 1].coeffs()).zip(table) {
                *o += c * m;
            }
        }
        out
    }
}

/// `I_{s,t}(u)` for grid times `s <= t`.
pub fn integrated_drift(u: &DriftPath, s: Scale, t: Scale) -> Result<RealField> {
    let (is, it) = (u.grid.index_of(s)?, u.grid.index_of(t)?);
    if it > is {
        return Err(Error::Domain(format!("need s <= t, got s = {s}, t = {t}")));
    }
    let geom = *u.fields.first().map(|f| f.geometry()).ok_or_else(|| {
        Error::InvalidGrid("grid has no interior intervals".into())
    })?;
    let ops = DriftOperators::new(&geom, &u.grid);
    let spectra: Vec<SpectralField> = u.fields.iter().map(forward_fft).collect();
    inverse_fft(&ops.integrate_spectral(&spectra, it, is))
}

/// `E[v0_cut(Y + I_{0,inf}(u))] + action / 2` over `batch` fresh GFF samples.
pub fn bd_objective(u: &DriftPath, cfg: &FlowConfig, batch: usize, seed: u64) -> Result<Estimate> {
    if batch < 2 {
        return Err(Error::Config(format!("batch must be >= 2, got {batch}")));
    }
    let shift = if u.fields.is_empty() {
        RealField::zeros(cfg.geometry)
    } else {
        integrated_drift(u, Scale::Finite(0.0), Scale::Infinite)?
    };
    let half_action = 0.5 * u.action();
    let sampler = GaussianSampler::for_scale(cfg.geometry, Scale::Infinite);
    let values: Vec<f64> = (0..batch)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                &[Label::Str("bd-objective"), Label::from(b)],
            ));
            let y = sampler.sample(&mut rng);
            v0_cut(&y.add(&shift), &cfg.polynomial) + half_action
        })
        .collect();
    Ok(values.iter().copied().collect::<RunningMoments>().estimate())
}

/// `-log E[exp(-v0_cut(Y))]` by log-mean-exp over `batch` GFF samples, with
/// the standard deviation of 200 bootstrap replicates as its error.
pub fn reference_log_laplace(cfg: &FlowConfig, batch: usize, seed: u64) -> Result<Estimate> {
    if batch < 2 {
        return Err(Error::Config(format!("batch must be >= 2, got {batch}")));
    }
    let sampler = GaussianSampler::for_scale(cfg.geometry, Scale::Infinite);
    let neg: Vec<f64> = (0..batch)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                &[Label::Str("reference"), Label::from(b)],
            ));
            -v0_cut(&sampler.sample(&mut rng), &cfg.polynomial)
        })
        .collect();
    let value = -log_mean_exp(&neg);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[Label::Str("reference-bootstrap")]));
    let mut reps = Vec::with_capacity(200);
    for _ in 0..200 {
        let resample: Vec<f64> = (0..batch)
            .map(|_| neg[rand::Rng::gen_range(&mut rng, 0..batch)])
            .collect();
        reps.push(-log_mean_exp(&resample));
    }
    let se = reps.iter().copied().collect::<RunningMoments>().variance().sqrt();
    Ok(Estimate::new(value, se))
}

/// `1/2 sum_k [log(1 + 2 a2 c(k)) - 2 a2 c(k)]`, the exact value of
/// `-log E exp(-a2 int :phi^2:)` under the lattice GFF.
pub fn quadratic_log_laplace(geom: &LatticeGeometry, a2: f64) -> f64 {
    covariance_table(geom, Scale::Infinite)
        .into_iter()
        .map(|c| 0.5 * ((2.0 * a2 * c).ln_1p() - 2.0 * a2 * c))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BdReport {
    pub f_value: Estimate,
    pub reference_log_laplace: Estimate,
    /// `f_value - reference_log_laplace`, errors combined in quadrature.
    pub gap: Estimate,
}

impl BdReport {
    pub fn new(f_value: Estimate, reference: Estimate) -> Self {
        Self {
            f_value,
            reference_log_laplace: reference,
            gap: Estimate::new(f_value.mean - reference.mean, f_value.se.hypot(reference.se)),
        }
    }
}

/// Stochastic gradient descent settings for open-loop drifts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdParams {
    pub steps: usize,
    pub rate: f64,
    pub batch: usize,
    /// Batch size of the final objective and reference evaluations.
    pub eval_batch: usize,
}

#[derive(Debug, Clone)]
pub struct OpenLoopResult {
    pub drift: DriftPath,
    pub report: BdReport,
    /// Batch objective per SGD step.
    pub trace: Vec<f64>,
}

/// Minimize the objective over deterministic drifts.
///
/// Descent uses the gradient in the `L^2(dt)` metric,
/// `u_j + (Q_j / dt_j) E[grad v0_cut(Y + I(u))]`, estimated pathwise on a
/// fresh batch each step.
pub fn minimize_open_loop(cfg: &FlowConfig, sgd: &SgdParams, seed: u64) -> Result<OpenLoopResult> {
    if sgd.steps == 0 || !(sgd.rate > 0.0) || sgd.batch < 2 || sgd.eval_batch < 2 {
        return Err(Error::Config(
            "SGD needs steps > 0, rate > 0 and batch sizes >= 2".into(),
        ));
    }
    let geom = cfg.geometry;
    let ops = DriftOperators::new(&geom, &cfg.grid);
    let k = ops.integrated.len();
    let sites = geom.sites();
    let eps2 = geom.epsilon().powi(2);
    let sampler = GaussianSampler::for_scale(geom, Scale::Infinite);
    let mut spectra: Vec<SpectralField> = vec![SpectralField::zeros(geom); k];
    let mut trace = Vec::with_capacity(sgd.steps);
    let mut initial = None;
    for step in 0..sgd.steps {
        let shift = inverse_fft(&ops.integrate_spectral(&spectra, 0, k + 1))?;
        let half_action: f64 = 0.5
            * spectra
                .iter()
                .zip(&ops.widths)
                .map(|(s, w)| s.energy() * w)
                .sum::<f64>();
        let step_seed = derive_seed(seed, &[Label::Str("sgd"), Label::from(step)]);
        let (sum_grad, sum_value) = (0..sgd.batch)
            .into_par_iter()
            .map(|b| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(step_seed, &[Label::from(b)]));
                let y = sampler.sample(&mut rng).add(&shift);
                let mut grad = vec![0.0; sites];
                let (_, cut) = cfg.polynomial.energy_and_gradient(y.values(), eps2, &mut grad);
                (grad, cut)
            })
            .reduce(
                || (vec![0.0; sites], 0.0),
                |(mut ga, va), (gb, vb)| {
                    for (a, b) in ga.iter_mut().zip(&gb) {
                        *a += b;
                    }
                    (ga, va + vb)
                },
            );
        let objective = sum_value / sgd.batch as f64 + half_action;
        if !objective.is_finite() {
            return Err(Error::Divergence {
                step,
                objective,
                initial: initial.unwrap_or(f64::NAN),
            });
        }
        let init = *initial.get_or_insert(objective);
        if objective - init > 10.0 * init.abs().max(1.0) {
            return Err(Error::Divergence {
                step,
                objective,
                initial: init,
            });
        }
        trace.push(objective);
        let mean_grad = RealField::from_parts(
            geom,
            sum_grad.iter().map(|g| g / sgd.batch as f64).collect(),
        );
        let g_hat = forward_fft(&mean_grad);
        for (j, spec) in spectra.iter_mut().enumerate() {
            let table = &ops.integrated[j];
            let width = ops.widths[j];
            for ((c, g), q) in spec.coeffs_mut().iter_mut().zip(g_hat.coeffs()).zip(table) {
                *c = *c * (1.0 - sgd.rate) - g * (sgd.rate * q / width);
            }
        }
    }
    let fields = spectra
        .iter()
        .map(inverse_fft)
        .collect::<Result<Vec<_>>>()?;
    let drift = DriftPath::new(cfg.grid.clone(), fields)?;
    let f_value = bd_objective(&drift, cfg, sgd.eval_batch, derive_seed(seed, &[Label::Str("eval")]))?;
    let reference = reference_log_laplace(cfg, sgd.eval_batch, derive_seed(seed, &[Label::Str("reference")]))?;
    Ok(OpenLoopResult {
        drift,
        report: BdReport::new(f_value, reference),
        trace,
    })
}

/// Feedback drift `u_j = -q_{t_j} grad v_{t_j}(Phi^P_{t_j})` of a coupling sample.
pub fn feedback_drift(sample: &CouplingSample) -> Result<DriftPath> {
    let geom = *sample.phi_p[0].geometry();
    let ops = geom.operator_table();
    let k = sample.grid.len().saturating_sub(2);
    let fields = (1..=k)
        .map(|j| {
            let t = sample.grid.time(j);
            let q: Vec<f64> = ops.iter().map(|&a| -q_from_operator(a, t)).collect();
            crate::spectral::apply_multiplier(&sample.gradients[j], &q)
        })
        .collect();
    DriftPath::new(sample.grid.clone(), fields)
}

/// Realized cost `v0_cut(Y_inf + I_{0,inf}(u)) + action / 2` of the feedback
/// drift along the replica's own GFF path.
pub fn feedback_cost(sample: &CouplingSample, cfg: &FlowConfig) -> Result<f64> {
    let u = feedback_drift(sample)?;
    let y = &sample.phi_gff[sample.phi_gff.len() - 1];
    let shift = if u.fields.is_empty() {
        RealField::zeros(cfg.geometry)
    } else {
        integrated_drift(&u, Scale::Finite(0.0), Scale::Infinite)?
    };
    Ok(v0_cut(&y.add(&shift), &cfg.polynomial) + 0.5 * u.action())
}

/// Average realized feedback cost over `replicas` flow runs, against the
/// reference from an independent batch of the same size.
pub fn feedback_objective(cfg: &FlowConfig, replicas: usize, seed: u64) -> Result<BdReport> {
    if replicas < 2 {
        return Err(Error::Config(format!("replicas must be >= 2, got {replicas}")));
    }
    let mut flow_cfg = cfg.clone();
    flow_cfg.seed = derive_seed(seed, &[Label::Str("feedback")]);
    let costs = map_replicas(&flow_cfg, 0..replicas, |_, s| feedback_cost(&s, cfg))?
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let f_value = costs.iter().copied().collect::<RunningMoments>().estimate();
    let reference = reference_log_laplace(cfg, replicas, derive_seed(seed, &[Label::Str("reference")]))?;
    Ok(BdReport::new(f_value, reference))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wick::WickPolynomial;

    fn setup(coeffs: Vec<f64>, cutoff: f64) -> FlowConfig {
        let g = LatticeGeometry::new(8, 1.0).unwrap();
        let p = WickPolynomial::for_geometry(coeffs, &g, cutoff).unwrap();
        let grid = ScaleGrid::auto(&g, 0.7).unwrap();
        FlowConfig::new(g, p, grid, 32, 3).unwrap()
    }

    fn random_drift(cfg: &FlowConfig, seed: u64, scale: f64) -> DriftPath {
        let k = cfg.grid.len() - 2;
        let sampler = GaussianSampler::new(cfg.geometry, &vec![1.0; cfg.geometry.sites()]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fields = (0..k).map(|_| sampler.sample(&mut rng).scale(scale)).collect();
        DriftPath::new(cfg.grid.clone(), fields).unwrap()
    }

    #[test]
    fn integrated_q_matches_quadrature() {
        for a in [1.0, 3.7, 250.0] {
            let (lo, hi) = (0.2, 1.3);
            let n = 10_000;
            let h = (hi - lo) / n as f64;
            // Composite Simpson.
            let f = |t: f64| 1.0 / (t * a + 1.0);
            let mut s = f(lo) + f(hi);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * f(lo + i as f64 * h);
            }
            let quad = s * h / 3.0;
            let exact = integrated_q(a, Scale::Finite(hi), Scale::Finite(lo));
            assert!((quad - exact).abs() < 1e-8, "{a}: {quad} {exact}");
        }
    }

    #[test]
    fn integrated_drift_zero_and_additive() {
        let cfg = setup(vec![0.0, 0.1], 1e9);
        let zero = DriftPath::zeros(&cfg.geometry, &cfg.grid);
        let i0 = integrated_drift(&zero, Scale::Finite(0.0), Scale::Infinite).unwrap();
        assert!(i0.values().iter().all(|&v| v == 0.0));
        let u = random_drift(&cfg, 1, 1.0);
        let times = cfg.grid.times();
        let (s, t, r) = (times[times.len() - 5], times[20], times[3]);
        let a = integrated_drift(&u, s, t).unwrap();
        let b = integrated_drift(&u, t, r).unwrap();
        let c = integrated_drift(&u, s, r).unwrap();
        for ((x, y), z) in a.values().iter().zip(b.values()).zip(c.values()) {
            assert!((x + y - z).abs() < 1e-12);
        }
        assert!(integrated_drift(&u, r, s).is_err());
        assert!(integrated_drift(&u, Scale::Finite(0.123), r).is_err());
    }

    #[test]
    fn constant_drift_single_interval() {
        let cfg = setup(vec![0.0, 0.1], 1e9);
        let k = cfg.grid.len() - 2;
        let j = 10;
        let mut fields = vec![RealField::zeros(cfg.geometry); k];
        fields[j - 1] = RealField::constant(cfg.geometry, 2.0);
        let u = DriftPath::new(cfg.grid.clone(), fields).unwrap();
        let i = integrated_drift(&u, Scale::Finite(0.0), Scale::Infinite).unwrap();
        let expect = 2.0 * integrated_q(cfg.geometry.mass2(), cfg.grid.time(j), cfg.grid.time(j + 1));
        assert!(i.values().iter().all(|v| (v - expect).abs() < 1e-12));
    }

    #[test]
    fn linearity_in_drift() {
        let cfg = setup(vec![0.0, 0.1], 1e9);
        let u = random_drift(&cfg, 2, 1.0);
        let v = random_drift(&cfg, 3, 0.5);
        let sum = DriftPath::new(
            cfg.grid.clone(),
            u.fields().iter().zip(v.fields()).map(|(a, b)| a.add(&b.scale(-2.0))).collect(),
        )
        .unwrap();
        let (s, t) = (Scale::Finite(0.0), Scale::Infinite);
        let lhs = integrated_drift(&sum, s, t).unwrap();
        let rhs = integrated_drift(&u, s, t).unwrap().sub(&integrated_drift(&v, s, t).unwrap().scale(2.0));
        for (a, b) in lhs.values().iter().zip(rhs.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_drift_objective_is_mean_energy() {
        let cfg = setup(vec![0.0, 0.05, 0.0, 0.05], 1e3);
        let zero = DriftPath::zeros(&cfg.geometry, &cfg.grid);
        let est = bd_objective(&zero, &cfg, 2000, 5).unwrap();
        let direct: RunningMoments = (0..2000u64)
            .map(|r| v0_cut(&crate::gff::sample_gff(&cfg.geometry, 10_000 + r), &cfg.polynomial))
            .collect();
        assert!(est.z_score(&direct.estimate()) < 3.0);
    }

    #[test]
    fn free_field_optimizer_returns_zero_action() {
        let cfg = setup(vec![], 10.0);
        let sgd = SgdParams {
            steps: 40,
            rate: 0.5,
            batch: 4,
            eval_batch: 8,
        };
        let res = minimize_open_loop(&cfg, &sgd, 1).unwrap();
        assert!(res.drift.action() <= 1e-6);
        assert_eq!(res.report.f_value.mean, 0.0);
        assert_eq!(res.report.reference_log_laplace.mean, 0.0);
    }

    #[test]
    fn quadratic_reference_closed_form() {
        let g = LatticeGeometry::new(8, 1.0).unwrap();
        // Independent per-mode evaluation from the operator values.
        let expect: f64 = g
            .operator_table()
            .iter()
            .map(|a| {
                let c = 1.0 / a;
                0.5 * ((1.0 + 0.2 * c).ln() - 0.2 * c)
            })
            .sum();
        assert!((quadratic_log_laplace(&g, 0.1) - expect).abs() < 1e-14);
        assert!(quadratic_log_laplace(&g, 0.1) < 0.0);
    }

    #[test]
    fn feedback_of_free_field_is_zero() {
        let cfg = setup(vec![], 10.0);
        let rep = feedback_objective(&cfg, 4, 2).unwrap();
        assert_eq!(rep.f_value.mean, 0.0);
        assert_eq!(rep.reference_log_laplace.mean, 0.0);
        assert_eq!(rep.gap.mean, 0.0);
    }
}
