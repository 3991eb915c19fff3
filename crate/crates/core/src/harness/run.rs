//! Pipelines behind the command line subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Method, Resolved, RunConfig, VariationalMode};
use super::io::{
    field_files, read_field, read_stats, write_field, write_json_atomic, write_path,
    ResolvedDefaults, RunManifest, RunStatus, StatsWriter,
};
use crate::error::{Error, Result};
use crate::extremes::{cdf_table, gumbel_fit, max_record, mixture_fit, GumbelFit, MixtureFit};
use crate::flow::{
    drift_action, flow_replica, replica_path_seed, CouplingSample, DifferenceAccumulator,
    DifferenceReport,
};
use crate::gff::{sample_gff, sample_scale_path};
use crate::mcmc::mala_chain;
use crate::norms::{besov_norm, holder_norm, sobolev_norm, DyadicPartition, HOLDER_REFINE};
use crate::seed::{derive_seed, Label};
use crate::spectral::RealField;
use crate::stats::{autocorrelation_ess, Estimate, RunningMoments};
use crate::variational::{
    feedback_objective, minimize_open_loop, quadratic_log_laplace, BdReport,
};
use crate::wick::{v0, v0_cut};

/// Replicas computed in parallel before their results are written in order.
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    SampleGff,
    SamplePphi,
    CouplingDiagnostics,
    Variational,
    Extremes { input: PathBuf },
    Norms { input: PathBuf },
    Validate,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SampleGff => "sample-gff",
            Command::SamplePphi => "sample-pphi",
            Command::CouplingDiagnostics => "coupling-diagnostics",
            Command::Variational => "variational",
            Command::Extremes { .. } => "extremes",
            Command::Norms { .. } => "norms",
            Command::Validate => "validate",
        }
    }
}

/// Execute `command`: write an incomplete manifest, run, then mark the
/// manifest complete or aborted.
pub fn run(command: &Command, cfg: &RunConfig) -> Result<()> {
    let resolved = cfg.resolve()?;
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir)?;
    let replicas = match command {
        Command::SampleGff | Command::SamplePphi | Command::CouplingDiagnostics | Command::Validate => {
            cfg.sampler.replicas
        }
        _ => 0,
    };
    let replica_seeds = (0..replicas)
        .map(|r| match (command, cfg.sampler.method) {
            (Command::SamplePphi, Method::Mcmc) => {
                derive_seed(cfg.seed, &[Label::Str("chain"), Label::from(r)])
            }
            _ => replica_path_seed(cfg.seed, r),
        })
        .collect();
    let mut manifest = RunManifest {
        status: RunStatus::Incomplete,
        command: command.name().to_owned(),
        version: env!("CARGO_PKG_VERSION").to_owned(),
        config: cfg.to_toml()?,
        resolved: ResolvedDefaults {
            t_max: resolved.t_max,
            t_min: resolved.t_min,
            grid_len: resolved.grid.len(),
            cutoff_e: resolved.cutoff_e,
            c_eps: resolved.c_eps,
        },
        replica_seeds,
        wall_clock_seconds: 0.0,
        replicas_per_second: 0.0,
        error: None,
    };
    manifest.write(dir)?;
    let start = Instant::now();
    let outcome = match command {
        Command::SampleGff => sample_gff_run(cfg, &resolved),
        Command::SamplePphi => match cfg.sampler.method {
            Method::Polchinski => sample_flow_run(cfg, &resolved),
            Method::Mcmc => sample_mcmc_run(cfg, &resolved),
        },
        Command::CouplingDiagnostics => coupling_run(cfg, &resolved),
        Command::Variational => variational_run(cfg, &resolved),
        Command::Extremes { input } => extremes_run(cfg, input),
        Command::Norms { input } => norms_run(cfg, input),
        Command::Validate => validate_run(cfg, &resolved),
    };
    let elapsed = start.elapsed().as_secs_f64();
    manifest.wall_clock_seconds = elapsed;
    manifest.replicas_per_second = if elapsed > 0.0 {
        replicas as f64 / elapsed
    } else {
        0.0
    };
    match outcome {
        Ok(()) => {
            manifest.status = RunStatus::Complete;
            manifest.write(dir)
        }
        Err(e) => {
            manifest.status = RunStatus::Aborted;
            manifest.error = Some(e.to_string());
            manifest.write(dir)?;
            Err(e)
        }
    }
}

/// Per-replica output: named statistics and fields to dump.
struct ReplicaOutput {
    stats: Vec<(&'static str, f64)>,
    fields: Vec<(PathBuf, RealField)>,
}

/// Compute replicas chunk by chunk in parallel and write them in order.
fn stream_replicas(
    cfg: &RunConfig,
    stats: &mut StatsWriter,
    compute: impl Fn(usize) -> Result<ReplicaOutput> + Sync,
) -> Result<()> {
    let total = cfg.sampler.replicas;
    let mut first = 0;
    while first < total {
        let last = (first + CHUNK).min(total);
        let outputs: Vec<Result<ReplicaOutput>> = (first..last).into_par_iter().map(&compute).collect();
        for (r, out) in (first..last).zip(outputs) {
            let out = out?;
            for (name, value) in out.stats {
                stats.write(r, name, value)?;
            }
            for (stem, field) in out.fields {
                write_field(&stem, &field)?;
            }
        }
        first = last;
    }
    Ok(())
}

fn field_stats(f: &RealField, resolved: &Resolved, extremes: bool) -> Result<Vec<(&'static str, f64)>> {
    let mut out = vec![
        ("norm_sq", f.inner(f)),
        ("v0", v0(f, &resolved.polynomial)),
        ("v0_cut", v0_cut(f, &resolved.polynomial)),
        ("max", f.max()),
    ];
    if extremes && resolved.geometry.n() >= 3 {
        let rec = max_record(f)?;
        out.push(("centered_max", rec.centered));
        out.push(("z_statistic", rec.z_statistic.unwrap_or(f64::NAN)));
    }
    Ok(out)
}

fn sample_gff_run(cfg: &RunConfig, resolved: &Resolved) -> Result<()> {
    let dir = &cfg.out_dir;
    let fields_dir = dir.join("fields");
    fs::create_dir_all(&fields_dir)?;
    let mut stats = StatsWriter::create(&dir.join("stats.jsonl"))?;
    stream_replicas(cfg, &mut stats, |r| {
        let seed = replica_path_seed(cfg.seed, r);
        let f = sample_gff(&resolved.geometry, seed);
        if cfg.sampler.write_paths {
            let path = sample_scale_path(&resolved.geometry, &resolved.grid, seed);
            write_path(&dir.join("paths").join(format!("path_{r:06}")), &path)?;
        }
        Ok(ReplicaOutput {
            stats: field_stats(&f, resolved, cfg.analysis.extremes)?,
            fields: vec![(fields_dir.join(format!("gff_{r:06}")), f)],
        })
    })
}

fn sample_flow_run(cfg: &RunConfig, resolved: &Resolved) -> Result<()> {
    let flow = resolved.flow_config(cfg)?;
    let dir = &cfg.out_dir;
    let (phi_dir, delta_dir) = (dir.join("fields"), dir.join("delta"));
    fs::create_dir_all(&phi_dir)?;
    fs::create_dir_all(&delta_dir)?;
    let mut stats = StatsWriter::create(&dir.join("stats.jsonl"))?;
    stream_replicas(cfg, &mut stats, |r| {
        let s = flow_replica(&flow, r)?;
        let phi = s.phi_p_terminal().clone();
        let mut out = field_stats(&phi, resolved, cfg.analysis.extremes)?;
        out.push(("coupling_residual", s.coupling_residual()));
        out.push(("drift_action", drift_action(&s)));
        out.push(("min_ess", s.ess.iter().copied().fold(f64::INFINITY, f64::min)));
        let mut fields = vec![
            (phi_dir.join(format!("phi_{r:06}")), phi),
            (delta_dir.join(format!("delta_{r:06}")), s.phi_delta_terminal().clone()),
        ];
        if cfg.sampler.write_paths {
            let path_dir = dir.join("paths").join(format!("path_{r:06}"));
            fs::create_dir_all(&path_dir)?;
            for (j, f) in s.phi_p.iter().enumerate() {
                fields.push((path_dir.join(format!("scale_{j:03}")), f.clone()));
            }
        }
        Ok(ReplicaOutput { stats: out, fields })
    })
}

fn sample_mcmc_run(cfg: &RunConfig, resolved: &Resolved) -> Result<()> {
    let dir = &cfg.out_dir;
    let phi_dir = dir.join("fields");
    fs::create_dir_all(&phi_dir)?;
    let mut stats = StatsWriter::create(&dir.join("stats.jsonl"))?;
    let total = cfg.sampler.replicas;
    let mut first = 0;
    while first < total {
        let last = (first + CHUNK).min(total);
        let chains: Vec<Result<_>> = (first..last)
            .into_par_iter()
            .map(|r| mala_chain(&resolved.mcmc_config(cfg, r)?))
            .collect();
        for (r, chain) in (first..last).zip(chains) {
            let chain = chain?;
            for (i, f) in chain.samples.iter().enumerate() {
                for (name, value) in field_stats(f, resolved, cfg.analysis.extremes)? {
                    stats.record(&super::io::StatRecord {
                        replica: r,
                        sample: Some(i),
                        statistic: name.to_owned(),
                        value,
                    })?;
                }
            }
            let d = chain.diagnostics;
            stats.write(r, "acceptance_rate", d.acceptance_rate)?;
            stats.write(r, "final_step", d.final_step)?;
            stats.write(r, "ess_norm_sq", d.ess_norm_sq)?;
            stats.write(r, "ess_max", d.ess_max)?;
            if let Some(last_sample) = chain.samples.last() {
                write_field(&phi_dir.join(format!("phi_{r:06}")), last_sample)?;
            }
        }
        first = last;
    }
    Ok(())
}

/// Difference-field report plus cross-covariance checks of the coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub difference: DifferenceReport,
    pub max_coupling_residual: f64,
    pub independence: Vec<IndependenceCheck>,
}

/// Site-averaged covariance of `Y_t = Phi^GFF_0 - Phi^GFF_t` and `Phi^P_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndependenceCheck {
    pub grid_index: usize,
    pub covariance: Estimate,
}

/// Grid indices at one and two thirds of the interior.
pub fn independence_indices(grid_len: usize) -> [usize; 2] {
    let interior = grid_len.saturating_sub(2).max(1);
    [1 + interior / 3, 1 + 2 * interior / 3]
}

/// Site averages `[<Y Phi>, <Y>, <Phi>]` at grid index `j`; the covariance
/// across replicas is formed from these by [`covariance_estimate`].
pub fn cross_moments(s: &CouplingSample, j: usize) -> [f64; 3] {
    let terminal = &s.phi_gff[s.phi_gff.len() - 1];
    let y = terminal.sub(&s.phi_gff[j]);
    let phi = &s.phi_p[j];
    [y.inner(phi), y.integral(), phi.integral()]
}

/// Covariance estimate from per-replica `[<XY>, <X>, <Y>]` triples.
pub fn covariance_estimate(triples: &[[f64; 3]]) -> Estimate {
    let n = triples.len() as f64;
    let mx = triples.iter().map(|t| t[1]).sum::<f64>() / n;
    let my = triples.iter().map(|t| t[2]).sum::<f64>() / n;
    // Per-replica contributions to the centered cross moment.
    let terms: RunningMoments = triples
        .iter()
        .map(|t| t[0] - mx * t[2] - my * t[1] + mx * my)
        .collect();
    terms.estimate()
}

fn coupling_run(cfg: &RunConfig, resolved: &Resolved) -> Result<()> {
    let flow = resolved.flow_config(cfg)?;
    let dir = &cfg.out_dir;
    let mut stats = StatsWriter::create(&dir.join("stats.jsonl"))?;
    let mut acc = DifferenceAccumulator::new(
        resolved.grid.clone(),
        &cfg.analysis.alphas,
        &cfg.analysis.moment_exponents,
    );
    let picks = independence_indices(resolved.grid.len());
    let mut triples = [Vec::new(), Vec::new()];
    let mut worst_residual: f64 = 0.0;
    let total = cfg.sampler.replicas;
    let mut first = 0;
    while first < total {
        let last = (first + CHUNK).min(total);
        let outs: Vec<Result<_>> = (first..last)
            .into_par_iter()
            .map(|r| {
                let s = flow_replica(&flow, r)?;
                Ok((
                    acc.summarize(&s),
                    s.coupling_residual(),
                    drift_action(&s),
                    picks.map(|j| cross_moments(&s, j)),
                ))
            })
            .collect();
        for (r, out) in (first..last).zip(outs) {
            let (norms, residual, action, cross) = out?;
            acc.push(norms);
            worst_residual = worst_residual.max(residual);
            stats.write(r, "coupling_residual", residual)?;
            stats.write(r, "drift_action", action)?;
            for (k, c) in cross.into_iter().enumerate() {
                triples[k].push(c);
            }
        }
        first = last;
    }
    let report = CouplingReport {
        difference: acc.finish()?,
        max_coupling_residual: worst_residual,
        independence: picks
            .iter()
            .zip(&triples)
            .map(|(&grid_index, t)| IndependenceCheck {
                grid_index,
                covariance: covariance_estimate(t),
            })
            .collect(),
    };
    write_json_atomic(&dir.join("coupling.json"), &report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopReport {
    pub report: BdReport,
    pub action: f64,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub open_loop: Option<OpenLoopReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feedback: Option<BdReport>,
    /// Closed-form value when the interaction is purely quadratic.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadratic_reference: Option<f64>,
}

fn variational_run(cfg: &RunConfig, resolved: &Resolved) -> Result<()> {
    let flow = resolved.flow_config(cfg)?;
    let mode = cfg.variational.mode;
    let open_loop = if matches!(mode, VariationalMode::OpenLoop | VariationalMode::Both) {
        let res = minimize_open_loop(&flow, &resolved.sgd(cfg), derive_seed(cfg.seed, &[Label::Str("open-loop")]))?;
        Some(OpenLoopReport {
            report: res.report,
            action: res.drift.action(),
            trace: res.trace,
        })
    } else {
        None
    };
    let feedback = if matches!(mode, VariationalMode::Feedback | VariationalMode::Both) {
        Some(feedback_objective(
            &flow,
            cfg.sampler.replicas.max(2),
            derive_seed(cfg.seed, &[Label::Str("feedback")]),
        )?)
    } else {
        None
    };
    let poly = &cfg.model.poly;
    let quadratic_reference =
        (poly.len() == 2 && poly[0] == 0.0).then(|| quadratic_log_laplace(&resolved.geometry, poly[1]));
    let report = VariationalReport {
        open_loop,
        feedback,
        quadratic_reference,
    };
    write_json_atomic(&cfg.out_dir.join("variational.json"), &report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremesReport {
    pub samples: usize,
    pub gumbel: GumbelFit,
    pub mixture: MixtureFit,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_z: Option<Estimate>,
}

/// Centered maxima (and Z statistics, when fields are available) from a
/// directory of field files or a JSON Lines statistics file.
pub fn load_maxima(input: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    if input.is_dir() {
        let files = field_files(input)?;
        let records: Vec<_> = files
            .par_iter()
            .map(|p| read_field(p).and_then(|f| max_record(&f)))
            .collect::<Result<_>>()?;
        Ok((
            records.iter().map(|r| r.centered).collect(),
            records.iter().filter_map(|r| r.z_statistic).collect(),
        ))
    } else {
        let recs = read_stats(input)?;
        let pick = |name: &str| {
            recs.iter()
                .filter(|r| r.statistic == name)
                .map(|r| r.value)
                .collect::<Vec<f64>>()
        };
        Ok((pick("centered_max"), pick("z_statistic")))
    }
}

fn extremes_run(cfg: &RunConfig, input: &Path) -> Result<()> {
    let (maxima, zs) = load_maxima(input)?;
    if maxima.is_empty() {
        return Err(Error::EmptyInput(format!("no centered maxima in {}", input.display())));
    }
    let gumbel = gumbel_fit(&maxima)?;
    let report = ExtremesReport {
        samples: maxima.len(),
        gumbel,
        mixture: mixture_fit(&maxima)?,
        mean_z: (!zs.is_empty()).then(|| zs.iter().copied().collect::<RunningMoments>().estimate()),
    };
    write_json_atomic(&cfg.out_dir.join("extremes.json"), &report)?;
    let mut csv = std::io::BufWriter::new(fs::File::create(cfg.out_dir.join("extremes_cdf.csv"))?);
    writeln!(csv, "x,empirical_cdf,fitted_cdf")?;
    for (x, emp, fit) in cdf_table(&maxima, &gumbel) {
        writeln!(csv, "{x},{emp},{fit}")?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormValue {
    pub params: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormsReport {
    /// `params = [alpha]`.
    pub h_alpha: Vec<NormValue>,
    /// `params = [p, q, alpha]`.
    pub besov: Vec<NormValue>,
    /// `params = [alpha]`.
    pub holder: Vec<NormValue>,
}

pub fn norms_report(f: &RealField, cfg: &RunConfig) -> Result<NormsReport> {
    let part = DyadicPartition::new(*f.geometry());
    let n = &cfg.norms;
    Ok(NormsReport {
        h_alpha: n
            .sobolev
            .iter()
            .map(|&a| NormValue {
                params: vec![a],
                value: sobolev_norm(f, a),
            })
            .collect(),
        besov: n
            .besov
            .iter()
            .map(|b| {
                besov_norm(f, b.p, b.q, b.alpha, &part).map(|value| NormValue {
                    params: vec![b.p, b.q, b.alpha],
                    value,
                })
            })
            .collect::<Result<_>>()?,
        holder: n
            .holder
            .iter()
            .map(|&a| {
                holder_norm(f, a, HOLDER_REFINE).map(|value| NormValue {
                    params: vec![a],
                    value,
                })
            })
            .collect::<Result<_>>()?,
    })
}

fn norms_run(cfg: &RunConfig, input: &Path) -> Result<()> {
    let f = read_field(input)?;
    write_json_atomic(&cfg.out_dir.join("norms.json"), &norms_report(&f, cfg)?)
}

/// One observable compared between the flow and the MCMC oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub observable: String,
    pub flow: Estimate,
    pub mcmc: Estimate,
    pub flow_ess: f64,
    pub mcmc_ess: f64,
    pub z: f64,
}

/// Chain-pooled mean with an autocorrelation-corrected error.
pub fn chain_estimate(series: &[Vec<f64>]) -> (Estimate, f64) {
    let mut mean = 0.0;
    let mut var_sum = 0.0;
    let mut ess_total = 0.0;
    for s in series {
        let m: RunningMoments = s.iter().copied().collect();
        let ess = autocorrelation_ess(s).max(1.0);
        mean += m.mean();
        var_sum += m.variance() / ess;
        ess_total += ess;
    }
    let c = series.len() as f64;
    (Estimate::new(mean / c, var_sum.sqrt() / c), ess_total)
}

/// Flow-versus-MCMC table for `E<f, f>`, `E v0` and `E max f`.
pub fn compare_flow_mcmc(cfg: &RunConfig, resolved: &Resolved, chains: usize) -> Result<Vec<ComparisonRow>> {
    let flow = resolved.flow_config(cfg)?;
    let observe = |f: &RealField| [f.inner(f), v0(f, &resolved.polynomial), f.max()];
    let flow_obs: Vec<[f64; 3]> = crate::flow::map_replicas(&flow, 0..cfg.sampler.replicas, |_, s| {
        observe(s.phi_p_terminal())
    })?;
    let chain_obs: Vec<Vec<[f64; 3]>> = (0..chains)
        .into_par_iter()
        .map(|r| {
            let out = mala_chain(&resolved.mcmc_config(cfg, r)?)?;
            Ok(out.samples.iter().map(observe).collect())
        })
        .collect::<Result<_>>()?;
    let names = ["norm_sq", "v0", "max"];
    Ok((0..3)
        .map(|k| {
            let xs: Vec<f64> = flow_obs.iter().map(|o| o[k]).collect();
            let fe = xs.iter().copied().collect::<RunningMoments>().estimate();
            let series: Vec<Vec<f64>> = chain_obs.iter().map(|c| c.iter().map(|o| o[k]).collect()).collect();
            let (me, mess) = chain_estimate(&series);
            ComparisonRow {
                observable: names[k].to_owned(),
                flow: fe,
                mcmc: me,
                flow_ess: xs.len() as f64,
                mcmc_ess: mess,
                z: fe.z_score(&me),
            }
        })
        .collect())
}

fn validate_run(cfg: &RunConfig, resolved: &Resolved) -> Result<()> {
    let rows = compare_flow_mcmc(cfg, resolved, cfg.sampler.replicas.clamp(1, 16))?;
    println!("{:<10} {:>22} {:>22} {:>8}", "observable", "flow", "mcmc", "z");
    for r in &rows {
        println!(
            "{:<10} {:>12.6} ± {:<8.2e} {:>12.6} ± {:<8.2e} {:>8.3}",
            r.observable, r.flow.mean, r.flow.se, r.mcmc.mean, r.mcmc.se, r.z
        );
    }
    write_json_atomic(&cfg.out_dir.join("validate.json"), &rows)
}
