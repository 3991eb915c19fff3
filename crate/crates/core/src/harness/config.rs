//! Run configuration: a TOML file with nested tables, CLI overrides on top,
//! validated and resolved into the objects the samplers take.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::gff::{auto_t_max, auto_t_min, GaussianSampler, ScaleGrid};
use crate::mcmc::McmcConfig;
use crate::seed::{derive_seed, Label};
use crate::spectral::{variance_c_eps, LatticeGeometry, Scale};
use crate::stats::quantile;
use crate::variational::SgdParams;
use crate::wick::{v0, WickPolynomial};

/// Pilot batch size for the automatic energy cut-off.
pub const CUTOFF_PILOT: usize = 1000;

/// A number, or one of the words `auto` / `inf` where allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Setting {
    Auto,
    Infinite,
    Value(f64),
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" => Ok(Setting::Auto),
            "inf" => Ok(Setting::Infinite),
            other => other
                .parse::<f64>()
                .map(Setting::Value)
                .map_err(|_| Error::Config(format!("expected a number, \"auto\" or \"inf\", got {other:?}"))),
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setting::Auto => f.write_str("auto"),
            Setting::Infinite => f.write_str("inf"),
            Setting::Value(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for Setting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Setting::Value(v) => s.serialize_f64(*v),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Setting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct SettingVisitor;
        impl Visitor<'_> for SettingVisitor {
            type Value = Setting;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number, \"auto\" or \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Setting, E> {
                Ok(Setting::Value(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Setting, E> {
                Ok(Setting::Value(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Setting, E> {
                Ok(Setting::Value(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Setting, E> {
                v.parse().map_err(E::custom)
            }
        }
        d.deserialize_any(SettingVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n: usize,
    pub mass2: f64,
    /// Coefficients `a_1, ..., a_N` of the Wick-ordered interaction.
    pub poly: Vec<f64>,
    pub cutoff_e: Setting,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n: 8,
            mass2: 1.0,
            poly: vec![0.0, 0.0, 0.0, 0.1],
            cutoff_e: Setting::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub rho: f64,
    pub tmax: Setting,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            rho: 0.7,
            tmax: Setting::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Polchinski,
    Mcmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcSettings {
    pub step: f64,
    pub burn_in: usize,
    pub thin: usize,
    /// Retained samples per chain; one chain per replica.
    pub samples: usize,
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self {
            step: 0.5,
            burn_in: 2000,
            thin: 10,
            samples: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub method: Method,
    pub replicas: usize,
    pub mc_inner: usize,
    pub common_random_numbers: bool,
    /// Also dump the full scale path of each replica.
    pub write_paths: bool,
    pub mcmc: McmcSettings,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            method: Method::Polchinski,
            replicas: 100,
            mc_inner: 64,
            common_random_numbers: false,
            write_paths: false,
            mcmc: McmcSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub alphas: Vec<f64>,
    pub moment_exponents: Vec<f64>,
    pub extremes: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            alphas: vec![1.0],
            moment_exponents: vec![2.0],
            extremes: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum VariationalMode {
    OpenLoop,
    Feedback,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariationalConfig {
    pub mode: VariationalMode,
    pub steps: usize,
    pub rate: f64,
    pub batch: usize,
    pub eval_batch: usize,
}

impl Default for VariationalConfig {
    fn default() -> Self {
        Self {
            mode: VariationalMode::Both,
            steps: 200,
            rate: 0.3,
            batch: 64,
            eval_batch: 4000,
        }
    }
}

/// Besov parameters `(p, q, alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BesovSpec {
    pub p: f64,
    pub q: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormsConfig {
    pub sobolev: Vec<f64>,
    pub besov: Vec<BesovSpec>,
    pub holder: Vec<f64>,
}

impl Default for NormsConfig {
    fn default() -> Self {
        Self {
            sobolev: vec![-0.5, 0.0, 1.0],
            besov: vec![BesovSpec {
                p: 2.0,
                q: 2.0,
                alpha: -0.5,
            }],
            holder: vec![0.25],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub sampler: SamplerConfig,
    pub analysis: AnalysisConfig,
    pub variational: VariationalConfig,
    pub norms: NormsConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            grid: GridConfig::default(),
            sampler: SamplerConfig::default(),
            analysis: AnalysisConfig::default(),
            variational: VariationalConfig::default(),
            norms: NormsConfig::default(),
            seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Check everything that can be checked without sampling.
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        LatticeGeometry::new(m.n, m.mass2)?;
        if let Setting::Value(e) = m.cutoff_e {
            if !(e > 0.0) {
                return Err(Error::Config(format!("cutoff_e must be positive, got {e}")));
            }
        }
        WickPolynomial::new(m.poly.clone(), 1.0, f64::INFINITY)?;
        if !(self.grid.rho > 0.0 && self.grid.rho < 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1), got {}", self.grid.rho)));
        }
        match self.grid.tmax {
            Setting::Value(t) if !(t > 0.0 && t.is_finite()) => {
                return Err(Error::Config(format!("tmax must be positive, got {t}")));
            }
            Setting::Infinite => return Err(Error::Config("tmax must be finite or \"auto\"".into())),
            _ => {}
        }
        let s = &self.sampler;
        if s.replicas == 0 {
            return Err(Error::Config("replicas must be >= 1".into()));
        }
        if s.mc_inner < 2 {
            return Err(Error::Config(format!("mc_inner must be >= 2, got {}", s.mc_inner)));
        }
        if !(s.mcmc.step > 0.0) || s.mcmc.thin == 0 || s.mcmc.samples == 0 {
            return Err(Error::Config("mcmc needs step > 0, thin >= 1, samples >= 1".into()));
        }
        if self.analysis.alphas.iter().chain(&self.analysis.moment_exponents).any(|x| !x.is_finite())
            || self.analysis.moment_exponents.iter().any(|&r| r <= 0.0)
        {
            return Err(Error::Config("analysis exponents must be finite and positive".into()));
        }
        let v = &self.variational;
        if v.steps == 0 || !(v.rate > 0.0) || v.batch < 2 || v.eval_batch < 2 {
            return Err(Error::Config(
                "variational needs steps > 0, rate > 0 and batch sizes >= 2".into(),
            ));
        }
        for b in &self.norms.besov {
            if !(b.p >= 1.0 && b.q >= 1.0) {
                return Err(Error::Config(format!("Besov p, q must be >= 1, got {b:?}")));
            }
        }
        if self.norms.holder.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::Config("Holder exponents must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Validate and resolve automatic defaults.
    pub fn resolve(&self) -> Result<Resolved> {
        self.validate()?;
        let geometry = LatticeGeometry::new(self.model.n, self.model.mass2)?;
        let c_eps = variance_c_eps(&geometry);
        let t_max = match self.grid.tmax {
            Setting::Value(t) => t,
            _ => auto_t_max(&geometry),
        };
        let t_min = auto_t_min(&geometry).min(t_max);
        let grid = ScaleGrid::geometric(t_max, self.grid.rho, t_min)?;
        let bare = WickPolynomial::for_geometry(self.model.poly.clone(), &geometry, f64::INFINITY)?;
        let cutoff_e = match self.model.cutoff_e {
            Setting::Value(e) => e,
            Setting::Infinite => f64::INFINITY,
            Setting::Auto => auto_cutoff(&geometry, &bare, self.seed),
        };
        let polynomial = bare.with_cutoff(cutoff_e)?;
        Ok(Resolved {
            geometry,
            polynomial,
            grid,
            c_eps,
            t_max,
            t_min,
            cutoff_e,
        })
    }
}

/// `10 max(q_0.999(v0), 1)` over a pilot batch of GFF samples.
pub fn auto_cutoff(geometry: &LatticeGeometry, bare: &WickPolynomial, seed: u64) -> f64 {
    let sampler = GaussianSampler::for_scale(*geometry, Scale::Infinite);
    let values: Vec<f64> = (0..CUTOFF_PILOT)
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                &[Label::Str("pilot-cutoff"), Label::from(b)],
            ));
            v0(&sampler.sample(&mut rng), bare)
        })
        .collect();
    10.0 * quantile(&values, 0.999).max(1.0)
}

/// Objects built from a validated configuration.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub geometry: LatticeGeometry,
    pub polynomial: WickPolynomial,
    pub grid: ScaleGrid,
    pub c_eps: f64,
    pub t_max: f64,
    pub t_min: f64,
    pub cutoff_e: f64,
}

impl Resolved {
    pub fn flow_config(&self, cfg: &RunConfig) -> Result<FlowConfig> {
        if !self.cutoff_e.is_finite() {
            return Err(Error::Config("the flow needs a finite cutoff_e".into()));
        }
        Ok(FlowConfig::new(
            self.geometry,
            self.polynomial.clone(),
            self.grid.clone(),
            cfg.sampler.mc_inner,
            cfg.seed,
        )?
        .with_common_random_numbers(cfg.sampler.common_random_numbers))
    }

    /// MCMC settings for chain `r`.
    pub fn mcmc_config(&self, cfg: &RunConfig, r: usize) -> Result<McmcConfig> {
        let m = &cfg.sampler.mcmc;
        McmcConfig::new(
            self.geometry,
            self.polynomial.clone(),
            m.step,
            m.burn_in,
            m.thin,
            m.samples,
            derive_seed(cfg.seed, &[Label::Str("chain"), Label::from(r)]),
        )
    }

    pub fn sgd(&self, cfg: &RunConfig) -> SgdParams {
        let v = &cfg.variational;
        SgdParams {
            steps: v.steps,
            rate: v.rate,
            batch: v.batch,
            eval_batch: v.eval_batch,
        }
    }
}
