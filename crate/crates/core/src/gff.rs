//! Exact spectral sampling of the massive lattice GFF and its Pauli-Villars
//! scale decomposition.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{self, Plan2d};
use crate::seed::{derive_rng, Label};
use crate::spectral::{
    covariance_from_operator, covariance_increment, LatticeGeometry, RealField, Scale,
};

/// Relative tail mass used for the automatic scale-grid endpoints.
pub const TAIL_FRACTION: f64 = 1e-4;

/// Draws centered Gaussian fields with a prescribed per-mode variance
/// `E|f^(k)|^2 = var(k)`.
///
/// Modes are visited in storage order; a self-conjugate mode consumes one
/// normal draw and a conjugate pair consumes two, so the stream layout is
/// fixed by the geometry alone.
pub struct GaussianSampler {
    geometry: LatticeGeometry,
    amplitude: Vec<f64>,
    conjugate: Vec<usize>,
    plan: Arc<Plan2d>,
}

impl GaussianSampler {
    pub fn new(geometry: LatticeGeometry, variances: &[f64]) -> Self {
        assert_eq!(variances.len(), geometry.sites());
        Self {
            geometry,
            amplitude: variances.iter().map(|v| v.max(0.0).sqrt()).collect(),
            conjugate: (0..geometry.sites())
                .map(|i| geometry.conjugate_position(i))
                .collect(),
            plan: fft::plan(geometry.n()),
        }
    }

    /// Sampler for the covariance `c_t`.
    pub fn for_scale(geometry: LatticeGeometry, t: Scale) -> Self {
        let variances: Vec<f64> = geometry
            .operator_table()
            .into_iter()
            .map(|a| covariance_from_operator(a, t))
            .collect();
        Self::new(geometry, &variances)
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    fn fill_spectrum<R: Rng + ?Sized>(&self, rng: &mut R, data: &mut [Complex64], rotate: bool) {
        let half = std::f64::consts::FRAC_1_SQRT_2;
        for idx in 0..data.len() {
            let conj = self.conjugate[idx];
            if conj < idx {
                continue;
            }
            let s = self.amplitude[idx];
            if conj == idx {
                let z: f64 = rng.sample(StandardNormal);
                let c = Complex64::new(s * z, 0.0);
                data[idx] += if rotate { c * Complex64::i() } else { c };
            } else {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                let c = Complex64::new(a, b) * (s * half);
                if rotate {
                    data[idx] += c * Complex64::i();
                    data[conj] += c.conj() * Complex64::i();
                } else {
                    data[idx] += c;
                    data[conj] += c.conj();
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RealField {
        let mut data = vec![Complex64::new(0.0, 0.0); self.geometry.sites()];
        self.fill_spectrum(rng, &mut data, false);
        self.plan.inverse(&mut data);
        RealField::from_parts(self.geometry, data.iter().map(|c| c.re).collect())
    }

    /// Two independent fields from one complex transform: the spectrum
    /// `A^ + i B^` inverts to `A + i B`.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (RealField, RealField) {
        let mut data = vec![Complex64::new(0.0, 0.0); self.geometry.sites()];
        self.fill_spectrum(rng, &mut data, false);
        self.fill_spectrum(rng, &mut data, true);
        self.plan.inverse(&mut data);
        (
            RealField::from_parts(self.geometry, data.iter().map(|c| c.re).collect()),
            RealField::from_parts(self.geometry, data.iter().map(|c| c.im).collect()),
        )
    }
}

/// Massive GFF with covariance `(-Laplacian + m^2)^-1`, deterministic in `seed`.
pub fn sample_gff(geom: &LatticeGeometry, seed: u64) -> RealField {
    let mut rng = derive_rng(seed, &[Label::Str("gff")]);
    GaussianSampler::for_scale(*geom, Scale::Infinite).sample(&mut rng)
}

/// Strictly decreasing scale times `inf > t_1 > ... > t_{K-1} > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleGrid {
    times: Vec<Scale>,
}

impl ScaleGrid {
    pub fn new(times: Vec<Scale>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidGrid("need at least the endpoints inf and 0".into()));
        }
        if times[0] != Scale::Infinite {
            return Err(Error::InvalidGrid("first time must be inf".into()));
        }
        if times[times.len() - 1] != Scale::Finite(0.0) {
            return Err(Error::InvalidGrid("last time must be 0".into()));
        }
        let interior = &times[1..times.len() - 1];
        let mut prev = f64::INFINITY;
        for t in interior {
            match t {
                Scale::Finite(v) if v.is_finite() && *v > 0.0 && *v < prev => prev = *v,
                _ => {
                    return Err(Error::InvalidGrid(format!(
                        "interior times must be finite, positive and strictly decreasing (at {t})"
                    )))
                }
            }
        }
        Ok(Self { times })
    }

    /// Geometric grid `t_max, rho t_max, ...` down to the last time `>= t_min`.
    pub fn geometric(t_max: f64, rho: f64, t_min: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidGrid(format!("rho must lie in (0,1), got {rho}")));
        }
        if !(t_max.is_finite() && t_min > 0.0 && t_max >= t_min) {
            return Err(Error::InvalidGrid(format!(
                "need 0 < t_min <= t_max < inf, got t_min = {t_min}, t_max = {t_max}"
            )));
        }
        let mut times = vec![Scale::Infinite];
        let mut t = t_max;
        let mut i = 0;
        while t >= t_min {
            times.push(Scale::Finite(t));
            i += 1;
            t = t_max * rho.powi(i);
        }
        times.push(Scale::Finite(0.0));
        Self::new(times)
    }

    /// Geometric grid with automatic endpoints from the tail rules.
    pub fn auto(geom: &LatticeGeometry, rho: f64) -> Result<Self> {
        Self::geometric(auto_t_max(geom), rho, auto_t_min(geom))
    }

    pub fn times(&self) -> &[Scale] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of intervals `[t_{j+1}, t_j]`.
    pub fn intervals(&self) -> usize {
        self.times.len() - 1
    }

    pub fn time(&self, j: usize) -> Scale {
        self.times[j]
    }

    pub fn index_of(&self, t: Scale) -> Result<usize> {
        self.times
            .iter()
            .position(|s| *s == t)
            .ok_or_else(|| Error::GridTimeNotFound(t.to_string()))
    }
}

fn bisect_log(lo: f64, hi: f64, mut below: impl FnMut(f64) -> bool) -> f64 {
    // Returns the boundary point between `below` (at lo) and `!below` (at hi).
    let (mut lo, mut hi) = (lo.ln(), hi.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if below(mid.exp()) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    hi.exp()
}

/// Smallest `T` with `sum_k (c_inf - c_T)(k) <= TAIL_FRACTION * sum_k c_inf(k)`.
pub fn auto_t_max(geom: &LatticeGeometry) -> f64 {
    let ops = geom.operator_table();
    let total: f64 = ops.iter().map(|a| 1.0 / a).sum();
    let tail = |t: f64| -> f64 {
        ops.iter()
            .map(|&a| covariance_increment(a, Scale::Infinite, Scale::Finite(t)))
            .sum()
    };
    bisect_log(1e-12, 1e18, |t| tail(t) > TAIL_FRACTION * total)
}

/// Largest `t` with `sum_k c_t(k) <= TAIL_FRACTION * sum_k c_inf(k)`.
pub fn auto_t_min(geom: &LatticeGeometry) -> f64 {
    let ops = geom.operator_table();
    let total: f64 = ops.iter().map(|a| 1.0 / a).sum();
    let head = |t: f64| -> f64 {
        ops.iter()
            .map(|&a| covariance_from_operator(a, Scale::Finite(t)))
            .sum()
    };
    let t = bisect_log(1e-18, 1e18, |t| head(t) <= TAIL_FRACTION * total);
    // Step back inside the admissible set.
    t * (1.0 - 1e-9)
}

/// Per-mode variances of the increment over `[t_{j+1}, t_j]`.
pub fn increment_variances(geom: &LatticeGeometry, grid: &ScaleGrid, j: usize) -> Vec<f64> {
    let (upper, lower) = (grid.time(j), grid.time(j + 1));
    geom.operator_table()
        .into_iter()
        .map(|a| covariance_increment(a, upper, lower))
        .collect()
}

/// Realization of the decomposed GFF on a scale grid.
#[derive(Debug, Clone)]
pub struct GffPath {
    grid: ScaleGrid,
    fields: Vec<RealField>,
    seed: u64,
}

impl GffPath {
    pub fn grid(&self) -> &ScaleGrid {
        &self.grid
    }

    /// Field per grid time; index 0 is `t = inf`.
    pub fn fields(&self) -> &[RealField] {
        &self.fields
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        self.fields[0].geometry()
    }

    pub fn at(&self, t: Scale) -> Result<&RealField> {
        Ok(&self.fields[self.grid.index_of(t)?])
    }

    /// Field at `t = 0`.
    pub fn terminal(&self) -> &RealField {
        &self.fields[self.fields.len() - 1]
    }
}

/// Sum of independent exact increments; increment `j` uses the stream
/// `(seed, "gff-increment", j)`.
pub fn sample_scale_path(geom: &LatticeGeometry, grid: &ScaleGrid, seed: u64) -> GffPath {
    let mut fields = Vec::with_capacity(grid.len());
    let mut current = RealField::zeros(*geom);
    fields.push(current.clone());
    for j in 0..grid.intervals() {
        let sampler = GaussianSampler::new(*geom, &increment_variances(geom, grid, j));
        let mut rng = derive_rng(seed, &[Label::Str("gff-increment"), Label::from(j)]);
        current = current.add(&sampler.sample(&mut rng));
        fields.push(current.clone());
    }
    GffPath {
        grid: grid.clone(),
        fields,
        seed,
    }
}

/// Small-scale field `Y_t = Phi_0 - Phi_t`.
pub fn y_field(path: &GffPath, t: Scale) -> Result<RealField> {
    Ok(path.terminal().sub(path.at(t)?))
}
