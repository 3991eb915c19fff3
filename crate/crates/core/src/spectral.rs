//! Discrete Fourier analysis on the periodic unit-torus lattice.
//!
//! Conventions: the lattice has `n` sites per side with mesh `eps = 1/n`.
//! Spectra are stored in standard FFT layout; slot `p` along an axis maps to
//! the integer frequency `m = p` for `p <= n/2` and `m = p - n` otherwise, so
//! every axis covers `(-n/2, n/2]` and the wavevector is `k = 2 pi m`.
//!
//! `forward_fft` computes `f^(k) = eps^2 sum_x f(x) e^{-ik.x}` and
//! `inverse_fft` computes `f(x) = sum_k f^(k) e^{ik.x}`.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fft;

/// Square periodic lattice with `n` sites per side and squared mass `mass2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeGeometry {
    n: usize,
    mass2: f64,
}

impl LatticeGeometry {
    pub fn new(n: usize, mass2: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGeometry(format!("n must be >= 2, got {n}")));
        }
        if !(mass2.is_finite() && mass2 > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "mass2 must be finite and > 0, got {mass2}"
            )));
        }
        Ok(Self { n, mass2 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn epsilon(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn mass2(&self) -> f64 {
        self.mass2
    }

    /// Number of lattice sites, `n^2`.
    pub fn sites(&self) -> usize {
        self.n * self.n
    }

    /// Integer frequency of FFT slot `p` along one axis.
    pub fn frequency(&self, p: usize) -> i64 {
        let n = self.n as i64;
        let p = p as i64;
        if 2 * p <= n {
            p
        } else {
            p - n
        }
    }

    /// FFT slot of integer frequency `m`, if `m` lies in `(-n/2, n/2]`.
    pub fn slot(&self, m: i64) -> Option<usize> {
        let n = self.n as i64;
        if 2 * m > n || 2 * m <= -n {
            return None;
        }
        Some(m.rem_euclid(n) as usize)
    }

    /// Dual index stored at flat spectral position `idx`.
    pub fn dual_index(&self, idx: usize) -> DualIndex {
        DualIndex {
            m1: self.frequency(idx / self.n),
            m2: self.frequency(idx % self.n),
        }
    }

    /// Flat spectral position of a dual index.
    pub fn position(&self, k: DualIndex) -> Result<usize> {
        match (self.slot(k.m1), self.slot(k.m2)) {
            (Some(p), Some(q)) => Ok(p * self.n + q),
            _ => Err(Error::OutOfDualSet {
                m1: k.m1,
                m2: k.m2,
                n: self.n,
            }),
        }
    }

    /// Flat position of `-k` (Nyquist frequencies map to themselves).
    pub fn conjugate_position(&self, idx: usize) -> usize {
        let n = self.n;
        let (p, q) = (idx / n, idx % n);
        ((n - p) % n) * n + (n - q) % n
    }

    /// All dual indices in spectral storage order.
    pub fn modes(&self) -> impl Iterator<Item = DualIndex> + '_ {
        (0..self.sites()).map(move |idx| self.dual_index(idx))
    }

    /// `-Laplacian^(k)` for every mode in storage order.
    pub fn laplacian_table(&self) -> Vec<f64> {
        let axis: Vec<f64> = (0..self.n)
            .map(|p| axis_laplacian(self.frequency(p), self.n))
            .collect();
        let mut out = Vec::with_capacity(self.sites());
        for a in &axis {
            for b in &axis {
                out.push(a + b);
            }
        }
        out
    }

    /// `-Laplacian^(k) + m^2` for every mode in storage order.
    pub fn operator_table(&self) -> Vec<f64> {
        self.laplacian_table()
            .into_iter()
            .map(|l| l + self.mass2)
            .collect()
    }
}

fn axis_laplacian(m: i64, n: usize) -> f64 {
    // eps^-2 (2 - 2 cos(eps k)) written as 4 n^2 sin^2(pi m / n) to avoid cancellation.
    let s = (PI * m as f64 / n as f64).sin();
    4.0 * (n * n) as f64 * s * s
}

/// Element `k = 2 pi (m1, m2)` of the dual set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DualIndex {
    pub m1: i64,
    pub m2: i64,
}

impl DualIndex {
    pub fn new(m1: i64, m2: i64) -> Self {
        Self { m1, m2 }
    }

    /// Wavevector components `2 pi m`.
    pub fn wavevector(&self) -> [f64; 2] {
        [2.0 * PI * self.m1 as f64, 2.0 * PI * self.m2 as f64]
    }

    /// Continuum `|k|^2`.
    pub fn norm_sq(&self) -> f64 {
        let [a, b] = self.wavevector();
        a * a + b * b
    }

    /// Max-norm `|k|_inf`.
    pub fn norm_max(&self) -> f64 {
        let [a, b] = self.wavevector();
        a.abs().max(b.abs())
    }
}

/// Scale parameter `t` in `[0, inf]`, with infinity kept symbolic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scale {
    Finite(f64),
    Infinite,
}

impl Scale {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Scale::Infinite)
    }

    /// Numeric value, `f64::INFINITY` for the symbolic endpoint.
    pub fn value(&self) -> f64 {
        match self {
            Scale::Finite(t) => *t,
            Scale::Infinite => f64::INFINITY,
        }
    }

    pub fn from_value(t: f64) -> Self {
        if t == f64::INFINITY {
            Scale::Infinite
        } else {
            Scale::Finite(t)
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scale::Finite(t) => write!(f, "{t}"),
            Scale::Infinite => write!(f, "inf"),
        }
    }
}

impl Serialize for Scale {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Scale::Finite(t) => s.serialize_f64(*t),
            Scale::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Scale {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(t) => Ok(Scale::Finite(t)),
            Raw::Text(s) if s == "inf" => Ok(Scale::Infinite),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got {s:?}"
            ))),
        }
    }
}

/// `-Laplacian^(k)` for a single dual index.
pub fn laplacian_multiplier(k: DualIndex, geom: &LatticeGeometry) -> Result<f64> {
    geom.position(k)?;
    Ok(axis_laplacian(k.m1, geom.n) + axis_laplacian(k.m2, geom.n))
}

/// Covariance multiplier for the operator value `a = -Laplacian^(k) + m^2`.
pub fn covariance_from_operator(a: f64, t: Scale) -> f64 {
    match t {
        Scale::Infinite => 1.0 / a,
        Scale::Finite(t) if t <= 0.0 => 0.0,
        Scale::Finite(t) => t / (t * a + 1.0),
    }
}

/// Square-root-of-derivative multiplier for the operator value `a`.
pub fn q_from_operator(a: f64, t: Scale) -> f64 {
    match t {
        Scale::Infinite => 0.0,
        Scale::Finite(t) => 1.0 / (t * a + 1.0),
    }
}

/// `c_upper^(k) - c_lower^(k)` for `upper >= lower`, in a cancellation-free form.
pub fn covariance_increment(a: f64, upper: Scale, lower: Scale) -> f64 {
    match (upper, lower) {
        (_, Scale::Infinite) => 0.0,
        (Scale::Infinite, Scale::Finite(s)) if s <= 0.0 => 1.0 / a,
        (Scale::Infinite, Scale::Finite(s)) => 1.0 / (a * (s * a + 1.0)),
        (Scale::Finite(t), Scale::Finite(s)) => {
            let s = s.max(0.0);
            let t = t.max(0.0);
            (t - s) / ((t * a + 1.0) * (s * a + 1.0))
        }
    }
}

/// Pauli-Villars covariance `c_t^(k) = 1/(-Laplacian^(k) + m^2 + 1/t)`.
pub fn pv_covariance_multiplier(k: DualIndex, t: Scale, geom: &LatticeGeometry) -> Result<f64> {
    let a = laplacian_multiplier(k, geom)? + geom.mass2;
    Ok(covariance_from_operator(a, t))
}

/// `q_t^(k) = 1/(t(-Laplacian^(k) + m^2) + 1)`, so that `d/dt c_t = q_t^2`.
pub fn q_multiplier(k: DualIndex, t: Scale, geom: &LatticeGeometry) -> Result<f64> {
    let a = laplacian_multiplier(k, geom)? + geom.mass2;
    Ok(q_from_operator(a, t))
}

/// Covariance multipliers `c_t^(k)` for all modes in storage order.
pub fn covariance_table(geom: &LatticeGeometry, t: Scale) -> Vec<f64> {
    geom.operator_table()
        .into_iter()
        .map(|a| covariance_from_operator(a, t))
        .collect()
}

/// Pointwise variance of the massive lattice GFF, `sum_k c_inf^(k)`.
pub fn variance_c_eps(geom: &LatticeGeometry) -> f64 {
    geom.operator_table().iter().map(|a| 1.0 / a).sum()
}

/// Relative deficit `1 - x^-2 (2 - 2 cos x)` of the lattice symbol along one axis.
pub fn laplacian_deficit(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        // Taylor expansion: x^2/12 - x^4/360.
        let x2 = x * x;
        return x2 / 12.0 - x2 * x2 / 360.0;
    }
    let s = (0.5 * x).sin();
    1.0 - 4.0 * s * s / (x * x)
}

/// Real-valued field on the lattice, row-major over sites `(i, j) / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    geometry: LatticeGeometry,
    values: Vec<f64>,
}

impl RealField {
    pub fn new(geometry: LatticeGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.sites() {
            return Err(Error::InvalidField(format!(
                "expected {} values, got {}",
                geometry.sites(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite value at site {i}")));
        }
        Ok(Self { geometry, values })
    }

    /// Internal constructor for values already known to be finite and sized.
    pub(crate) fn from_parts(geometry: LatticeGeometry, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), geometry.sites());
        Self { geometry, values }
    }

    pub fn zeros(geometry: LatticeGeometry) -> Self {
        Self {
            geometry,
            values: vec![0.0; geometry.sites()],
        }
    }

    pub fn constant(geometry: LatticeGeometry, c: f64) -> Self {
        Self {
            geometry,
            values: vec![c; geometry.sites()],
        }
    }

    /// Field `x -> f(x1, x2)` sampled at the lattice sites `x = eps (i, j)`.
    pub fn from_fn(geometry: LatticeGeometry, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let n = geometry.n;
        let eps = geometry.epsilon();
        let values = (0..n * n)
            .map(|idx| f((idx / n) as f64 * eps, (idx % n) as f64 * eps))
            .collect();
        Self::new(geometry, values)
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.geometry.n + j]
    }

    /// Normalized inner product `eps^2 sum_x f(x) g(x)`.
    pub fn inner(&self, other: &RealField) -> f64 {
        let w = self.geometry.epsilon().powi(2);
        w * self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
    }

    /// Normalized lattice integral `eps^2 sum_x f(x)`.
    pub fn integral(&self) -> f64 {
        self.geometry.epsilon().powi(2) * self.values.iter().sum::<f64>()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RealField {
        Self::from_parts(self.geometry, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn add(&self, other: &RealField) -> RealField {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &RealField) -> RealField {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> RealField {
        self.map(|v| c * v)
    }

    fn zip_with(&self, other: &RealField, f: impl Fn(f64, f64) -> f64) -> RealField {
        debug_assert_eq!(self.geometry, other.geometry);
        Self::from_parts(
            self.geometry,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    /// Periodic lattice translation by `(di, dj)` sites.
    pub fn translate(&self, di: usize, dj: usize) -> RealField {
        let n = self.geometry.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[((i + di) % n) * n + (j + dj) % n] = self.values[i * n + j];
            }
        }
        Self::from_parts(self.geometry, out)
    }
}

/// Fourier coefficients in FFT storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    geometry: LatticeGeometry,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn new(geometry: LatticeGeometry, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != geometry.sites() {
            return Err(Error::InvalidField(format!(
                "expected {} coefficients, got {}",
                geometry.sites(),
                coeffs.len()
            )));
        }
        Ok(Self { geometry, coeffs })
    }

    pub fn zeros(geometry: LatticeGeometry) -> Self {
        Self {
            geometry,
            coeffs: vec![Complex64::new(0.0, 0.0); geometry.sites()],
        }
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn coeff(&self, k: DualIndex) -> Result<Complex64> {
        Ok(self.coeffs[self.geometry.position(k)?])
    }

    pub fn set(&mut self, k: DualIndex, value: Complex64) -> Result<()> {
        let idx = self.geometry.position(k)?;
        self.coeffs[idx] = value;
        Ok(())
    }

    /// Multiply every coefficient by a real per-mode table.
    pub fn apply_multiplier(&mut self, table: &[f64]) {
        for (c, m) in self.coeffs.iter_mut().zip(table) {
            *c *= *m;
        }
    }

    /// `sum_k w(k) |f^(k)|^2` for a weight table in storage order.
    pub fn weighted_energy(&self, weights: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .zip(weights)
            .map(|(c, w)| w * c.norm_sqr())
            .sum()
    }

    /// `sum_k |f^(k)|^2`.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// `f^(k) = eps^2 sum_x f(x) e^{-ik.x}`.
pub fn forward_fft(f: &RealField) -> SpectralField {
    let geom = f.geometry;
    let mut data: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft::plan(geom.n).forward(&mut data);
    let w = geom.epsilon().powi(2);
    for c in &mut data {
        *c *= w;
    }
    SpectralField {
        geometry: geom,
        coeffs: data,
    }
}

/// `f(x) = sum_k g^(k) e^{ik.x}`, rejecting spectra whose imaginary residue
/// exceeds `1e-9` of the field norm.
pub fn inverse_fft(g: &SpectralField) -> Result<RealField> {
    let geom = g.geometry;
    let mut data = g.coeffs.clone();
    fft::plan(geom.n).inverse(&mut data);
    let re_norm = data.iter().map(|c| c.re * c.re).sum::<f64>().sqrt();
    let im_norm = data.iter().map(|c| c.im * c.im).sum::<f64>().sqrt();
    if im_norm > 1e-9 * re_norm.max(f64::MIN_POSITIVE) {
        return Err(Error::SymmetryViolation {
            residue: im_norm,
            norm: re_norm,
        });
    }
    let values: Vec<f64> = data.iter().map(|c| c.re).collect();
    RealField::new(geom, values)
}

/// Inverse transform of a spectrum that is Hermitian by construction; the
/// round-off imaginary part is discarded.
fn inverse_hermitian(g: &SpectralField) -> RealField {
    let mut data = g.coeffs.clone();
    fft::plan(g.geometry.n).inverse(&mut data);
    RealField::from_parts(g.geometry, data.iter().map(|c| c.re).collect())
}

/// Apply a real, even spectral multiplier: `F^-1[m(k) F[f](k)]`.
///
/// Even tables (`m(k) = m(-k)`) preserve Hermitian symmetry, so the
/// imaginary part of the result is round-off only and is discarded.
pub fn apply_multiplier(f: &RealField, table: &[f64]) -> RealField {
    let geom = f.geometry;
    let mut data: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let plan = fft::plan(geom.n);
    plan.forward(&mut data);
    let w = geom.epsilon().powi(2);
    for (c, m) in data.iter_mut().zip(table) {
        *c *= w * m;
    }
    plan.inverse(&mut data);
    RealField::from_parts(geom, data.iter().map(|c| c.re).collect())
}

/// Images of a coarse frequency on a finer axis, with the weight each image
/// receives. A Nyquist frequency splits evenly between `+n/2` and `-n/2`.
fn axis_images(m: i64, n: usize) -> Vec<(i64, f64)> {
    if n % 2 == 0 && 2 * m == n as i64 {
        vec![(m, 0.5), (-m, 0.5)]
    } else {
        vec![(m, 1.0)]
    }
}

fn check_refinement(coarse: usize, fine: usize) -> Result<()> {
    if fine < coarse || fine % coarse != 0 {
        return Err(Error::IncompatibleGrid { coarse, fine });
    }
    Ok(())
}

/// Trigonometric extension onto an `fine_n x fine_n` lattice by zero padding
/// the spectrum. Nyquist coefficients are split symmetrically so the
/// extension stays real.
pub fn embed_trig(f: &RealField, fine_n: usize) -> Result<RealField> {
    let coarse = f.geometry;
    check_refinement(coarse.n, fine_n)?;
    if fine_n == coarse.n {
        return Ok(f.clone());
    }
    let fine = LatticeGeometry::new(fine_n, coarse.mass2)?;
    let spec = forward_fft(f);
    let mut out = SpectralField::zeros(fine);
    for (idx, &c) in spec.coeffs.iter().enumerate() {
        let k = coarse.dual_index(idx);
        for (m1, w1) in axis_images(k.m1, coarse.n) {
            for (m2, w2) in axis_images(k.m2, coarse.n) {
                let pos = fine.position(DualIndex::new(m1, m2))?;
                out.coeffs[pos] += c * (w1 * w2);
            }
        }
    }
    Ok(inverse_hermitian(&out))
}

/// Spectral truncation of a fine-lattice field onto the `coarse_n` lattice.
/// Alias pairs at `+-coarse_n/2` fold back onto the coarse Nyquist mode, so
/// `restrict(embed_trig(f)) == f`.
pub fn restrict(f_fine: &RealField, coarse_n: usize) -> Result<RealField> {
    let fine = f_fine.geometry;
    check_refinement(coarse_n, fine.n)?;
    if coarse_n == fine.n {
        return Ok(f_fine.clone());
    }
    let coarse = LatticeGeometry::new(coarse_n, fine.mass2)?;
    let spec = forward_fft(f_fine);
    let mut out = SpectralField::zeros(coarse);
    for idx in 0..coarse.sites() {
        let k = coarse.dual_index(idx);
        let mut acc = Complex64::new(0.0, 0.0);
        for (m1, _) in axis_images(k.m1, coarse.n) {
            for (m2, _) in axis_images(k.m2, coarse.n) {
                acc += spec.coeffs[fine.position(DualIndex::new(m1, m2))?];
            }
        }
        out.coeffs[idx] = acc;
    }
    Ok(inverse_hermitian(&out))
}
