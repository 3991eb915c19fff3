//! Lebesgue, Sobolev, Besov and Hölder norms of lattice fields.
//!
//! All integrals use the normalized lattice measure `eps^2 sum_x`, and
//! Fourier weights use the continuum wavevector `k = 2 pi m`.

use crate::error::{Error, Result};
use crate::spectral::{apply_multiplier, embed_trig, forward_fft, LatticeGeometry, RealField};

/// `(eps^2 sum_x |f|^p)^{1/p}`, or `max |f|` for `p = inf`.
pub fn lp_norm(f: &RealField, p: f64) -> f64 {
    if p == f64::INFINITY {
        return f.values().iter().fold(0.0, |m, v| m.max(v.abs()));
    }
    let eps2 = f.geometry().epsilon().powi(2);
    if p == 1.0 {
        return eps2 * f.values().iter().map(|v| v.abs()).sum::<f64>();
    }
    if p == 2.0 {
        return (eps2 * f.values().iter().map(|v| v * v).sum::<f64>()).sqrt();
    }
    (eps2 * f.values().iter().map(|v| v.abs().powf(p)).sum::<f64>()).powf(1.0 / p)
}

/// Weights `(1 + |k|^2)^alpha` in storage order.
pub fn sobolev_weights(geom: &LatticeGeometry, alpha: f64) -> Vec<f64> {
    geom.modes().map(|k| (1.0 + k.norm_sq()).powf(alpha)).collect()
}

/// `||f||_{H^alpha}^2 = sum_k (1 + |k|^2)^alpha |f^(k)|^2`.
pub fn sobolev_norm_sq(f: &RealField, alpha: f64) -> f64 {
    forward_fft(f).weighted_energy(&sobolev_weights(f.geometry(), alpha))
}

pub fn sobolev_norm(f: &RealField, alpha: f64) -> f64 {
    sobolev_norm_sq(f, alpha).sqrt()
}

/// Smooth step: 1 on `[0, 3/8]`, 0 on `[2/3, inf)`, `C^inf` in between.
pub fn smooth_step(r: f64) -> f64 {
    const LO: f64 = 3.0 / 8.0;
    const HI: f64 = 2.0 / 3.0;
    if r <= LO {
        return 1.0;
    }
    if r >= HI {
        return 0.0;
    }
    let u = (r - LO) / (HI - LO);
    let bump = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    let (a, b) = (bump(1.0 - u), bump(u));
    a / (a + b)
}

/// Littlewood-Paley partition of unity on the dual set, radial in the
/// max-norm `|k|_inf`.
///
/// Block `-1` is `psi(|k|)`, block `j >= 0` is `psi(|k|/2^{j+1}) - psi(|k|/2^j)`
/// with support in `2^j [3/8, 4/3]`, and the top block `j_eps` collects the
/// remainder so the blocks sum to one on every mode.
#[derive(Debug, Clone)]
pub struct DyadicPartition {
    geometry: LatticeGeometry,
    top: i32,
    blocks: Vec<Vec<f64>>,
}

impl DyadicPartition {
    pub fn new(geometry: LatticeGeometry) -> Self {
        let kmax = std::f64::consts::PI * geometry.n() as f64;
        let mut top = 0;
        while (4.0 / 3.0) * 2f64.powi(top + 1) < kmax {
            top += 1;
        }
        let radius: Vec<f64> = geometry.modes().map(|k| k.norm_max()).collect();
        let mut blocks: Vec<Vec<f64>> = Vec::with_capacity(top as usize + 2);
        blocks.push(radius.iter().map(|&r| smooth_step(r)).collect());
        for j in 0..top {
            let s = 2f64.powi(j);
            blocks.push(
                radius
                    .iter()
                    .map(|&r| smooth_step(r / (2.0 * s)) - smooth_step(r / s))
                    .collect(),
            );
        }
        let remainder: Vec<f64> = (0..geometry.sites())
            .map(|i| 1.0 - blocks.iter().map(|b| b[i]).sum::<f64>())
            .collect();
        blocks.push(remainder);
        Self {
            geometry,
            top,
            blocks,
        }
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    /// Index `j_eps` of the top block.
    pub fn top(&self) -> i32 {
        self.top
    }

    /// Multiplier table of block `j` in storage order.
    pub fn block(&self, j: i32) -> Result<&[f64]> {
        if j < -1 || j > self.top {
            return Err(Error::BlockIndex { j, max: self.top });
        }
        Ok(&self.blocks[(j + 1) as usize])
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<i32> {
        -1..=self.top
    }
}

/// Littlewood-Paley projection `F^-1[chi_j f^]`.
pub fn lp_block(f: &RealField, j: i32, partition: &DyadicPartition) -> Result<RealField> {
    Ok(apply_multiplier(f, partition.block(j)?))
}

/// `[sum_j (2^{j alpha} ||Delta_j f||_{L^p})^q]^{1/q}` (sup for `q = inf`).
pub fn besov_norm(
    f: &RealField,
    p: f64,
    q: f64,
    alpha: f64,
    partition: &DyadicPartition,
) -> Result<f64> {
    if !(p >= 1.0 && q >= 1.0) {
        return Err(Error::Domain(format!("need p, q >= 1, got p = {p}, q = {q}")));
    }
    let mut terms = Vec::with_capacity(partition.blocks.len());
    for j in partition.indices() {
        let block = lp_block(f, j, partition)?;
        terms.push(2f64.powf(j as f64 * alpha) * lp_norm(&block, p));
    }
    Ok(if q == f64::INFINITY {
        terms.into_iter().fold(0.0, f64::max)
    } else {
        terms.iter().map(|t| t.powf(q)).sum::<f64>().powf(1.0 / q)
    })
}

/// Default refinement factor for Hölder norms.
pub const HOLDER_REFINE: usize = 8;

/// `||f||_inf + sup_{x != y} |f(x) - f(y)| / d(x, y)^alpha` evaluated on the
/// trigonometric extension to a lattice refined by `refine`, with the
/// periodic Euclidean distance.
pub fn holder_norm(f: &RealField, alpha: f64, refine: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if refine < 2 {
        return Err(Error::Domain(format!("refine must be >= 2, got {refine}")));
    }
    let n = f.geometry().n();
    let fine = embed_trig(f, n * refine)?;
    Ok(lp_norm(&fine, f64::INFINITY) + holder_seminorm(&fine, alpha))
}

/// Exact lattice Hölder seminorm. Displacements are visited in order of
/// increasing length and the search stops once the oscillation bound
/// `osc / d^alpha` cannot beat the current maximum.
pub fn holder_seminorm(f: &RealField, alpha: f64) -> f64 {
    let n = f.geometry().n();
    let h = f.geometry().epsilon();
    let v = f.values();
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let osc = hi - lo;
    if osc == 0.0 {
        return 0.0;
    }
    let half = n / 2;
    let mut displacements: Vec<(usize, usize, f64)> = Vec::new();
    for a in 0..=half {
        for b in 0..n {
            if a == 0 && (b == 0 || b > half) {
                continue;
            }
            if 2 * a == n && b > half {
                continue;
            }
            let db = b.min(n - b);
            let d = h * ((a * a + db * db) as f64).sqrt();
            displacements.push((a, b, d));
        }
    }
    displacements.sort_by(|x, y| x.2.total_cmp(&y.2));
    let mut best: f64 = 0.0;
    for &(a, b, d) in &displacements {
        let scale = d.powf(alpha);
        if osc / scale <= best {
            break;
        }
        let mut m: f64 = 0.0;
        for i in 0..n {
            let row = i * n;
            let row2 = ((i + a) % n) * n;
            for j in 0..n {
                let diff = (v[row + j] - v[row2 + (j + b) % n]).abs();
                if diff > m {
                    m = diff;
                }
            }
        }
        best = best.max(m / scale);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gff::{sample_gff, GaussianSampler};
    use crate::spectral::DualIndex;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn geom(n: usize) -> LatticeGeometry {
        LatticeGeometry::new(n, 1.0).unwrap()
    }

    fn random_field(n: usize, seed: u64) -> RealField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = geom(n);
        RealField::new(g, (0..g.sites()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn cos_mode(n: usize, m1: i64, m2: i64) -> RealField {
        RealField::from_fn(geom(n), |x, y| {
            (2.0 * PI * (m1 as f64 * x + m2 as f64 * y)).cos()
        })
        .unwrap()
    }

    #[test]
    fn lp_examples() {
        let one = RealField::constant(geom(8), 1.0);
        for p in [1.0, 1.5, 2.0, 3.0, f64::INFINITY] {
            assert!((lp_norm(&one, p) - 1.0).abs() < 1e-14);
        }
        let f = random_field(8, 1);
        let g = random_field(8, 2);
        assert!((lp_norm(&f, 2.0).powi(2) - forward_fft(&f).energy()).abs() < 1e-12);
        let fg = RealField::new(*f.geometry(), f.values().iter().zip(g.values()).map(|(a, b)| a * b).collect()).unwrap();
        assert!(lp_norm(&fg, 1.0) <= lp_norm(&f, 2.0) * lp_norm(&g, 2.0));
    }

    #[test]
    fn sobolev_examples() {
        let g = geom(8);
        assert_eq!(sobolev_norm(&RealField::zeros(g), 1.0), 0.0);
        for alpha in [-1.0, 0.0, 0.5, 2.0] {
            assert!((sobolev_norm(&RealField::constant(g, 1.0), alpha) - 1.0).abs() < 1e-14);
        }
        // cos = (e^{ikx} + e^{-ikx})/2 carries energy 1/2 at |k|.
        let f = cos_mode(8, 1, 2);
        let k2 = DualIndex::new(1, 2).norm_sq();
        for alpha in [0.0, 0.7, 1.5] {
            let expect = 0.5 * (1.0 + k2).powf(alpha);
            assert!((sobolev_norm_sq(&f, alpha) - expect).abs() < 1e-10 * expect);
        }
    }

    #[test]
    fn partition_of_unity_and_support() {
        for n in [8usize, 16, 64, 100] {
            let part = DyadicPartition::new(geom(n));
            for idx in 0..part.geometry().sites() {
                let sum: f64 = part.indices().map(|j| part.block(j).unwrap()[idx]).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
            let radius: Vec<f64> = part.geometry().modes().map(|k| k.norm_max()).collect();
            for j in 0..part.top() {
                let s = 2f64.powi(j);
                for (r, w) in radius.iter().zip(part.block(j).unwrap()) {
                    if *w != 0.0 {
                        assert!(*r >= 0.375 * s - 1e-12 && *r <= 4.0 / 3.0 * s + 1e-12);
                    }
                }
            }
            for (r, w) in radius.iter().zip(part.block(-1).unwrap()) {
                if *w != 0.0 {
                    assert!(*r <= 4.0 / 3.0);
                }
            }
        }
        let part = DyadicPartition::new(geom(8));
        assert!(part.block(-2).is_err());
        assert!(part.block(part.top() + 1).is_err());
    }

    #[test]
    fn block_examples() {
        let n = 64;
        let part = DyadicPartition::new(geom(n));
        let f = random_field(n, 3);
        let mut total = RealField::zeros(geom(n));
        for j in part.indices() {
            total = total.add(&lp_block(&f, j, &part).unwrap());
        }
        for (a, b) in total.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-10);
        }
        // |k|_inf = 14 pi lies on the plateau [2/3, 3/4] * 64 of block 6.
        let mode = cos_mode(n, 7, 3);
        let proj = lp_block(&mode, 6, &part).unwrap();
        for (a, b) in proj.values().iter().zip(mode.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        for j in part.indices() {
            for jj in part.indices() {
                if (j - jj).abs() >= 2 {
                    let dd = lp_block(&lp_block(&f, jj, &part).unwrap(), j, &part).unwrap();
                    assert!(lp_norm(&dd, f64::INFINITY) < 1e-10, "{j} {jj}");
                }
            }
        }
    }

    #[test]
    fn besov_examples() {
        let n = 64;
        let part = DyadicPartition::new(geom(n));
        assert_eq!(besov_norm(&RealField::zeros(geom(n)), 2.0, 2.0, 1.0, &part).unwrap(), 0.0);
        let mode = cos_mode(n, 7, 3);
        for (p, q, alpha) in [(2.0, 2.0, 1.0), (1.0, 3.0, 0.5), (f64::INFINITY, f64::INFINITY, -0.5)] {
            let b = besov_norm(&mode, p, q, alpha, &part).unwrap();
            let expect = 2f64.powf(6.0 * alpha) * lp_norm(&lp_block(&mode, 6, &part).unwrap(), p);
            assert!((b - expect).abs() < 1e-10 * expect);
        }
    }

    #[test]
    fn besov_sobolev_equivalence() {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for n in [16usize, 32, 64] {
            let g = geom(n);
            let part = DyadicPartition::new(g);
            for r in 0..200u64 {
                let f = sample_gff(&g, 1000 * n as u64 + r);
                let ratio = besov_norm(&f, 2.0, 2.0, 0.5, &part).unwrap() / sobolev_norm(&f, 0.5);
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
        }
        assert!(lo > 0.2 && hi < 5.0, "ratio range [{lo}, {hi}]");
    }

    #[test]
    fn monotone_in_regularity() {
        let f = random_field(16, 4);
        let part = DyadicPartition::new(geom(16));
        let mut prev_s = 0.0;
        let mut prev_b = 0.0;
        for alpha in [-1.0, -0.5, 0.0, 0.5, 1.0, 1.5] {
            let s = sobolev_norm(&f, alpha);
            let b = besov_norm(&f, 2.0, 2.0, alpha, &part).unwrap();
            assert!(s >= prev_s && b >= prev_b);
            prev_s = s;
            prev_b = b;
        }
    }

    #[test]
    fn sobolev_embedding_constant_is_stable() {
        // Smooth random fields with spectral variance (1 + |k|^2)^-3.
        let ratios: Vec<f64> = [8usize, 16, 32, 64]
            .iter()
            .map(|&n| {
                let g = geom(n);
                let sampler = GaussianSampler::new(g, &sobolev_weights(&g, -3.0));
                let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
                (0..50)
                    .map(|_| {
                        let f = sampler.sample(&mut rng);
                        lp_norm(&f, f64::INFINITY) / sobolev_norm(&f, 1.1)
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        let max = ratios.iter().copied().fold(0.0, f64::max);
        let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(max / min < 2.0, "{ratios:?}");
    }

    #[test]
    fn holder_examples() {
        let g = geom(8);
        let c = RealField::constant(g, -2.5);
        assert!((holder_norm(&c, 0.5, 4).unwrap() - 2.5).abs() < 1e-12);
        let f = cos_mode(8, 1, 0);
        let s4 = holder_norm(&f, 0.5, 4).unwrap() - 1.0;
        let s8 = holder_norm(&f, 0.5, 8).unwrap() - 1.0;
        assert!(s4 > 0.0 && ((s8 - s4) / s8).abs() < 0.02, "{s4} {s8}");
        let r = random_field(8, 5);
        let a = holder_norm(&r, 0.3, 4).unwrap();
        let b = holder_norm(&r.scale(-3.0), 0.3, 4).unwrap();
        assert!((b - 3.0 * a).abs() < 1e-12 * b);
        assert!(holder_norm(&r, 1.0, 4).is_err());
        assert!(holder_norm(&r, 0.5, 1).is_err());
    }

    #[test]
    fn holder_seminorm_matches_brute_force() {
        let f = random_field(6, 6);
        let n: usize = 6;
        let h = 1.0 / n as f64;
        let mut brute: f64 = 0.0;
        for i in 0..n * n {
            for j in 0..n * n {
                if i == j {
                    continue;
                }
                let (a, b) = (i / n, i % n);
                let (c, d) = (j / n, j % n);
                let da = a.abs_diff(c).min(n - a.abs_diff(c));
                let db = b.abs_diff(d).min(n - b.abs_diff(d));
                let dist = h * ((da * da + db * db) as f64).sqrt();
                brute = brute.max((f.values()[i] - f.values()[j]).abs() / dist.powf(0.4));
            }
        }
        assert!((holder_seminorm(&f, 0.4) - brute).abs() < 1e-12 * brute);
    }

    proptest! {
        #[test]
        fn norms_are_translation_invariant(seed in any::<u64>(), di in 0usize..8, dj in 0usize..8) {
            let f = random_field(8, seed);
            let t = f.translate(di, dj);
            let part = DyadicPartition::new(geom(8));
            prop_assert!((lp_norm(&f, 3.0) - lp_norm(&t, 3.0)).abs() < 1e-12);
            prop_assert!((sobolev_norm(&f, 0.7) - sobolev_norm(&t, 0.7)).abs() < 1e-10);
            let bf = besov_norm(&f, 2.0, 1.0, 0.5, &part).unwrap();
            let bt = besov_norm(&t, 2.0, 1.0, 0.5, &part).unwrap();
            prop_assert!((bf - bt).abs() < 1e-10 * bf);
            prop_assert!((holder_seminorm(&f, 0.5) - holder_seminorm(&t, 0.5)).abs() < 1e-12);
        }
    }
}
