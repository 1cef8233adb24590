//! Arithmetic of the first Heisenberg group `H ≅ R³`.
//!
//! The group law is
//!
//! ```text
//! (x¹, x², x³)·(y¹, y², y³) = (x¹+y¹, x²+y², x³+y³ + (x¹y² − x²y¹))
//! ```
//!
//! with identity `(0,0,0)` and inverse `−x`. Dilations `δ_r(x) = (r x¹, r x², r² x³)`
//! are group automorphisms. Distances are given by a Korányi-type gauge
//! `N(z) = (|z^h|⁴ + λ (z³)²)^{1/4}` through `d(x, y) = N(x⁻¹y)`, which is
//! left-invariant and 1-homogeneous for every `λ > 0`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::ops::Mul;

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// An element of the Heisenberg group.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HPoint {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl HPoint {
    pub const ORIGIN: HPoint = HPoint {
        x1: 0.0,
        x2: 0.0,
        x3: 0.0,
    };

    pub const fn new(x1: f64, x2: f64, x3: f64) -> Self {
        Self { x1, x2, x3 }
    }

    /// Purely horizontal point `(h¹, h², 0)`.
    pub const fn horizontal_point(h: [f64; 2]) -> Self {
        Self::new(h[0], h[1], 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite() && self.x3.is_finite()
    }

    /// Horizontal part `x^h = (x¹, x²)`.
    pub fn horizontal(&self) -> [f64; 2] {
        [self.x1, self.x2]
    }

    /// Vertical part `x^v = x³`.
    pub fn vertical(&self) -> f64 {
        self.x3
    }

    pub fn mul(&self, y: &HPoint) -> HPoint {
        HPoint {
            x1: self.x1 + y.x1,
            x2: self.x2 + y.x2,
            x3: self.x3 + y.x3 + (self.x1 * y.x2 - self.x2 * y.x1),
        }
    }

    pub fn inv(&self) -> HPoint {
        HPoint::new(-self.x1, -self.x2, -self.x3)
    }

    /// `x⁻¹·y`, the increment that moves `self` to `y`.
    pub fn increment_to(&self, y: &HPoint) -> HPoint {
        HPoint {
            x1: y.x1 - self.x1,
            x2: y.x2 - self.x2,
            x3: y.x3 - self.x3 - (self.x1 * y.x2 - self.x2 * y.x1),
        }
    }

    /// Intrinsic dilation `δ_r`. Panics on negative `r`.
    pub fn dilate(&self, r: f64) -> HPoint {
        assert!(r >= 0.0, "dilation factor must be non-negative, got {r}");
        HPoint::new(r * self.x1, r * self.x2, r * r * self.x3)
    }

    /// Horizontal gauge `|x^h|`.
    pub fn gauge_h(&self) -> f64 {
        self.x1.hypot(self.x2)
    }

    /// Vertical gauge `√|x³|`.
    pub fn gauge_v(&self) -> f64 {
        self.x3.abs().sqrt()
    }
}

impl Mul for HPoint {
    type Output = HPoint;

    fn mul(self, rhs: HPoint) -> HPoint {
        HPoint::mul(&self, &rhs)
    }
}

impl From<[f64; 3]> for HPoint {
    fn from(v: [f64; 3]) -> Self {
        HPoint::new(v[0], v[1], v[2])
    }
}

impl From<HPoint> for [f64; 3] {
    fn from(p: HPoint) -> Self {
        [p.x1, p.x2, p.x3]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    #[default]
    Koranyi,
}

/// Selects the homogeneous distance used everywhere in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    /// Vertical weight of the gauge.
    pub lambda: f64,
    #[serde(default)]
    pub name: MetricKind,
}

/// `λ = 4` is the Cygan–Korányi normalisation for the `x¹y² − x²y¹` cross
/// term; larger weights break the triangle inequality.
pub const DEFAULT_LAMBDA: f64 = 4.0;

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            name: MetricKind::Koranyi,
        }
    }
}

impl MetricConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        let cfg = Self {
            lambda,
            name: MetricKind::Koranyi,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "metric lambda must be positive and finite, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Gauge norm `N(z) = d(0, z)`.
    pub fn norm(&self, z: &HPoint) -> f64 {
        let h2 = z.x1 * z.x1 + z.x2 * z.x2;
        (h2 * h2 + self.lambda * z.x3 * z.x3).sqrt().sqrt()
    }

    pub fn dist(&self, x: &HPoint, y: &HPoint) -> f64 {
        self.norm(&x.increment_to(y))
    }

    /// Half-extent of the unit ball along the vertical axis.
    pub fn vertical_radius(&self) -> f64 {
        1.0 / self.lambda.sqrt()
    }

    /// Lebesgue measure of the unit ball, `π² / (2√λ)`.
    pub fn unit_ball_volume(&self) -> f64 {
        std::f64::consts::PI.powi(2) / (2.0 * self.lambda.sqrt())
    }

    /// Uniform sample from the closed ball `B(radius, center)`.
    ///
    /// Rejection from the enclosing cylinder around the origin, then a left
    /// translation (which preserves Lebesgue measure).
    pub(crate) fn sample_ball(&self, center: &HPoint, radius: f64, rng: &mut Rng) -> HPoint {
        let vr = radius * radius * self.vertical_radius();
        loop {
            let z = HPoint::new(
                rng.gen_range(-radius..=radius),
                rng.gen_range(-radius..=radius),
                rng.gen_range(-vr..=vr),
            );
            if self.norm(&z) <= radius {
                return center.mul(&z);
            }
        }
    }

    /// 1-D Lebesgue measure of `{σ : (0,0,σ) ∈ B(1, y)}`.
    ///
    /// `y⁻¹·(0,0,σ) = (−y^h, σ − y³)`, so the slice is the interval
    /// `|σ − y³| ≤ √((1 − |y^h|⁴)/λ)`.
    pub fn unit_slice_measure(&self, y: &HPoint) -> f64 {
        let h2 = y.x1 * y.x1 + y.x2 * y.x2;
        let rem = 1.0 - h2 * h2;
        if rem <= 0.0 {
            0.0
        } else {
            2.0 * (rem / self.lambda).sqrt()
        }
    }
}

/// Constants of the chosen distance that enter the solver's radius conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryConstants {
    /// `c ≥ 1` with `c⁻¹(gauge_h + gauge_v) ≤ d ≤ c(gauge_h + gauge_v)`.
    pub c_equiv: f64,
    /// Normalisation of the spherical measure.
    pub beta_d: f64,
}

impl GeometryConstants {
    pub fn estimate(cfg: &MetricConfig, samples: usize, seed: u64, beta_grid: usize) -> Self {
        Self {
            c_equiv: equivalence_constant(cfg, samples, seed),
            beta_d: beta_d(cfg, beta_grid),
        }
    }
}

/// Sampled estimate of the gauge-equivalence constant.
///
/// Pairs are drawn uniformly from the unit ball around the origin; the result
/// is the largest of `d/(gauge_h+gauge_v)` and its reciprocal over all pairs,
/// floored at 1.
pub fn equivalence_constant(cfg: &MetricConfig, samples: usize, seed: u64) -> f64 {
    let mut rng = rng::seeded(seed);
    let mut c: f64 = 1.0;
    for _ in 0..samples.max(1) {
        let x = cfg.sample_ball(&HPoint::ORIGIN, 1.0, &mut rng);
        let y = cfg.sample_ball(&HPoint::ORIGIN, 1.0, &mut rng);
        let z = x.increment_to(&y);
        let gauges = z.gauge_h() + z.gauge_v();
        if gauges <= f64::MIN_POSITIVE {
            continue;
        }
        let ratio = cfg.norm(&z) / gauges;
        c = c.max(ratio).max(1.0 / ratio);
    }
    c
}

/// Grid estimate of `β_d = sup_{d(0,y) ≤ 1} L¹{σ : (0,0,σ) ∈ B(1,y)}`.
///
/// Centers run over the nested grid `{(i, j, k)/resolution}` inside the closed
/// unit ball, so the estimate is non-decreasing when the resolution doubles.
/// The slice length does not depend on `y³`, and `(y¹, y², 0)` lies in the
/// ball whenever some `(y¹, y², y³)` does, so only the horizontal grid is
/// scanned.
pub fn beta_d(cfg: &MetricConfig, resolution: usize) -> f64 {
    let res = resolution.max(2) as i64;
    let mut best: f64 = 0.0;
    for i in -res..=res {
        for j in -res..=res {
            let y = HPoint::new(i as f64 / res as f64, j as f64 / res as f64, 0.0);
            if cfg.norm(&y) <= 1.0 {
                best = best.max(cfg.unit_slice_measure(&y));
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn group_law_examples() {
        let e1 = HPoint::new(1.0, 0.0, 0.0);
        let e2 = HPoint::new(0.0, 1.0, 0.0);
        assert_eq!(e1 * e2, HPoint::new(1.0, 1.0, 1.0));
        assert_eq!(e2 * e1, HPoint::new(1.0, 1.0, -1.0));
        let x = HPoint::new(0.3, -2.0, 5.0);
        assert_eq!(x * HPoint::ORIGIN, x);
        assert_eq!(HPoint::ORIGIN * x, x);
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(
            HPoint::new(1.0, 2.0, 3.0).inv(),
            HPoint::new(-1.0, -2.0, -3.0)
        );
        assert_eq!(HPoint::ORIGIN.inv(), HPoint::ORIGIN);
        let x = HPoint::new(0.7, -1.1, 2.5);
        assert_eq!(x.inv() * x, HPoint::ORIGIN);
        assert_eq!(x * x.inv(), HPoint::ORIGIN);
        let y = HPoint::new(-0.2, 0.4, 1.0);
        let a = x.increment_to(&y);
        let b = x.inv() * y;
        assert_abs_diff_eq!(a.x3, b.x3, epsilon = 1e-15);
    }

    #[test]
    fn dilation_examples() {
        assert_eq!(
            HPoint::new(1.0, 1.0, 1.0).dilate(2.0),
            HPoint::new(2.0, 2.0, 4.0)
        );
        assert_eq!(HPoint::new(4.0, -3.0, 7.0).dilate(0.0), HPoint::ORIGIN);
        let x = HPoint::new(1.0, 0.0, 1.0);
        assert_eq!(x.dilate(3.0).dilate(2.0), HPoint::new(6.0, 0.0, 36.0));
        assert_eq!(x.dilate(6.0), HPoint::new(6.0, 0.0, 36.0));
    }

    #[test]
    #[should_panic]
    fn negative_dilation_panics() {
        HPoint::new(1.0, 1.0, 1.0).dilate(-1.0);
    }

    #[test]
    fn gauge_examples() {
        let x = HPoint::new(3.0, 4.0, 0.0);
        assert_eq!(x.gauge_h(), 5.0);
        assert_eq!(x.gauge_v(), 0.0);
        assert_eq!(HPoint::new(0.0, 0.0, 9.0).gauge_v(), 3.0);
        let y = HPoint::new(1.0, 1.0, 1.0);
        assert_abs_diff_eq!(y.dilate(2.0).gauge_v(), 2.0 * y.gauge_v(), epsilon = 1e-15);
    }

    #[test]
    fn distance_examples_lambda_16() {
        let cfg = MetricConfig::new(16.0).unwrap();
        assert_abs_diff_eq!(cfg.dist(&HPoint::ORIGIN, &HPoint::new(1.0, 0.0, 0.0)), 1.0);
        assert_abs_diff_eq!(cfg.dist(&HPoint::ORIGIN, &HPoint::new(0.0, 0.0, 1.0)), 2.0);
        let x = HPoint::new(0.2, 0.5, -1.0);
        assert_eq!(cfg.dist(&x, &x), 0.0);
    }

    #[test]
    fn invalid_lambda_rejected() {
        assert!(MetricConfig::new(0.0).is_err());
        assert!(MetricConfig::new(-1.0).is_err());
        assert!(MetricConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn equivalence_constant_at_least_one() {
        for lambda in [1.0, 4.0, 16.0] {
            let cfg = MetricConfig::new(lambda).unwrap();
            assert!(equivalence_constant(&cfg, 100, 7) >= 1.0);
        }
        // zero vertical part: N = gauge_h exactly
        let cfg = MetricConfig::default();
        let z = HPoint::new(0.3, -0.4, 0.0);
        assert_abs_diff_eq!(cfg.norm(&z) / z.gauge_h(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn equivalence_constant_stabilises() {
        let cfg = MetricConfig::default();
        let coarse = equivalence_constant(&cfg, 10_000, 11);
        let fine = equivalence_constant(&cfg, 100_000, 11);
        assert!((fine - coarse).abs() / fine <= 0.02, "{coarse} vs {fine}");
        // by homogeneity the ratio only depends on s = gauge_v/gauge_h
        let exact = (0..=200_000)
            .map(|k| {
                let s = k as f64 / 20_000.0;
                let ratio = (1.0 + 4.0 * s.powi(4)).powf(0.25) / (1.0 + s);
                ratio.max(1.0 / ratio)
            })
            .fold(4f64.powf(0.25), f64::max);
        assert!(fine <= exact + 1e-9, "{fine} > {exact}");
        assert!(fine >= 0.98 * exact, "{fine} vs {exact}");
    }

    #[test]
    fn beta_slices() {
        let cfg = MetricConfig::new(16.0).unwrap();
        assert_abs_diff_eq!(
            cfg.unit_slice_measure(&HPoint::ORIGIN),
            0.5,
            epsilon = 1e-15
        );
        let b64 = beta_d(&cfg, 64);
        let b128 = beta_d(&cfg, 128);
        assert!(b64 >= 0.5);
        assert!(b128 >= b64);
        assert!((b128 - b64).abs() / b128 <= 0.02);
    }

    #[test]
    fn unit_ball_volume_matches_quadrature() {
        let cfg = MetricConfig::default();
        // integrate the slice length over the horizontal unit disc
        let n = 2000;
        let mut acc = 0.0;
        for i in 0..n {
            let r = (i as f64 + 0.5) / n as f64;
            acc += cfg.unit_slice_measure(&HPoint::new(r, 0.0, 0.0)) * r;
        }
        let vol = 2.0 * std::f64::consts::PI * acc / n as f64;
        assert_abs_diff_eq!(vol, cfg.unit_ball_volume(), epsilon = 1e-5);
    }

    #[test]
    fn sampled_points_stay_in_ball() {
        let cfg = MetricConfig::default();
        let mut rng = rng::seeded(3);
        let c = HPoint::new(0.5, -0.2, 0.1);
        for _ in 0..1000 {
            let x = cfg.sample_ball(&c, 0.3, &mut rng);
            assert!(cfg.dist(&c, &x) <= 0.3 + 1e-12);
        }
    }
}
