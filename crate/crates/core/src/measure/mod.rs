//! Horizontal Jacobian, spherical Hausdorff estimates for traced curves,
//! Federer density, the area identity and the coarea check.
//!
//! Traces are treated as polylines in coordinates. Along one segment both
//! `z^h` and `z³` of `z = y⁻¹γ(u)` are affine in `u`, so `N(z)⁴` is convex and
//! ball and box intersections are single sub-intervals, computed to rounding.

mod coarea;

pub use coarea::{
    coarea_check, functional_density, trace_level_curve, CoareaOptions, CoareaReport,
    FunctionalDensity, FunctionalDensityOptions, LevelCurve, ZSample, ZStatus,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldModel;
use crate::hgroup::{HPoint, MetricConfig};
use crate::lsde::Trace;
use crate::rng;
use crate::sewing::SampledFunction;

/// Axis-aligned box `[lo, hi]` in exponential coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cuboid {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Cuboid {
    pub fn new(lo: [f64; 3], hi: [f64; 3]) -> Result<Self> {
        let b = Self { lo, hi };
        b.validate()?;
        Ok(b)
    }

    /// `[−a, a]³`.
    pub fn cube(a: f64) -> Result<Self> {
        Self::new([-a; 3], [a; 3])
    }

    pub fn validate(&self) -> Result<()> {
        for k in 0..3 {
            if !(self.lo[k].is_finite() && self.hi[k].is_finite() && self.lo[k] < self.hi[k]) {
                return Err(Error::InvalidArgument(format!(
                    "box side {k} is empty or not finite: [{}, {}]",
                    self.lo[k], self.hi[k]
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &HPoint) -> bool {
        let c = [x.x1, x.x2, x.x3];
        (0..3).all(|k| c[k] >= self.lo[k] && c[k] <= self.hi[k])
    }

    pub fn center(&self) -> HPoint {
        HPoint::new(
            0.5 * (self.lo[0] + self.hi[0]),
            0.5 * (self.lo[1] + self.hi[1]),
            0.5 * (self.lo[2] + self.hi[2]),
        )
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|k| self.hi[k] - self.lo[k]).product()
    }

    /// Point at fractional coordinates `u ∈ [0,1]³`.
    pub fn at(&self, u: [f64; 3]) -> HPoint {
        let c = |k: usize| self.lo[k] + u[k] * (self.hi[k] - self.lo[k]);
        HPoint::new(c(0), c(1), c(2))
    }

    /// Parameter sub-interval of `[0, 1]` on which `a + u(b − a)` stays in the box.
    fn clip_segment(&self, a: &HPoint, b: &HPoint) -> Option<(f64, f64)> {
        let (pa, pb) = ([a.x1, a.x2, a.x3], [b.x1, b.x2, b.x3]);
        let (mut u0, mut u1) = (0.0f64, 1.0f64);
        for k in 0..3 {
            let d = pb[k] - pa[k];
            if d == 0.0 {
                if pa[k] < self.lo[k] || pa[k] > self.hi[k] {
                    return None;
                }
                continue;
            }
            let (s0, s1) = ((self.lo[k] - pa[k]) / d, (self.hi[k] - pa[k]) / d);
            u0 = u0.max(s0.min(s1));
            u1 = u1.min(s0.max(s1));
        }
        (u0 <= u1).then_some((u0, u1))
    }
}

/// `J_hF(x) = |det ∇_hF(x)|`.
pub fn jacobian_h(f: &FieldModel, x: &HPoint) -> Result<f64> {
    Ok(f.grad_h(x)?.det().abs())
}

/// `L¹{t : γ_t ∈ box}` for the piecewise-linear trace.
pub fn area_measure(trace: &Trace, cuboid: &Cuboid) -> f64 {
    area_between(trace, cuboid, 0, trace.len() - 1)
}

/// As [`area_measure`], restricted to the nodes `i0..=i1`.
pub(crate) fn area_between(trace: &Trace, cuboid: &Cuboid, i0: usize, i1: usize) -> f64 {
    (i0..i1)
        .map(|k| {
            let dt = trace.times[k + 1] - trace.times[k];
            cuboid
                .clip_segment(&trace.points[k], &trace.points[k + 1])
                .map_or(0.0, |(u0, u1)| (u1 - u0) * dt)
        })
        .sum()
}

/// Covering estimate `Σ β_d diam(arc)²` over arcs of parameter length at most
/// `mesh`. Upper-bound flavoured: it matches `S²_d` only up to a constant.
pub fn sph_measure_upper(
    trace: &Trace,
    metric: &MetricConfig,
    beta_d: f64,
    mesh: f64,
) -> Result<f64> {
    if mesh.is_nan() || mesh <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "mesh must be positive, got {mesh}"
        )));
    }
    let mut total = 0.0;
    let mut start = 0;
    while start + 1 < trace.len() {
        let mut end = start + 1;
        while end + 1 < trace.len() && trace.times[end + 1] - trace.times[start] <= mesh {
            end += 1;
        }
        let arc = &trace.points[start..=end];
        let mut diam: f64 = 0.0;
        for i in 0..arc.len() {
            for j in (i + 1)..arc.len() {
                diam = diam.max(metric.dist(&arc[i], &arc[j]));
            }
        }
        total += beta_d * diam * diam;
        start = end;
    }
    Ok(total)
}

/// The measure `γ_♯(|θ| L¹)` of a trace with density `θ` along it.
#[derive(Debug, Clone)]
pub struct CurveMeasure {
    pub trace: Trace,
    pub theta: SampledFunction,
}

impl CurveMeasure {
    /// `θ ≡ 1`, the density of LSDE solutions.
    pub fn unit(trace: Trace) -> Self {
        let theta = SampledFunction::scalar(trace.times.clone(), vec![1.0; trace.len()])
            .expect("trace grids are valid");
        Self { trace, theta }
    }

    pub fn new(trace: Trace, theta: SampledFunction) -> Result<Self> {
        if theta.dim() != 1 || theta.times() != trace.times.as_slice() {
            return Err(Error::InvalidArgument(
                "theta must be scalar and sampled on the trace grid".into(),
            ));
        }
        Ok(Self { trace, theta })
    }

    fn weight(&self, k: usize) -> f64 {
        self.theta.value(k)[0].abs()
    }

    /// `∫ |θ|` over the parameters `u ∈ [u0, u1]` of segment `k`, with `|θ|`
    /// interpolated linearly.
    fn segment_mass(&self, k: usize, u0: f64, u1: f64) -> f64 {
        let dt = self.trace.times[k + 1] - self.trace.times[k];
        let (w0, w1) = (self.weight(k), self.weight(k + 1));
        let um = 0.5 * (u0 + u1);
        (u1 - u0) * dt * (w0 + um * (w1 - w0))
    }

    /// Total mass `∫ |θ| dt`.
    pub fn total(&self) -> f64 {
        (0..self.trace.len() - 1)
            .map(|k| self.segment_mass(k, 0.0, 1.0))
            .sum()
    }

    pub fn of_box(&self, cuboid: &Cuboid) -> f64 {
        (0..self.trace.len() - 1)
            .map(|k| {
                cuboid
                    .clip_segment(&self.trace.points[k], &self.trace.points[k + 1])
                    .map_or(0.0, |(u0, u1)| self.segment_mass(k, u0, u1))
            })
            .sum()
    }

    /// Mass of the closed ball `B(radius, center)`.
    pub fn of_ball(&self, metric: &MetricConfig, center: &HPoint, radius: f64) -> f64 {
        let pts = &self.trace.points;
        (0..pts.len() - 1)
            .map(|k| {
                segment_in_ball(metric, center, radius, &pts[k], &pts[k + 1])
                    .map_or(0.0, |(u0, u1)| self.segment_mass(k, u0, u1))
            })
            .sum()
    }
}

/// Sub-interval of `[0, 1]` where `d(center, a + u(b − a)) ≤ radius`.
fn segment_in_ball(
    metric: &MetricConfig,
    center: &HPoint,
    radius: f64,
    a: &HPoint,
    b: &HPoint,
) -> Option<(f64, f64)> {
    let at = |u: f64| {
        HPoint::new(
            a.x1 + u * (b.x1 - a.x1),
            a.x2 + u * (b.x2 - a.x2),
            a.x3 + u * (b.x3 - a.x3),
        )
    };
    let g = |u: f64| metric.dist(center, &at(u)) - radius;
    let (g0, g1) = (g(0.0), g(1.0));
    if g0 <= 0.0 && g1 <= 0.0 {
        return Some((0.0, 1.0));
    }
    // the minimiser of a convex function by golden-section search
    let umin = if g0 <= 0.0 {
        0.0
    } else if g1 <= 0.0 {
        1.0
    } else {
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let (mut lo, mut hi) = (0.0, 1.0);
        let (mut c, mut d) = (hi - r * (hi - lo), lo + r * (hi - lo));
        let (mut gc, mut gd) = (g(c), g(d));
        for _ in 0..80 {
            if gc <= 0.0 || gd <= 0.0 {
                break;
            }
            if gc < gd {
                hi = d;
                d = c;
                gd = gc;
                c = hi - r * (hi - lo);
                gc = g(c);
            } else {
                lo = c;
                c = d;
                gc = gd;
                d = lo + r * (hi - lo);
                gd = g(d);
            }
        }
        if gc <= 0.0 {
            c
        } else if gd <= 0.0 {
            d
        } else {
            return None;
        }
    };
    let crossing = |inside: f64, outside: f64| {
        let (mut i, mut o) = (inside, outside);
        for _ in 0..60 {
            let m = 0.5 * (i + o);
            if g(m) <= 0.0 {
                i = m;
            } else {
                o = m;
            }
        }
        0.5 * (i + o)
    };
    let u0 = if g0 <= 0.0 { 0.0 } else { crossing(umin, 0.0) };
    let u1 = if g1 <= 0.0 { 1.0 } else { crossing(umin, 1.0) };
    Some((u0, u1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityAtRadius {
    pub radius: f64,
    /// `max_y γ_♯(|θ|L¹)(B(ρ, y)) / (β_d ρ²)` over the sampled centers.
    pub ratio: f64,
    pub best_center: HPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedererDensity {
    pub point: HPoint,
    pub per_radius: Vec<DensityAtRadius>,
    /// Ratio at the smallest radius.
    pub density: f64,
    /// Linear extrapolation to `ρ = 0` from the two smallest radii.
    pub extrapolated: f64,
}

/// Spherical Federer density of the curve measure at `x`.
///
/// For each radius, centers are `x` itself and `center_samples` seeded points
/// of `B(ρ, x)`.
pub fn federer_density(
    cm: &CurveMeasure,
    metric: &MetricConfig,
    beta_d: f64,
    x: &HPoint,
    radii: &[f64],
    center_samples: usize,
    seed: u64,
) -> Result<FedererDensity> {
    if radii.is_empty() || radii.iter().any(|r| r.is_nan() || *r <= 0.0) {
        return Err(Error::InvalidArgument(
            "radii must be positive and non-empty".into(),
        ));
    }
    let off = cm
        .trace
        .points
        .iter()
        .map(|g| metric.dist(g, x))
        .fold(f64::INFINITY, f64::min);
    if off > 1e-6 {
        return Err(Error::PointOffCurve { distance: off });
    }
    let mut per_radius: Vec<DensityAtRadius> = radii
        .iter()
        .enumerate()
        .map(|(i, &rho)| {
            let mut rng = rng::seeded(rng::derive_seed(seed, i as u64));
            let norm = beta_d * rho * rho;
            let mut best = DensityAtRadius {
                radius: rho,
                ratio: cm.of_ball(metric, x, rho) / norm,
                best_center: *x,
            };
            for _ in 0..center_samples {
                let y = metric.sample_ball(x, rho, &mut rng);
                let r = cm.of_ball(metric, &y, rho) / norm;
                if r > best.ratio {
                    best = DensityAtRadius {
                        radius: rho,
                        ratio: r,
                        best_center: y,
                    };
                }
            }
            best
        })
        .collect();
    per_radius.sort_by(|a, b| a.radius.total_cmp(&b.radius));
    let density = per_radius[0].ratio;
    let extrapolated = match per_radius.as_slice() {
        [a, b, ..] if b.radius > a.radius => {
            a.ratio - a.radius * (b.ratio - a.ratio) / (b.radius - a.radius)
        }
        _ => density,
    };
    Ok(FedererDensity {
        point: *x,
        per_radius,
        density,
        extrapolated,
    })
}

/// `lhs`, `rhs` and `|lhs − rhs| / max(|lhs|, |rhs|, floor)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub lhs: f64,
    pub rhs: f64,
    pub rel_error: f64,
    pub samples: usize,
    pub seed: u64,
}

pub const REL_ERROR_FLOOR: f64 = 1e-12;

impl MeasureReport {
    pub fn new(lhs: f64, rhs: f64, samples: usize, seed: u64) -> Self {
        let scale = lhs.abs().max(rhs.abs()).max(REL_ERROR_FLOOR);
        Self {
            lhs,
            rhs,
            rel_error: (lhs - rhs).abs() / scale,
            samples,
            seed,
        }
    }
}
