//! Maps `F: H → R²` with Hölder continuous horizontal gradient.
//!
//! The horizontal gradient is the 2×2 matrix `∇_hF = [X₁F, X₂F]` whose
//! columns are the derivatives along the left-invariant fields
//! `X₁ = ∂₁ − x²∂₃`, `X₂ = ∂₂ + x¹∂₃`. Matrix norms are Frobenius norms.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hgroup::{HPoint, MetricConfig};
use crate::rng;

/// Row-major 2×2 matrix `[[a, b], [c, d]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2([[a, b], [c, d]])
    }

    /// Matrix with the given columns.
    pub fn from_columns(c1: [f64; 2], c2: [f64; 2]) -> Self {
        Mat2([[c1[0], c2[0]], [c1[1], c2[1]]])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let m = &self.0;
        Some(Mat2::new(
            m[1][1] / det,
            -m[0][1] / det,
            -m[1][0] / det,
            m[0][0] / det,
        ))
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1],
            m[1][0] * v[0] + m[1][1] * v[1],
        ]
    }

    pub fn sub(&self, other: &Mat2) -> Mat2 {
        let (a, b) = (&self.0, &other.0);
        Mat2::new(
            a[0][0] - b[0][0],
            a[0][1] - b[0][1],
            a[1][0] - b[1][0],
            a[1][1] - b[1][1],
        )
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Spectral condition number `σ_max / σ_min` (infinite when singular).
    pub fn condition(&self) -> f64 {
        let s = self.0.iter().flatten().map(|v| v * v).sum::<f64>();
        let det = self.det();
        let disc = (s * s - 4.0 * det * det).max(0.0).sqrt();
        let smax2 = 0.5 * (s + disc);
        let smin2 = 0.5 * (s - disc);
        if smin2 <= 0.0 {
            f64::INFINITY
        } else {
            (smax2 / smin2).sqrt()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

fn vsub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn vnorm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// The analytic side of a field: values and, optionally, the exact gradient.
pub trait HorizontalMap: Send + Sync {
    fn eval(&self, x: &HPoint) -> [f64; 2];

    fn grad_h(&self, _x: &HPoint) -> Option<Mat2> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Analytic,
    FiniteDifference {
        step: f64,
    },
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// A map `F ∈ C^{1,α}_h(H, R²)` together with how to differentiate it.
#[derive(Clone)]
pub struct FieldModel {
    name: String,
    map: Arc<dyn HorizontalMap>,
    alpha: f64,
    mode: GradientMode,
}

impl fmt::Debug for FieldModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FieldModel")
            .field("name", &self.name)
            .field("alpha", &self.alpha)
            .field("mode", &self.mode)
            .finish()
    }
}

impl FieldModel {
    pub fn new(
        name: impl Into<String>,
        map: Arc<dyn HorizontalMap>,
        alpha: f64,
        mode: GradientMode,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "Hölder exponent must lie in (0, 1], got {alpha}"
            )));
        }
        match mode {
            GradientMode::Analytic => {
                if map.grad_h(&HPoint::ORIGIN).is_none() {
                    return Err(Error::InvalidArgument(
                        "analytic gradient requested but the map provides none".into(),
                    ));
                }
            }
            GradientMode::FiniteDifference { step } => {
                if !(step > 0.0 && step.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "finite-difference step must be positive, got {step}"
                    )));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            map,
            alpha,
            mode,
        })
    }

    /// User-supplied field. Without `grad` the finite-difference mode is used.
    pub fn from_fn<E, G>(
        name: impl Into<String>,
        alpha: f64,
        eval: E,
        grad: Option<G>,
    ) -> Result<Self>
    where
        E: Fn(&HPoint) -> [f64; 2] + Send + Sync + 'static,
        G: Fn(&HPoint) -> Mat2 + Send + Sync + 'static,
    {
        struct Closure<E, G> {
            eval: E,
            grad: Option<G>,
        }
        impl<E, G> HorizontalMap for Closure<E, G>
        where
            E: Fn(&HPoint) -> [f64; 2] + Send + Sync,
            G: Fn(&HPoint) -> Mat2 + Send + Sync,
        {
            fn eval(&self, x: &HPoint) -> [f64; 2] {
                (self.eval)(x)
            }
            fn grad_h(&self, x: &HPoint) -> Option<Mat2> {
                self.grad.as_ref().map(|g| g(x))
            }
        }
        let mode = if grad.is_some() {
            GradientMode::Analytic
        } else {
            GradientMode::FiniteDifference {
                step: DEFAULT_FD_STEP,
            }
        };
        Self::new(name, Arc::new(Closure { eval, grad }), alpha, mode)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mode(&self) -> GradientMode {
        self.mode
    }

    /// Same map, different gradient mode.
    pub fn with_mode(&self, mode: GradientMode) -> Result<Self> {
        Self::new(self.name.clone(), self.map.clone(), self.alpha, mode)
    }

    pub fn eval(&self, x: &HPoint) -> [f64; 2] {
        self.map.eval(x)
    }

    pub fn try_eval(&self, x: &HPoint) -> Result<[f64; 2]> {
        let v = self.map.eval(x);
        if v[0].is_finite() && v[1].is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation(format!(
                "{} is not finite at ({}, {}, {})",
                self.name, x.x1, x.x2, x.x3
            )))
        }
    }

    /// `∇_hF(x) = [X₁F(x), X₂F(x)]`.
    ///
    /// In finite-difference mode the derivatives are central differences along
    /// the flows of `X₁`, `X₂`, i.e. right translations by `(±h, 0, 0)` and
    /// `(0, ±h, 0)`.
    pub fn grad_h(&self, x: &HPoint) -> Result<Mat2> {
        let g = match self.mode {
            GradientMode::Analytic => self.map.grad_h(x).ok_or_else(|| {
                Error::Evaluation(format!("{} has no analytic gradient", self.name))
            })?,
            GradientMode::FiniteDifference { step } => finite_difference_grad(self, x, step)?,
        };
        if g.is_finite() {
            Ok(g)
        } else {
            Err(Error::Evaluation(format!(
                "gradient of {} is not finite at ({}, {}, {})",
                self.name, x.x1, x.x2, x.x3
            )))
        }
    }

    /// `R(x, y) = F(y) − F(x) − ∇_hF(x)(x⁻¹y)^h`.
    pub fn taylor_remainder(&self, x: &HPoint, y: &HPoint) -> Result<[f64; 2]> {
        let grad = self.grad_h(x)?;
        self.taylor_remainder_with(x, &grad, y)
    }

    /// Remainder at `x` with a precomputed gradient `∇_hF(x)`.
    pub fn taylor_remainder_with(&self, x: &HPoint, grad_x: &Mat2, y: &HPoint) -> Result<[f64; 2]> {
        let fx = self.try_eval(x)?;
        let fy = self.try_eval(y)?;
        let lin = grad_x.apply(x.increment_to(y).horizontal());
        Ok([fy[0] - fx[0] - lin[0], fy[1] - fx[1] - lin[1]])
    }

    /// Blow-up `q ↦ (F(p·δ_r q) − F(p)) / r`, with `∇_hF_{p,r}(q) = ∇_hF(p·δ_r q)`.
    pub fn blowup(&self, p: HPoint, r: f64) -> Result<FieldModel> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "blow-up scale must be positive, got {r}"
            )));
        }
        let base = self.clone();
        let fp = self.try_eval(&p)?;
        let name = format!("{}@blowup(r={r})", self.name);
        Ok(FieldModel {
            name,
            map: Arc::new(BlowUp { base, p, r, fp }),
            alpha: self.alpha,
            mode: GradientMode::Analytic,
        })
    }
}

fn finite_difference_grad(f: &FieldModel, x: &HPoint, h: f64) -> Result<Mat2> {
    let column = |dir: HPoint| -> Result<[f64; 2]> {
        let fwd = f.try_eval(&x.mul(&dir))?;
        let bwd = f.try_eval(&x.mul(&dir.inv()))?;
        Ok([(fwd[0] - bwd[0]) / (2.0 * h), (fwd[1] - bwd[1]) / (2.0 * h)])
    };
    let c1 = column(HPoint::new(h, 0.0, 0.0))?;
    let c2 = column(HPoint::new(0.0, h, 0.0))?;
    Ok(Mat2::from_columns(c1, c2))
}

struct BlowUp {
    base: FieldModel,
    p: HPoint,
    r: f64,
    fp: [f64; 2],
}

impl HorizontalMap for BlowUp {
    fn eval(&self, q: &HPoint) -> [f64; 2] {
        let v = self.base.eval(&self.p.mul(&q.dilate(self.r)));
        [(v[0] - self.fp[0]) / self.r, (v[1] - self.fp[1]) / self.r]
    }

    fn grad_h(&self, q: &HPoint) -> Option<Mat2> {
        self.base.grad_h(&self.p.mul(&q.dilate(self.r))).ok()
    }
}

// Built-in catalog.

struct Linear(Mat2);

impl HorizontalMap for Linear {
    fn eval(&self, x: &HPoint) -> [f64; 2] {
        self.0.apply(x.horizontal())
    }

    fn grad_h(&self, _x: &HPoint) -> Option<Mat2> {
        Some(self.0)
    }
}

/// `(x¹, x² + c x³)`.
struct Shear {
    weight: f64,
}

impl HorizontalMap for Shear {
    fn eval(&self, x: &HPoint) -> [f64; 2] {
        [x.x1, x.x2 + self.weight * x.x3]
    }

    fn grad_h(&self, x: &HPoint) -> Option<Mat2> {
        let c = self.weight;
        Some(Mat2::new(1.0, 0.0, -c * x.x2, 1.0 + c * x.x1))
    }
}

/// `(x¹, x² + x³ + a |x¹|^{1+α})`: horizontal gradient exactly `α`-Hölder.
struct HolderShear {
    alpha: f64,
    amplitude: f64,
}

impl HorizontalMap for HolderShear {
    fn eval(&self, x: &HPoint) -> [f64; 2] {
        [
            x.x1,
            x.x2 + x.x3 + self.amplitude * x.x1.abs().powf(1.0 + self.alpha),
        ]
    }

    fn grad_h(&self, x: &HPoint) -> Option<Mat2> {
        let kink =
            self.amplitude * (1.0 + self.alpha) * x.x1.abs().powf(self.alpha) * x.x1.signum();
        Some(Mat2::new(1.0, 0.0, kink - x.x2, 1.0 + x.x1))
    }
}

/// `F(x) = (x¹, x²)`.
pub fn projection() -> FieldModel {
    FieldModel::new(
        "projection",
        Arc::new(Linear(Mat2::IDENTITY)),
        1.0,
        GradientMode::Analytic,
    )
    .expect("valid built-in field")
}

/// `F(x) = M x^h`, a group homomorphism.
pub fn linear(m: Mat2) -> FieldModel {
    FieldModel::new("linear", Arc::new(Linear(m)), 1.0, GradientMode::Analytic)
        .expect("valid built-in field")
}

/// `F(x) = (x¹, x² + x³)`.
pub fn shear() -> FieldModel {
    shear_weighted(1.0)
}

/// `F(x) = (x¹, x² + c x³)`; `c = 1 + 1/n` gives the perturbations `shear + (0, x³/n)`.
pub fn shear_weighted(c: f64) -> FieldModel {
    FieldModel::new(
        format!("shear(c={c})"),
        Arc::new(Shear { weight: c }),
        1.0,
        GradientMode::Analytic,
    )
    .expect("valid built-in field")
}

/// `F(x) = (x¹, x² + x³ + a|x¹|^{1+α})`, only `C^{1,α}_h`.
pub fn holder_shear(alpha: f64, amplitude: f64) -> Result<FieldModel> {
    FieldModel::new(
        format!("holder_shear(alpha={alpha},a={amplitude})"),
        Arc::new(HolderShear { alpha, amplitude }),
        alpha,
        GradientMode::Analytic,
    )
}

/// `F(x) = (x¹, x¹)`: degenerate everywhere.
pub fn degenerate() -> FieldModel {
    let mut f = linear(Mat2::new(1.0, 0.0, 1.0, 0.0));
    f.name = "degenerate".into();
    f
}

/// Default `|det| ` threshold below which a point counts as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nondegeneracy {
    pub det: f64,
    pub condition: f64,
    pub nondegenerate: bool,
}

pub fn nondegeneracy(f: &FieldModel, p: &HPoint) -> Result<Nondegeneracy> {
    nondegeneracy_with_tol(f, p, DEGENERACY_TOL)
}

pub fn nondegeneracy_with_tol(f: &FieldModel, p: &HPoint, tol: f64) -> Result<Nondegeneracy> {
    let g = f.grad_h(p)?;
    let det = g.det();
    Ok(Nondegeneracy {
        det,
        condition: g.condition(),
        nondegenerate: det.abs() > tol,
    })
}

/// Sampled lower bound of `‖∇_hF‖_{α,B(radius, center)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderEstimate {
    pub value: f64,
    pub ball_center: HPoint,
    pub ball_radius: f64,
    pub samples: usize,
}

/// Max of `|∇_hF(x) − ∇_hF(y)| / d(x,y)^α` over `samples` seeded pairs in the
/// ball. Pairs are drawn from one stream, so more samples only add pairs.
pub fn holder_constant(
    f: &FieldModel,
    metric: &MetricConfig,
    center: &HPoint,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<HolderEstimate> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ball radius must be positive, got {radius}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut value: f64 = 0.0;
    for _ in 0..samples {
        let x = metric.sample_ball(center, radius, &mut rng);
        let y = metric.sample_ball(center, radius, &mut rng);
        let d = metric.dist(&x, &y);
        if d <= 1e-12 * radius {
            continue;
        }
        let diff = f.grad_h(&x)?.sub(&f.grad_h(&y)?).norm();
        value = value.max(diff / d.powf(f.alpha()));
    }
    Ok(HolderEstimate {
        value,
        ball_center: *center,
        ball_radius: radius,
        samples,
    })
}

/// Ratios fitted on sampled pairs for the Taylor-type estimates around `p`.
///
/// Each entry is the max of `|lhs| / (H · rhs)` with `H` the sampled Hölder
/// constant on `B(scale·r, p)`: the smallest constant that makes the
/// corresponding inequality hold on the sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorFit {
    /// `|R(x,y)| ≤ c H d(x,y)^{1+α}`.
    pub two_point: f64,
    /// `|R(p,y) − R(p,x)| ≤ c H (r^α gauge_h(x⁻¹y) + gauge_v(x⁻¹y)^{1+α})`.
    pub three_point: f64,
    /// `|R(p,y) − R(p,x)| ≤ c H r^α (gauge_h(x⁻¹y) + gauge_v(x⁻¹y))`.
    pub three_point_weak: f64,
    /// Largest deviation from the algebraic identity
    /// `R(p,y) − R(p,x) = F(y) − F(x) − ∇_hF(p)(x⁻¹y)^h`.
    pub identity_defect: f64,
    pub holder: f64,
}

pub fn fit_taylor_constants(
    f: &FieldModel,
    metric: &MetricConfig,
    p: &HPoint,
    r: f64,
    samples: usize,
    seed: u64,
) -> Result<TaylorFit> {
    let holder = holder_constant(f, metric, p, 4.0 * r, samples, seed)?.value;
    let alpha = f.alpha();
    let gp = f.grad_h(p)?;
    let mut rng = rng::seeded(seed ^ 0x5eed);
    let mut fit = TaylorFit {
        two_point: 0.0,
        three_point: 0.0,
        three_point_weak: 0.0,
        identity_defect: 0.0,
        holder,
    };
    let ratio = |num: f64, den: f64| if num <= 1e-14 { 0.0 } else { num / den };
    for _ in 0..samples {
        let x = metric.sample_ball(p, r, &mut rng);
        let y = metric.sample_ball(p, r, &mut rng);
        let z = x.increment_to(&y);
        let d = metric.norm(&z);
        if d <= 1e-12 {
            continue;
        }
        let rxy = f.taylor_remainder(&x, &y)?;
        fit.two_point = fit
            .two_point
            .max(ratio(vnorm(rxy), holder * d.powf(1.0 + alpha)));

        let rpy = f.taylor_remainder_with(p, &gp, &y)?;
        let rpx = f.taylor_remainder_with(p, &gp, &x)?;
        let diff = vsub(rpy, rpx);
        let (gh, gv) = (z.gauge_h(), z.gauge_v());
        fit.three_point = fit.three_point.max(ratio(
            vnorm(diff),
            holder * (r.powf(alpha) * gh + gv.powf(1.0 + alpha)),
        ));
        fit.three_point_weak = fit
            .three_point_weak
            .max(ratio(vnorm(diff), holder * r.powf(alpha) * (gh + gv)));

        let rhs = vsub(vsub(f.eval(&y), f.eval(&x)), gp.apply(z.horizontal()));
        fit.identity_defect = fit.identity_defect.max(vnorm(vsub(diff, rhs)));
    }
    Ok(fit)
}

/// `sup_q |F_{p,r}(q) − ∇_hF(p) q^h|` over `samples` seeded points of the
/// unit ball, and the analogous sup of the gradient gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowupDeviation {
    pub r: f64,
    pub value_gap: f64,
    pub gradient_gap: f64,
}

pub fn blowup_deviation(
    f: &FieldModel,
    metric: &MetricConfig,
    p: &HPoint,
    r: f64,
    samples: usize,
    seed: u64,
) -> Result<BlowupDeviation> {
    let blown = f.blowup(*p, r)?;
    let gp = f.grad_h(p)?;
    let mut rng = rng::seeded(seed);
    let mut out = BlowupDeviation {
        r,
        value_gap: 0.0,
        gradient_gap: 0.0,
    };
    for _ in 0..samples {
        let q = metric.sample_ball(&HPoint::ORIGIN, 1.0, &mut rng);
        let gap = vsub(blown.try_eval(&q)?, gp.apply(q.horizontal()));
        out.value_gap = out.value_gap.max(vnorm(gap));
        out.gradient_gap = out.gradient_gap.max(blown.grad_h(&q)?.sub(&gp).norm());
    }
    Ok(out)
}

/// Point of `F⁻¹(target)` on the horizontal plane through `x0`.
///
/// Damped Newton on `(a, b) ↦ F(x0·(a, b, 0))` with a central-difference
/// Jacobian and backtracking on the residual.
pub fn level_set_point(
    f: &FieldModel,
    x0: &HPoint,
    target: [f64; 2],
    max_iter: usize,
    tol: f64,
) -> Result<HPoint> {
    let not_found = || Error::SeedNotFound(target[0], target[1]);
    let at = |ab: [f64; 2]| x0.mul(&HPoint::new(ab[0], ab[1], 0.0));
    let resid = |ab: [f64; 2]| -> Result<[f64; 2]> { Ok(vsub(f.try_eval(&at(ab))?, target)) };
    let mut ab = [0.0, 0.0];
    let mut r = resid(ab)?;
    let h = 1e-6;
    for _ in 0..max_iter {
        let norm = vnorm(r);
        if norm <= tol {
            return Ok(at(ab));
        }
        let col = |k: usize| -> Result<[f64; 2]> {
            let (mut p, mut m) = (ab, ab);
            p[k] += h;
            m[k] -= h;
            let (fp, fm) = (f.try_eval(&at(p))?, f.try_eval(&at(m))?);
            Ok([(fp[0] - fm[0]) / (2.0 * h), (fp[1] - fm[1]) / (2.0 * h)])
        };
        let jac = Mat2::from_columns(col(0)?, col(1)?);
        let step = jac.inverse().ok_or_else(not_found)?.apply(r);
        let mut lambda = 1.0;
        loop {
            let trial = [ab[0] - lambda * step[0], ab[1] - lambda * step[1]];
            let rt = resid(trial)?;
            if vnorm(rt) < norm {
                ab = trial;
                r = rt;
                break;
            }
            lambda *= 0.5;
            if lambda < 1e-6 {
                return Err(not_found());
            }
        }
    }
    if vnorm(r) <= tol {
        Ok(at(ab))
    } else {
        Err(not_found())
    }
}
