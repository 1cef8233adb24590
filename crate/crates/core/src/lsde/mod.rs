//! Solver for the level set differential equation
//!
//! ```text
//! (γ_s⁻¹γ_t)^h = −∇_hF(p)⁻¹ (R(p, γ_t) − R(p, γ_s))
//! (γ_s⁻¹γ_t)^v = t − s + E_st
//! ```
//!
//! on `[−δ, δ]` with `γ_0 = q`, by damped Picard iteration of the map
//! `η ↦ q^h − ∇_hF(p)⁻¹ (R(p, η̄_t) − R(p, q))`, where `η̄ = (η, f)` and `f`
//! is sewn from the germ `A_st = (t − s) − (η¹_t η²_s − η¹_s η²_t)` with `f_0 = q³`.

mod checks;
mod radii;

pub use checks::{
    injectivity_check, modulus_check, project_point, stability_run, surjectivity_check,
    trace_distance, uniqueness_check, InjectivityReport, ModulusReport, Projection,
    ProjectionBranch, StabilityEntry, SurjectivityReport, TraceDistance,
};
pub use radii::{admissible_radii, Condition, RadiiCertificate, RadiiOptions};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldModel, Mat2, DEGENERACY_TOL};
use crate::hgroup::HPoint;
use crate::sewing::{self, SampledFunction};

/// Condition number of `∇_hF(p)` above which traces are flagged.
pub const ILL_CONDITIONED: f64 = 1e8;

/// Largest grid level for which [`PairMode::Auto`] scans all pairs.
pub const FULL_PAIRS_MAX_LEVEL: u32 = 12;

/// Which node pairs the sup-over-pairs diagnostics visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    Full,
    /// Dyadic sub-intervals, adjacent nodes and pairs through `t = 0`.
    Dyadic,
    #[default]
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Half-width of the parameter interval `[−δ, δ]`.
    pub delta: f64,
    /// The grid has `2^grid_levels + 1` nodes.
    pub grid_levels: u32,
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub halving_retries: usize,
    pub pair_mode: PairMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            grid_levels: 10,
            tol: 1e-10,
            max_iter: 200,
            damping: 1.0,
            halving_retries: 4,
            pair_mode: PairMode::Auto,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if !(4..=24).contains(&self.grid_levels) {
            return bad(format!(
                "grid_levels must lie in [4, 24], got {}",
                self.grid_levels
            ));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad(format!("damping must lie in (0, 1], got {}", self.damping));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        Ok(())
    }
}

/// Sup-over-pairs diagnostics of a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `sup |(γ_s⁻¹γ_t)^h + ∇_hF(p)⁻¹(R(p,γ_t) − R(p,γ_s))|`.
    pub residual_h: f64,
    /// `‖E‖ = sup |E_st| / |t − s|^{1+α}`.
    pub error_norm: f64,
    /// `sup_t |F(γ_t) − F(γ_0)|`.
    pub levelset_drift: f64,
    /// `‖γ^h‖_{(1+α)/2}`.
    pub holder_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDiagnostics {
    pub error_norm: f64,
    pub holder_h: f64,
    pub residual_h: f64,
    pub levelset_drift: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Half-width actually used, after any halving restarts.
    pub delta: f64,
    pub halvings: usize,
    pub condition: f64,
    pub ill_conditioned: bool,
    pub warnings: Vec<String>,
}

/// A discretised LSDE solution `t ↦ γ_t` on a grid containing `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub times: Vec<f64>,
    pub points: Vec<HPoint>,
    pub base_point: HPoint,
    pub start: HPoint,
    pub alpha: f64,
    /// Index of the node `t = 0`.
    pub center: usize,
    pub pair_mode: PairMode,
    pub diagnostics: TraceDiagnostics,
}

impl Trace {
    /// Wraps an externally produced path and evaluates its diagnostics.
    /// The trace counts as converged when `residual_h ≤ tol` and `‖E‖` is finite.
    pub fn from_path(
        f: &FieldModel,
        base_point: HPoint,
        times: Vec<f64>,
        points: Vec<HPoint>,
        tol: f64,
        pair_mode: PairMode,
    ) -> Result<Trace> {
        sewing::check_grid(&times)?;
        if times.len() != points.len() {
            return Err(Error::InvalidGrid(format!(
                "{} times but {} points",
                times.len(),
                points.len()
            )));
        }
        if let Some(bad) = points.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidGrid(format!("point {bad} is not finite")));
        }
        let center = times
            .iter()
            .position(|&t| t == 0.0)
            .ok_or_else(|| Error::InvalidGrid("the grid must contain t = 0".into()))?;
        let grad = f.grad_h(&base_point)?;
        let mut trace = Trace {
            start: points[center],
            times,
            points,
            base_point,
            alpha: f.alpha(),
            center,
            pair_mode,
            diagnostics: TraceDiagnostics::empty(),
        };
        let res = residuals(f, &trace)?;
        let d = &mut trace.diagnostics;
        d.converged = res.residual_h <= tol && res.error_norm.is_finite();
        d.condition = grad.condition();
        d.ill_conditioned = d.condition > ILL_CONDITIONED;
        d.delta = trace.times[trace.times.len() - 1].max(-trace.times[0]);
        trace.set_residuals(&res);
        Ok(trace)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `L` when the grid has `2^L + 1` nodes.
    pub fn grid_levels(&self) -> Option<u32> {
        let n = self.times.len().checked_sub(1)?;
        n.is_power_of_two().then(|| n.trailing_zeros())
    }

    /// Largest spacing between consecutive nodes.
    pub fn mesh(&self) -> f64 {
        self.times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.times[0], self.times[self.times.len() - 1])
    }

    /// Piecewise-linear interpolation in coordinates; `None` outside the grid.
    pub fn point_at(&self, t: f64) -> Option<HPoint> {
        let (a, b) = self.interval();
        if !(t >= a && t <= b) {
            return None;
        }
        let k = match self.times.binary_search_by(|s| s.partial_cmp(&t).unwrap()) {
            Ok(k) => return Some(self.points[k]),
            Err(k) => k,
        };
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let (x, y) = (self.points[k - 1], self.points[k]);
        let u = (t - t0) / (t1 - t0);
        Some(HPoint::new(
            x.x1 + u * (y.x1 - x.x1),
            x.x2 + u * (y.x2 - x.x2),
            x.x3 + u * (y.x3 - x.x3),
        ))
    }

    pub fn to_sampled_function(&self) -> SampledFunction {
        let values = self
            .points
            .iter()
            .flat_map(|x| [x.x1, x.x2, x.x3])
            .collect();
        SampledFunction::new(self.times.clone(), 3, values).expect("trace grids are valid")
    }

    fn resolved_mode(&self) -> PairMode {
        match (self.pair_mode, self.grid_levels()) {
            (PairMode::Auto, Some(l)) if l > FULL_PAIRS_MAX_LEVEL => PairMode::Dyadic,
            (PairMode::Dyadic, Some(_)) => PairMode::Dyadic,
            _ => PairMode::Full,
        }
    }

    /// Sup of `g(i, j)` over the node pairs `i < j` selected by the pair mode.
    pub(crate) fn pair_sup<G>(&self, g: G) -> f64
    where
        G: Fn(usize, usize) -> f64 + Sync,
    {
        let n = self.len();
        match self.resolved_mode() {
            PairMode::Dyadic => {
                let levels = self.grid_levels().expect("dyadic mode needs 2^L + 1 nodes");
                let c = self.center;
                let dyadic = sewing::dyadic_pairs(levels).map(|(i, j)| g(i, j));
                let through_center =
                    (0..n)
                        .filter(|&j| j != c)
                        .map(|j| if j < c { g(j, c) } else { g(c, j) });
                dyadic.chain(through_center).fold(0.0, nan_max)
            }
            _ => (0..n)
                .into_par_iter()
                .map(|i| ((i + 1)..n).map(|j| g(i, j)).fold(0.0, nan_max))
                .reduce(|| 0.0, nan_max),
        }
    }

    fn set_residuals(&mut self, r: &Residuals) {
        let d = &mut self.diagnostics;
        d.error_norm = r.error_norm;
        d.holder_h = r.holder_h;
        d.residual_h = r.residual_h;
        d.levelset_drift = r.levelset_drift;
    }
}

impl TraceDiagnostics {
    fn empty() -> Self {
        Self {
            error_norm: f64::NAN,
            holder_h: f64::NAN,
            residual_h: f64::NAN,
            levelset_drift: f64::NAN,
            iterations: 0,
            converged: false,
            delta: f64::NAN,
            halvings: 0,
            condition: f64::NAN,
            ill_conditioned: false,
            warnings: Vec::new(),
        }
    }
}

/// Max that propagates NaN, so corrupted values never look small.
fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

/// `a·b − c·d` with one rounding error of the result.
#[inline]
fn diff_of_products(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let w = c * d;
    let e = (-c).mul_add(d, w);
    let f = a.mul_add(b, -w);
    f + e
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

/// `E_st = (γ_s⁻¹γ_t)^v − (t − s)`, evaluated without cancellation loss.
#[inline]
pub(crate) fn vertical_error(s: f64, t: f64, x: &HPoint, y: &HPoint) -> f64 {
    let (df, ef) = two_sum(y.x3, -x.x3);
    let (dt, et) = two_sum(t, -s);
    let cross = diff_of_products(y.x1, x.x2, x.x1, y.x2);
    ((df - dt) + cross) + (ef - et)
}

/// The germ `A_st = (t − s) − (η¹_t η²_s − η¹_s η²_t)`.
#[inline]
fn germ(s: f64, t: f64, es: [f64; 2], et: [f64; 2]) -> f64 {
    (t - s) - diff_of_products(et[0], es[1], es[0], et[1])
}

/// Residuals of `trace` as a solution of the LSDE for `f`.
pub fn residuals(f: &FieldModel, trace: &Trace) -> Result<Residuals> {
    let p = trace.base_point;
    let grad = f.grad_h(&p)?;
    let inv = grad
        .inverse()
        .ok_or(Error::DegeneratePoint { det: grad.det() })?;
    // v_t = γ^h_t + ∇F(p)⁻¹R(p,γ_t); the horizontal residual is sup |v_t − v_s|
    let v: Vec<[f64; 2]> = trace
        .points
        .iter()
        .map(|x| {
            let r = f.taylor_remainder_with(&p, &grad, x)?;
            let c = inv.apply(r);
            Ok([x.x1 + c[0], x.x2 + c[1]])
        })
        .collect::<Result<_>>()?;
    let f0 = f.try_eval(&trace.start)?;
    let drift = trace
        .points
        .iter()
        .map(|x| {
            let fx = f.try_eval(x)?;
            Ok((fx[0] - f0[0]).hypot(fx[1] - f0[1]))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, nan_max);

    let (t, g, a) = (&trace.times, &trace.points, trace.alpha);
    let hexp = 0.5 * (1.0 + a);
    let residual_h = trace.pair_sup(|i, j| (v[j][0] - v[i][0]).hypot(v[j][1] - v[i][1]));
    let error_norm = trace.pair_sup(|i, j| {
        vertical_error(t[i], t[j], &g[i], &g[j]).abs() / (t[j] - t[i]).powf(1.0 + a)
    });
    let holder_h = trace
        .pair_sup(|i, j| (g[j].x1 - g[i].x1).hypot(g[j].x2 - g[i].x2) / (t[j] - t[i]).powf(hexp));
    Ok(Residuals {
        residual_h,
        error_norm,
        levelset_drift: drift,
        holder_h,
    })
}

/// Solves the LSDE for `f` with base point `p` and `γ_0 = q`.
pub fn solve(f: &FieldModel, p: &HPoint, q: &HPoint, cfg: &SolverConfig) -> Result<Trace> {
    cfg.validate()?;
    if !p.is_finite() || !q.is_finite() {
        return Err(Error::InvalidArgument("p and q must be finite".into()));
    }
    let grad = f.grad_h(p)?;
    let det = grad.det();
    if det.abs() <= DEGENERACY_TOL {
        return Err(Error::DegeneratePoint { det });
    }
    let inv = grad.inverse().ok_or(Error::DegeneratePoint { det })?;
    let condition = grad.condition();

    let mut delta = cfg.delta;
    let mut last = (0, f64::NAN, f64::NAN);
    for halvings in 0..=cfg.halving_retries {
        match picard(f, p, q, &grad, &inv, delta, cfg) {
            Ok((times, points, iterations)) => {
                let mut trace = Trace {
                    center: times.len() / 2,
                    times,
                    points,
                    base_point: *p,
                    start: *q,
                    alpha: f.alpha(),
                    pair_mode: cfg.pair_mode,
                    diagnostics: TraceDiagnostics::empty(),
                };
                let res = residuals(f, &trace)?;
                if res.residual_h <= cfg.tol && res.error_norm.is_finite() {
                    trace.set_residuals(&res);
                    let d = &mut trace.diagnostics;
                    d.iterations = iterations;
                    d.converged = true;
                    d.delta = delta;
                    d.halvings = halvings;
                    d.condition = condition;
                    d.ill_conditioned = condition > ILL_CONDITIONED;
                    if d.ill_conditioned {
                        d.warnings.push(format!(
                            "gradient at the base point is ill-conditioned (condition {condition:.3e})"
                        ));
                    }
                    if halvings > 0 {
                        d.warnings.push(format!(
                            "interval halved {halvings} time(s) to delta = {delta}"
                        ));
                    }
                    return Ok(trace);
                }
                last = (iterations, delta, res.residual_h);
            }
            Err(Stalled { iterations, change }) => last = (iterations, delta, change),
        }
        delta *= 0.5;
    }
    Err(Error::NonConvergence {
        iterations: last.0,
        delta: last.1,
        change: last.2,
    })
}

struct Stalled {
    iterations: usize,
    change: f64,
}

type PicardOutput = (Vec<f64>, Vec<HPoint>, usize);

fn picard(
    f: &FieldModel,
    p: &HPoint,
    q: &HPoint,
    grad: &Mat2,
    inv: &Mat2,
    delta: f64,
    cfg: &SolverConfig,
) -> std::result::Result<PicardOutput, Stalled> {
    let times = sewing::symmetric_grid(delta, cfg.grid_levels);
    let n = times.len();
    let c = n / 2;
    let qh = q.horizontal();
    let rq = f.taylor_remainder_with(p, grad, q).map_err(|_| Stalled {
        iterations: 0,
        change: f64::NAN,
    })?;
    let mut eta = vec![qh; n];
    let mut f3 = vec![0.0; n];
    let stop = 0.1 * cfg.tol;
    let theta = cfg.damping;
    let mut change = f64::INFINITY;
    let mut previous = f64::INFINITY;

    for it in 1..=cfg.max_iter {
        sew_vertical(&times, &eta, q.x3, c, &mut f3);
        change = 0.0;
        for k in 0..n {
            let x = HPoint::new(eta[k][0], eta[k][1], f3[k]);
            let r = match f.taylor_remainder_with(p, grad, &x) {
                Ok(r) => r,
                Err(_) => {
                    return Err(Stalled {
                        iterations: it,
                        change: f64::NAN,
                    })
                }
            };
            let u = inv.apply([r[0] - rq[0], r[1] - rq[1]]);
            let phi = [qh[0] - u[0], qh[1] - u[1]];
            let new = [
                eta[k][0] + theta * (phi[0] - eta[k][0]),
                eta[k][1] + theta * (phi[1] - eta[k][1]),
            ];
            change = nan_max(change, (new[0] - eta[k][0]).hypot(new[1] - eta[k][1]));
            eta[k] = new;
        }
        if !change.is_finite() {
            return Err(Stalled {
                iterations: it,
                change,
            });
        }
        // below tolerance, keep going while the map still contracts, so the
        // result is accurate to rounding rather than to `tol`
        let polished = change == 0.0 || (change < stop && change >= 0.9 * previous);
        previous = change;
        if polished || (change < stop && it == cfg.max_iter) {
            sew_vertical(&times, &eta, q.x3, c, &mut f3);
            let points = (0..n)
                .map(|k| HPoint::new(eta[k][0], eta[k][1], f3[k]))
                .collect();
            return Ok((times, points, it));
        }
    }
    Err(Stalled {
        iterations: cfg.max_iter,
        change,
    })
}

/// Compound sums of the vertical germ, outward from `t = 0` where `f = f0`.
///
/// The running sum is carried in double-double, so each stored value is the
/// rounded exact partial sum and rounding does not accumulate along the grid.
fn sew_vertical(times: &[f64], eta: &[[f64; 2]], f0: f64, c: usize, out: &mut [f64]) {
    out[c] = f0;
    let (mut hi, mut lo) = (f0, 0.0);
    for j in c..times.len() - 1 {
        let (s, e) = two_sum(hi, germ(times[j], times[j + 1], eta[j], eta[j + 1]));
        (hi, lo) = fast_two_sum(s, e + lo);
        out[j + 1] = hi;
    }
    let (mut hi, mut lo) = (f0, 0.0);
    for j in (1..=c).rev() {
        let (s, e) = two_sum(hi, -germ(times[j - 1], times[j], eta[j - 1], eta[j]));
        (hi, lo) = fast_two_sum(s, e + lo);
        out[j - 1] = hi;
    }
}

#[inline]
fn fast_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

/// Like [`solve`], with a warning recorded when `q` lies outside `B(ε₀, p)`.
pub fn solve_certified(
    f: &FieldModel,
    p: &HPoint,
    q: &HPoint,
    cfg: &SolverConfig,
    cert: &RadiiCertificate,
    metric: &crate::hgroup::MetricConfig,
) -> Result<Trace> {
    let mut trace = solve(f, p, q, cfg)?;
    let d = metric.dist(p, q);
    if d > cert.eps0 {
        trace.diagnostics.warnings.push(format!(
            "start point is at distance {d:.4e} from the base point, outside eps0 = {:.4e}",
            cert.eps0
        ));
    }
    Ok(trace)
}
