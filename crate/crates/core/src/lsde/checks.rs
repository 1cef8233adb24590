use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{solve, SolverConfig, Trace};
use crate::error::{Error, Result};
use crate::field::{level_set_point, FieldModel};
use crate::hgroup::{HPoint, MetricConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectivityReport {
    pub rho: f64,
    /// Largest `δ ≤` half-width with `(2δ)^α ‖E‖ ≤ 1/2`.
    pub delta_max: f64,
    /// `sup |t − s|^{1/2} / d(γ_s, γ_t)` over pairs with `|t − s| ≤ 2δ_max`.
    pub ratio: f64,
    pub holds: bool,
}

/// Checks `|t − s|^{1/2} ≤ ρ d(γ_s, γ_t)` for `|t − s| ≤ 2δ_max`.
///
/// The natural choice is `ρ = √2 c`. With no admissible pair nothing is
/// verified and the check fails.
pub fn injectivity_check(trace: &Trace, metric: &MetricConfig, rho: f64) -> InjectivityReport {
    let (a, b) = trace.interval();
    let half_width = b.max(-a);
    let e = trace.diagnostics.error_norm;
    let from_error = if e > 0.0 {
        0.5 * (0.5 / e).powf(1.0 / trace.alpha)
    } else if e == 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let delta_max = half_width.min(from_error);
    let window = 2.0 * delta_max * (1.0 + 1e-12);
    let any_pair = trace.times.windows(2).any(|w| w[1] - w[0] <= window);
    let (t, g) = (&trace.times, &trace.points);
    let ratio = trace.pair_sup(|i, j| {
        let dt = t[j] - t[i];
        if dt > window {
            return 0.0;
        }
        let d = metric.dist(&g[i], &g[j]);
        if d == 0.0 {
            f64::INFINITY
        } else {
            dt.sqrt() / d
        }
    });
    InjectivityReport {
        rho,
        delta_max,
        ratio,
        holds: any_pair && ratio <= rho,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulusReport {
    /// `‖γ^h‖_{(1+α)/2}`.
    pub holder_h: f64,
    /// `sup d(γ_s, γ_t) / |t − s|^{1/2}`.
    pub holder_d_half: f64,
}

pub fn modulus_check(trace: &Trace, metric: &MetricConfig) -> ModulusReport {
    let (t, g) = (&trace.times, &trace.points);
    let hexp = 0.5 * (1.0 + trace.alpha);
    ModulusReport {
        holder_h: trace.pair_sup(|i, j| {
            (g[j].x1 - g[i].x1).hypot(g[j].x2 - g[i].x2) / (t[j] - t[i]).powf(hexp)
        }),
        holder_d_half: trace.pair_sup(|i, j| metric.dist(&g[i], &g[j]) / (t[j] - t[i]).sqrt()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionBranch {
    /// `gauge_v ≤ gauge_h` already at `t = 0`.
    Origin,
    /// Root of `(γ_t⁻¹x)^v − gauge_h(γ_t⁻¹x)²` on `(0, 2x^v]`.
    Upper,
    /// Root of `(γ_t⁻¹x)^v + gauge_h(γ_t⁻¹x)²` on `[2x^v, 0)`.
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub t: f64,
    pub branch: ProjectionBranch,
    /// `|G(t)|` at the returned time.
    pub residual: f64,
}

/// A time `t` with `gauge_v(γ_t⁻¹x) ≤ gauge_h(γ_t⁻¹x)`, found by bisection of
/// the sign change of `G` along the piecewise-linear trace.
pub fn project_point(trace: &Trace, x: &HPoint, tol: f64) -> Result<Projection> {
    let xr = trace.start.increment_to(x);
    if xr.gauge_v() <= xr.gauge_h() {
        return Ok(Projection {
            t: 0.0,
            branch: ProjectionBranch::Origin,
            residual: 0.0,
        });
    }
    let sign = xr.x3.signum();
    let branch = if sign > 0.0 {
        ProjectionBranch::Upper
    } else {
        ProjectionBranch::Lower
    };
    let g = |t: f64| -> f64 {
        let y = trace
            .point_at(t)
            .expect("bracket lies in the interval")
            .increment_to(x);
        y.x3 - sign * y.gauge_h().powi(2)
    };
    let (a, b) = trace.interval();
    let end = (2.0 * xr.x3).clamp(a, b);
    let (mut lo, mut hi) = (0.0, end);
    let (g_lo, g_hi) = (g(lo), g(hi));
    if g_hi.signum() == g_lo.signum() && g_hi != 0.0 {
        return Err(Error::NotFound(format!(
            "no sign change of G on [0, {end}]: G(0) = {g_lo:.3e}, G(end) = {g_hi:.3e}"
        )));
    }
    let mut mid = hi;
    let mut g_mid = g_hi;
    for _ in 0..200 {
        if g_mid.abs() <= tol {
            break;
        }
        mid = 0.5 * (lo + hi);
        g_mid = g(mid);
        if g_mid.signum() == g_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= f64::EPSILON * (a.abs() + b.abs()) {
            break;
        }
    }
    Ok(Projection {
        t: mid,
        branch,
        residual: g_mid.abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurjectivityReport {
    /// Max over sampled level-set points of the distance to the nearest node.
    pub max_gap: f64,
    pub mean_gap: f64,
    pub accepted: usize,
    pub rejected: usize,
}

/// One-sided Hausdorff distance from sampled points of
/// `F⁻¹(F(γ_0)) ∩ B(eps, p)` to the grid nodes of the trace.
///
/// Candidates are drawn uniformly in the ball and moved onto the level set by
/// Newton along the horizontal plane through them; points that fail to
/// converge, leave the ball or miss the level by more than `level_tol` are
/// rejected.
pub fn surjectivity_check(
    f: &FieldModel,
    trace: &Trace,
    metric: &MetricConfig,
    eps: f64,
    samples: usize,
    level_tol: f64,
    seed: u64,
) -> Result<SurjectivityReport> {
    let p = trace.base_point;
    let target = f.try_eval(&trace.start)?;
    let mut rng = rng::seeded(seed);
    let mut points = Vec::with_capacity(samples);
    let mut rejected = 0;
    let max_attempts = 100 * samples.max(1);
    while points.len() < samples && points.len() + rejected < max_attempts {
        let x0 = metric.sample_ball(&p, eps, &mut rng);
        let accepted = level_set_point(f, &x0, target, 60, 0.01 * level_tol)
            .ok()
            .filter(|x| metric.dist(x, &p) <= eps)
            .filter(|x| {
                let v = f.eval(x);
                (v[0] - target[0]).hypot(v[1] - target[1]) <= level_tol
            });
        match accepted {
            Some(x) => points.push(x),
            None => rejected += 1,
        }
    }
    let gaps: Vec<f64> = points
        .par_iter()
        .map(|x| {
            trace
                .points
                .iter()
                .map(|g| metric.dist(x, g))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    let mean_gap = if gaps.is_empty() {
        0.0
    } else {
        gaps.iter().sum::<f64>() / gaps.len() as f64
    };
    Ok(SurjectivityReport {
        max_gap,
        mean_gap,
        accepted: points.len(),
        rejected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceDistance {
    pub sup_distance: f64,
    pub common_nodes: usize,
}

/// Sup of `d(γ^A_t, γ^B_t)` over nodes present in both grids.
pub fn trace_distance(a: &Trace, b: &Trace, metric: &MetricConfig) -> TraceDistance {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let (l0, l1) = long.interval();
    let tol = 1e-12 * (l1 - l0);
    let mut out = TraceDistance {
        sup_distance: 0.0,
        common_nodes: 0,
    };
    for (t, x) in short.times.iter().zip(&short.points) {
        let k = long.times.partition_point(|s| *s < t - tol);
        if k < long.len() && (long.times[k] - t).abs() <= tol {
            out.common_nodes += 1;
            out.sup_distance = out.sup_distance.max(metric.dist(x, &long.points[k]));
        }
    }
    out
}

/// Solves twice and compares the traces on common nodes.
pub fn uniqueness_check(
    f: &FieldModel,
    p: &HPoint,
    q: &HPoint,
    cfg_a: &SolverConfig,
    cfg_b: &SolverConfig,
    metric: &MetricConfig,
) -> Result<TraceDistance> {
    let (a, b) = rayon::join(|| solve(f, p, q, cfg_a), || solve(f, p, q, cfg_b));
    Ok(trace_distance(&a?, &b?, metric))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityEntry {
    pub index: usize,
    pub field: String,
    pub sup_distance: f64,
    pub common_nodes: usize,
    pub iterations: usize,
}

/// Uniform distance of the trace of each `fields[n]` to the trace of `limit`.
pub fn stability_run(
    fields: &[FieldModel],
    limit: &FieldModel,
    p: &HPoint,
    q: &HPoint,
    cfg: &SolverConfig,
    metric: &MetricConfig,
) -> Result<Vec<StabilityEntry>> {
    let reference = solve(limit, p, q, cfg)?;
    fields
        .par_iter()
        .enumerate()
        .map(|(index, fin)| {
            let trace = solve(fin, p, q, cfg)?;
            let d = trace_distance(&trace, &reference, metric);
            Ok(StabilityEntry {
                index,
                field: fin.name().to_string(),
                sup_distance: d.sup_distance,
                common_nodes: d.common_nodes,
                iterations: trace.diagnostics.iterations,
            })
        })
        .collect()
}
