use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{area_between, Cuboid, MeasureReport};
use crate::error::{Error, Result};
use crate::field::{level_set_point, FieldModel};
use crate::hgroup::{HPoint, MetricConfig};
use crate::lsde::{solve, PairMode, SolverConfig, Trace};
use crate::rng;

/// A level curve assembled from LSDE traces glued end to end.
///
/// Each piece contributes the nodes `lo..=hi`: the first piece all of them,
/// forward pieces their `t ≥ 0` half and backward pieces their `t ≤ 0` half.
#[derive(Debug, Clone)]
pub struct LevelCurve {
    pub pieces: Vec<(Trace, usize, usize)>,
    /// Gluing stopped at the piece limit while the curve was still inside.
    pub truncated: bool,
    /// Largest coordinate gap between consecutive pieces on their common
    /// parameter range; by uniqueness it should sit at rounding level.
    pub overlap_gap: f64,
}

/// Coordinate gap on the overlap of `prev` and `next`, where `next` starts at
/// the last (`forward`) or first node of `prev`. Pieces on different grids
/// (after a step-size halving) are not compared.
fn overlap(prev: &Trace, next: &Trace, forward: bool) -> f64 {
    if prev.len() != next.len() || (prev.mesh() - next.mesh()).abs() > 1e-12 * prev.mesh() {
        return 0.0;
    }
    let (n, c) = (prev.len() - 1, prev.center);
    let pairs: Box<dyn Iterator<Item = (usize, usize)>> = if forward {
        // prev on [0, δ] against next on [−δ, 0]
        Box::new((c..=n).map(move |i| (i, i - c)))
    } else {
        Box::new((0..=c).map(move |i| (i, i + c)))
    };
    pairs
        .map(|(i, j)| {
            let (a, b) = (&prev.points[i], &next.points[j]);
            (a.x1 - b.x1)
                .abs()
                .max((a.x2 - b.x2).abs())
                .max((a.x3 - b.x3).abs())
        })
        .fold(0.0, f64::max)
}

impl LevelCurve {
    pub fn parameter_length(&self) -> f64 {
        self.pieces
            .iter()
            .map(|(t, lo, hi)| t.times[*hi] - t.times[*lo])
            .sum()
    }

    /// Parameter length spent inside the box.
    pub fn area(&self, cuboid: &Cuboid) -> f64 {
        self.pieces
            .iter()
            .map(|(t, lo, hi)| area_between(t, cuboid, *lo, *hi))
            .sum()
    }

    /// Trapezoid rule for `∫ u(γ_τ) dτ`.
    pub fn integrate(&self, u: impl Fn(&HPoint) -> f64) -> f64 {
        let mut total = 0.0;
        for (t, lo, hi) in &self.pieces {
            let mut prev = u(&t.points[*lo]);
            for k in *lo..*hi {
                let next = u(&t.points[k + 1]);
                total += 0.5 * (prev + next) * (t.times[k + 1] - t.times[k]);
                prev = next;
            }
        }
        total
    }
}

/// Traces the level set of `F` through `seed` in both directions, restarting
/// the solver at each end while that end satisfies `inside`.
pub fn trace_level_curve(
    f: &FieldModel,
    seed: &HPoint,
    inside: impl Fn(&HPoint) -> bool,
    cfg: &SolverConfig,
    max_pieces: usize,
) -> Result<LevelCurve> {
    let first = solve(f, seed, seed, cfg)?;
    let n = first.len();
    let (mut front, mut back) = (first.points[n - 1], first.points[0]);
    let mut pieces = vec![(first, 0, n - 1)];
    let mut truncated = false;
    let mut overlap_gap: f64 = 0.0;
    let mut last = 0;
    while inside(&front) {
        if pieces.len() >= max_pieces {
            truncated = true;
            break;
        }
        let t = solve(f, &front, &front, cfg)?;
        overlap_gap = overlap_gap.max(overlap(&pieces[last].0, &t, true));
        front = t.points[t.len() - 1];
        let (c, end) = (t.center, t.len() - 1);
        pieces.push((t, c, end));
        last = pieces.len() - 1;
    }
    last = 0;
    while inside(&back) {
        if pieces.len() >= max_pieces {
            truncated = true;
            break;
        }
        let t = solve(f, &back, &back, cfg)?;
        overlap_gap = overlap_gap.max(overlap(&pieces[last].0, &t, false));
        back = t.points[0];
        let c = t.center;
        pieces.push((t, 0, c));
        last = pieces.len() - 1;
    }
    Ok(LevelCurve {
        pieces,
        truncated,
        overlap_gap,
    })
}

fn find_seed(
    f: &FieldModel,
    target: [f64; 2],
    starts: impl Iterator<Item = HPoint>,
    accept: impl Fn(&HPoint) -> bool,
    newton_iter: usize,
    newton_tol: f64,
) -> Option<HPoint> {
    starts
        .filter_map(|x0| level_set_point(f, &x0, target, newton_iter, newton_tol).ok())
        .find(|x| accept(x))
}

/// `n³` fractional points including the corners of `[0, 1]³`.
fn lattice(n: usize) -> impl Iterator<Item = [f64; 3]> + Clone {
    let n = n.max(2);
    let c = move |i: usize| i as f64 / (n - 1) as f64;
    (0..n).flat_map(move |i| (0..n).flat_map(move |j| (0..n).map(move |k| [c(i), c(j), c(k)])))
}

/// Smallest rectangle holding the given values, padded by `pad` times its size.
fn bounding_rect(values: impl Iterator<Item = [f64; 2]>, pad: f64) -> Result<[[f64; 2]; 2]> {
    let mut rect = [[f64::INFINITY, f64::NEG_INFINITY]; 2];
    for v in values {
        for k in 0..2 {
            rect[k][0] = rect[k][0].min(v[k]);
            rect[k][1] = rect[k][1].max(v[k]);
        }
    }
    for side in &mut rect {
        if !(side[0].is_finite() && side[1].is_finite()) {
            return Err(Error::Evaluation(
                "field has no finite values on the region".into(),
            ));
        }
        let w = (side[1] - side[0]).max(1e-9);
        side[0] -= pad * w;
        side[1] += pad * w;
    }
    Ok(rect)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoareaOptions {
    /// Midpoint nodes per axis for `∫_box J_hF`.
    pub lhs_nodes: usize,
    /// Target number of level-set samples; rounded up to an even square.
    pub z_samples: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    pub max_pieces: usize,
    /// Random Newton starts tried after the center and the 27 points of a 3×3×3 lattice.
    pub seed_attempts: usize,
    pub newton_iter: usize,
    pub newton_tol: f64,
    /// Lattice size per axis used to bound `F(box)`.
    pub rect_lattice: usize,
    pub rect_pad: f64,
}

impl Default for CoareaOptions {
    fn default() -> Self {
        Self {
            lhs_nodes: 64,
            z_samples: 2048,
            seed: 0x5eed,
            solver: SolverConfig {
                pair_mode: PairMode::Dyadic,
                ..SolverConfig::default()
            },
            max_pieces: 64,
            seed_attempts: 32,
            newton_iter: 60,
            newton_tol: 1e-12,
            rect_lattice: 17,
            rect_pad: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZStatus {
    Traced,
    SeedNotFound,
    SolverFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZSample {
    pub z: [f64; 2],
    /// `L¹{τ : γ_τ ∈ box}` along the traced level curve.
    pub value: f64,
    pub pieces: usize,
    pub truncated: bool,
    pub overlap_gap: f64,
    pub status: ZStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoareaReport {
    pub report: MeasureReport,
    pub standard_error: f64,
    pub z_rect: [[f64; 2]; 2],
    pub seeds_not_found: usize,
    pub solver_failures: usize,
    pub truncated: usize,
    /// Largest overlap gap between glued pieces over all samples.
    pub overlap_gap: f64,
    pub samples: Vec<ZSample>,
}

/// Compares `∫_box J_hF dL³` with `∫_{R²} L¹{τ : γ^z_τ ∈ box} dz`.
///
/// The left side is a midpoint rule. The right side is jittered stratified
/// Monte Carlo over a rectangle containing `F(box)`; each sample finds a point
/// of `F⁻¹(z)` in the box by Newton and traces the level curve through it.
/// Samples without a seed contribute zero. Only the component through the seed
/// is traced.
pub fn coarea_check(f: &FieldModel, cuboid: &Cuboid, opts: &CoareaOptions) -> Result<CoareaReport> {
    cuboid.validate()?;
    opts.solver.validate()?;
    if opts.lhs_nodes == 0 || opts.z_samples == 0 || opts.rect_lattice == 0 {
        return Err(Error::InvalidArgument(
            "sample counts must be positive".into(),
        ));
    }

    let n = opts.lhs_nodes;
    let cell = cuboid.volume() / (n * n * n) as f64;
    let lhs = (0..n)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut s = 0.0;
            for j in 0..n {
                for k in 0..n {
                    let u = |m: usize| (m as f64 + 0.5) / n as f64;
                    s += super::jacobian_h(f, &cuboid.at([u(i), u(j), u(k)]))?;
                }
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?
        .iter()
        .sum::<f64>()
        * cell;

    let values = lattice(opts.rect_lattice)
        .map(|u| f.try_eval(&cuboid.at(u)))
        .collect::<Result<Vec<_>>>()?;
    let rect = bounding_rect(values.into_iter(), opts.rect_pad)?;

    let mut m = (opts.z_samples as f64).sqrt().ceil() as usize;
    m += m % 2;
    let (w0, w1) = (rect[0][1] - rect[0][0], rect[1][1] - rect[1][0]);
    let starts: Vec<HPoint> = std::iter::once(cuboid.center())
        .chain(lattice(3).map(|u| cuboid.at(u)))
        .collect();

    let samples: Vec<ZSample> = (0..m * m)
        .into_par_iter()
        .map(|idx| {
            let mut rng = rng::seeded(rng::derive_seed(opts.seed, idx as u64));
            let (i, j) = (idx / m, idx % m);
            let z = [
                rect[0][0] + w0 * (i as f64 + rng.gen::<f64>()) / m as f64,
                rect[1][0] + w1 * (j as f64 + rng.gen::<f64>()) / m as f64,
            ];
            let random: Vec<HPoint> = (0..opts.seed_attempts)
                .map(|_| cuboid.at([rng.gen(), rng.gen(), rng.gen()]))
                .collect();
            let seed = find_seed(
                f,
                z,
                starts.iter().chain(&random).copied(),
                |x| cuboid.contains(x),
                opts.newton_iter,
                opts.newton_tol,
            );
            let Some(seed) = seed else {
                return ZSample {
                    z,
                    value: 0.0,
                    pieces: 0,
                    truncated: false,
                    overlap_gap: 0.0,
                    status: ZStatus::SeedNotFound,
                };
            };
            match trace_level_curve(
                f,
                &seed,
                |x| cuboid.contains(x),
                &opts.solver,
                opts.max_pieces,
            ) {
                Ok(curve) => ZSample {
                    z,
                    value: curve.area(cuboid),
                    pieces: curve.pieces.len(),
                    truncated: curve.truncated,
                    overlap_gap: curve.overlap_gap,
                    status: ZStatus::Traced,
                },
                Err(_) => ZSample {
                    z,
                    value: 0.0,
                    pieces: 0,
                    truncated: false,
                    overlap_gap: 0.0,
                    status: ZStatus::SolverFailed,
                },
            }
        })
        .collect();

    let truncated = samples.iter().filter(|s| s.truncated).count();
    let k = (m * m) as f64;
    let area = w0 * w1;
    let rhs = area * samples.iter().map(|s| s.value).sum::<f64>() / k;
    // collapsed strata: neighbours along the second axis form pairs
    let var: f64 = samples
        .chunks(2)
        .map(|p| (p[0].value - p[1].value).powi(2))
        .sum::<f64>()
        / (k * k);
    let count = |st: ZStatus| samples.iter().filter(|s| s.status == st).count();

    Ok(CoareaReport {
        report: MeasureReport::new(lhs, rhs, m * m, opts.seed),
        standard_error: area * var.sqrt(),
        z_rect: rect,
        seeds_not_found: count(ZStatus::SeedNotFound),
        solver_failures: count(ZStatus::SolverFailed),
        truncated,
        overlap_gap: samples.iter().map(|s| s.overlap_gap).fold(0.0, f64::max),
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FunctionalDensityOptions {
    /// Support radius of the bump `u = c(ε − d(0, ·))⁺`.
    pub eps: f64,
    /// Midpoint nodes per axis of the `z` grid.
    pub z_grid: usize,
    pub solver: SolverConfig,
    pub max_pieces: usize,
    pub seed_attempts: usize,
    pub seed: u64,
    pub newton_iter: usize,
    pub newton_tol: f64,
    pub rect_lattice: usize,
    pub rect_pad: f64,
}

impl Default for FunctionalDensityOptions {
    fn default() -> Self {
        Self {
            eps: 0.5,
            z_grid: 48,
            solver: SolverConfig {
                grid_levels: 8,
                pair_mode: PairMode::Dyadic,
                ..SolverConfig::default()
            },
            max_pieces: 64,
            seed_attempts: 16,
            seed: 0xb1_0a,
            newton_iter: 60,
            newton_tol: 1e-12,
            rect_lattice: 21,
            rect_pad: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalDensity {
    pub r: f64,
    /// `r⁻⁴ ∫ u∘δ_r dν_F` with `ν_F` centred at `p`.
    pub value: f64,
    /// `J_hF(p)`, the limit as `r → 0`.
    pub jacobian: f64,
    pub seeds_not_found: usize,
    pub solver_failures: usize,
}

/// The coarea measure tested against a dilated bump around `p`.
///
/// By the coarea formula for the blow-up `F_r`, the value equals
/// `∫_{R²} ∫_{F_r⁻¹(z)} u dτ dz`, computed on a midpoint grid in `z` with the
/// inner integral along traced level curves of `F_r`. The bump has unit
/// Lebesgue integral, so the value tends to `J_hF(p)`.
pub fn functional_density(
    f: &FieldModel,
    metric: &MetricConfig,
    p: &HPoint,
    r: f64,
    opts: &FunctionalDensityOptions,
) -> Result<FunctionalDensity> {
    opts.solver.validate()?;
    let eps = opts.eps;
    if !(eps > 0.0 && eps.is_finite()) || opts.z_grid == 0 {
        return Err(Error::InvalidArgument(
            "eps and z_grid must be positive".into(),
        ));
    }
    let g = f.blowup(*p, r)?;
    let jacobian = super::jacobian_h(f, p)?;
    // ∫ (ε − N)⁺ dL³ = |B(1)| ε⁵ / 5
    let c = 5.0 / (metric.unit_ball_volume() * eps.powi(5));
    let bump = |x: &HPoint| c * (eps - metric.norm(x)).max(0.0);
    let in_ball = |x: &HPoint| metric.norm(x) <= eps;

    let vr = eps * eps * metric.vertical_radius();
    let cyl = Cuboid::new([-eps, -eps, -vr], [eps, eps, vr])?;
    let ball_points: Vec<HPoint> = lattice(opts.rect_lattice)
        .map(|u| cyl.at(u))
        .filter(|x| in_ball(x))
        .chain(std::iter::once(HPoint::ORIGIN))
        .collect();
    let values = ball_points
        .iter()
        .map(|x| g.try_eval(x))
        .collect::<Result<Vec<_>>>()?;
    let rect = bounding_rect(values.into_iter(), opts.rect_pad)?;
    let starts: Vec<HPoint> = std::iter::once(HPoint::ORIGIN)
        .chain(lattice(3).map(|u| cyl.at(u)).filter(|x| in_ball(x)))
        .collect();

    let m = opts.z_grid;
    let (w0, w1) = (rect[0][1] - rect[0][0], rect[1][1] - rect[1][0]);
    let results: Vec<(f64, ZStatus)> = (0..m * m)
        .into_par_iter()
        .map(|idx| {
            let mut rng = rng::seeded(rng::derive_seed(opts.seed, idx as u64));
            let (i, j) = (idx / m, idx % m);
            let z = [
                rect[0][0] + w0 * (i as f64 + 0.5) / m as f64,
                rect[1][0] + w1 * (j as f64 + 0.5) / m as f64,
            ];
            let random: Vec<HPoint> = (0..opts.seed_attempts)
                .map(|_| metric.sample_ball(&HPoint::ORIGIN, eps, &mut rng))
                .collect();
            let Some(seed) = find_seed(
                &g,
                z,
                starts.iter().chain(&random).copied(),
                in_ball,
                opts.newton_iter,
                opts.newton_tol,
            ) else {
                return (0.0, ZStatus::SeedNotFound);
            };
            match trace_level_curve(&g, &seed, in_ball, &opts.solver, opts.max_pieces) {
                Ok(curve) => (curve.integrate(bump), ZStatus::Traced),
                Err(_) => (0.0, ZStatus::SolverFailed),
            }
        })
        .collect();

    let value = w0 * w1 / (m * m) as f64 * results.iter().map(|(v, _)| v).sum::<f64>();
    let count = |st: ZStatus| results.iter().filter(|(_, s)| *s == st).count();
    Ok(FunctionalDensity {
        r,
        value,
        jacobian,
        seeds_not_found: count(ZStatus::SeedNotFound),
        solver_failures: count(ZStatus::SolverFailed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{degenerate, shear};
    use approx::assert_abs_diff_eq;

    #[test]
    fn shear_level_curve_is_glued_across_the_box() {
        let b = Cuboid::cube(0.5).unwrap();
        let f = shear();
        // F⁻¹(0.2, 0.1) ∩ box: x¹ = 0.2, x² + x³ = 0.1, |x²|,|x³| ≤ 1/2
        let seed = level_set_point(&f, &b.center(), [0.2, 0.1], 60, 1e-12).unwrap();
        let curve = trace_level_curve(
            &f,
            &seed,
            |x| b.contains(x),
            &CoareaOptions::default().solver,
            64,
        )
        .unwrap();
        assert!(!curve.truncated);
        assert!(curve.pieces.len() > 2);
        assert!(curve.overlap_gap < 1e-12, "{}", curve.overlap_gap);
        // the curve moves by 1/(1+z¹) per unit parameter in x³
        let expected = 1.2 * (1.0 - 0.1);
        assert_abs_diff_eq!(curve.area(&b), expected, epsilon = 1e-9);
    }

    #[test]
    fn shear_coarea_balances() {
        let b = Cuboid::cube(0.5).unwrap();
        let opts = CoareaOptions {
            z_samples: 256,
            lhs_nodes: 16,
            ..CoareaOptions::default()
        };
        let rep = coarea_check(&shear(), &b, &opts).unwrap();
        assert_abs_diff_eq!(rep.report.lhs, 1.0, epsilon = 1e-12);
        assert!(rep.report.rel_error < 0.02, "{:?}", rep.report);
        assert_eq!(rep.solver_failures, 0);
        assert_eq!(rep.truncated, 0);
        assert!(rep.overlap_gap < 1e-12);
        assert!(rep.standard_error < 0.02);
    }

    #[test]
    fn degenerate_coarea_is_zero() {
        let b = Cuboid::cube(0.5).unwrap();
        let opts = CoareaOptions {
            z_samples: 16,
            lhs_nodes: 8,
            seed_attempts: 2,
            ..CoareaOptions::default()
        };
        let rep = coarea_check(&degenerate(), &b, &opts).unwrap();
        assert_eq!(rep.report.lhs, 0.0);
        assert_eq!(rep.report.rhs, 0.0);
        assert_eq!(rep.report.rel_error, 0.0);
    }

    #[test]
    fn shear_functional_density_near_one() {
        let m = MetricConfig::default();
        let opts = FunctionalDensityOptions {
            z_grid: 24,
            ..FunctionalDensityOptions::default()
        };
        for r in [1.0, 0.25] {
            let fd = functional_density(&shear(), &m, &HPoint::ORIGIN, r, &opts).unwrap();
            assert_eq!(fd.jacobian, 1.0);
            assert!((fd.value - 1.0).abs() < 0.05, "r = {r}: {}", fd.value);
        }
    }
}
