use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{holder_constant, FieldModel, DEGENERACY_TOL};
use crate::hgroup::{GeometryConstants, HPoint, MetricConfig};
use crate::sewing::kappa;

/// Knobs of the radii search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadiiOptions {
    /// Pairs sampled for each Hölder-constant estimate.
    pub holder_samples: usize,
    pub seed: u64,
    /// Multiplier on the sampled Hölder constant, which is only a lower bound.
    pub holder_safety: f64,
    /// Largest `ε` tried; the search halves it `eps_steps` times at most.
    pub eps_max: f64,
    pub eps_steps: usize,
    /// Smallest `ρ₀` returned.
    pub rho_floor: f64,
    /// Factor `> 1` by which `ρ₀` exceeds the smallest admissible value.
    pub rho_slack: f64,
    /// Factor `< 1` applied to the largest admissible `δ`.
    pub delta_margin: f64,
}

impl Default for RadiiOptions {
    fn default() -> Self {
        Self {
            holder_samples: 4000,
            seed: 0x00c0_ffee,
            holder_safety: 1.5,
            eps_max: 1.0,
            eps_steps: 40,
            rho_floor: 4.0,
            rho_slack: 1.05,
            delta_margin: 0.9,
        }
    }
}

/// One inequality `lhs ≤ rhs`, recorded numerically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

impl Condition {
    fn new(name: &str, lhs: f64, rhs: f64) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            satisfied: lhs <= rhs,
        }
    }
}

/// Radii `(δ₀, ε₀, ρ₀)` for which the invariant-set argument goes through,
/// with every inequality evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiiCertificate {
    pub delta0: f64,
    pub eps0: f64,
    pub rho0: f64,
    pub kappa: f64,
    pub c_equiv: f64,
    pub alpha: f64,
    /// Inflated Hölder constant of `∇_hF` on `B(4cε₀, p)`.
    pub holder: f64,
    /// `|∇_hF(p)⁻¹|`.
    pub inverse_norm: f64,
    pub conditions: Vec<Condition>,
}

impl RadiiCertificate {
    pub fn valid(&self) -> bool {
        self.conditions.iter().all(|c| c.satisfied)
    }
}

/// Searches radii satisfying, with `K = c|∇_hF(p)⁻¹|·‖∇_hF‖_{α,B(4cε,p)}`,
///
/// - `K((2ε)^α ρ + (1+κ)^{(1+α)/2}) ≤ ρ`,
/// - `ρ(2δ)^{α/2} ≤ 1` and `c(1 + √(1+κ))δ^{1/2} ≤ ε`,
/// - `(2δ)^α κρ² ≤ 1/2` and `2c² ≤ ρ²`.
///
/// `ε` is the largest tried value with `K(2ε)^α ≤ 1/2`; `ρ` is then the
/// smallest admissible value (times a slack, and at least the floor); `δ` is
/// the largest admissible value times a margin.
pub fn admissible_radii(
    f: &FieldModel,
    p: &HPoint,
    metric: &MetricConfig,
    consts: &GeometryConstants,
    opts: &RadiiOptions,
) -> Result<RadiiCertificate> {
    let grad = f.grad_h(p)?;
    let det = grad.det();
    if det.abs() <= DEGENERACY_TOL {
        return Err(Error::DegeneratePoint { det });
    }
    let inverse_norm = grad.inverse().ok_or(Error::DegeneratePoint { det })?.norm();
    let alpha = f.alpha();
    let c = consts.c_equiv;
    let kap = kappa(alpha);
    let b = (1.0 + kap).powf(0.5 * (1.0 + alpha));

    let mut eps = opts.eps_max;
    let mut found = None;
    for _ in 0..=opts.eps_steps {
        let est = holder_constant(f, metric, p, 4.0 * c * eps, opts.holder_samples, opts.seed)?;
        let holder = est.value * opts.holder_safety;
        let k = c * inverse_norm * holder;
        if k * (2.0 * eps).powf(alpha) <= 0.5 {
            found = Some((eps, holder, k));
            break;
        }
        eps *= 0.5;
    }
    let (eps, holder, k) = found.ok_or_else(|| {
        Error::NoAdmissibleRadii(format!(
            "no eps in [{eps:.3e}, {}] makes the invariant-set condition solvable",
            opts.eps_max
        ))
    })?;

    let contraction = k * (2.0 * eps).powf(alpha);
    let rho = (opts.rho_slack * k * b / (1.0 - contraction))
        .max(opts.rho_slack * 2f64.sqrt() * c)
        .max(opts.rho_floor);

    let d1 = 0.5 * rho.powf(-2.0 / alpha);
    let d2 = (eps / (c * (1.0 + (1.0 + kap).sqrt()))).powi(2);
    let d3 = 0.5 * (0.5 / (kap * rho * rho)).powf(1.0 / alpha);
    let delta = opts.delta_margin * d1.min(d2).min(d3);
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::NoAdmissibleRadii(format!(
            "delta collapsed to {delta}"
        )));
    }

    let conditions = vec![
        Condition::new(
            "horizontal_holder_scale",
            rho * (2.0 * delta).powf(0.5 * alpha),
            1.0,
        ),
        Condition::new(
            "stay_in_ball",
            c * (1.0 + (1.0 + kap).sqrt()) * delta.sqrt(),
            eps,
        ),
        Condition::new(
            "invariant_set",
            k * ((2.0 * eps).powf(alpha) * rho + b),
            rho,
        ),
        Condition::new(
            "injectivity_error",
            (2.0 * delta).powf(alpha) * kap * rho * rho,
            0.5,
        ),
        Condition::new("injectivity_rho", 2.0 * c * c, rho * rho),
    ];
    Ok(RadiiCertificate {
        delta0: delta,
        eps0: eps,
        rho0: rho,
        kappa: kap,
        c_equiv: c,
        alpha,
        holder,
        inverse_norm,
        conditions,
    })
}
