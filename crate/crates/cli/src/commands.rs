use heis_lsde::field::{blowup_deviation, linear, FieldModel};
use heis_lsde::hgroup::{beta_d, equivalence_constant, GeometryConstants, HPoint, MetricConfig};
use heis_lsde::lsde::{
    admissible_radii, injectivity_check, modulus_check, solve, stability_run, surjectivity_check,
    trace_distance, RadiiOptions, SolverConfig, Trace, TraceDiagnostics,
};
use heis_lsde::measure::{
    area_measure, coarea_check, federer_density, sph_measure_upper, Cuboid, CurveMeasure,
    FedererDensity, MeasureReport, ZStatus,
};
use serde::Serialize;

use crate::config::{point, RunConfig};
use crate::output::{float_csv, read_trace_csv, trace_csv, RunDir};

/// Drift above which a trace is not accepted by `trace`.
const DRIFT_TOL: f64 = 1e-8;

#[derive(Serialize)]
struct TraceSummary<'a> {
    field: &'a str,
    base_point: HPoint,
    start: HPoint,
    alpha: f64,
    nodes: usize,
    mesh: f64,
    diagnostics: &'a TraceDiagnostics,
}

fn summary<'a>(f: &'a FieldModel, t: &'a Trace) -> TraceSummary<'a> {
    TraceSummary {
        field: f.name(),
        base_point: t.base_point,
        start: t.start,
        alpha: t.alpha,
        nodes: t.len(),
        mesh: t.mesh(),
        diagnostics: &t.diagnostics,
    }
}

fn solve_from_config(cfg: &RunConfig, f: &FieldModel) -> anyhow::Result<Trace> {
    let (p, q) = (cfg.base_point(), point(cfg.q.expect("validated")));
    Ok(solve(f, &p, &q, &cfg.solver)?)
}

pub fn trace(cfg: &RunConfig, dir: &mut RunDir) -> anyhow::Result<bool> {
    let f = cfg.field()?;
    let t = solve_from_config(cfg, &f)?;
    dir.write("trace.csv", &trace_csv(&t)?)?;
    dir.write_json("diagnostics.json", &summary(&f, &t))?;
    let d = &t.diagnostics;
    Ok(d.converged && d.levelset_drift <= DRIFT_TOL && d.error_norm.is_finite())
}

#[derive(Serialize)]
struct CheckResult {
    name: &'static str,
    pass: bool,
    value: f64,
    threshold: f64,
    /// `threshold − value`; negative on failure.
    margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

impl CheckResult {
    fn at_most(name: &'static str, value: f64, threshold: f64) -> Self {
        Self {
            name,
            pass: value <= threshold,
            value,
            threshold,
            margin: threshold - value,
            note: None,
        }
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    trace: TraceSummary<'a>,
    certificate: Option<heis_lsde::lsde::RadiiCertificate>,
    checks: Vec<CheckResult>,
    pass: bool,
}

pub fn verify(cfg: &RunConfig, dir: &mut RunDir) -> anyhow::Result<bool> {
    let f = cfg.field()?;
    let v = &cfg.verify;
    let p = cfg.base_point();
    let t = match &v.trace {
        Some(path) => {
            let (times, points) = read_trace_csv(path)?;
            Trace::from_path(&f, p, times, points, cfg.solver.tol, cfg.solver.pair_mode)
                .map_err(|e| crate::config::invalid(format!("{}: {e}", path.display())))?
        }
        None => solve_from_config(cfg, &f)?,
    };
    let d = &t.diagnostics;
    let mut checks = vec![
        CheckResult::at_most("residual_h", d.residual_h, cfg.solver.tol),
        CheckResult::at_most("levelset_drift", d.levelset_drift, v.drift_tol),
    ];

    let consts = GeometryConstants::estimate(&cfg.metric, v.constant_samples, cfg.seed, 64);
    let cert = admissible_radii(&f, &p, &cfg.metric, &consts, &RadiiOptions::default());
    match &cert {
        Ok(c) => {
            checks.push(CheckResult::at_most(
                "error_norm",
                d.error_norm,
                c.kappa * c.rho0 * c.rho0,
            ));
            let inj = injectivity_check(&t, &cfg.metric, c.rho0);
            checks.push(
                CheckResult {
                    pass: inj.holds,
                    ..CheckResult::at_most("injectivity", inj.ratio, c.rho0)
                }
                .note(format!("pairs with |t - s| <= {:.3e}", 2.0 * inj.delta_max)),
            );
            let m = modulus_check(&t, &cfg.metric);
            checks.push(CheckResult::at_most("holder_h", m.holder_h, c.rho0));
            let s = surjectivity_check(
                &f,
                &t,
                &cfg.metric,
                c.eps0,
                v.surjectivity_samples,
                v.level_tol,
                cfg.seed,
            )?;
            let mut check = CheckResult::at_most("surjectivity", s.max_gap, 3.0 * t.mesh().sqrt())
                .note(format!(
                    "{} level-set points in B(eps0, p), {} rejected",
                    s.accepted, s.rejected
                ));
            check.pass &= s.accepted > 0;
            checks.push(check);
        }
        Err(e) => checks.push(
            CheckResult {
                pass: false,
                ..CheckResult::at_most("certificate", f64::NAN, f64::NAN)
            }
            .note(e.to_string()),
        ),
    }

    let fine = t.grid_levels().unwrap_or(cfg.solver.grid_levels);
    let coarse = SolverConfig {
        grid_levels: v.coarse_levels.unwrap_or(fine.saturating_sub(2).max(4)),
        delta: d.delta,
        ..cfg.solver.clone()
    };
    match solve(&f, &p, &t.start, &coarse) {
        Ok(c) => {
            let dist = trace_distance(&c, &t, &cfg.metric);
            let mut check = CheckResult::at_most("uniqueness", dist.sup_distance, 10.0 * c.mesh())
                .note(format!(
                    "{} common nodes with a level-{} solve",
                    dist.common_nodes, coarse.grid_levels
                ));
            check.pass &= dist.common_nodes > 1;
            checks.push(check);
        }
        Err(e) => checks.push(
            CheckResult {
                pass: false,
                ..CheckResult::at_most("uniqueness", f64::NAN, f64::NAN)
            }
            .note(e.to_string()),
        ),
    }

    let pass = checks.iter().all(|c| c.pass);
    dir.write_json(
        "verify.json",
        &VerifyReport {
            trace: summary(&f, &t),
            certificate: cert.ok(),
            checks,
            pass,
        },
    )?;
    Ok(pass)
}

#[derive(Serialize)]
struct AreaReport<'a> {
    #[serde(rename = "box")]
    cuboid: &'a Cuboid,
    area: f64,
    parameter_length: f64,
    sph_upper: f64,
    sph_mesh: f64,
    beta_d: f64,
    federer: FedererDensity,
}

pub fn area(cfg: &RunConfig, dir: &mut RunDir) -> anyhow::Result<bool> {
    let f = cfg.field()?;
    let a = cfg.area.as_ref().expect("validated");
    let t = solve_from_config(cfg, &f)?;
    let beta = beta_d(&cfg.metric, 256);
    let x = a.point.map(point).unwrap_or(t.start);
    let mesh = a.mesh.unwrap_or(8.0 * t.mesh());
    let (lo, hi) = t.interval();
    let report = AreaReport {
        cuboid: &a.cuboid,
        area: area_measure(&t, &a.cuboid),
        parameter_length: hi - lo,
        sph_upper: sph_measure_upper(&t, &cfg.metric, beta, mesh)?,
        sph_mesh: mesh,
        beta_d: beta,
        federer: federer_density(
            &CurveMeasure::unit(t.clone()),
            &cfg.metric,
            beta,
            &x,
            &a.radii,
            a.center_samples,
            cfg.seed,
        )?,
    };
    dir.write("trace.csv", &trace_csv(&t)?)?;
    dir.write_json("area.json", &report)?;
    Ok(true)
}

#[derive(Serialize)]
struct CoareaSummary {
    #[serde(rename = "box")]
    cuboid: Cuboid,
    report: MeasureReport,
    standard_error: f64,
    tolerance: f64,
    z_rect: [[f64; 2]; 2],
    seeds_not_found: usize,
    solver_failures: usize,
    truncated: usize,
    overlap_gap: f64,
    pass: bool,
}

pub fn coarea(cfg: &RunConfig, dir: &mut RunDir) -> anyhow::Result<bool> {
    let f = cfg.field()?;
    let c = cfg.coarea.as_ref().expect("validated");
    let mut opts = c.options.clone();
    opts.seed = cfg.seed;
    let rep = coarea_check(&f, &c.cuboid, &opts)?;
    let pass = rep.report.rel_error <= c.tolerance;
    let status = |s: ZStatus| match s {
        ZStatus::Traced => 0.0,
        ZStatus::SeedNotFound => 1.0,
        ZStatus::SolverFailed => 2.0,
    };
    dir.write(
        "coarea_samples.csv",
        &float_csv(
            &["z1", "z2", "value", "pieces", "status"],
            rep.samples
                .iter()
                .map(|s| vec![s.z[0], s.z[1], s.value, s.pieces as f64, status(s.status)]),
        )?,
    )?;
    dir.write_json(
        "coarea.json",
        &CoareaSummary {
            cuboid: c.cuboid,
            report: rep.report,
            standard_error: rep.standard_error,
            tolerance: c.tolerance,
            z_rect: rep.z_rect,
            seeds_not_found: rep.seeds_not_found,
            solver_failures: rep.solver_failures,
            truncated: rep.truncated,
            overlap_gap: rep.overlap_gap,
            pass,
        },
    )?;
    Ok(pass)
}

#[derive(Serialize)]
struct BetaReport<'a> {
    metric: &'a MetricConfig,
    beta_d: f64,
    /// Measure of the vertical slice through the center, `2/√λ`.
    center_slice: f64,
    c_equiv: f64,
    resolution: usize,
    samples: usize,
}

pub fn beta(cfg: &RunConfig, dir: &mut RunDir) -> anyhow::Result<bool> {
    let b = &cfg.beta;
    let report = BetaReport {
        metric: &cfg.metric,
        beta_d: beta_d(&cfg.metric, b.resolution),
        center_slice: cfg.metric.unit_slice_measure(&HPoint::ORIGIN),
        c_equiv: equivalence_constant(&cfg.metric, b.samples, cfg.seed),
        resolution: b.resolution,
        samples: b.samples,
    };
    dir.write_json("beta.json", &report)?;
    Ok(true)
}

#[derive(Serialize)]
struct BlowupRow {
    r: f64,
    value_gap: f64,
    gradient_gap: f64,
    /// Uniform distance between the traces through `0` of the blow-up and of `d_hF(p)`.
    trace_distance: f64,
}

#[derive(Serialize)]
struct BlowupReport {
    center: HPoint,
    rows: Vec<BlowupRow>,
    monotone: bool,
}

pub fn blowup(cfg: &RunConfig, dir: &mut RunDir) -> anyhow::Result<bool> {
    let f = cfg.field()?;
    let p = cfg.base_point();
    let b = &cfg.blowup;
    let mut radii = b.radii.clone();
    radii.sort_by(|a, b| b.total_cmp(a));
    let limit = linear(f.grad_h(&p)?);
    let fields = radii
        .iter()
        .map(|&r| f.blowup(p, r))
        .collect::<Result<Vec<_>, _>>()?;
    let o = HPoint::ORIGIN;
    let traces = stability_run(&fields, &limit, &o, &o, &cfg.solver, &cfg.metric)?;
    let rows = radii
        .iter()
        .zip(&traces)
        .map(|(&r, st)| {
            let dev = blowup_deviation(&f, &cfg.metric, &p, r, b.samples, cfg.seed)?;
            Ok(BlowupRow {
                r,
                value_gap: dev.value_gap,
                gradient_gap: dev.gradient_gap,
                trace_distance: st.sup_distance,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let monotone = rows.windows(2).all(|w| w[1].value_gap <= w[0].value_gap);
    dir.write(
        "blowup.csv",
        &float_csv(
            &["r", "value_gap", "gradient_gap", "trace_distance"],
            rows.iter()
                .map(|w| vec![w.r, w.value_gap, w.gradient_gap, w.trace_distance]),
        )?,
    )?;
    dir.write_json(
        "blowup.json",
        &BlowupReport {
            center: p,
            rows,
            monotone,
        },
    )?;
    Ok(monotone)
}
