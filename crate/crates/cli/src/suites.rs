//! Suite runners: each turns a prepared configuration into tables and a
//! summary with hard and soft checks.

use std::path::Path;

use nalgebra::DVector;
use ouflow_core::kolmogorov::{pde_residual, solve_u, GradingOptions, SolveOptions};
use ouflow_core::regularity::{log_spaced_pairs, SmoothingOptions, SuiteSetup, UNIFORMITY_FACTOR};
use ouflow_core::sde::{law_check_with, refine, weak_check_with, weak_error_ratio, Z_THRESHOLD};
use ouflow_core::{
    estimate_theta, interpolation_check, make_example1, schauder_suite, simulate, smoothing_suite, theta_optimality,
    zygmund_suite, Error, ProbeSet, SourceTerm, Verdict,
};
use serde::Serialize;

use crate::config::{
    diagonal_params, InterpolationSuite, Prepared, RegularitySuite, ResidualSuite, SdeSuite, SmoothingSuite,
    SolveSuite, SuiteConfig, ThetaSuite,
};
use crate::error::CliError;
use crate::report::{Artifacts, Check, Estimate, Summary};

/// Runs the configured suite and writes `config.json`, the CSV tables and
/// `summary.json` into `out`.
pub fn run_prepared(p: &Prepared, out: &Path) -> Result<Summary, CliError> {
    let mut art = Artifacts::create(out)?;
    art.json("config.json", &p.config)?;
    let cfg = &p.config;
    let estimate = match cfg.suite {
        SuiteConfig::Theta(_) => Estimate::LambdaBlowUp,
        SuiteConfig::Smoothing(_) => Estimate::SmoothingBound,
        SuiteConfig::Schauder(_) => Estimate::SchauderEstimate,
        SuiteConfig::Zygmund(_) => Estimate::ZygmundEstimate,
        SuiteConfig::Interpolation(_) => Estimate::InterpolationInequality,
        SuiteConfig::Sde(_) => Estimate::ProcessLaw,
        SuiteConfig::Solve(_) => Estimate::MildSolution,
        SuiteConfig::Residual(_) => Estimate::KolmogorovEquation,
    };
    let mut summary = Summary::new(cfg.suite.name(), estimate, p.model.label(), cfg.seed);
    match &cfg.suite {
        SuiteConfig::Theta(c) => theta(p, c, &mut art, &mut summary)?,
        SuiteConfig::Smoothing(c) => smoothing(p, c, &mut art, &mut summary)?,
        SuiteConfig::Schauder(c) => schauder(p, c, &mut art, &mut summary)?,
        SuiteConfig::Zygmund(c) => zygmund(p, c, &mut art, &mut summary)?,
        SuiteConfig::Interpolation(c) => interpolation(p, c, &mut art, &mut summary)?,
        SuiteConfig::Sde(c) => sde(p, c, &mut art, &mut summary)?,
        SuiteConfig::Solve(c) => solve(p, c, &mut art, &mut summary)?,
        SuiteConfig::Residual(c) => residual(p, c, &mut art, &mut summary)?,
    }
    art.finish(summary)
}

fn join(x: &[f64]) -> String {
    x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

#[derive(Serialize)]
struct GapRow {
    s: f64,
    t: f64,
    gap: f64,
    norm: f64,
}

fn theta(p: &Prepared, c: &ThetaSuite, art: &mut Artifacts, sum: &mut Summary) -> Result<(), CliError> {
    let sw = c.sweep;
    let pairs = log_spaced_pairs(sw.t, sw.dt_min, sw.dt_max, sw.count);
    let fit = estimate_theta(&p.model, &pairs)?;
    let rows: Vec<GapRow> = pairs
        .iter()
        .zip(&fit.norms)
        .map(|((s, t), n)| GapRow { s: *s, t: *t, gap: t - s, norm: *n })
        .collect();
    art.table("theta", &rows)?;
    sum.fit("theta", fit.theta);
    sum.fit("constant", fit.constant);
    sum.fit("residual", fit.residual);
    if let Some(expected) = c.expected {
        let gap = (fit.theta - expected).abs();
        sum.check(Check::hard("theta matches the expected exponent", gap <= c.tolerance, gap, c.tolerance));
        sum.fit("expected", expected);
    }
    if c.optimality {
        let params = diagonal_params(&p.config.model).ok_or_else(|| CliError::config("optimality needs a diagonal model"))?;
        let model = make_example1(params)?;
        match theta_optimality(&model, &pairs, c.jitter, p.config.seed) {
            Ok(opt) => {
                let rows: Vec<GapRow> = pairs
                    .iter()
                    .zip(&opt.fit.norms)
                    .map(|((s, t), n)| GapRow { s: *s, t: *t, gap: t - s, norm: *n })
                    .collect();
                art.table("optimality", &rows)?;
                sum.fit("thetaLow", opt.theta_low);
                sum.fit("lowConstant", opt.constant);
                sum.check(Check::hard("lower envelope certifies optimality", opt.certified, opt.theta_low, opt.theta_star - 0.1));
            }
            Err(Error::InsufficientModes { reach, window }) => {
                sum.check(Check::hard("enough modes for the lower envelope", false, reach, window));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct FitRow {
    order: usize,
    constant: f64,
    slope: f64,
    verdict: Verdict,
}

fn smoothing(p: &Prepared, c: &SmoothingSuite, art: &mut Artifacts, sum: &mut Summary) -> Result<(), CliError> {
    let fields = c.fields.iter().map(|f| p.field(f)).collect::<Result<Vec<_>, _>>()?;
    let sw = c.sweep;
    let pairs = log_spaced_pairs(sw.t, sw.dt_min, sw.dt_max, sw.count);
    let opts = SmoothingOptions {
        max_order: c.max_order,
        extremal: c.extremal,
        offsets: c.offsets,
        method: p.config.method,
        budget: p.config.budget,
    };
    let report = smoothing_suite(&p.model, &fields, &pairs, &opts)?;
    art.table("smoothing", &report.rows)?;
    let fits: Vec<FitRow> = report
        .fits
        .iter()
        .map(|f| FitRow { order: f.order, constant: f.constant, slope: f.slope, verdict: f.verdict })
        .collect();
    art.table("smoothing_fits", &fits)?;
    for f in &report.fits {
        let name = format!("order {} ratio is bounded", f.order);
        sum.check(Check::hard(&name, f.verdict == Verdict::Bounded, f.slope, 0.1));
        sum.fit(&format!("C{}", f.order), f.constant);
    }
    Ok(())
}

fn setup<'a>(
    p: &'a Prepared,
    c: &'a RegularitySuite,
    phi: &'a ouflow_core::FieldFunction,
    psi: &'a SourceTerm,
    probes: &'a ProbeSet,
) -> SuiteSetup<'a> {
    SuiteSetup {
        model: &p.model,
        phi,
        psi,
        alpha: c.alpha,
        theta: c.theta.unwrap_or(0.5),
        t: c.t,
        s_grid: &c.s_grid,
        probes,
        grading: GradingOptions { floor: c.floor, method: p.config.method, budget: p.config.budget, ..Default::default() },
    }
}

#[derive(Serialize)]
struct ScaleRow {
    s: f64,
    delta: f64,
    primary: f64,
    contrast: f64,
}

fn schauder(p: &Prepared, c: &RegularitySuite, art: &mut Artifacts, sum: &mut Summary) -> Result<(), CliError> {
    let phi = p.field(&c.phi)?;
    let psi = SourceTerm::stationary(p.field(&c.psi)?);
    let probes = ProbeSet::generate(p.dimension(), &c.probes);
    let report = schauder_suite(&setup(p, c, &phi, &psi, &probes))?;
    let mut rows = Vec::new();
    for sl in &report.slices {
        for (l, d) in sl.measured.magnitudes.iter().enumerate() {
            rows.push(ScaleRow { s: sl.s, delta: *d, primary: sl.measured.per_scale_sup[l], contrast: sl.sharpness.per_scale_sup[l] });
        }
    }
    art.table("schauder", &rows)?;
    let worst = report.slices.iter().map(|s| s.measured.slope).fold(f64::INFINITY, f64::min);
    sum.check(Check::hard("seminorm is scale-stable", report.scale_stable, worst, -0.1));
    let spread = if report.median_over_s > 0.0 { report.sup_over_s / report.median_over_s } else { 0.0 };
    sum.check(Check::hard("seminorm is uniform over s", report.uniform, spread, UNIFORMITY_FACTOR));
    let sharp = report.slices.iter().map(|s| s.sharpness.slope).fold(f64::NEG_INFINITY, f64::max);
    let contrast = Check { name: "sharpness probe grows".into(), hard: c.require_contrast, passed: report.sharpness_growing, value: sharp, limit: -0.1 };
    sum.check(contrast);
    sum.fit("order", report.order as f64);
    sum.fit("holderExponent", report.holder_exponent);
    sum.fit("supOverS", report.sup_over_s);
    sum.fit("medianOverS", report.median_over_s);
    if let Some(r) = report.ratio {
        sum.fit("ratio", r);
    }
    Ok(())
}

fn zygmund(p: &Prepared, c: &RegularitySuite, art: &mut Artifacts, sum: &mut Summary) -> Result<(), CliError> {
    let phi = p.field(&c.phi)?;
    let psi = SourceTerm::stationary(p.field(&c.psi)?);
    let probes = ProbeSet::generate(p.dimension(), &c.probes);
    let report = zygmund_suite(&setup(p, c, &phi, &psi, &probes))?;
    let mut rows = Vec::new();
    for sl in &report.slices {
        for (l, d) in sl.zygmund.magnitudes.iter().enumerate() {
            rows.push(ScaleRow { s: sl.s, delta: *d, primary: sl.zygmund.per_scale_sup[l], contrast: sl.lipschitz_proxy.per_scale_sup[l] });
        }
    }
    art.table("zygmund", &rows)?;
    let worst = report.slices.iter().map(|s| s.zygmund.slope).fold(f64::INFINITY, f64::min);
    sum.check(Check::hard("zygmund seminorm is scale-stable", report.scale_stable, worst, -0.1));
    let spread = if report.median_over_s > 0.0 { report.sup_over_s / report.median_over_s } else { 0.0 };
    sum.check(Check::hard("zygmund seminorm is uniform over s", report.uniform, spread, UNIFORMITY_FACTOR));
    let proxy = report.slices.iter().map(|s| s.lipschitz_proxy.slope).fold(f64::NEG_INFINITY, f64::max);
    let contrast = Check { name: "second-derivative proxy grows".into(), hard: c.require_contrast, passed: report.proxy_growing, value: proxy, limit: -0.1 };
    sum.check(contrast);
    sum.fit("k", report.k as f64);
    sum.fit("supOverS", report.sup_over_s);
    sum.fit("medianOverS", report.median_over_s);
    Ok(())
}

fn interpolation(p: &Prepared, c: &InterpolationSuite, art: &mut Artifacts, sum: &mut Summary) -> Result<(), CliError> {
    let fields = c.fields.iter().map(|f| p.field(f)).collect::<Result<Vec<_>, _>>()?;
    let probes = ProbeSet::generate(p.dimension(), &c.probes);
    let [a1, a, a2] = c.exponents;
    let report = interpolation_check(&fields, a1, a, a2, &probes)?;
    let doubled: Vec<_> = fields.iter().map(|f| f.scaled(2.0)).collect();
    let scaled = interpolation_check(&doubled, a1, a, a2, &probes)?;
    art.table("interpolation", &report.rows)?;
    sum.check(Check::hard("one constant covers every field", report.c_fit <= c.max_constant, report.c_fit, c.max_constant));
    let drift = (scaled.c_fit - report.c_fit).abs();
    let limit = 1e-9 * report.c_fit.max(1.0);
    sum.check(Check::hard("constant is invariant under scaling", drift <= limit, drift, limit));
    sum.fit("cFit", report.c_fit);
    Ok(())
}

fn sde(p: &Prepared, c: &SdeSuite, art: &mut Artifacts, sum: &mut Summary) -> Result<(), CliError> {
    let x = DVector::from_column_slice(c.x.as_deref().unwrap_or(&[]));
    let seed = p.config.seed;
    let ensemble = simulate(&p.model, &x, c.s, c.t, c.dt, c.paths, seed)?;
    let refined = refine(&ensemble, &p.model)?;
    let law = law_check_with(&ensemble, &refined, &p.model)?;
    art.table("law", &law.entries)?;
    sum.check(Check::hard("law z-scores", law.passed, law.max_z, Z_THRESHOLD));
    let mut records = Vec::new();
    for spec in &c.fields {
        let phi = p.field(spec)?;
        let r = weak_check_with(&ensemble, &refined, &phi, &p.model, p.config.method, &p.config.budget)?;
        let name = format!("weak check {}", r.field);
        let limit = Z_THRESHOLD * r.empirical_stderr.hypot(r.analytic_stderr) + r.allowance;
        sum.check(Check::hard(&name, r.passed, r.difference.abs(), limit));
        records.push(r);
    }
    if !records.is_empty() {
        art.table("weak", &records)?;
    }
    if let Some(w) = c.weak_ratio {
        let ratio = weak_error_ratio(&p.model, &x, c.s, c.t, w.dt, w.paths, seed)?;
        let ok = ratio >= w.window[0] && ratio <= w.window[1];
        sum.check(Check::hard("weak error halves with the step", ok, ratio, w.window[1]));
        sum.fit("weakRatio", ratio);
    }
    if c.save_ensemble {
        ensemble.save(&art.dir().join("ensemble.bin"))?;
    }
    sum.fit("maxZ", law.max_z);
    Ok(())
}

#[derive(Serialize)]
struct SolveRow {
    s: f64,
    x: String,
    u0: f64,
    u0_stderr: f64,
    u1: f64,
    u1_stderr: f64,
    u: f64,
    flagged: bool,
}

fn solve(p: &Prepared, c: &SolveSuite, art: &mut Artifacts, sum: &mut Summary) -> Result<(), CliError> {
    let phi = p.field(&c.phi)?;
    let psi = SourceTerm::stationary(p.field(&c.psi)?);
    let xs = p.points("points", &c.points)?;
    let opts = SolveOptions { method: p.config.method, budget: p.config.budget, ..Default::default() };
    let rows = solve_u(&p.model, &phi, &psi, c.t, &c.s_grid, &xs, &opts)?;
    let flagged = rows.iter().filter(|r| r.flagged).count();
    let table: Vec<SolveRow> = rows
        .into_iter()
        .map(|r| SolveRow {
            s: r.s,
            x: join(&r.x),
            u0: r.u0,
            u0_stderr: r.u0_stderr,
            u1: r.u1,
            u1_stderr: r.u1_stderr,
            u: r.u,
            flagged: r.flagged,
        })
        .collect();
    art.table("solution", &table)?;
    sum.check(Check::hard("time quadrature converged", flagged == 0, flagged as f64, 0.0));
    Ok(())
}

#[derive(Serialize)]
struct ResidualRow {
    s: f64,
    x: String,
    u: f64,
    time_derivative: f64,
    residual: f64,
}

fn residual(p: &Prepared, c: &ResidualSuite, art: &mut Artifacts, sum: &mut Summary) -> Result<(), CliError> {
    let phi = p.field(&c.phi)?;
    let psi = SourceTerm::stationary(p.field(&c.psi)?);
    let xs = p.points("points", &c.points)?;
    let grading = GradingOptions { method: p.config.method, budget: p.config.budget, ..Default::default() };
    let probes = pde_residual(&p.model, &phi, &psi, c.t, &c.s_probe, &xs, &grading)?;
    let worst = probes.iter().map(|r| r.residual.abs()).fold(0.0, f64::max);
    let rows: Vec<ResidualRow> = probes
        .into_iter()
        .map(|r| ResidualRow { s: r.s, x: join(&r.x), u: r.u, time_derivative: r.time_derivative, residual: r.residual })
        .collect();
    art.table("residual", &rows)?;
    sum.check(Check::hard("residual within tolerance", worst <= c.tolerance, worst, c.tolerance));
    sum.fit("maxResidual", worst);
    Ok(())
}
