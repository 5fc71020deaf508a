//! Post-hoc invariant checks and rate fits on recorded runs.

use serde::{Deserialize, Serialize};

use crate::analysis::{envelope_fit, last_decade_slope, FitMode, FitResult};
use crate::constants::{BaseConstants, ConstantsBundle};
use crate::error::Result;
use crate::metrics::{averages, Curves};
use crate::trace::RunTrace;

/// Relative rounding allowance for the cumulative inequalities.
pub const SUM_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub bound: f64,
    /// Informational checks do not affect the overall verdict.
    pub required: bool,
}

impl Check {
    fn le(name: &str, measured: f64, bound: f64, required: bool) -> Self {
        Check {
            name: name.into(),
            passed: measured <= bound,
            measured,
            bound,
            required,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedFit {
    pub metric: String,
    pub fit: Option<FitResult>,
    pub last_decade_slope: Option<f64>,
    pub in_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub solver: String,
    pub t: usize,
    pub theory: bool,
    pub checks: Vec<Check>,
    pub fits: Vec<NamedFit>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn fit(&self, metric: &str) -> Option<&NamedFit> {
        self.fits.iter().find(|f| f.metric == metric)
    }
}

fn constant_sigma(trace: &RunTrace) -> Option<f64> {
    let first = *trace.sigmas.first()?;
    trace.sigmas.iter().all(|&s| s == first).then_some(first)
}

fn cumulative_le(name: &str, lhs: f64, rhs: f64, required: bool) -> Check {
    let allowance = SUM_SLACK * lhs.abs().max(rhs.abs()).max(1.0);
    Check {
        name: name.into(),
        passed: lhs <= rhs + allowance,
        measured: lhs,
        bound: rhs,
        required,
    }
}

/// `theory` marks a run with the theory schedule whose `T` passed the threshold check; the
/// step and uniform multiplier bounds and the complementarity inequality are only required then.
pub fn trace_checks(
    trace: &RunTrace,
    base: &BaseConstants,
    bundle: Option<&ConstantsBundle>,
    theory: bool,
) -> Vec<Check> {
    let mut checks = Vec::new();
    let t = trace.rows.len();
    let min_lambda = trace
        .lambdas
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    checks.push(Check::le(
        "lambda_nonnegative",
        -min_lambda.min(0.0),
        0.0,
        true,
    ));

    let mut entry_ratio = 0.0f64;
    let mut norm_ratio = 0.0f64;
    for (k, w) in trace.lambdas.windows(2).enumerate() {
        let sigma = trace.sigmas.get(k).copied().unwrap_or(f64::NAN);
        let step = w[0]
            .iter()
            .zip(&w[1])
            .map(|(a, b)| (b - a).abs())
            .fold(0.0, f64::max);
        let na = w[0].iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = w[1].iter().map(|v| v * v).sum::<f64>().sqrt();
        entry_ratio = entry_ratio.max(step / (base.gamma2 * sigma));
        norm_ratio = norm_ratio.max((nb - na).abs() / (base.gamma1 * sigma));
    }
    checks.push(Check::le(
        "lambda_entry_drift_over_gamma2_sigma",
        entry_ratio,
        1.0,
        true,
    ));
    checks.push(Check::le(
        "lambda_norm_drift_over_gamma1_sigma",
        norm_ratio,
        1.0,
        true,
    ));

    if let Some(b) = bundle {
        let max_step = trace.rows.iter().map(|r| r.step_norm).fold(0.0, f64::max);
        checks.push(Check::le(
            "step_norm_max",
            max_step,
            b.gamma6 * (t as f64).powf(-1.0 / 3.0),
            theory,
        ));
        let max_norm = trace
            .lambdas
            .iter()
            .map(|l| l.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        checks.push(Check::le("lambda_norm_max", max_norm, b.m_star, theory));
    }

    if let (Some(sigma), Some(last)) = (constant_sigma(trace), trace.lambdas.last()) {
        let i = &base.inputs;
        let lever = i.kappa_g + 0.5 * base.kappa_h * i.d0;
        let step_sum: f64 = trace.rows.iter().map(|r| r.step_norm).sum();
        let worst = last
            .iter()
            .enumerate()
            .map(|(j, lam)| {
                let lhs: f64 = trace.rows.iter().map(|r| r.g[j]).sum();
                cumulative_le("constraint_sum", lhs, lam / sigma + lever * step_sum, true)
            })
            .min_by(|a, b| {
                a.passed
                    .cmp(&b.passed)
                    .then((b.measured - b.bound).total_cmp(&(a.measured - a.bound)))
            });
        checks.extend(worst);
        let lhs: f64 = -trace.rows.iter().map(|r| r.comp).sum::<f64>();
        let tf = t as f64;
        let rhs =
            0.5 * sigma * i.nu_g * i.nu_g * tf + i.kappa_f * i.kappa_f * tf / (2.0 * trace.alpha);
        checks.push(cumulative_le("complementarity_sum", lhs, rhs, theory));
    }
    checks
}

fn named(metric: &str, curve: &[(usize, f64)], mode: FitMode) -> NamedFit {
    let fit = envelope_fit(curve, mode).ok();
    NamedFit {
        metric: metric.into(),
        in_band: fit
            .as_ref()
            .is_some_and(|f| (-0.70..=-0.30).contains(&f.exponent)),
        last_decade_slope: last_decade_slope(curve),
        fit,
    }
}

fn magnitude(curve: &[(usize, f64)]) -> Vec<(usize, f64)> {
    curve.iter().map(|&(t, y)| (t, y.abs())).collect()
}

/// Fits on the positive part of each curve, plus magnitude fits of the two signed curves.
pub fn curve_fits(curves: &Curves) -> Vec<NamedFit> {
    vec![
        named("moreau_sq_avg", &curves.curve_a, FitMode::FreeInBand),
        named("max_violation_avg", &curves.curve_b, FitMode::FixedThird),
        named("complementarity_avg", &curves.curve_c, FitMode::FreeInBand),
        named(
            "max_violation_avg_abs",
            &magnitude(&curves.curve_b),
            FitMode::FixedThird,
        ),
        named(
            "complementarity_avg_abs",
            &magnitude(&curves.curve_c),
            FitMode::FreeInBand,
        ),
    ]
}

pub fn validate_trace(
    trace: &RunTrace,
    base: &BaseConstants,
    bundle: Option<&ConstantsBundle>,
    theory: bool,
) -> Result<ValidationReport> {
    let checks = trace_checks(trace, base, bundle, theory);
    let fits = curve_fits(&averages(&trace.rows)?);
    let passed = checks.iter().all(|c| c.passed || !c.required);
    Ok(ValidationReport {
        solver: trace.solver.clone(),
        t: trace.rows.len(),
        theory,
        checks,
        fits,
        passed,
    })
}
