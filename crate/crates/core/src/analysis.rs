//! Envelope fits, data profiles and time-to-target curves.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::TraceRow;

pub const BAND: (f64, f64) = (-2.0 / 3.0, -1.0 / 3.0);
pub const MIN_FIT_POINTS: usize = 10;
pub const SUCCESS_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    FreeInBand,
    FixedThird,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub mode: FitMode,
    pub exponent: f64,
    /// Unclamped least-squares slope of `ln y` on `ln T`.
    pub raw_slope: f64,
    /// Smallest `a` with `a T^exponent >= y(T)` at every observed point.
    pub coefficient: f64,
    /// RMS log-space residual of the line with the chosen exponent.
    pub residual: f64,
    pub majorized: bool,
    pub points_used: usize,
    pub dropped_fraction: f64,
}

impl FitResult {
    pub fn envelope(&self, t: f64) -> f64 {
        self.coefficient * t.powf(self.exponent)
    }
}

fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// Log-log least-squares slope over the points with `T >= T_max / 10` and `y > 0`.
pub fn last_decade_slope(curve: &[(usize, f64)]) -> Option<f64> {
    let t_max = curve.iter().map(|&(t, _)| t).max()? as f64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = curve
        .iter()
        .filter(|&&(t, y)| t as f64 >= t_max / 10.0 && t > 0 && y > 0.0 && y.is_finite())
        .map(|&(t, y)| ((t as f64).ln(), y.ln()))
        .unzip();
    (xs.len() >= 2).then(|| ls_slope(&xs, &ys))
}

pub fn envelope_fit(curve: &[(usize, f64)], mode: FitMode) -> Result<FitResult> {
    let pos: Vec<(f64, f64)> = curve
        .iter()
        .filter(|&&(t, y)| t > 0 && y > 0.0 && y.is_finite())
        .map(|&(t, y)| (t as f64, y))
        .collect();
    if pos.len() < MIN_FIT_POINTS {
        return Err(Error::Input(format!(
            "fit unavailable: {} positive points, need {MIN_FIT_POINTS}",
            pos.len()
        )));
    }
    let lx: Vec<f64> = pos.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = pos.iter().map(|p| p.1.ln()).collect();
    let raw_slope = ls_slope(&lx, &ly);
    let exponent = match mode {
        FitMode::FreeInBand => raw_slope.clamp(BAND.0, BAND.1),
        FitMode::FixedThird => BAND.1,
    };
    let coefficient = pos
        .iter()
        .map(|&(t, y)| y / t.powf(exponent))
        .fold(0.0, f64::max);
    let offsets: Vec<f64> = lx.iter().zip(&ly).map(|(x, y)| y - exponent * x).collect();
    let mean = offsets.iter().sum::<f64>() / offsets.len() as f64;
    let residual =
        (offsets.iter().map(|o| (o - mean).powi(2)).sum::<f64>() / offsets.len() as f64).sqrt();
    let majorized = curve.iter().all(|&(t, y)| {
        let bound = coefficient * (t as f64).powf(exponent);
        y <= bound * (1.0 + 1e-12) || y <= 0.0
    });
    Ok(FitResult {
        mode,
        exponent,
        raw_slope,
        coefficient,
        residual,
        majorized,
        points_used: pos.len(),
        dropped_fraction: (curve.len() - pos.len()) as f64 / curve.len() as f64,
    })
}

/// Largest rebound `y_j - min_{i<=j} y_i` over the tail starting at `from` (a fraction of the
/// length), relative to the largest magnitude in that tail.
pub fn relative_ripple(curve: &[(usize, f64)], from: f64) -> f64 {
    let start = ((curve.len() as f64) * from).floor() as usize;
    let tail = &curve[start.min(curve.len())..];
    let scale = tail.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let mut low = f64::INFINITY;
    let mut worst = 0.0f64;
    for &(_, y) in tail {
        low = low.min(y);
        worst = worst.max(y - low);
    }
    worst / scale
}

/// `(time, f)` pairs: `f(x^1)` at time 0, then `f(x^{t+1})` at the cumulative time of row `t`.
pub fn timed_objective(rows: &[TraceRow]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(rows.len());
    if let Some(first) = rows.first() {
        out.push((0.0, first.f));
    }
    for w in rows.windows(2) {
        out.push((w[0].cpu_s, w[1].f));
    }
    out
}

/// Same as [`timed_objective`] but keeps only points with `max_i g_i <= tol`.
pub fn timed_feasible_objective(rows: &[TraceRow], tol: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    if let Some(first) = rows.first() {
        if first.max_violation() <= tol {
            out.push((0.0, first.f));
        }
    }
    for w in rows.windows(2) {
        if w[1].max_violation() <= tol {
            out.push((w[0].cpu_s, w[1].f));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub instance: String,
    pub solver: String,
    /// `None` means never successful.
    pub success_time: Option<f64>,
}

/// Success times on one instance. Every series starts from the same `f_start`; a solver succeeds
/// once its decrease reaches `SUCCESS_FRACTION` of the best decrease of any solver.
pub fn success_times(f_start: f64, series: &[Vec<(f64, f64)>]) -> Vec<Option<f64>> {
    let best = series
        .iter()
        .flat_map(|s| s.iter().map(|&(_, f)| f_start - f))
        .fold(0.0, f64::max);
    let target = SUCCESS_FRACTION * best;
    series
        .iter()
        .map(|s| {
            s.iter()
                .find(|&&(_, f)| f_start - f >= target)
                .map(|&(t, _)| t)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub solver: String,
    pub budget: f64,
    pub fraction: f64,
}

/// Sorted distinct finite success times, with 0 prepended.
pub fn profile_grid(summaries: &[RunSummary]) -> Vec<f64> {
    let mut grid: Vec<f64> = summaries.iter().filter_map(|s| s.success_time).collect();
    grid.push(0.0);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

pub fn data_profile(summaries: &[RunSummary], grid: &[f64]) -> Vec<ProfilePoint> {
    let mut solvers: Vec<&str> = summaries.iter().map(|s| s.solver.as_str()).collect();
    solvers.sort_unstable();
    solvers.dedup();
    let mut instances: Vec<&str> = summaries.iter().map(|s| s.instance.as_str()).collect();
    instances.sort_unstable();
    instances.dedup();
    let mut out = Vec::new();
    for solver in solvers {
        let runs: Vec<&RunSummary> = summaries.iter().filter(|s| s.solver == solver).collect();
        for &budget in grid {
            let solved = instances
                .iter()
                .filter(|&&inst| {
                    runs.iter()
                        .any(|r| r.instance == inst && r.success_time.is_some_and(|t| t <= budget))
                })
                .count();
            out.push(ProfilePoint {
                solver: solver.to_string(),
                budget,
                fraction: solved as f64 / instances.len() as f64,
            });
        }
    }
    out
}

/// Median with `None` as +infinity; `None` when more than half the entries are `None`.
pub fn median_time(times: &[Option<f64>]) -> Option<f64> {
    let mut v: Vec<f64> = times.iter().map(|t| t.unwrap_or(f64::INFINITY)).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    m.is_finite().then_some(m)
}

pub fn theta_grid() -> Vec<f64> {
    (0..=14).map(|k| (10 + 5 * k) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPoint {
    pub theta: f64,
    pub time: Option<f64>,
}

/// The first entry of `series` is the starting point.
pub fn time_to_target(
    series: &[(f64, f64)],
    f_ref: f64,
    thetas: &[f64],
) -> Result<Vec<TargetPoint>> {
    let &(_, f0) = series
        .first()
        .ok_or_else(|| Error::Input("empty objective series".into()))?;
    if !(f0 > f_ref) {
        return Err(Error::Input(format!(
            "degenerate target: f(x0) = {f0} is not above f_ref = {f_ref}"
        )));
    }
    let span = f0 - f_ref;
    let mut best = f64::INFINITY;
    let deltas: Vec<(f64, f64)> = series
        .iter()
        .map(|&(t, f)| {
            best = best.min(f);
            (t, (f0 - best) / span)
        })
        .collect();
    Ok(thetas
        .iter()
        .map(|&theta| TargetPoint {
            theta,
            time: deltas.iter().find(|&&(_, d)| d >= theta).map(|&(t, _)| t),
        })
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "inf".to_string(), |t| t.to_string())
}

pub fn fits_csv(fits: &[(String, Option<FitResult>)]) -> String {
    let mut out = String::from(
        "metric,mode,exponent,raw_slope,coefficient,residual,majorized,points_used,dropped_fraction\n",
    );
    for (name, fit) in fits {
        match fit {
            Some(f) => {
                let mode = match f.mode {
                    FitMode::FreeInBand => "free_in_band",
                    FitMode::FixedThird => "fixed_third",
                };
                let _ = writeln!(
                    out,
                    "{name},{mode},{},{},{},{},{},{},{}",
                    f.exponent,
                    f.raw_slope,
                    f.coefficient,
                    f.residual,
                    f.majorized,
                    f.points_used,
                    f.dropped_fraction
                );
            }
            None => {
                let _ = writeln!(out, "{name},unavailable,,,,,,,");
            }
        }
    }
    out
}

pub fn profile_csv(points: &[ProfilePoint]) -> String {
    let mut out = String::from("solver,budget_s,fraction\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.solver, p.budget, p.fraction);
    }
    out
}

pub fn summaries_csv(summaries: &[RunSummary]) -> String {
    let mut out = String::from("instance,solver,success_time_s\n");
    for s in summaries {
        let _ = writeln!(out, "{},{},{}", s.instance, s.solver, opt(s.success_time));
    }
    out
}

pub fn targets_csv(curves: &[(String, Vec<TargetPoint>)]) -> String {
    let mut out = String::from("solver,theta,time_s\n");
    for (solver, pts) in curves {
        for p in pts {
            let _ = writeln!(out, "{solver},{},{}", p.theta, opt(p.time));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(f: impl Fn(f64) -> f64, n: usize) -> Vec<(usize, f64)> {
        (1..=n).map(|t| (t, f(t as f64))).collect()
    }

    #[test]
    fn interior_slope_is_recovered() {
        let fit = envelope_fit(&series(|t| 2.0 * t.powf(-0.5), 100), FitMode::FreeInBand).unwrap();
        assert!((fit.exponent + 0.5).abs() < 1e-12);
        assert!((fit.coefficient - 2.0).abs() < 1e-10);
        assert!(fit.majorized && fit.residual < 1e-12);
        // Oracle: exponent minimizing squared log error on a fine grid.
        let pts = series(|t| 2.0 * t.powf(-0.5), 100);
        let sse = |a: f64| {
            let lx: Vec<f64> = pts.iter().map(|p| (p.0 as f64).ln()).collect();
            let ly: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
            let b = ly.iter().zip(&lx).map(|(y, x)| y - a * x).sum::<f64>() / lx.len() as f64;
            ly.iter()
                .zip(&lx)
                .map(|(y, x)| (y - a * x - b).powi(2))
                .sum::<f64>()
        };
        let best = (0..=3000)
            .map(|k| BAND.0 + k as f64 * (BAND.1 - BAND.0) / 3000.0)
            .min_by(|a, b| sse(*a).total_cmp(&sse(*b)))
            .unwrap();
        assert!((best - fit.exponent).abs() < 2e-4);
    }

    #[test]
    fn steep_curve_is_clamped() {
        let fit = envelope_fit(&series(|t| 1.0 / t, 100), FitMode::FreeInBand).unwrap();
        assert_eq!(fit.exponent, -2.0 / 3.0);
        assert!((fit.raw_slope + 1.0).abs() < 1e-12);
        assert!((fit.coefficient - 1.0).abs() < 1e-12);
        let flat = envelope_fit(&series(|_| 3.0, 50), FitMode::FreeInBand).unwrap();
        assert_eq!(flat.exponent, -1.0 / 3.0);
    }

    #[test]
    fn fixed_third_on_constant() {
        let fit = envelope_fit(&series(|_| 0.7, 64), FitMode::FixedThird).unwrap();
        assert_eq!(fit.exponent, -1.0 / 3.0);
        assert!((fit.coefficient - 0.7 * 64f64.powf(1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_points_are_dropped() {
        let mut c = series(|t| t.powf(-0.4), 20);
        c[3].1 = -1.0;
        c[7].1 = 0.0;
        let fit = envelope_fit(&c, FitMode::FreeInBand).unwrap();
        assert_eq!(fit.points_used, 18);
        assert!((fit.dropped_fraction - 0.1).abs() < 1e-15);
        assert!(fit.majorized);
        let few: Vec<_> = series(|t| t, 9);
        assert!(envelope_fit(&few, FitMode::FixedThird).is_err());
    }

    #[test]
    fn fit_ignores_non_attaining_points() {
        let c = series(|t| (1.0 + 0.5 * (t * 0.7).sin()) * t.powf(-0.5), 60);
        let mode = FitMode::FixedThird;
        let full = envelope_fit(&c, mode).unwrap();
        let arg = c
            .iter()
            .max_by(|a, b| {
                (a.1 / (a.0 as f64).powf(full.exponent))
                    .total_cmp(&(b.1 / (b.0 as f64).powf(full.exponent)))
            })
            .unwrap()
            .0;
        let sub: Vec<_> = c
            .iter()
            .copied()
            .filter(|p| p.0 == arg || p.0 % 3 != 0)
            .collect();
        let fit = envelope_fit(&sub, mode).unwrap();
        assert_eq!(fit.coefficient, full.coefficient);
        // Free mode with a slope outside the band is clamped either way.
        let steep = series(|t| (1.0 + 0.1 * (t * 0.7).sin()) / t, 60);
        let full = envelope_fit(&steep, FitMode::FreeInBand).unwrap();
        let sub: Vec<_> = steep
            .iter()
            .copied()
            .filter(|p| p.0 == 1 || p.0 % 2 == 0)
            .collect();
        let fit = envelope_fit(&sub, FitMode::FreeInBand).unwrap();
        assert_eq!(fit.exponent, full.exponent);
        assert_eq!(fit.coefficient, full.coefficient);
    }

    #[test]
    fn decade_slope_and_ripple() {
        let c = series(|t| 5.0 / t, 1000);
        assert!((last_decade_slope(&c).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(relative_ripple(&c, 0.5), 0.0);
        let mut bumpy = c.clone();
        bumpy[900].1 = bumpy[899].1 * 1.5;
        let r = relative_ripple(&bumpy, 0.5);
        assert!((r - 501.0 / 1800.0).abs() < 1e-12, "{r}");
    }

    #[test]
    fn target_examples() {
        let s = [(0.0, 10.0), (1.0, 5.0), (2.0, 2.0), (3.0, 1.0)];
        let pts = time_to_target(&s, 1.0, &[0.5, 0.0, 1.0]).unwrap();
        assert_eq!(pts[0].time, Some(1.0));
        assert_eq!(pts[1].time, Some(0.0));
        assert_eq!(pts[2].time, Some(3.0));
        let pts = time_to_target(&s, 0.5, &[1.0]).unwrap();
        assert_eq!(pts[0].time, None);
        assert!(time_to_target(&s, 10.0, &[0.5]).is_err());
        let g = theta_grid();
        assert_eq!(g.len(), 15);
        assert_eq!((g[0], g[14]), (0.1, 0.8));
    }

    fn summary(inst: &str, solver: &str, t: Option<f64>) -> RunSummary {
        RunSummary {
            instance: inst.into(),
            solver: solver.into(),
            success_time: t,
        }
    }

    #[test]
    fn profile_examples() {
        let s = vec![summary("a", "qpalm", Some(1.0)), summary("a", "alm", None)];
        let pts = data_profile(&s, &[0.0, 0.5, 1.0, 2.0]);
        let get = |solver: &str| -> Vec<f64> {
            pts.iter()
                .filter(|p| p.solver == solver)
                .map(|p| p.fraction)
                .collect()
        };
        assert_eq!(get("qpalm"), vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(get("alm"), vec![0.0; 4]);
        let same = vec![summary("a", "x", Some(0.3)), summary("a", "y", Some(0.3))];
        let pts = data_profile(&same, &profile_grid(&same));
        assert_eq!(pts[0].fraction, pts[2].fraction);
        assert_eq!(pts[1].fraction, pts[3].fraction);
    }

    #[test]
    fn success_rule() {
        let a = vec![(0.0, 10.0), (1.0, 6.0), (2.0, 0.0)];
        let b = vec![(0.0, 10.0), (0.5, 1.0), (3.0, 1.0)];
        // Best decrease 10, target 8: a reaches it at 2, b at 0.5.
        assert_eq!(success_times(10.0, &[a, b]), vec![Some(2.0), Some(0.5)]);
        assert_eq!(median_time(&[Some(1.0), None, Some(3.0)]), Some(3.0));
        assert_eq!(median_time(&[None, None, Some(3.0)]), None);
    }

    #[test]
    fn timed_series_shift() {
        let row = |t: usize, f: f64, cpu: f64| TraceRow {
            t,
            f,
            g: vec![if t == 2 { 1.0 } else { -1.0 }],
            comp: 0.0,
            lam_norm: 0.0,
            step_norm: 0.0,
            inner_iters: 0,
            cpu_s: cpu,
            moreau_sq: None,
            r_alpha: 0.0,
        };
        let rows = vec![row(1, 3.0, 0.1), row(2, 2.0, 0.2), row(3, 1.0, 0.3)];
        assert_eq!(
            timed_objective(&rows),
            vec![(0.0, 3.0), (0.1, 2.0), (0.2, 1.0)]
        );
        assert_eq!(
            timed_feasible_objective(&rows, 0.0),
            vec![(0.0, 3.0), (0.2, 1.0)]
        );
    }

    proptest! {
        #[test]
        fn envelope_majorizes(ys in proptest::collection::vec(1e-6f64..1e3, 10..80), fixed in any::<bool>()) {
            let c: Vec<(usize, f64)> = ys.iter().enumerate().map(|(k, &y)| (k + 1, y)).collect();
            let mode = if fixed { FitMode::FixedThird } else { FitMode::FreeInBand };
            let fit = envelope_fit(&c, mode).unwrap();
            prop_assert!(fit.majorized);
            prop_assert!(fit.exponent >= BAND.0 && fit.exponent <= BAND.1);
            prop_assert!(fit.coefficient > 0.0);
        }

        #[test]
        fn monotone_profiles_and_targets(
            fs in proptest::collection::vec(0.0f64..100.0, 2..40),
            times in proptest::collection::vec(proptest::option::of(0.0f64..10.0), 1..12),
        ) {
            let mut series: Vec<(f64, f64)> = vec![(0.0, 101.0)];
            series.extend(fs.iter().enumerate().map(|(k, &f)| (k as f64 + 1.0, f)));
            let thetas: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
            let pts = time_to_target(&series, -1.0, &thetas).unwrap();
            for w in pts.windows(2) {
                let a = w[0].time.unwrap_or(f64::INFINITY);
                let b = w[1].time.unwrap_or(f64::INFINITY);
                prop_assert!(a <= b);
            }
            let sums: Vec<RunSummary> = times
                .iter()
                .enumerate()
                .map(|(k, &t)| summary(&format!("i{k}"), "s", t))
                .collect();
            let prof = data_profile(&sums, &profile_grid(&sums));
            for w in prof.windows(2) {
                prop_assert!(w[0].fraction <= w[1].fraction);
            }
        }
    }
}
