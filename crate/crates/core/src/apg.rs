//! Accelerated projected gradient with monotone backtracking on the step
//! estimate `L` and momentum `k / (k + 3)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{BoxSet, Vector};

/// A differentiable function on `R^n`.
pub trait Smooth {
    fn value(&self, x: &Vector) -> f64;
    fn gradient(&self, x: &Vector) -> Vector;

    fn value_and_gradient(&self, x: &Vector) -> (f64, Vector) {
        (self.value(x), self.gradient(x))
    }
}

/// Adapter from a pair of closures.
pub struct FnSmooth<F, G> {
    pub value: F,
    pub gradient: G,
}

impl<F, G> Smooth for FnSmooth<F, G>
where
    F: Fn(&Vector) -> f64,
    G: Fn(&Vector) -> Vector,
{
    fn value(&self, x: &Vector) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &Vector) -> Vector {
        (self.gradient)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApgConfig {
    /// Backtracking growth factor.
    pub eta: f64,
    pub l_init: f64,
    /// Stop once `||x^{k+1} - x^k||` falls below this.
    pub step_tol: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
}

impl Default for ApgConfig {
    fn default() -> Self {
        ApgConfig {
            eta: 2.0,
            l_init: 1.0,
            step_tol: 1e-6,
            max_iter: 5000,
            max_backtracks: 60,
        }
    }
}

impl ApgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 1.0) {
            return Err(Error::Input(format!("eta must exceed 1, got {}", self.eta)));
        }
        if !(self.l_init > 0.0 && self.l_init.is_finite()) {
            return Err(Error::Input(format!(
                "L_init must be positive, got {}",
                self.l_init
            )));
        }
        if !(self.step_tol >= 0.0) {
            return Err(Error::Input(format!(
                "step_tol must be nonnegative, got {}",
                self.step_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApgStatus {
    Converged,
    MaxIter,
    BacktrackLimit,
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct ApgResult {
    /// Best point seen, `x0` included.
    pub x: Vector,
    pub value: f64,
    pub iterations: usize,
    pub step_norm: f64,
    pub backtracks: usize,
    /// Step estimate in force at exit.
    pub final_l: f64,
    pub status: ApgStatus,
}

impl ApgResult {
    pub fn converged(&self) -> bool {
        self.status == ApgStatus::Converged
    }
}

/// One accepted step, as seen by an observer.
pub struct ApgStep<'a> {
    pub k: usize,
    pub y: &'a Vector,
    pub phi_y: f64,
    pub grad_y: &'a Vector,
    pub l: f64,
    pub x_next: &'a Vector,
    pub phi_next: f64,
}

impl ApgStep<'_> {
    /// Slack of `phi(x_next) <= phi(y) + <grad, x_next - y> + (L/2)||x_next - y||^2`
    /// (nonnegative when the inequality holds up to [`acceptance_slack`]).
    pub fn certificate_margin(&self) -> f64 {
        let d = self.x_next - self.y;
        let rhs = self.phi_y + self.grad_y.dot(&d) + 0.5 * self.l * d.norm_squared();
        rhs + acceptance_slack(self.phi_y) - self.phi_next
    }
}

/// Rounding allowance in the sufficient-decrease test.
pub fn acceptance_slack(phi_y: f64) -> f64 {
    10.0 * f64::EPSILON * phi_y.abs().max(1.0)
}

/// Runs to completion and reports the outcome in `status`; never fails.
pub fn run<S: Smooth + ?Sized>(
    phi: &S,
    set: &BoxSet,
    x0: &Vector,
    config: &ApgConfig,
    mut observer: impl FnMut(&ApgStep),
) -> ApgResult {
    let mut x = set.project_unchecked(x0);
    let mut y = x.clone();
    let mut l = config.l_init;
    let phi0 = phi.value(&x);
    let mut best = (phi0, x.clone());
    let mut backtracks = 0;
    let mut step_norm = f64::INFINITY;
    let mut status = ApgStatus::MaxIter;
    let mut iterations = 0;
    if !phi0.is_finite() {
        status = ApgStatus::NonFinite;
    } else {
        for k in 0..config.max_iter {
            let (phi_y, grad_y) = phi.value_and_gradient(&y);
            if !phi_y.is_finite() || grad_y.iter().any(|g| !g.is_finite()) {
                status = ApgStatus::NonFinite;
                break;
            }
            let slack = acceptance_slack(phi_y);
            let mut accepted = None;
            for i in 0..=config.max_backtracks {
                if i > 0 {
                    l *= config.eta;
                    backtracks += 1;
                }
                let mut z = &y - &grad_y / l;
                set.project_in_place(&mut z);
                let phi_z = phi.value(&z);
                let d = &z - &y;
                let rhs = phi_y + grad_y.dot(&d) + 0.5 * l * d.norm_squared();
                if phi_z <= rhs + slack {
                    accepted = Some((z, phi_z));
                    break;
                }
            }
            let Some((z, phi_z)) = accepted else {
                status = ApgStatus::BacktrackLimit;
                break;
            };
            observer(&ApgStep {
                k,
                y: &y,
                phi_y,
                grad_y: &grad_y,
                l,
                x_next: &z,
                phi_next: phi_z,
            });
            iterations = k + 1;
            step_norm = (&z - &x).norm();
            if phi_z < best.0 {
                best = (phi_z, z.clone());
            }
            let momentum = k as f64 / (k as f64 + 3.0);
            y = &z + (&z - &x) * momentum;
            x = z;
            if step_norm < config.step_tol {
                status = ApgStatus::Converged;
                break;
            }
        }
    }
    ApgResult {
        x: best.1,
        value: best.0,
        iterations,
        step_norm,
        backtracks,
        final_l: l,
        status,
    }
}

/// As [`run`], but backtracking exhaustion and non-finite values are errors.
/// Hitting `max_iter` is not.
pub fn minimize<S: Smooth + ?Sized>(
    phi: &S,
    set: &BoxSet,
    x0: &Vector,
    config: &ApgConfig,
) -> Result<ApgResult> {
    if x0.len() != set.dim() {
        return Err(Error::Input(format!(
            "start point has dimension {}, set has {}",
            x0.len(),
            set.dim()
        )));
    }
    config.validate()?;
    let result = run(phi, set, x0, config, |_| {});
    match result.status {
        ApgStatus::BacktrackLimit => Err(Error::Numerical(format!(
            "backtracking exceeded {} trials at L = {:e}",
            config.max_backtracks, result.final_l
        ))),
        ApgStatus::NonFinite => Err(Error::Numerical("non-finite value in inner solve".into())),
        _ => Ok(result),
    }
}
