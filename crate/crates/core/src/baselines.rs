//! Comparison methods sharing the APG inner solver: the classical augmented
//! Lagrangian method (ALM) and a proximal ALM that is QPALM with the true
//! functions in place of the quadratic surrogates (the in-repo pALM).

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::apg::{self, ApgConfig, ApgStatus, Smooth};
use crate::error::{Error, Result};
use crate::metrics::residual_norm_cached;
use crate::problem::{Problem, Vector};
use crate::qpalm::start_point;
use crate::trace::{RunTrace, TraceRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlmConfig {
    pub sigma0: f64,
    pub rho_pen: f64,
    /// Penalty cap; keeps the inner problems from becoming arbitrarily stiff.
    pub sigma_max: f64,
    pub inner: ApgConfig,
    pub outer_iters: usize,
    /// Stop early once `||R_1|| <= kkt_tol` and `max_i g_i <= kkt_tol`.
    pub kkt_tol: Option<f64>,
    pub budget_s: Option<f64>,
    pub record_time: bool,
    pub x_start: Option<Vec<f64>>,
}

impl Default for AlmConfig {
    fn default() -> Self {
        AlmConfig {
            sigma0: 1.0,
            rho_pen: 10.0,
            sigma_max: 1e6,
            inner: ApgConfig::default(),
            outer_iters: 50,
            kkt_tol: None,
            budget_s: None,
            record_time: true,
            x_start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PalmConfig {
    /// `sigma = T^{-2/3}`, `alpha = c_alpha T^{1/3}` with `T = outer_iters`.
    pub c_alpha: f64,
    pub inner: ApgConfig,
    pub outer_iters: usize,
    pub budget_s: Option<f64>,
    pub record_time: bool,
    pub warm_start_l: bool,
    pub x_start: Option<Vec<f64>>,
}

impl PalmConfig {
    pub fn new(outer_iters: usize, c_alpha: f64) -> Self {
        PalmConfig {
            c_alpha,
            inner: ApgConfig::default(),
            outer_iters,
            budget_s: None,
            record_time: true,
            warm_start_l: true,
            x_start: None,
        }
    }
}

/// `f(x) + (1/2 sigma)[sum_i [lambda_i + sigma g_i(x)]_+^2 - ||lambda||^2] + (alpha/2)||x - c||^2`.
struct AugmentedLagrangian<'a, P: ?Sized> {
    problem: &'a P,
    lambda: &'a Vector,
    sigma: f64,
    prox: Option<(&'a Vector, f64)>,
}

impl<P: Problem + ?Sized> Smooth for AugmentedLagrangian<'_, P> {
    fn value(&self, x: &Vector) -> f64 {
        let g = self.problem.constraints(x);
        let mut v = self.problem.objective(x) + self.penalty(&g);
        if let Some((c, a)) = self.prox {
            v += 0.5 * a * (x - c).norm_squared();
        }
        v
    }

    fn gradient(&self, x: &Vector) -> Vector {
        self.value_and_gradient(x).1
    }

    fn value_and_gradient(&self, x: &Vector) -> (f64, Vector) {
        let fo = self.problem.first_order(x);
        let w = self.shifted(&fo.g);
        let mut v = fo.f + self.penalty(&fo.g);
        let mut grad = &fo.grad_f + fo.jac_g.tr_mul(&w);
        if let Some((c, a)) = self.prox {
            let d = x - c;
            v += 0.5 * a * d.norm_squared();
            grad.axpy(a, &d, 1.0);
        }
        (v, grad)
    }
}

impl<P: Problem + ?Sized> AugmentedLagrangian<'_, P> {
    fn shifted(&self, g: &Vector) -> Vector {
        Vector::from_iterator(
            g.len(),
            g.iter()
                .zip(self.lambda.iter())
                .map(|(gi, l)| (l + self.sigma * gi).max(0.0)),
        )
    }

    fn penalty(&self, g: &Vector) -> f64 {
        (self.shifted(g).norm_squared() - self.lambda.norm_squared()) / (2.0 * self.sigma)
    }
}

struct OuterSpec<'a> {
    name: &'static str,
    iters: usize,
    sigma: &'a dyn Fn(usize) -> f64,
    alpha_prox: Option<f64>,
    alpha_residual: f64,
    inner: ApgConfig,
    warm_start_l: bool,
    kkt_tol: Option<f64>,
    budget_s: Option<f64>,
    record_time: bool,
}

fn outer_loop<P: Problem + ?Sized>(problem: &P, x1: Vector, spec: OuterSpec) -> Result<RunTrace> {
    spec.inner.validate()?;
    let set = problem.feasible_set();
    let mut x = x1;
    let mut lambda = Vector::zeros(problem.num_constraints());
    let mut rows = Vec::with_capacity(spec.iters);
    let mut lambdas = vec![lambda.iter().copied().collect::<Vec<_>>()];
    let mut sigmas = Vec::with_capacity(spec.iters);
    let mut inner = spec.inner;
    let mut elapsed = 0.0;
    let mut wall = 0.0;
    let mut inner_failures = 0;
    for k in 0..spec.iters {
        let t = k + 1;
        let clock = Instant::now();
        let sigma = (spec.sigma)(k);
        let anchor = problem.first_order(&x);
        let al = AugmentedLagrangian {
            problem,
            lambda: &lambda,
            sigma,
            prox: spec.alpha_prox.map(|a| (&x, a)),
        };
        let res = apg::run(&al, set, &x, &inner, |_| {});
        if res.status != ApgStatus::Converged {
            inner_failures += 1;
        }
        if res.status == ApgStatus::NonFinite && !res.value.is_finite() {
            return Err(
                Error::Numerical(format!("{}: non-finite inner objective", spec.name)).at_outer(t),
            );
        }
        if spec.warm_start_l {
            inner.l_init = res.final_l;
        }
        let g_next = problem.constraints(&res.x);
        let next_lambda = Vector::from_iterator(
            g_next.len(),
            lambda
                .iter()
                .zip(g_next.iter())
                .map(|(l, g)| (l + sigma * g).max(0.0)),
        );
        let dt = clock.elapsed().as_secs_f64();
        wall += dt;
        if spec.record_time {
            elapsed += dt;
        }
        rows.push(TraceRow {
            t,
            f: anchor.f,
            g: anchor.g.iter().copied().collect(),
            comp: lambda.dot(&anchor.g),
            lam_norm: lambda.norm(),
            step_norm: (&res.x - &x).norm(),
            inner_iters: res.iterations,
            cpu_s: elapsed,
            moreau_sq: None,
            r_alpha: residual_norm_cached(set, &x, &anchor, &lambda, spec.alpha_residual),
        });
        sigmas.push(sigma);
        lambdas.push(next_lambda.iter().copied().collect());
        x = res.x;
        lambda = next_lambda;
        if let Some(tol) = spec.kkt_tol {
            let fo = problem.first_order(&x);
            let r = residual_norm_cached(set, &x, &fo, &lambda, spec.alpha_residual);
            if r <= tol && fo.g.max() <= tol {
                break;
            }
        }
        if spec.budget_s.is_some_and(|b| wall >= b) {
            break;
        }
    }
    Ok(RunTrace {
        solver: spec.name.into(),
        rows,
        lambdas,
        sigmas,
        alpha: spec.alpha_residual,
        x_final: x.iter().copied().collect(),
        inner_failures,
    })
}

/// Classical ALM; the inner problem may be nonconvex and APG acts as a local
/// method on it. `r_alpha` uses `alpha = 1`.
pub fn alm_run<P: Problem + ?Sized>(
    problem: &P,
    config: &AlmConfig,
    xhat: Option<Vector>,
) -> Result<RunTrace> {
    if !(config.sigma0 > 0.0) || !(config.rho_pen >= 1.0) || !(config.sigma_max >= config.sigma0) {
        return Err(Error::Input(
            "ALM needs sigma0 > 0, rho_pen >= 1, sigma_max >= sigma0".into(),
        ));
    }
    let x1 = start_point(problem, config.x_start.as_deref(), xhat)?;
    let (s0, rho, smax) = (config.sigma0, config.rho_pen, config.sigma_max);
    let sigma = move |k: usize| (s0 * rho.powi(k.min(1000) as i32)).min(smax);
    outer_loop(
        problem,
        x1,
        OuterSpec {
            name: "alm",
            iters: config.outer_iters,
            sigma: &sigma,
            alpha_prox: None,
            alpha_residual: 1.0,
            inner: config.inner,
            warm_start_l: false,
            kkt_tol: config.kkt_tol,
            budget_s: config.budget_s,
            record_time: config.record_time,
        },
    )
}

/// The in-repo pALM.
pub fn palm_run<P: Problem + ?Sized>(
    problem: &P,
    config: &PalmConfig,
    xhat: Option<Vector>,
) -> Result<RunTrace> {
    if config.outer_iters == 0 || !(config.c_alpha > 0.0) {
        return Err(Error::Input(
            "pALM needs outer_iters >= 1 and c_alpha > 0".into(),
        ));
    }
    let x1 = start_point(problem, config.x_start.as_deref(), xhat)?;
    let tf = config.outer_iters as f64;
    let s = tf.powf(-2.0 / 3.0);
    let alpha = config.c_alpha * tf.cbrt();
    let sigma = move |_: usize| s;
    outer_loop(
        problem,
        x1,
        OuterSpec {
            name: "palm",
            iters: config.outer_iters,
            sigma: &sigma,
            alpha_prox: Some(alpha),
            alpha_residual: alpha,
            inner: config.inner,
            warm_start_l: config.warm_start_l,
            kkt_tol: None,
            budget_s: config.budget_s,
            record_time: config.record_time,
        },
    )
}
