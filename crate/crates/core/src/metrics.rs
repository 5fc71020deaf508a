//! Approximate-KKT measures: projected-gradient residual, Moreau-envelope
//! gradient of the Lagrangian, and running averages over a trace.

use serde::{Deserialize, Serialize};

use crate::apg::{self, ApgConfig, Smooth};
use crate::error::{Error, Result};
use crate::problem::{lagrangian_grad, BoxSet, FirstOrder, Problem, Vector};
use crate::trace::TraceRow;

/// `alpha [x - Pi_X(x - grad / alpha)]` for a given Lagrangian gradient.
pub fn residual_from_grad(set: &BoxSet, x: &Vector, grad: &Vector, alpha: f64) -> Vector {
    let z = set.project_unchecked(&(x - grad / alpha));
    (x - z) * alpha
}

/// `R_alpha(x, lambda)`.
pub fn kkt_residual<P: Problem + ?Sized>(
    problem: &P,
    x: &Vector,
    lambda: &Vector,
    alpha: f64,
) -> Result<Vector> {
    if !(alpha > 0.0) {
        return Err(Error::Input(format!("alpha must be positive, got {alpha}")));
    }
    let grad = lagrangian_grad(problem, x, lambda)?;
    Ok(residual_from_grad(problem.feasible_set(), x, &grad, alpha))
}

/// `||R_alpha||` from cached first-order data.
pub fn residual_norm_cached(
    set: &BoxSet,
    x: &Vector,
    data: &FirstOrder,
    lambda: &Vector,
    alpha: f64,
) -> f64 {
    residual_from_grad(set, x, &data.lagrangian_grad(lambda), alpha).norm()
}

/// All four relaxed KKT inequalities, non-strict.
pub fn epsilon_kkt<P: Problem + ?Sized>(
    problem: &P,
    x: &Vector,
    lambda: &Vector,
    alpha: f64,
    eps: f64,
) -> Result<bool> {
    if !(eps > 0.0) {
        return Err(Error::Input(format!("epsilon must be positive, got {eps}")));
    }
    let r = kkt_residual(problem, x, lambda, alpha)?.norm();
    let g = problem.constraints(x);
    Ok(r <= eps
        && -lambda.dot(&g) <= eps
        && g.iter().all(|&gi| gi <= eps)
        && lambda.iter().all(|&l| l >= -eps))
}

#[derive(Debug, Clone)]
pub struct MoreauResult {
    /// `alpha (x - xhat)`.
    pub grad: Vector,
    pub prox: Vector,
    /// False when `alpha` does not dominate the weak-convexity modulus of
    /// `L(., lambda)` or the inner solve did not converge.
    pub reliable: bool,
}

struct ProximalLagrangian<'a, P: ?Sized> {
    problem: &'a P,
    lambda: &'a Vector,
    center: &'a Vector,
    alpha: f64,
}

impl<P: Problem + ?Sized> Smooth for ProximalLagrangian<'_, P> {
    fn value(&self, z: &Vector) -> f64 {
        self.problem.objective(z)
            + self.lambda.dot(&self.problem.constraints(z))
            + 0.5 * self.alpha * (z - self.center).norm_squared()
    }

    fn gradient(&self, z: &Vector) -> Vector {
        self.value_and_gradient(z).1
    }

    fn value_and_gradient(&self, z: &Vector) -> (f64, Vector) {
        let fo = self.problem.first_order(z);
        let d = z - self.center;
        let value = fo.f + self.lambda.dot(&fo.g) + 0.5 * self.alpha * d.norm_squared();
        let grad = fo.lagrangian_grad(self.lambda) + d * self.alpha;
        (value, grad)
    }
}

/// Default inner configuration for proximal-point evaluations.
pub fn moreau_inner_config() -> ApgConfig {
    ApgConfig {
        step_tol: 1e-8,
        max_iter: 20_000,
        ..ApgConfig::default()
    }
}

/// `grad e(x) = alpha (x - prox(x))` with `prox(x) = argmin_{z in X} L(z, lambda) + (alpha/2)||z - x||^2`.
pub fn moreau_gradient<P: Problem + ?Sized>(
    problem: &P,
    x: &Vector,
    lambda: &Vector,
    alpha: f64,
    inner: &ApgConfig,
) -> Result<MoreauResult> {
    if lambda.len() != problem.num_constraints() || x.len() != problem.dim() {
        return Err(Error::Input("moreau_gradient: dimension mismatch".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::Input(format!("alpha must be positive, got {alpha}")));
    }
    let m = problem.moduli();
    let modulus = m.objective
        + lambda
            .iter()
            .zip(&m.constraints)
            .map(|(l, li)| l.max(0.0) * li)
            .sum::<f64>();
    let phi = ProximalLagrangian {
        problem,
        lambda,
        center: x,
        alpha,
    };
    let res = apg::run(&phi, problem.feasible_set(), x, inner, |_| {});
    Ok(MoreauResult {
        grad: (x - &res.x) * alpha,
        reliable: alpha > modulus && res.converged(),
        prox: res.x,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    /// `(T', mean of measured ||grad e||^2 over t <= T')` at measured `T'`.
    pub curve_a: Vec<(usize, f64)>,
    /// `(T', max_i mean_{t <= T'} g_i(x^t))`.
    pub curve_b: Vec<(usize, f64)>,
    /// `(T', -mean_{t <= T'} <lambda^t, g(x^t)>)`.
    pub curve_c: Vec<(usize, f64)>,
    /// Per-constraint running means at the final `T'`.
    pub final_constraint_means: Vec<f64>,
}

pub fn averages(rows: &[TraceRow]) -> Result<Curves> {
    if rows.is_empty() {
        return Err(Error::Input("empty trace".into()));
    }
    let p = rows[0].g.len();
    let mut g_sum = vec![0.0; p];
    let mut comp_sum = 0.0;
    let mut m_sum = 0.0;
    let mut m_count = 0usize;
    let mut curves = Curves::default();
    for (k, r) in rows.iter().enumerate() {
        let tp = k + 1;
        let n = tp as f64;
        for (s, g) in g_sum.iter_mut().zip(&r.g) {
            *s += g;
        }
        comp_sum += r.comp;
        if let Some(m) = r.moreau_sq {
            m_sum += m;
            m_count += 1;
            curves.curve_a.push((tp, m_sum / m_count as f64));
        }
        let worst = g_sum
            .iter()
            .map(|s| s / n)
            .fold(f64::NEG_INFINITY, f64::max);
        curves.curve_b.push((tp, worst));
        curves.curve_c.push((tp, -comp_sum / n));
    }
    let n = rows.len() as f64;
    curves.final_constraint_means = g_sum.iter().map(|s| s / n).collect();
    Ok(curves)
}

/// Tidy `metric,T_prime,value` rows.
pub fn curves_csv(curves: &Curves) -> String {
    let mut out = String::from("metric,T_prime,value\n");
    for (name, series) in [
        ("moreau_sq_avg", &curves.curve_a),
        ("max_violation_avg", &curves.curve_b),
        ("complementarity_avg", &curves.curve_c),
    ] {
        for (t, v) in series {
            out.push_str(&format!("{name},{t},{v}\n"));
        }
    }
    out
}
