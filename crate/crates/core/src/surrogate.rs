//! Quadratic surrogates of the objective and constraints around an anchor,
//! and the strongly convex proximal augmented-Lagrangian subproblem built
//! from them.

use crate::apg::Smooth;
use crate::error::{Error, Result};
use crate::problem::{FirstOrder, Moduli, Problem, Vector};

/// Default gap between the surrogate curvature and the weak-convexity modulus.
pub const DEFAULT_PAD: f64 = 0.1;

/// Scalar curvatures: `Sigma_i = s_i I` with `s_i = -(L_i + pad)` for the
/// constraints and `Sigma_0 = sigma0 I`, `sigma0 = 1 + sum_j lambda_j (L_j + pad)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureSpec {
    pub pad: f64,
    pub s: Vec<f64>,
    pub sigma0: f64,
}

impl CurvatureSpec {
    pub fn new(moduli: &Moduli, pad: f64, lambda: &Vector) -> Result<Self> {
        if !(pad > 0.0 && pad.is_finite()) {
            return Err(Error::Input(format!("pad must be positive, got {pad}")));
        }
        if lambda.len() != moduli.constraints.len() {
            return Err(Error::Input(
                "multiplier length does not match constraint count".into(),
            ));
        }
        if lambda.iter().any(|&l| l < 0.0 || !l.is_finite()) {
            return Err(Error::Input(
                "multipliers must be finite and nonnegative".into(),
            ));
        }
        let s: Vec<f64> = moduli.constraints.iter().map(|l| -(l + pad)).collect();
        let sigma0 = 1.0 - lambda.iter().zip(&s).map(|(l, si)| l * si).sum::<f64>();
        Ok(CurvatureSpec { pad, s, sigma0 })
    }

    /// `max_i |s_i|`.
    pub fn kappa_h(&self) -> f64 {
        self.s.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// `sqrt(p) kappa_H`.
    pub fn c_sigma(&self) -> f64 {
        (self.s.len() as f64).sqrt() * self.kappa_h()
    }
}

/// Surrogate subproblem at `(x^t, lambda^t)`:
/// `q_0(x) + (1/2 sigma)[sum_i [lambda_i + sigma q_i(x)]_+^2 - ||lambda||^2] + (alpha/2)||x - x^t||^2`.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    anchor: Vector,
    data: FirstOrder,
    curvature: CurvatureSpec,
    lambda: Vector,
    sigma: f64,
    alpha: f64,
}

impl SurrogateModel {
    pub fn build<P: Problem + ?Sized>(
        problem: &P,
        anchor: &Vector,
        lambda: &Vector,
        pad: f64,
        sigma: f64,
        alpha: f64,
    ) -> Result<Self> {
        if anchor.len() != problem.dim() {
            return Err(Error::Input(format!(
                "anchor has dimension {}, problem has {}",
                anchor.len(),
                problem.dim()
            )));
        }
        if !(sigma > 0.0 && alpha > 0.0) {
            return Err(Error::Input(format!(
                "need sigma, alpha > 0, got {sigma}, {alpha}"
            )));
        }
        let curvature = CurvatureSpec::new(&problem.moduli(), pad, lambda)?;
        let data = problem.first_order(anchor);
        if !data.f.is_finite() || data.g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "non-finite oracle value at the anchor".into(),
            ));
        }
        Ok(SurrogateModel {
            anchor: anchor.clone(),
            data,
            curvature,
            lambda: lambda.clone(),
            sigma,
            alpha,
        })
    }

    pub fn anchor(&self) -> &Vector {
        &self.anchor
    }

    /// First-order data cached at the anchor.
    pub fn anchor_data(&self) -> &FirstOrder {
        &self.data
    }

    pub fn curvature(&self) -> &CurvatureSpec {
        &self.curvature
    }

    pub fn lambda(&self) -> &Vector {
        &self.lambda
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `q_i(x)`; index 0 is the objective model, `i >= 1` the constraint `i`.
    pub fn eval_q(&self, i: usize, x: &Vector) -> f64 {
        let d = x - &self.anchor;
        let dd = d.norm_squared();
        if i == 0 {
            self.data.f + self.data.grad_f.dot(&d) + 0.5 * self.curvature.sigma0 * dd
        } else {
            let row = self.data.jac_g.row(i - 1);
            self.data.g[i - 1] + row.transpose().dot(&d) + 0.5 * self.curvature.s[i - 1] * dd
        }
    }

    /// All constraint models `(q_1(x), ..., q_p(x))`.
    pub fn constraint_models(&self, x: &Vector) -> Vector {
        let d = x - &self.anchor;
        self.models_at(&d)
    }

    fn models_at(&self, d: &Vector) -> Vector {
        let dd = d.norm_squared();
        let mut q = &self.data.g + &self.data.jac_g * d;
        for (qi, si) in q.iter_mut().zip(&self.curvature.s) {
            *qi += 0.5 * si * dd;
        }
        q
    }

    fn shifted(&self, q: &Vector) -> Vector {
        Vector::from_iterator(
            q.len(),
            q.iter()
                .zip(self.lambda.iter())
                .map(|(qi, l)| (l + self.sigma * qi).max(0.0)),
        )
    }

    pub fn eval_subproblem(&self, x: &Vector) -> f64 {
        let d = x - &self.anchor;
        let dd = d.norm_squared();
        let q0 = self.data.f + self.data.grad_f.dot(&d) + 0.5 * self.curvature.sigma0 * dd;
        let w = self.shifted(&self.models_at(&d));
        q0 + (w.norm_squared() - self.lambda.norm_squared()) / (2.0 * self.sigma)
            + 0.5 * self.alpha * dd
    }

    pub fn grad_subproblem(&self, x: &Vector) -> Vector {
        self.value_grad(x).1
    }

    fn value_grad(&self, x: &Vector) -> (f64, Vector) {
        let d = x - &self.anchor;
        let dd = d.norm_squared();
        let q0 = self.data.f + self.data.grad_f.dot(&d) + 0.5 * self.curvature.sigma0 * dd;
        let w = self.shifted(&self.models_at(&d));
        let value = q0
            + (w.norm_squared() - self.lambda.norm_squared()) / (2.0 * self.sigma)
            + 0.5 * self.alpha * dd;
        let ws: f64 = w
            .iter()
            .zip(&self.curvature.s)
            .map(|(wi, si)| wi * si)
            .sum();
        let mut grad = &self.data.grad_f + self.data.jac_g.tr_mul(&w);
        grad.axpy(self.curvature.sigma0 + ws + self.alpha, &d, 1.0);
        (value, grad)
    }
}

impl Smooth for SurrogateModel {
    fn value(&self, x: &Vector) -> f64 {
        self.eval_subproblem(x)
    }

    fn gradient(&self, x: &Vector) -> Vector {
        self.grad_subproblem(x)
    }

    fn value_and_gradient(&self, x: &Vector) -> (f64, Vector) {
        self.value_grad(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{relative_fd_error, BoxSet};
    use crate::qcqp::{QcqpInstance, QcqpSpec};
    use crate::rng::substream;
    use rand::Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    /// `f(x) = x^2` style one-dimensional family for closed forms.
    struct OneD {
        set: BoxSet,
        l: f64,
    }

    impl Problem for OneD {
        fn dim(&self) -> usize {
            1
        }
        fn num_constraints(&self) -> usize {
            1
        }
        fn feasible_set(&self) -> &BoxSet {
            &self.set
        }
        fn moduli(&self) -> Moduli {
            Moduli {
                objective: 0.0,
                constraints: vec![self.l],
            }
        }
        fn objective(&self, x: &Vector) -> f64 {
            x[0] * x[0]
        }
        fn objective_grad(&self, x: &Vector) -> Vector {
            v(&[2.0 * x[0]])
        }
        fn constraint(&self, _: usize, x: &Vector) -> f64 {
            x[0] * x[0]
        }
        fn constraint_grad(&self, _: usize, x: &Vector) -> Vector {
            v(&[2.0 * x[0]])
        }
    }

    fn one_d(l: f64) -> OneD {
        OneD {
            set: BoxSet::symmetric(1, 10.0).unwrap(),
            l,
        }
    }

    #[test]
    fn sigma0_examples() {
        let m = Moduli {
            objective: 0.0,
            constraints: vec![1.0],
        };
        assert_eq!(CurvatureSpec::new(&m, 0.1, &v(&[0.0])).unwrap().sigma0, 1.0);
        let c = CurvatureSpec::new(&m, 0.1, &v(&[2.0])).unwrap();
        assert!((c.sigma0 - 3.2).abs() < 1e-15);
        assert_eq!(c.s, vec![-1.1]);
        assert!(CurvatureSpec::new(&m, 0.1, &v(&[-1.0])).is_err());
        assert!(CurvatureSpec::new(&m, 0.0, &v(&[0.0])).is_err());
    }

    #[test]
    fn curvature_consistency() {
        let m = Moduli {
            objective: 0.0,
            constraints: vec![0.5, 2.0, 0.0, 1.0],
        };
        let c = CurvatureSpec::new(&m, 0.1, &Vector::zeros(4)).unwrap();
        assert!((c.kappa_h() - 2.1).abs() < 1e-15);
        assert!((c.c_sigma() - 4.2).abs() < 1e-15);
        for (si, li) in c.s.iter().zip(&m.constraints) {
            assert!(*si < -li);
        }
    }

    #[test]
    fn one_dimensional_closed_form() {
        // s = -0.2 from L = 0.1, pad = 0.1
        let p = one_d(0.1);
        let model = SurrogateModel::build(&p, &v(&[1.0]), &v(&[0.0]), 0.1, 1.0, 1.0).unwrap();
        for &x in &[-3.0, 0.0, 1.0, 2.5] {
            let want = 1.0 + 2.0 * (x - 1.0) - 0.1 * (x - 1.0) * (x - 1.0);
            assert!((model.eval_q(1, &v(&[x])) - want).abs() < 1e-14);
        }
        assert_eq!(model.eval_q(0, &v(&[1.0])), 1.0);
        assert_eq!(model.eval_q(1, &v(&[1.0])), 1.0);
    }

    #[test]
    fn anchor_substitution() {
        let inst = QcqpInstance::generate(&QcqpSpec::new(6, 3, 1.0), 5).unwrap();
        let mut rng = substream(1, "test");
        let xt = inst.feasible_set().sample(&mut rng);
        let sigma = 0.7;
        let model = SurrogateModel::build(&inst, &xt, &Vector::zeros(3), 0.1, sigma, 2.0).unwrap();
        let g = inst.constraints(&xt);
        let want = inst.objective(&xt)
            + g.iter()
                .map(|gi| (sigma * gi).max(0.0).powi(2))
                .sum::<f64>()
                / (2.0 * sigma);
        assert!((model.eval_subproblem(&xt) - want).abs() < 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn inactive_penalty_gradient() {
        let inst = QcqpInstance::generate(&QcqpSpec::new(5, 2, 1.0), 6).unwrap();
        let xt = inst.x_star().clone();
        // xhat is strictly feasible and lambda = 0, so small moves keep every
        // [.]_+ term at zero.
        let model = SurrogateModel::build(&inst, &xt, &Vector::zeros(2), 0.1, 0.01, 3.0).unwrap();
        let x = &xt + Vector::from_element(5, 1e-3);
        let d = &x - &xt;
        let want = inst.objective_grad(&xt) + &d * model.curvature().sigma0 + &d * 3.0;
        assert!(model.constraint_models(&x).iter().all(|&q| q < 0.0));
        assert!((model.grad_subproblem(&x) - want).norm() < 1e-12);
    }

    #[test]
    fn surrogate_matches_independent_polynomial() {
        let inst = QcqpInstance::generate(&QcqpSpec::new(4, 2, 1.0), 7).unwrap();
        let mut rng = substream(2, "test");
        let xt = inst.feasible_set().sample(&mut rng);
        let lambda = v(&[0.4, 1.3]);
        let model = SurrogateModel::build(&inst, &xt, &lambda, 0.1, 0.5, 1.0).unwrap();
        let m = inst.exact_moduli();
        let sigma0 = 1.0 + 0.4 * (m.constraints[0] + 0.1) + 1.3 * (m.constraints[1] + 0.1);
        for _ in 0..20 {
            let x = inst.feasible_set().sample(&mut rng);
            let mut dd = 0.0;
            let mut lin0 = 0.0;
            let gf = inst.objective_grad(&xt);
            for j in 0..4 {
                let dj = x[j] - xt[j];
                dd += dj * dj;
                lin0 += gf[j] * dj;
            }
            let q0 = inst.objective(&xt) + lin0 + 0.5 * sigma0 * dd;
            assert!((model.eval_q(0, &x) - q0).abs() < 1e-12);
            for i in 0..2 {
                let gg = inst.constraint_grad(i, &xt);
                let lin: f64 = (0..4).map(|j| gg[j] * (x[j] - xt[j])).sum();
                let qi = inst.constraint(i, &xt) + lin - 0.5 * (m.constraints[i] + 0.1) * dd;
                assert!((model.eval_q(i + 1, &x) - qi).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn minorization_and_convexity_on_qcqp() {
        let inst = QcqpInstance::generate(&QcqpSpec::new(8, 4, 1.0), 11).unwrap();
        let set = inst.feasible_set();
        let mut rng = substream(3, "test");
        for _ in 0..30 {
            let xt = set.sample(&mut rng);
            let lambda = Vector::from_fn(4, |_, _| rng.random_range(0.0..3.0));
            let model = SurrogateModel::build(&inst, &xt, &lambda, 0.1, 0.3, 2.0).unwrap();
            for _ in 0..30 {
                let x = set.sample(&mut rng);
                let q = model.constraint_models(&x);
                let g = inst.constraints(&x);
                for i in 0..4 {
                    assert!(q[i] <= g[i] + 1e-8);
                }
                let y = set.sample(&mut rng);
                let mid = (&x + &y) * 0.5;
                let lhs = model.eval_subproblem(&mid);
                let rhs = 0.5 * model.eval_subproblem(&x) + 0.5 * model.eval_subproblem(&y)
                    - 2.0 / 8.0 * (&x - &y).norm_squared();
                assert!(lhs <= rhs + 1e-9 * rhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn subproblem_gradient_matches_fd() {
        let inst = QcqpInstance::generate(&QcqpSpec::new(6, 3, 1.0), 12).unwrap();
        let mut rng = substream(4, "test");
        let xt = inst.feasible_set().sample(&mut rng);
        let model = SurrogateModel::build(&inst, &xt, &v(&[0.5, 0.0, 2.0]), 0.1, 0.4, 1.5).unwrap();
        for _ in 0..20 {
            let x = inst.feasible_set().sample(&mut rng);
            let err =
                relative_fd_error(|y| model.eval_subproblem(y), &model.grad_subproblem(&x), &x);
            assert!(err < 1e-5, "{err}");
        }
    }

    #[test]
    fn build_validates_inputs() {
        let p = one_d(1.0);
        assert!(SurrogateModel::build(&p, &v(&[0.0, 1.0]), &v(&[0.0]), 0.1, 1.0, 1.0).is_err());
        assert!(SurrogateModel::build(&p, &v(&[0.0]), &v(&[0.0]), 0.1, 0.0, 1.0).is_err());
    }
}
