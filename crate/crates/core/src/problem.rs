//! Inequality-constrained problems over a box.
//!
//! A [`Problem`] bundles the smooth objective `f`, the constraints `g_i <= 0`,
//! their gradients and weak-convexity moduli, and the compact convex set `X`
//! (an axis-aligned [`BoxSet`]). [`BoundsBundle`] carries the uniform bounds
//! the analysis constants are built from.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

pub type Vector = DVector<f64>;

/// `X = [lower_1, upper_1] x ... x [lower_n, upper_n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Input(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite()) || l > u {
                return Err(Error::Input(format!(
                    "invalid box bounds [{l}, {u}] at {i}"
                )));
            }
        }
        let set = BoxSet { lower, upper };
        if set.diameter() <= 0.0 {
            return Err(Error::Input("box has zero diameter".into()));
        }
        Ok(set)
    }

    /// `[-half_width, half_width]^n`.
    pub fn symmetric(n: usize, half_width: f64) -> Result<Self> {
        if !(half_width > 0.0) {
            return Err(Error::Input(format!(
                "half-width must be positive, got {half_width}"
            )));
        }
        Self::new(vec![-half_width; n], vec![half_width; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// `D_0 = ||upper - lower||`.
    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l) * (u - l))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &Vector) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    /// Euclidean projection, checked for dimension.
    pub fn project(&self, z: &Vector) -> Result<Vector> {
        if z.len() != self.dim() {
            return Err(Error::Input(format!(
                "projection of a {}-vector onto a {}-dimensional box",
                z.len(),
                self.dim()
            )));
        }
        Ok(self.project_unchecked(z))
    }

    pub(crate) fn project_unchecked(&self, z: &Vector) -> Vector {
        Vector::from_iterator(
            z.len(),
            z.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(v, (l, u))| v.clamp(*l, *u)),
        )
    }

    pub fn project_in_place(&self, z: &mut Vector) {
        for (v, (l, u)) in z.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }

    /// Uniform point in the box.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vector {
        Vector::from_iterator(
            self.dim(),
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(l, u)| l + (u - l) * rng.random::<f64>()),
        )
    }
}

/// Weak-convexity moduli: `f + (objective/2)||.||^2` and
/// `g_i + (constraints[i]/2)||.||^2` are convex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moduli {
    pub objective: f64,
    pub constraints: Vec<f64>,
}

impl Moduli {
    pub fn constraint_sum(&self) -> f64 {
        self.constraints.iter().sum()
    }
}

/// First-order oracle bundle of a constrained problem
/// `min f(x) s.t. g_i(x) <= 0, x in X`.
pub trait Problem: Sync {
    fn dim(&self) -> usize;
    fn num_constraints(&self) -> usize;
    fn feasible_set(&self) -> &BoxSet;
    fn moduli(&self) -> Moduli;

    fn objective(&self, x: &Vector) -> f64;
    fn objective_grad(&self, x: &Vector) -> Vector;
    fn constraint(&self, i: usize, x: &Vector) -> f64;
    fn constraint_grad(&self, i: usize, x: &Vector) -> Vector;

    fn constraints(&self, x: &Vector) -> Vector {
        Vector::from_iterator(
            self.num_constraints(),
            (0..self.num_constraints()).map(|i| self.constraint(i, x)),
        )
    }

    /// Rows are `grad g_i(x)^T`.
    fn constraint_jacobian(&self, x: &Vector) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.num_constraints(), self.dim());
        for i in 0..self.num_constraints() {
            jac.set_row(i, &self.constraint_grad(i, x).transpose());
        }
        jac
    }

    /// `(f, grad f, g, Jg)` at `x`. Families override this when the pieces
    /// share intermediate products.
    fn first_order(&self, x: &Vector) -> FirstOrder {
        FirstOrder {
            f: self.objective(x),
            grad_f: self.objective_grad(x),
            g: self.constraints(x),
            jac_g: self.constraint_jacobian(x),
        }
    }
}

/// Cached first-order data at a point.
#[derive(Debug, Clone)]
pub struct FirstOrder {
    pub f: f64,
    pub grad_f: Vector,
    pub g: Vector,
    pub jac_g: DMatrix<f64>,
}

impl FirstOrder {
    /// `grad_x L(x, lambda) = grad f + Jg^T lambda`.
    pub fn lagrangian_grad(&self, lambda: &Vector) -> Vector {
        &self.grad_f + self.jac_g.tr_mul(lambda)
    }
}

/// `L(x, lambda) = f(x) + sum_j lambda_j g_j(x)`.
pub fn lagrangian<P: Problem + ?Sized>(problem: &P, x: &Vector, lambda: &Vector) -> Result<f64> {
    check_multiplier(problem, lambda)?;
    Ok(problem.objective(x) + lambda.dot(&problem.constraints(x)))
}

pub fn lagrangian_grad<P: Problem + ?Sized>(
    problem: &P,
    x: &Vector,
    lambda: &Vector,
) -> Result<Vector> {
    check_multiplier(problem, lambda)?;
    let mut grad = problem.objective_grad(x);
    for (i, l) in lambda.iter().enumerate() {
        if *l != 0.0 {
            grad.axpy(*l, &problem.constraint_grad(i, x), 1.0);
        }
    }
    Ok(grad)
}

fn check_multiplier<P: Problem + ?Sized>(problem: &P, lambda: &Vector) -> Result<()> {
    if lambda.len() != problem.num_constraints() {
        return Err(Error::Input(format!(
            "multiplier has length {}, problem has {} constraints",
            lambda.len(),
            problem.num_constraints()
        )));
    }
    Ok(())
}

/// Uniform bounds over `X` and a Slater point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsBundle {
    /// Diameter of `X`.
    pub d0: f64,
    /// Bound on `||g(x)||`.
    pub nu_g: f64,
    /// Bound on `||grad f(x)||`.
    pub kappa_f: f64,
    /// Bound on `max_i ||grad g_i(x)||`.
    pub kappa_g: f64,
    /// Slater margin, `g_i(xhat) <= -eps0`.
    pub eps0: f64,
    pub xhat: Vec<f64>,
}

impl BoundsBundle {
    pub fn xhat(&self) -> Vector {
        Vector::from_column_slice(&self.xhat)
    }
}

/// Result of an empirical audit of a [`BoundsBundle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub samples: usize,
    pub max_g_norm: f64,
    pub max_grad_f: f64,
    pub max_grad_g: f64,
    pub nu_g_ok: bool,
    pub kappa_f_ok: bool,
    pub kappa_g_ok: bool,
    /// `max_i g_i(xhat)`; the Slater check requires this `<= -eps0`.
    pub max_g_at_xhat: f64,
    pub slater_ok: bool,
}

impl BoundsReport {
    pub fn all_ok(&self) -> bool {
        self.nu_g_ok && self.kappa_f_ok && self.kappa_g_ok && self.slater_ok
    }
}

/// Sample `samples` uniform points of `X` and compare observed maxima with the
/// claimed bounds. Violations are reported, never raised.
pub fn verify_bounds<P: Problem + ?Sized>(
    problem: &P,
    bounds: &BoundsBundle,
    samples: usize,
    seed: u64,
) -> BoundsReport {
    let mut rng = substream(seed, "verify_bounds");
    let set = problem.feasible_set();
    let (mut max_g, mut max_f, mut max_gg) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..samples.max(1) {
        let x = set.sample(&mut rng);
        let fo = problem.first_order(&x);
        max_g = max_g.max(fo.g.norm());
        max_f = max_f.max(fo.grad_f.norm());
        for row in fo.jac_g.row_iter() {
            max_gg = max_gg.max(row.norm());
        }
    }
    let xhat = bounds.xhat();
    let max_at_xhat = if xhat.len() == problem.dim() {
        problem.constraints(&xhat).max()
    } else {
        f64::INFINITY
    };
    BoundsReport {
        samples: samples.max(1),
        max_g_norm: max_g,
        max_grad_f: max_f,
        max_grad_g: max_gg,
        nu_g_ok: max_g <= bounds.nu_g,
        kappa_f_ok: max_f <= bounds.kappa_f,
        kappa_g_ok: max_gg <= bounds.kappa_g,
        max_g_at_xhat: max_at_xhat,
        slater_ok: max_at_xhat <= -bounds.eps0,
    }
}

/// Largest violation of the midpoint weak-convexity inequality
/// `h(z) + (m/2)||z||^2 <= theta [h(x) + (m/2)||x||^2] + (1-theta)[h(y) + (m/2)||y||^2]`
/// over random triples, for the objective (`index = None`) or constraint `i`.
/// A value `<= 0` (up to rounding) certifies the modulus on the samples.
pub fn weak_convexity_gap<P: Problem + ?Sized>(
    problem: &P,
    index: Option<usize>,
    modulus: f64,
    samples: usize,
    seed: u64,
) -> f64 {
    let mut rng = substream(seed, "weak_convexity");
    let set = problem.feasible_set();
    let h = |x: &Vector| -> f64 {
        let raw = match index {
            None => problem.objective(x),
            Some(i) => problem.constraint(i, x),
        };
        raw + 0.5 * modulus * x.norm_squared()
    };
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let x = set.sample(&mut rng);
        let y = set.sample(&mut rng);
        let theta: f64 = rng.random_range(0.0..1.0);
        let z = &x * theta + &y * (1.0 - theta);
        let gap = h(&z) - (theta * h(&x) + (1.0 - theta) * h(&y));
        worst = worst.max(gap);
    }
    worst
}

/// Largest relative error between analytic gradients and central differences
/// at random points of `X`, over the objective and every constraint.
pub fn gradient_check<P: Problem + ?Sized>(problem: &P, points: usize, seed: u64) -> f64 {
    let mut rng = substream(seed, "gradient_check");
    let set = problem.feasible_set();
    let mut worst = 0.0f64;
    for _ in 0..points {
        let x = set.sample(&mut rng);
        worst = worst.max(relative_fd_error(
            |v| problem.objective(v),
            &problem.objective_grad(&x),
            &x,
        ));
        for i in 0..problem.num_constraints() {
            worst = worst.max(relative_fd_error(
                |v| problem.constraint(i, v),
                &problem.constraint_grad(i, &x),
                &x,
            ));
        }
    }
    worst
}

/// `||grad - fd|| / max(||fd||, 1e-8)` with a central difference of step
/// `1e-6 * max(1, |x_j|)`.
pub fn relative_fd_error(value: impl Fn(&Vector) -> f64, grad: &Vector, x: &Vector) -> f64 {
    let fd = central_difference(value, x);
    (grad - &fd).norm() / fd.norm().max(1e-8)
}

pub fn central_difference(value: impl Fn(&Vector) -> f64, x: &Vector) -> Vector {
    let mut fd = Vector::zeros(x.len());
    let mut probe = x.clone();
    for j in 0..x.len() {
        let h = 1e-6 * x[j].abs().max(1.0);
        probe[j] = x[j] + h;
        let up = value(&probe);
        probe[j] = x[j] - h;
        let down = value(&probe);
        probe[j] = x[j];
        fd[j] = (up - down) / (2.0 * h);
    }
    fd
}
