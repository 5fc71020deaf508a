//! Random nonconvex QCQP instances
//! `min 1/2 x'Q_0x + c_0'x  s.t.  1/2 x'Q_ix + c_i'x - r_i <= 0,  x in [-R, R]^n`.
//!
//! Each `Q_i = U_i' D_i U_i` with `U_i` the (sign-normalised) orthogonal factor
//! of a Gaussian matrix and `D_i` a diagonal of sampled eigenvalues. A planted
//! point `x_star` is made strictly feasible by choosing the offsets `r_i`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{BoundsBundle, BoxSet, FirstOrder, Moduli, Problem, Vector};
use crate::rng::substream;

/// Lower end of the positive eigenvalue band.
const POS_EIG_LO: f64 = 0.5;
const POS_EIG_HI: f64 = 3.0;
/// Upper end of the negative eigenvalue band `[-L, -0.1]`.
const NEG_EIG_HI: f64 = -0.1;

/// Generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcqpSpec {
    pub n: usize,
    pub p: usize,
    /// Box half-width `R`.
    pub radius: f64,
    /// Target weak-convexity modulus of the objective.
    pub l0: f64,
    /// Target weak-convexity modulus of each indefinite constraint.
    pub lg: f64,
    pub neg_fraction_obj: f64,
    /// Number of indefinite constraint matrices; `None` means `ceil(0.2 p)`.
    pub indefinite_constraint_count: Option<usize>,
    pub neg_fraction_constraint: f64,
    pub tau0: f64,
    pub tau_g: f64,
    pub delta_range: (f64, f64),
}

impl QcqpSpec {
    pub fn new(n: usize, p: usize, radius: f64) -> Self {
        QcqpSpec {
            n,
            p,
            radius,
            l0: 1.0,
            lg: 1.0,
            neg_fraction_obj: 0.3,
            indefinite_constraint_count: None,
            neg_fraction_constraint: 0.2,
            tau0: 1.0,
            tau_g: 1.0,
            delta_range: (0.1, 1.0),
        }
    }

    pub fn indefinite_count(&self) -> usize {
        self.indefinite_constraint_count
            .unwrap_or_else(|| (0.2 * self.p as f64).ceil() as usize)
    }

    fn negative_count(fraction: f64, n: usize) -> usize {
        (fraction * n as f64).ceil() as usize
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Input(msg));
        if self.n == 0 || self.p == 0 {
            return bad(format!(
                "need n >= 1 and p >= 1, got n={} p={}",
                self.n, self.p
            ));
        }
        if !(self.radius > 0.0) {
            return bad(format!("radius must be positive, got {}", self.radius));
        }
        for (name, frac) in [
            ("neg_fraction_obj", self.neg_fraction_obj),
            ("neg_fraction_constraint", self.neg_fraction_constraint),
        ] {
            if !(0.0..=1.0).contains(&frac) {
                return bad(format!("{name} must lie in [0, 1], got {frac}"));
            }
        }
        let (lo, hi) = self.delta_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!(
                "delta_range must be positive and ordered, got [{lo}, {hi}]"
            ));
        }
        if !(self.tau0 > 0.0 && self.tau_g > 0.0) {
            return bad("scaling parameters tau0 and tau_g must be positive".into());
        }
        if self.indefinite_count() > self.p {
            return bad(format!(
                "{} indefinite constraints requested but p = {}",
                self.indefinite_count(),
                self.p
            ));
        }
        let k0 = Self::negative_count(self.neg_fraction_obj, self.n);
        let kc = if self.indefinite_count() > 0 {
            Self::negative_count(self.neg_fraction_constraint, self.n)
        } else {
            0
        };
        if k0.max(kc) > self.n {
            return bad(format!(
                "n = {} is smaller than {} requested negative eigenvalues",
                self.n,
                k0.max(kc)
            ));
        }
        if k0 > 0 && self.l0 < -NEG_EIG_HI {
            return bad(format!(
                "l0 = {} leaves the band [-l0, -0.1] empty",
                self.l0
            ));
        }
        if kc > 0 && self.lg < -NEG_EIG_HI {
            return bad(format!(
                "lg = {} leaves the band [-lg, -0.1] empty",
                self.lg
            ));
        }
        Ok(())
    }
}

/// A QCQP instance with cached spectral data.
#[derive(Debug, Clone)]
pub struct QcqpInstance {
    /// `q[0]` is the objective matrix, `q[i]` the `i`-th constraint matrix.
    q: Vec<DMatrix<f64>>,
    c: Vec<Vector>,
    r: Vec<f64>,
    radius: f64,
    x_star: Vector,
    delta: Vec<f64>,
    spec: Option<QcqpSpec>,
    seed: Option<u64>,
    set: BoxSet,
    min_eigs: Vec<f64>,
    spectral_norms: Vec<f64>,
}

/// Serialized form; matrices are dense row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QcqpPayload {
    pub spec: Option<QcqpSpec>,
    pub seed: Option<u64>,
    pub radius: f64,
    pub q: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub r: Vec<f64>,
    pub x_star: Vec<f64>,
    pub delta: Vec<f64>,
}

/// Householder QR of a Gaussian matrix with columns flipped so that the
/// triangular factor has a nonnegative diagonal.
fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            g[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let qr = g.qr();
    let mut u = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            u.column_mut(j).neg_mut();
        }
    }
    u
}

fn sample_spectrum<R: Rng>(n: usize, negatives: usize, modulus: f64, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|k| {
            if k < negatives {
                rng.random_range(-modulus..=NEG_EIG_HI)
            } else {
                rng.random_range(POS_EIG_LO..=POS_EIG_HI)
            }
        })
        .collect()
}

fn symmetric_from_spectrum(u: &DMatrix<f64>, eigs: &[f64]) -> DMatrix<f64> {
    let d = DMatrix::from_diagonal(&Vector::from_column_slice(eigs));
    let m = u.transpose() * d * u;
    (&m + m.transpose()) * 0.5
}

fn gaussian_vector<R: Rng>(n: usize, scale: f64, rng: &mut R) -> Vector {
    Vector::from_iterator(
        n,
        (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)),
    )
}

fn quad_form(q: &DMatrix<f64>, x: &Vector) -> f64 {
    x.dot(&(q * x))
}

impl QcqpInstance {
    /// Draw an instance. Equal `(spec, seed)` give bit-identical instances.
    pub fn generate(spec: &QcqpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let n = spec.n;
        let mut rng = substream(seed, "qcqp/instance");
        let indefinite = spec.indefinite_count();
        let mut q = Vec::with_capacity(spec.p + 1);
        let mut c = Vec::with_capacity(spec.p + 1);
        for i in 0..=spec.p {
            let u = random_orthogonal(n, &mut rng);
            let (negatives, modulus, tau) = if i == 0 {
                (
                    QcqpSpec::negative_count(spec.neg_fraction_obj, n),
                    spec.l0,
                    spec.tau0,
                )
            } else if i <= indefinite {
                (
                    QcqpSpec::negative_count(spec.neg_fraction_constraint, n),
                    spec.lg,
                    spec.tau_g,
                )
            } else {
                (0, spec.lg, spec.tau_g)
            };
            let eigs = sample_spectrum(n, negatives, modulus, &mut rng);
            q.push(symmetric_from_spectrum(&u, &eigs));
            c.push(gaussian_vector(n, tau, &mut rng));
        }
        let set = BoxSet::symmetric(n, spec.radius)?;
        let x_star = set.sample(&mut rng);
        let (lo, hi) = spec.delta_range;
        let delta: Vec<f64> = (0..spec.p).map(|_| rng.random_range(lo..=hi)).collect();
        let r = (1..=spec.p)
            .map(|i| 0.5 * quad_form(&q[i], &x_star) + c[i].dot(&x_star) + delta[i - 1])
            .collect();
        Self::assemble(
            q,
            c,
            r,
            spec.radius,
            x_star,
            Some(delta),
            Some(spec.clone()),
            Some(seed),
        )
    }

    /// Build from explicit data. The margins `delta_i = -g_i(x_star)` are
    /// computed and must be positive.
    pub fn from_parts(
        q: Vec<DMatrix<f64>>,
        c: Vec<Vector>,
        r: Vec<f64>,
        radius: f64,
        x_star: Vector,
    ) -> Result<Self> {
        Self::assemble(q, c, r, radius, x_star, None, None, None)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        q: Vec<DMatrix<f64>>,
        c: Vec<Vector>,
        r: Vec<f64>,
        radius: f64,
        x_star: Vector,
        delta: Option<Vec<f64>>,
        spec: Option<QcqpSpec>,
        seed: Option<u64>,
    ) -> Result<Self> {
        if q.len() < 2 || c.len() != q.len() || r.len() + 1 != q.len() {
            return Err(Error::Input(format!(
                "need p+1 matrices, p+1 vectors and p offsets; got {}, {}, {}",
                q.len(),
                c.len(),
                r.len()
            )));
        }
        let n = x_star.len();
        for (i, (qi, ci)) in q.iter().zip(&c).enumerate() {
            if qi.nrows() != n || qi.ncols() != n || ci.len() != n {
                return Err(Error::Input(format!(
                    "block {i} has inconsistent dimensions"
                )));
            }
            let asym = (qi - qi.transpose()).amax();
            if asym > 1e-10 * qi.amax().max(1.0) {
                return Err(Error::Input(format!(
                    "Q_{i} is not symmetric (max asymmetry {asym:e})"
                )));
            }
        }
        let set = BoxSet::symmetric(n, radius)?;
        if !set.contains(&x_star) {
            return Err(Error::Input("x_star lies outside the box".into()));
        }
        let mut min_eigs = Vec::with_capacity(q.len());
        let mut spectral_norms = Vec::with_capacity(q.len());
        for (i, qi) in q.iter().enumerate() {
            let eig = SymmetricEigen::try_new(qi.clone(), f64::EPSILON, 0).ok_or_else(|| {
                Error::Numerical(format!("symmetric eigen-solve of Q_{i} did not converge"))
            })?;
            min_eigs.push(eig.eigenvalues.min());
            spectral_norms.push(eig.eigenvalues.amax());
        }
        let mut inst = QcqpInstance {
            q,
            c,
            r,
            radius,
            x_star,
            delta: Vec::new(),
            spec,
            seed,
            set,
            min_eigs,
            spectral_norms,
        };
        inst.delta = match delta {
            Some(d) => d,
            None => {
                let g = inst.constraints(&inst.x_star);
                if g.max() >= 0.0 {
                    return Err(Error::Input(format!(
                        "x_star is not strictly feasible: max g_i(x_star) = {}",
                        g.max()
                    )));
                }
                g.iter().map(|v| -v).collect()
            }
        };
        Ok(inst)
    }

    pub fn from_payload(payload: &QcqpPayload) -> Result<Self> {
        let n = payload.x_star.len();
        let q = payload
            .q
            .iter()
            .map(|flat| {
                if flat.len() != n * n {
                    return Err(Error::Input(format!(
                        "matrix with {} entries, expected {}",
                        flat.len(),
                        n * n
                    )));
                }
                Ok(DMatrix::from_row_slice(n, n, flat))
            })
            .collect::<Result<Vec<_>>>()?;
        let c = payload
            .c
            .iter()
            .map(|v| Vector::from_column_slice(v))
            .collect();
        Self::assemble(
            q,
            c,
            payload.r.clone(),
            payload.radius,
            Vector::from_column_slice(&payload.x_star),
            Some(payload.delta.clone()),
            payload.spec.clone(),
            payload.seed,
        )
    }

    pub fn to_payload(&self) -> QcqpPayload {
        let row_major = |m: &DMatrix<f64>| -> Vec<f64> {
            let mut out = Vec::with_capacity(m.len());
            for i in 0..m.nrows() {
                out.extend(m.row(i).iter());
            }
            out
        };
        QcqpPayload {
            spec: self.spec.clone(),
            seed: self.seed,
            radius: self.radius,
            q: self.q.iter().map(row_major).collect(),
            c: self.c.iter().map(|v| v.iter().copied().collect()).collect(),
            r: self.r.clone(),
            x_star: self.x_star.iter().copied().collect(),
            delta: self.delta.clone(),
        }
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.q
    }

    pub fn linear_terms(&self) -> &[Vector] {
        &self.c
    }

    pub fn offsets(&self) -> &[f64] {
        &self.r
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn x_star(&self) -> &Vector {
        &self.x_star
    }

    pub fn margins(&self) -> &[f64] {
        &self.delta
    }

    pub fn spec(&self) -> Option<&QcqpSpec> {
        self.spec.as_ref()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Smallest eigenvalue of each `Q_i` (index 0 is the objective).
    pub fn min_eigenvalues(&self) -> &[f64] {
        &self.min_eigs
    }

    /// `L_i = max(0, -lambda_min(Q_i))`.
    pub fn exact_moduli(&self) -> Moduli {
        let m: Vec<f64> = self.min_eigs.iter().map(|e| (-e).max(0.0)).collect();
        Moduli {
            objective: m[0],
            constraints: m[1..].to_vec(),
        }
    }

    /// Interval bounds over the box.
    pub fn analytic_bounds(&self) -> BoundsBundle {
        let n = self.dim() as f64;
        let p = self.num_constraints() as f64;
        let rad = self.radius;
        let x_norm_max = rad * n.sqrt();
        let grad_bound = |i: usize| self.spectral_norms[i] * x_norm_max + self.c[i].norm();
        let kappa_g = (1..=self.num_constraints())
            .map(grad_bound)
            .fold(0.0, f64::max);
        let g_sup = (1..=self.num_constraints())
            .map(|i| {
                0.5 * self.spectral_norms[i] * n * rad * rad
                    + self.c[i].norm() * x_norm_max
                    + self.r[i - 1].abs()
            })
            .fold(0.0, f64::max);
        BoundsBundle {
            d0: 2.0 * x_norm_max,
            nu_g: p.sqrt() * g_sup,
            kappa_f: grad_bound(0),
            kappa_g,
            eps0: self.delta.iter().copied().fold(f64::INFINITY, f64::min),
            xhat: self.x_star.iter().copied().collect(),
        }
    }

    /// Certified lower bound on `min_X f`:
    /// `1/2 min(lambda_min(Q_0), 0) n R^2 - R ||c_0||_1`.
    pub fn objective_lower_bound(&self) -> f64 {
        let n = self.dim() as f64;
        0.5 * self.min_eigs[0].min(0.0) * n * self.radius * self.radius
            - self.radius * self.c[0].lp_norm(1)
    }
}

impl Problem for QcqpInstance {
    fn dim(&self) -> usize {
        self.x_star.len()
    }

    fn num_constraints(&self) -> usize {
        self.r.len()
    }

    fn feasible_set(&self) -> &BoxSet {
        &self.set
    }

    fn moduli(&self) -> Moduli {
        self.exact_moduli()
    }

    fn objective(&self, x: &Vector) -> f64 {
        0.5 * quad_form(&self.q[0], x) + self.c[0].dot(x)
    }

    fn objective_grad(&self, x: &Vector) -> Vector {
        &self.q[0] * x + &self.c[0]
    }

    fn constraint(&self, i: usize, x: &Vector) -> f64 {
        0.5 * quad_form(&self.q[i + 1], x) + self.c[i + 1].dot(x) - self.r[i]
    }

    fn constraint_grad(&self, i: usize, x: &Vector) -> Vector {
        &self.q[i + 1] * x + &self.c[i + 1]
    }

    fn first_order(&self, x: &Vector) -> FirstOrder {
        let p = self.num_constraints();
        let grad_f = self.objective_grad(x);
        let f = 0.5 * x.dot(&(&grad_f + &self.c[0]));
        let mut g = Vector::zeros(p);
        let mut jac_g = DMatrix::zeros(p, self.dim());
        for i in 0..p {
            let qx = &self.q[i + 1] * x;
            g[i] = 0.5 * x.dot(&qx) + self.c[i + 1].dot(x) - self.r[i];
            jac_g.set_row(i, &(qx + &self.c[i + 1]).transpose());
        }
        FirstOrder {
            f,
            grad_f,
            g,
            jac_g,
        }
    }
}
