//! Neyman-Pearson classification with the sigmoid loss `phi(u) = 1 / (1 + e^u)`:
//! minimise the false-negative surrogate over the positive class subject to the
//! false-positive surrogate on the negative class staying below `tau`.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{BoundsBundle, BoxSet, Moduli, Problem, Vector};
use crate::rng::substream;

/// `sup_u |phi''(u)| = 1 / (6 sqrt 3)`.
///
/// With `s = phi(u)`, `phi'' = -s(1-s)(2s-1)` is maximised in magnitude at
/// `s = (1 +- 1/sqrt 3)/2`, i.e. `u = -+ ln(2 + sqrt 3)`. A grid search of
/// `|phi''|` over `[-10, 10]` at step `1e-4` agrees to eight digits.
pub const SIGMOID_CURVATURE: f64 = 0.096_225_044_864_937_63;

/// Default half-width of the box placed around the weight vector.
pub const DEFAULT_BOX: f64 = 10.0;

/// `1 / (1 + e^u)` evaluated through `e^{-|u|}`.
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        let e = (-u).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + u.exp())
    }
}

/// `phi'(u) = -phi(u)(1 - phi(u))`.
pub fn sigmoid_prime(u: f64) -> f64 {
    let s = sigmoid(u);
    -s * sigmoid(-u)
}

/// `phi''(u) = -phi(u)(1 - phi(u))(2 phi(u) - 1)`.
pub fn sigmoid_second(u: f64) -> f64 {
    let s = sigmoid(u);
    -s * (1.0 - s) * (2.0 * s - 1.0)
}

/// How labels of a multi-class file map onto the two classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinarizeRule {
    /// Labels already binary: `1` is positive, `-1` or `0` negative.
    Identity,
    /// Odd integer labels positive, even negative.
    OddEven,
    /// The given label is positive, everything else negative.
    OneVsRest(i64),
}

impl BinarizeRule {
    fn classify(&self, label: f64) -> std::result::Result<bool, String> {
        let integral = || {
            if label.fract() == 0.0 {
                Ok(label as i64)
            } else {
                Err(format!("label {label} is not an integer"))
            }
        };
        match self {
            BinarizeRule::Identity => match integral()? {
                1 => Ok(true),
                -1 | 0 => Ok(false),
                other => Err(format!("label {other} is not binary")),
            },
            BinarizeRule::OddEven => Ok(integral()?.rem_euclid(2) == 1),
            BinarizeRule::OneVsRest(pos) => Ok(integral()? == *pos),
        }
    }
}

/// Provenance, echoed into instance files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum NpOrigin {
    Synthetic {
        n0: usize,
        n1: usize,
        d: usize,
        separation: f64,
        seed: u64,
    },
    Dataset {
        path: String,
        rule: BinarizeRule,
        max_rows: Option<usize>,
        seed: u64,
    },
    Explicit,
}

#[derive(Debug, Clone)]
pub struct NpInstance {
    /// Positive-class samples, one per row.
    a0: DMatrix<f64>,
    /// Negative-class samples, one per row.
    a1: DMatrix<f64>,
    tau: f64,
    r_box: f64,
    set: BoxSet,
    origin: NpOrigin,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NpPayload {
    pub origin: NpOrigin,
    pub tau: f64,
    pub r_box: f64,
    pub d: usize,
    /// Row-major `N0 x d`.
    pub a0: Vec<f64>,
    /// Row-major `N1 x d`.
    pub a1: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter());
    }
    out
}

fn max_row_norm_sq(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.norm_squared()).fold(0.0, f64::max)
}

impl NpInstance {
    pub fn new(a0: DMatrix<f64>, a1: DMatrix<f64>, tau: f64, r_box: f64) -> Result<Self> {
        Self::with_origin(a0, a1, tau, r_box, NpOrigin::Explicit)
    }

    fn with_origin(
        a0: DMatrix<f64>,
        a1: DMatrix<f64>,
        tau: f64,
        r_box: f64,
        origin: NpOrigin,
    ) -> Result<Self> {
        if a0.nrows() == 0 || a1.nrows() == 0 {
            return Err(Error::Input(format!(
                "both classes need samples, got N0={} N1={}",
                a0.nrows(),
                a1.nrows()
            )));
        }
        if a0.ncols() != a1.ncols() || a0.ncols() == 0 {
            return Err(Error::Input(
                "class matrices have mismatched feature counts".into(),
            ));
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Input(format!("tau must lie in (0, 1), got {tau}")));
        }
        if a0.iter().chain(a1.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite sample entry".into()));
        }
        let set = BoxSet::symmetric(a0.ncols(), r_box)?;
        Ok(NpInstance {
            a0,
            a1,
            tau,
            r_box,
            set,
            origin,
        })
    }

    /// Gaussian clusters with means `+-(separation / sqrt d) 1` and identity
    /// covariance; the positive class sits on the `+` side.
    pub fn synth_generate(
        n0: usize,
        n1: usize,
        d: usize,
        separation: f64,
        tau: f64,
        seed: u64,
    ) -> Result<Self> {
        if n0 == 0 || n1 == 0 || d == 0 {
            return Err(Error::Input("synthetic sizes must be at least 1".into()));
        }
        let mut rng = substream(seed, "np/synthetic");
        let shift = separation / (d as f64).sqrt();
        let mut draw = |rows: usize, mean: f64| {
            let mut m = DMatrix::zeros(rows, d);
            for i in 0..rows {
                for j in 0..d {
                    m[(i, j)] = mean + rng.sample::<f64, _>(StandardNormal);
                }
            }
            m
        };
        let a0 = draw(n0, shift);
        let a1 = draw(n1, -shift);
        Self::with_origin(
            a0,
            a1,
            tau,
            DEFAULT_BOX,
            NpOrigin::Synthetic {
                n0,
                n1,
                d,
                separation,
                seed,
            },
        )
    }

    /// Parse a sparse `label idx:val ...` file (1-based indices). Rows are
    /// subsampled to at most `max_rows` by seeded reservoir sampling, keeping
    /// file order among the retained rows.
    pub fn load_dataset(
        path: &Path,
        rule: BinarizeRule,
        tau: f64,
        max_rows: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let rows = parse_sparse(&text)?;
        let mut keep: Vec<usize> = (0..rows.len()).collect();
        if let Some(cap) = max_rows {
            if rows.len() > cap {
                let mut rng = substream(seed, "np/reservoir");
                let mut reservoir: Vec<usize> = (0..cap).collect();
                for i in cap..rows.len() {
                    let j = rng.random_range(0..=i);
                    if j < cap {
                        reservoir[j] = i;
                    }
                }
                reservoir.sort_unstable();
                keep = reservoir;
            }
        }
        let d = rows
            .iter()
            .flat_map(|r| r.features.iter().map(|(i, _)| *i + 1))
            .max()
            .unwrap_or(0);
        if d == 0 {
            return Err(Error::Input(format!("{} has no features", path.display())));
        }
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for &k in &keep {
            let row = &rows[k];
            let positive = rule.classify(row.label).map_err(|msg| Error::Parse {
                line: row.line,
                msg,
            })?;
            if positive {
                pos.push(k);
            } else {
                neg.push(k);
            }
        }
        let dense = |idx: &[usize]| {
            let mut m = DMatrix::zeros(idx.len(), d);
            for (r, &k) in idx.iter().enumerate() {
                for &(j, v) in &rows[k].features {
                    m[(r, j)] = v;
                }
            }
            m
        };
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::Input(format!(
                "{}: empty class after binarisation ({} positive, {} negative)",
                path.display(),
                pos.len(),
                neg.len()
            )));
        }
        Self::with_origin(
            dense(&pos),
            dense(&neg),
            tau,
            DEFAULT_BOX,
            NpOrigin::Dataset {
                path: path.display().to_string(),
                rule,
                max_rows,
                seed,
            },
        )
    }

    pub fn with_box(mut self, r_box: f64) -> Result<Self> {
        self.set = BoxSet::symmetric(self.a0.ncols(), r_box)?;
        self.r_box = r_box;
        Ok(self)
    }

    pub fn from_payload(p: &NpPayload) -> Result<Self> {
        if p.d == 0 || !p.a0.len().is_multiple_of(p.d) || !p.a1.len().is_multiple_of(p.d) {
            return Err(Error::Input("sample matrices do not match d".into()));
        }
        let a0 = DMatrix::from_row_slice(p.a0.len() / p.d, p.d, &p.a0);
        let a1 = DMatrix::from_row_slice(p.a1.len() / p.d, p.d, &p.a1);
        Self::with_origin(a0, a1, p.tau, p.r_box, p.origin.clone())
    }

    pub fn to_payload(&self) -> NpPayload {
        NpPayload {
            origin: self.origin.clone(),
            tau: self.tau,
            r_box: self.r_box,
            d: self.a0.ncols(),
            a0: row_major(&self.a0),
            a1: row_major(&self.a1),
        }
    }

    pub fn positives(&self) -> &DMatrix<f64> {
        &self.a0
    }

    pub fn negatives(&self) -> &DMatrix<f64> {
        &self.a1
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn r_box(&self) -> f64 {
        self.r_box
    }

    pub fn origin(&self) -> &NpOrigin {
        &self.origin
    }

    /// Best point along the segment from the origin to the box boundary in the
    /// direction of the class-mean difference.
    pub fn strictly_feasible_point(&self) -> Result<Vector> {
        let d = self.a0.ncols();
        let mean = |m: &DMatrix<f64>| m.row_mean().transpose();
        let w = mean(&self.a0) - mean(&self.a1);
        let scale = w.amax();
        if scale == 0.0 {
            return Err(Error::Input(
                "class means coincide; no preferred direction".into(),
            ));
        }
        let dir = w * (self.r_box / scale);
        let mut best = (f64::INFINITY, Vector::zeros(d));
        for k in 0..=100 {
            let x = &dir * (k as f64 / 100.0);
            let g = self.constraint(0, &x);
            if g < best.0 {
                best = (g, x);
            }
        }
        if best.0 >= 0.0 {
            return Err(Error::Input(format!(
                "no strictly feasible point found along the mean direction (min g = {})",
                best.0
            )));
        }
        Ok(best.1)
    }

    /// Norm-based bounds; `xhat` from [`Self::strictly_feasible_point`].
    pub fn analytic_bounds(&self) -> Result<BoundsBundle> {
        let xhat = self.strictly_feasible_point()?;
        let d = self.a0.ncols() as f64;
        Ok(BoundsBundle {
            d0: 2.0 * self.r_box * d.sqrt(),
            nu_g: self.tau.max(1.0 - self.tau),
            kappa_f: 0.25 * max_row_norm_sq(&self.a0).sqrt(),
            kappa_g: 0.25 * max_row_norm_sq(&self.a1).sqrt(),
            eps0: -self.constraint(0, &xhat),
            xhat: xhat.iter().copied().collect(),
        })
    }
}

impl Problem for NpInstance {
    fn dim(&self) -> usize {
        self.a0.ncols()
    }

    fn num_constraints(&self) -> usize {
        1
    }

    fn feasible_set(&self) -> &BoxSet {
        &self.set
    }

    fn moduli(&self) -> Moduli {
        Moduli {
            objective: SIGMOID_CURVATURE * max_row_norm_sq(&self.a0),
            constraints: vec![SIGMOID_CURVATURE * max_row_norm_sq(&self.a1)],
        }
    }

    fn objective(&self, x: &Vector) -> f64 {
        let u = &self.a0 * x;
        u.iter().map(|&v| sigmoid(v)).sum::<f64>() / self.a0.nrows() as f64
    }

    fn objective_grad(&self, x: &Vector) -> Vector {
        let u = &self.a0 * x;
        let w = u.map(sigmoid_prime) / self.a0.nrows() as f64;
        self.a0.tr_mul(&w)
    }

    fn constraint(&self, _i: usize, x: &Vector) -> f64 {
        let u = &self.a1 * x;
        u.iter().map(|&v| sigmoid(-v)).sum::<f64>() / self.a1.nrows() as f64 - self.tau
    }

    fn constraint_grad(&self, _i: usize, x: &Vector) -> Vector {
        let u = &self.a1 * x;
        let w = u.map(|v| -sigmoid_prime(-v)) / self.a1.nrows() as f64;
        self.a1.tr_mul(&w)
    }
}

#[derive(Debug)]
struct SparseRow {
    line: usize,
    label: f64,
    /// Zero-based feature indices.
    features: Vec<(usize, f64)>,
}

fn parse_sparse(text: &str) -> Result<Vec<SparseRow>> {
    let mut rows = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().unwrap_or_default();
        let label: f64 = label_tok.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad label '{label_tok}'"),
        })?;
        let mut features = Vec::new();
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line,
                msg: format!("expected idx:val, got '{tok}'"),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad index '{idx}'"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line,
                    msg: "indices are 1-based".into(),
                });
            }
            let val: f64 = val.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad value '{val}'"),
            })?;
            features.push((idx - 1, val));
        }
        rows.push(SparseRow {
            line,
            label,
            features,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{relative_fd_error, verify_bounds};
    use std::io::Write;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn curvature_constant_matches_grid_search() {
        let mut best = 0.0f64;
        let mut k = 0;
        loop {
            let u = -10.0 + 1e-4 * k as f64;
            if u > 10.0 {
                break;
            }
            best = best.max(sigmoid_second(u).abs());
            k += 1;
        }
        assert!((best - SIGMOID_CURVATURE).abs() < 1e-8, "grid {best}");
        assert!((SIGMOID_CURVATURE - 1.0 / (6.0 * 3f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_is_stable_in_the_tails() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) >= 0.0 && sigmoid(800.0) < 1e-300);
        assert_eq!(sigmoid(-800.0), 1.0);
        assert!(sigmoid_prime(800.0).is_finite());
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn origin_values() {
        let inst = NpInstance::synth_generate(20, 30, 4, 1.0, 0.2, 1).unwrap();
        let zero = Vector::zeros(4);
        assert_eq!(inst.objective(&zero), 0.5);
        assert!((inst.constraint(0, &zero) - 0.3).abs() < 1e-15);
        let half = NpInstance::new(inst.a0.clone(), inst.a1.clone(), 0.5, 1.0).unwrap();
        assert_eq!(half.constraint(0, &zero), 0.0);
    }

    #[test]
    fn single_sample_closed_form() {
        let a0 = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let a1 = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let inst = NpInstance::new(a0, a1, 0.3, 5.0).unwrap();
        let u = 0.7;
        let x = v(&[u, 0.0]);
        assert!((inst.objective(&x) - sigmoid(u)).abs() < 1e-15);
        assert!((inst.objective_grad(&x) - v(&[sigmoid_prime(u), 0.0])).norm() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let inst = NpInstance::synth_generate(40, 50, 6, 2.0, 0.2, 3).unwrap();
        let mut rng = substream(9, "test");
        for _ in 0..10 {
            let x = inst.feasible_set().sample(&mut rng) * 0.1;
            let ef = relative_fd_error(|y| inst.objective(y), &inst.objective_grad(&x), &x);
            let eg = relative_fd_error(|y| inst.constraint(0, y), &inst.constraint_grad(0, &x), &x);
            assert!(ef < 1e-5 && eg < 1e-5, "{ef} {eg}");
        }
    }

    #[test]
    fn sigmoid_ranges_and_gradient_norm_bound() {
        let inst = NpInstance::synth_generate(30, 30, 5, 1.5, 0.2, 4).unwrap();
        let kappa = 0.25 * max_row_norm_sq(&inst.a0).sqrt();
        let mut rng = substream(2, "test");
        for _ in 0..200 {
            let x = inst.feasible_set().sample(&mut rng);
            let f = inst.objective(&x);
            let g = inst.constraint(0, &x);
            assert!(f > 0.0 && f < 1.0);
            assert!(g > -0.2 && g < 0.8);
            assert!(inst.objective_grad(&x).norm() <= kappa + 1e-12);
        }
    }

    #[test]
    fn duplicating_classes_leaves_objective_unchanged() {
        let inst = NpInstance::synth_generate(10, 12, 3, 1.0, 0.2, 5).unwrap();
        let stack = |m: &DMatrix<f64>| {
            let mut s = DMatrix::zeros(2 * m.nrows(), m.ncols());
            s.rows_mut(0, m.nrows()).copy_from(m);
            s.rows_mut(m.nrows(), m.nrows()).copy_from(m);
            s
        };
        let twice = NpInstance::new(stack(&inst.a0), stack(&inst.a1), 0.2, DEFAULT_BOX).unwrap();
        let x = v(&[0.3, -1.0, 2.0]);
        assert!((inst.objective(&x) - twice.objective(&x)).abs() < 1e-14);
        assert!((inst.constraint(0, &x) - twice.constraint(0, &x)).abs() < 1e-14);
    }

    #[test]
    fn moduli_scale_quadratically() {
        let inst = NpInstance::synth_generate(10, 10, 3, 1.0, 0.2, 6).unwrap();
        let doubled = NpInstance::new(&inst.a0 * 2.0, &inst.a1 * 2.0, 0.2, DEFAULT_BOX).unwrap();
        let (m, m2) = (inst.moduli(), doubled.moduli());
        assert!((m2.objective - 4.0 * m.objective).abs() < 1e-12 * m2.objective);
        assert!((m2.constraints[0] - 4.0 * m.constraints[0]).abs() < 1e-12 * m2.constraints[0]);
        let zeros = NpInstance::new(DMatrix::zeros(2, 3), DMatrix::zeros(2, 3), 0.2, 1.0).unwrap();
        assert_eq!(zeros.moduli().objective, 0.0);
        assert_eq!(zeros.moduli().constraints, vec![0.0]);
    }

    #[test]
    fn synthetic_determinism_and_zero_separation() {
        let a = NpInstance::synth_generate(5, 6, 3, 1.0, 0.2, 8).unwrap();
        let b = NpInstance::synth_generate(5, 6, 3, 1.0, 0.2, 8).unwrap();
        assert_eq!(a.a0, b.a0);
        assert_eq!(a.a1, b.a1);
        let z = NpInstance::synth_generate(4000, 4000, 2, 0.0, 0.2, 8).unwrap();
        let diff = z.a0.row_mean() - z.a1.row_mean();
        assert!(diff.amax() < 0.1, "{diff}");
    }

    #[test]
    fn bounds_audit_on_synthetic() {
        let inst = NpInstance::synth_generate(50, 50, 5, 3.0, 0.2, 2).unwrap();
        let b = inst.analytic_bounds().unwrap();
        assert!(b.eps0 > 0.0);
        assert!(verify_bounds(&inst, &b, 2000, 1).all_ok());
    }

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_two_line_file() {
        let f = write_temp("1 1:0.5\n-1 2:1.0\n");
        let inst =
            NpInstance::load_dataset(f.path(), BinarizeRule::Identity, 0.2, None, 0).unwrap();
        assert_eq!(inst.a0.nrows(), 1);
        assert_eq!(inst.a1.nrows(), 1);
        assert_eq!(inst.dim(), 2);
        assert_eq!(inst.a0[(0, 0)], 0.5);
        assert_eq!(inst.a1[(0, 1)], 1.0);
    }

    #[test]
    fn odd_even_counts_match_label_parity() {
        let mut text = String::new();
        let mut odd = 0;
        for k in 0..57 {
            let label = (k * 7) % 10;
            if label % 2 == 1 {
                odd += 1;
            }
            text.push_str(&format!(
                "{label} {}:1.0 {}:{}\n",
                k % 5 + 1,
                6,
                k as f64 * 0.1
            ));
        }
        let f = write_temp(&text);
        let inst = NpInstance::load_dataset(f.path(), BinarizeRule::OddEven, 0.2, None, 0).unwrap();
        assert_eq!(inst.a0.nrows(), odd);
        assert_eq!(inst.a1.nrows(), 57 - odd);
    }

    #[test]
    fn reservoir_subsampling_is_seeded() {
        let text: String = (0..100)
            .map(|k| format!("{} 1:{}\n", if k % 2 == 0 { 1 } else { -1 }, k))
            .collect();
        let f = write_temp(&text);
        let a =
            NpInstance::load_dataset(f.path(), BinarizeRule::Identity, 0.2, Some(20), 3).unwrap();
        let b =
            NpInstance::load_dataset(f.path(), BinarizeRule::Identity, 0.2, Some(20), 3).unwrap();
        assert_eq!(a.a0.nrows() + a.a1.nrows(), 20);
        assert_eq!(a.a0, b.a0);
    }

    #[test]
    fn loader_errors() {
        let missing = Path::new("/definitely/not/here.svm");
        assert!(matches!(
            NpInstance::load_dataset(missing, BinarizeRule::Identity, 0.2, None, 0),
            Err(Error::Io { .. })
        ));
        let f = write_temp("1 1:0.5\n-1 2:x\n");
        match NpInstance::load_dataset(f.path(), BinarizeRule::Identity, 0.2, None, 0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let f = write_temp("1 1:0.5\n1 2:1.0\n");
        assert!(matches!(
            NpInstance::load_dataset(f.path(), BinarizeRule::Identity, 0.2, None, 0),
            Err(Error::Input(_))
        ));
    }
}
