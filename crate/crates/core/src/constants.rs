//! Constants of the convergence analysis, evaluated from the problem bounds,
//! weak-convexity moduli and surrogate pad.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{BoundsBundle, Moduli};

/// Problem data the constants are built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantInputs {
    pub p: usize,
    pub d0: f64,
    pub nu_g: f64,
    pub kappa_f: f64,
    pub kappa_g: f64,
    pub eps0: f64,
    pub l0: f64,
    pub l_constraints: Vec<f64>,
    pub pad: f64,
}

impl ConstantInputs {
    pub fn new(bounds: &BoundsBundle, moduli: &Moduli, pad: f64) -> Result<Self> {
        let inputs = ConstantInputs {
            p: moduli.constraints.len(),
            d0: bounds.d0,
            nu_g: bounds.nu_g,
            kappa_f: bounds.kappa_f,
            kappa_g: bounds.kappa_g,
            eps0: bounds.eps0,
            l0: moduli.objective,
            l_constraints: moduli.constraints.clone(),
            pad,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::Input("need at least one constraint".into()));
        }
        let positive = [
            ("D0", self.d0),
            ("nu_g", self.nu_g),
            ("eps0", self.eps0),
            ("pad", self.pad),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Input(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = std::iter::once(("kappa_f", self.kappa_f))
            .chain(std::iter::once(("kappa_g", self.kappa_g)))
            .chain(std::iter::once(("L0", self.l0)))
            .chain(self.l_constraints.iter().map(|&l| ("L_i", l)));
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Input(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    fn sqrt_p(&self) -> f64 {
        (self.p as f64).sqrt()
    }

    fn l_sum(&self) -> f64 {
        self.l_constraints.iter().sum()
    }
}

/// Constants that do not depend on the multiplier bound `M*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseConstants {
    pub inputs: ConstantInputs,
    pub kappa_h: f64,
    pub c_sigma: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma4: f64,
    pub gamma5: f64,
    pub rho: f64,
    pub kappa_bar0: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub kappa4: f64,
    /// `16 gamma_5`, the coefficient of `T^{1/3}` in the theory step `alpha`.
    pub eta: f64,
}

impl BaseConstants {
    pub fn compute(inputs: ConstantInputs) -> Result<Self> {
        inputs.validate()?;
        let i = &inputs;
        let sp = i.sqrt_p();
        let kappa_h = i
            .l_constraints
            .iter()
            .map(|l| l + i.pad)
            .fold(0.0, f64::max);
        let c_sigma = sp * kappa_h;
        let inner = i.kappa_g * i.d0 + 0.5 * kappa_h * i.d0 * i.d0;
        let gamma1 = i.nu_g + sp * inner;
        let gamma2 = i.nu_g + inner;
        let bracket = sp * i.kappa_g * i.d0 + sp * i.d0 * i.d0 * kappa_h;
        let gamma4 = i.nu_g * gamma1 + gamma1 * bracket + 0.5 * bracket * bracket;
        let gamma5 = 2.0 + sp * kappa_h * gamma1 + i.l_sum() * gamma2;
        let d0sq = i.d0 * i.d0;
        let rho = d0sq * c_sigma / i.eps0;
        let kappa_bar0 = (2.0 * i.kappa_f * i.d0 + d0sq) / i.eps0;
        let kappa1 = d0sq / i.eps0;
        let kappa3 = i.nu_g * i.nu_g / i.eps0 - gamma1;
        let kappa4 = gamma1 + 0.5 * i.eps0 + log_term(gamma1, i.eps0);
        Ok(BaseConstants {
            kappa_h,
            c_sigma,
            gamma1,
            gamma2,
            gamma4,
            gamma5,
            rho,
            kappa_bar0,
            kappa1,
            kappa2: 0.0,
            kappa3,
            kappa4,
            eta: 16.0 * gamma5,
            inputs,
        })
    }

    /// `1 + C_Sigma M`, the bound on `||Sigma_0||` when `||lambda|| <= M`.
    pub fn kappa_sigma(&self, m: f64) -> f64 {
        1.0 + self.c_sigma * m
    }

    /// `(2 kappa_f D0 + kappa_Sigma(M) D0^2) / eps0`.
    pub fn kappa0(&self, m: f64) -> f64 {
        let i = &self.inputs;
        (2.0 * i.kappa_f * i.d0 + self.kappa_sigma(m) * i.d0 * i.d0) / i.eps0
    }

    /// `beta_k(sigma) = L0 + (sum_j L_j gamma_2) k sigma`.
    pub fn beta(&self, k: f64, sigma: f64) -> f64 {
        self.inputs.l0 + self.inputs.l_sum() * self.gamma2 * k * sigma
    }

    /// Drift bracket `2 nu_g sqrt(p) kappa_H + 2 p kappa_g^2 + p kappa_H^2 D0^2 / 2`.
    fn drift_bracket(&self) -> f64 {
        let i = &self.inputs;
        let p = i.p as f64;
        2.0 * i.nu_g * i.sqrt_p() * self.kappa_h
            + 2.0 * p * i.kappa_g * i.kappa_g
            + 0.5 * p * self.kappa_h * self.kappa_h * i.d0 * i.d0
    }

    /// `beta_k + kappa_Sigma(M)/2 + (sigma/2)[bracket] + sqrt(p) kappa_H gamma_1 k sigma`.
    pub fn beta_hat(&self, k: f64, sigma: f64, m: f64) -> f64 {
        self.beta(k, sigma)
            + 0.5 * self.kappa_sigma(m)
            + 0.5 * sigma * self.drift_bracket()
            + self.inputs.sqrt_p() * self.kappa_h * self.gamma1 * k * sigma
    }

    /// Multiplier drift bound over `s` steps.
    pub fn theta(&self, sigma: f64, alpha: f64, s: f64, m: f64) -> f64 {
        let i = &self.inputs;
        0.5 * i.eps0 * sigma * s
            + self.gamma1 * sigma * (s - 1.0)
            + alpha * i.d0 * i.d0 / (i.eps0 * s)
            + self.kappa0(m)
            + sigma * i.nu_g * i.nu_g / i.eps0
    }

    /// `theta + [gamma_1 + (8 gamma_1^2 / eps0) ln(32 gamma_1^2 / eps0^2)] sigma s`.
    pub fn psi(&self, sigma: f64, alpha: f64, s: f64, m: f64) -> f64 {
        self.theta(sigma, alpha, s, m)
            + (self.gamma1 + log_term(self.gamma1, self.inputs.eps0)) * sigma * s
    }

    /// Fails when the regularity ratio `rho` is at least one.
    pub fn require_regular(&self) -> Result<()> {
        if self.rho >= 1.0 {
            Err(Error::RegularityViolated { rho: self.rho })
        } else {
            Ok(())
        }
    }
}

/// `(8 g^2 / eps0) ln(32 g^2 / eps0^2)`.
fn log_term(gamma1: f64, eps0: f64) -> f64 {
    8.0 * gamma1 * gamma1 / eps0 * (32.0 * gamma1 * gamma1 / (eps0 * eps0)).ln()
}

/// Complete set of constants; only exists when `rho < 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsBundle {
    #[serde(flatten)]
    pub base: BaseConstants,
    pub m_star: f64,
    pub kappa_sigma_star: f64,
    pub kappa0_star: f64,
    pub gamma3: f64,
    pub gamma6: f64,
    /// The three lower bounds `T` must exceed.
    pub t_min_terms: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TCheck {
    pub t: usize,
    pub ok: bool,
    pub reasons: Vec<String>,
    /// `beta_hat_T(T^{-2/3}) - gamma_5 T^{1/3}` (nonpositive when it holds).
    pub beta_hat_gap: f64,
    /// `kappa_3 T^{-2/3} + kappa_4 T^{-1/3}`, at most 1 for the uniform multiplier bound.
    pub multiplier_condition: f64,
}

impl ConstantsBundle {
    pub fn compute(bounds: &BoundsBundle, moduli: &Moduli, pad: f64) -> Result<Self> {
        Self::from_base(BaseConstants::compute(ConstantInputs::new(
            bounds, moduli, pad,
        )?)?)
    }

    pub fn from_base(base: BaseConstants) -> Result<Self> {
        base.require_regular()?;
        let m_star = (base.kappa_bar0 + base.eta * base.kappa1 + 1.0) / (1.0 - base.rho);
        let kappa_sigma_star = base.kappa_sigma(m_star);
        let kappa0_star = base.kappa0(m_star);
        let gamma3 = kappa0_star + base.eta * base.kappa1 + base.kappa3 + base.kappa4;
        let i = &base.inputs;
        let lever = i.kappa_g + 0.5 * base.kappa_h * i.d0;
        let gamma6 = (i.kappa_f + lever * i.sqrt_p() * (gamma3 + i.nu_g)) / (8.0 * base.gamma5);
        let t_min_terms = [
            (i.l0 + 0.5 * kappa_sigma_star).powi(3),
            0.5 * base.drift_bracket(),
            i.p as f64 * lever * lever / (16.0 * base.gamma5),
        ];
        Ok(ConstantsBundle {
            m_star,
            kappa_sigma_star,
            kappa0_star,
            gamma3,
            gamma6,
            t_min_terms,
            base,
        })
    }

    pub fn t_min(&self) -> f64 {
        self.t_min_terms.iter().copied().fold(0.0, f64::max)
    }

    /// `beta_hat_k(sigma)` with `kappa_Sigma = kappa_Sigma(M*)`.
    pub fn beta_hat(&self, k: f64, sigma: f64) -> f64 {
        self.base.beta_hat(k, sigma, self.m_star)
    }

    /// Theory step `alpha = 16 gamma_5 T^{1/3}`.
    pub fn theory_alpha(&self, t: usize) -> f64 {
        self.base.eta * (t as f64).cbrt()
    }

    pub fn theory_t_check(&self, t: usize) -> TCheck {
        let tf = t as f64;
        let mut reasons = Vec::new();
        let names = [
            "(L0 + kappa_Sigma/2)^3",
            "drift bracket / 2",
            "p (kappa_g + kappa_H D0/2)^2 / (16 gamma_5)",
        ];
        for (term, name) in self.t_min_terms.iter().zip(names) {
            if tf <= *term {
                reasons.push(format!("T = {t} does not exceed {name} = {term:.6e}"));
            }
        }
        let sigma = tf.powf(-2.0 / 3.0);
        let beta_hat_gap = self.beta_hat(tf, sigma) - self.base.gamma5 * tf.cbrt();
        if beta_hat_gap > 0.0 {
            reasons.push(format!(
                "beta_hat_T exceeds gamma_5 T^(1/3) by {beta_hat_gap:.6e}"
            ));
        }
        let multiplier_condition =
            self.base.kappa3 * sigma + self.base.kappa4 * tf.powf(-1.0 / 3.0);
        if multiplier_condition > 1.0 {
            reasons.push(format!(
                "kappa_3 T^(-2/3) + kappa_4 T^(-1/3) = {multiplier_condition:.6e} > 1"
            ));
        }
        TCheck {
            t,
            ok: reasons.is_empty(),
            reasons,
            beta_hat_gap,
            multiplier_condition,
        }
    }

    /// Right-hand side of the averaged Moreau-gradient bound at `T`.
    pub fn moreau_bound(&self, t: usize, f_start: f64, f_lower: f64) -> f64 {
        let tf = t as f64;
        256.0
            * self.base.gamma5
            * ((f_start - f_lower + self.gamma3 * self.base.inputs.nu_g) * tf.powf(-2.0 / 3.0)
                + self.base.gamma4 * tf.powf(-1.0 / 3.0))
    }

    /// Right-hand side of the averaged constraint-violation bound at `T`.
    pub fn violation_bound(&self, t: usize) -> f64 {
        let i = &self.base.inputs;
        (self.gamma3 + (i.kappa_g + 0.5 * self.base.kappa_h * i.d0) * self.gamma6)
            * (t as f64).powf(-1.0 / 3.0)
    }

    /// Right-hand side of the averaged complementarity bound at `T`.
    pub fn complementarity_bound(&self, t: usize) -> f64 {
        let tf = t as f64;
        let i = &self.base.inputs;
        0.5 * i.nu_g * i.nu_g * tf.powf(-2.0 / 3.0)
            + i.kappa_f * i.kappa_f / (32.0 * self.base.gamma5) * tf.powf(-1.0 / 3.0)
    }
}
