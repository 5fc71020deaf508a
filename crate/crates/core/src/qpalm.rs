//! The outer loop: surrogate subproblem, inner APG solve, projected
//! multiplier update.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::apg::{self, ApgConfig, ApgStatus};
use crate::constants::ConstantsBundle;
use crate::error::{Error, Result};
use crate::metrics::{moreau_gradient, moreau_inner_config, residual_norm_cached};
use crate::problem::{FirstOrder, Problem, Vector};
use crate::surrogate::{SurrogateModel, DEFAULT_PAD};
use crate::trace::{RunTrace, TraceRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// `alpha = 16 gamma_5 T^{1/3}`.
    Theory,
    /// `alpha = c_alpha T^{1/3}`.
    Practical,
}

impl std::str::FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theory" => Ok(ScheduleMode::Theory),
            "practical" => Ok(ScheduleMode::Practical),
            other => Err(Error::Input(format!("unknown schedule mode '{other}'"))),
        }
    }
}

/// Default practical step scale.
pub const DEFAULT_C_ALPHA: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpalmConfig {
    pub t: usize,
    pub mode: ScheduleMode,
    pub c_alpha: f64,
    pub pad: f64,
    pub inner: ApgConfig,
    pub seed: u64,
    pub record_moreau: bool,
    pub moreau_every: usize,
    /// Record cumulative solver time; when false `cpu_s` is written as 0.
    pub record_time: bool,
    /// Start each inner solve from the previous solve's final step estimate.
    pub warm_start_l: bool,
    /// Initial point; the instance's strictly feasible point when absent.
    pub x_start: Option<Vec<f64>>,
    /// Stop after this much solver time even if fewer than `T` iterations ran.
    pub budget_s: Option<f64>,
}

impl QpalmConfig {
    pub fn practical(t: usize) -> Self {
        QpalmConfig {
            t,
            mode: ScheduleMode::Practical,
            c_alpha: DEFAULT_C_ALPHA,
            pad: DEFAULT_PAD,
            inner: ApgConfig::default(),
            seed: 0,
            record_moreau: false,
            moreau_every: 10,
            record_time: true,
            warm_start_l: true,
            x_start: None,
            budget_s: None,
        }
    }

    pub fn theory(t: usize) -> Self {
        QpalmConfig {
            mode: ScheduleMode::Theory,
            ..Self::practical(t)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 {
            return Err(Error::Input("T must be at least 1".into()));
        }
        if !(self.c_alpha > 0.0 && self.c_alpha.is_finite()) {
            return Err(Error::Input(format!(
                "c_alpha must be positive, got {}",
                self.c_alpha
            )));
        }
        if !(self.pad > 0.0) {
            return Err(Error::Input(format!(
                "pad must be positive, got {}",
                self.pad
            )));
        }
        if self.record_moreau && self.moreau_every == 0 {
            return Err(Error::Input("moreau_every must be at least 1".into()));
        }
        self.inner.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub sigma: f64,
    pub alpha: f64,
}

/// `sigma = T^{-2/3}`; `alpha` per mode.
pub fn schedule(
    t: usize,
    mode: ScheduleMode,
    constants: Option<&ConstantsBundle>,
    c_alpha: f64,
) -> Result<Schedule> {
    if t == 0 {
        return Err(Error::Input("T must be at least 1".into()));
    }
    let tf = t as f64;
    let sigma = tf.powf(-2.0 / 3.0);
    let alpha = match mode {
        ScheduleMode::Practical => c_alpha * tf.cbrt(),
        ScheduleMode::Theory => {
            let c = constants
                .ok_or_else(|| Error::Input("theory schedule needs the constants bundle".into()))?;
            c.base.require_regular()?;
            c.theory_alpha(t)
        }
    };
    Ok(Schedule { sigma, alpha })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub t: usize,
    pub x: Vector,
    pub lambda: Vector,
}

#[derive(Debug, Clone)]
pub struct StepInfo {
    /// First-order data at `x^t`.
    pub anchor: FirstOrder,
    /// `q(x^{t+1})` for the constraints.
    pub q_next: Vector,
    pub step_norm: f64,
    pub inner_iters: usize,
    pub inner_status: ApgStatus,
    pub final_l: f64,
}

/// One outer iteration from `(x^t, lambda^t)`.
pub fn step<P: Problem + ?Sized>(
    problem: &P,
    state: &SolverState,
    sched: Schedule,
    pad: f64,
    inner: &ApgConfig,
) -> Result<(SolverState, StepInfo)> {
    let model = SurrogateModel::build(
        problem,
        &state.x,
        &state.lambda,
        pad,
        sched.sigma,
        sched.alpha,
    )
    .map_err(|e| e.at_outer(state.t))?;
    let res = apg::minimize(&model, problem.feasible_set(), &state.x, inner)
        .map_err(|e| e.at_outer(state.t))?;
    let q_next = model.constraint_models(&res.x);
    let lambda = Vector::from_iterator(
        q_next.len(),
        state
            .lambda
            .iter()
            .zip(q_next.iter())
            .map(|(l, q)| (l + sched.sigma * q).max(0.0)),
    );
    if lambda.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numerical("non-finite multiplier".into()).at_outer(state.t));
    }
    let step_norm = (&res.x - &state.x).norm();
    let info = StepInfo {
        anchor: model.anchor_data().clone(),
        q_next,
        step_norm,
        inner_iters: res.iterations,
        inner_status: res.status,
        final_l: res.final_l,
    };
    Ok((
        SolverState {
            t: state.t + 1,
            x: res.x,
            lambda,
        },
        info,
    ))
}

/// Validated starting point.
pub fn start_point<P: Problem + ?Sized>(
    problem: &P,
    x_start: Option<&[f64]>,
    fallback: Option<Vector>,
) -> Result<Vector> {
    let x = match (x_start, fallback) {
        (Some(x), _) => Vector::from_column_slice(x),
        (None, Some(x)) => x,
        (None, None) => return Err(Error::Input("no initial point given".into())),
    };
    if x.len() != problem.dim() {
        return Err(Error::Input(format!(
            "initial point has dimension {}, problem has {}",
            x.len(),
            problem.dim()
        )));
    }
    if !problem.feasible_set().contains(&x) {
        return Err(Error::Input("initial point lies outside the box".into()));
    }
    Ok(x)
}

/// `T` outer iterations from `(x^1, lambda^1 = 0)`. `xhat` is the default
/// start; theory mode needs `constants` and a `T` passing the threshold check.
pub fn run<P: Problem + ?Sized>(
    problem: &P,
    config: &QpalmConfig,
    xhat: Option<Vector>,
    constants: Option<&ConstantsBundle>,
) -> Result<RunTrace> {
    config.validate()?;
    let sched = schedule(config.t, config.mode, constants, config.c_alpha)?;
    if config.mode == ScheduleMode::Theory {
        let check = constants
            .expect("checked by schedule")
            .theory_t_check(config.t);
        if !check.ok {
            return Err(Error::BudgetTooSmall {
                t: config.t,
                reason: check.reasons.join("; "),
            });
        }
    }
    let x1 = start_point(problem, config.x_start.as_deref(), xhat)?;
    let p = problem.num_constraints();
    let mut state = SolverState {
        t: 1,
        x: x1,
        lambda: Vector::zeros(p),
    };
    let set = problem.feasible_set();
    let moreau_cfg = moreau_inner_config();
    let mut inner = config.inner;
    let mut rows = Vec::with_capacity(config.t);
    let mut lambdas = vec![state.lambda.iter().copied().collect::<Vec<_>>()];
    let mut elapsed = 0.0;
    let mut wall = 0.0;
    let mut inner_failures = 0;
    for _ in 0..config.t {
        let clock = Instant::now();
        let (next, info) = step(problem, &state, sched, config.pad, &inner)?;
        let dt = clock.elapsed().as_secs_f64();
        wall += dt;
        if config.record_time {
            elapsed += dt;
        }
        if config.warm_start_l {
            inner.l_init = info.final_l;
        }
        if info.inner_status != ApgStatus::Converged {
            inner_failures += 1;
        }
        let moreau_sq = if config.record_moreau && (state.t - 1).is_multiple_of(config.moreau_every)
        {
            let m = moreau_gradient(problem, &state.x, &state.lambda, sched.alpha, &moreau_cfg)?;
            Some(m.grad.norm_squared())
        } else {
            None
        };
        let a = &info.anchor;
        rows.push(TraceRow {
            t: state.t,
            f: a.f,
            g: a.g.iter().copied().collect(),
            comp: state.lambda.dot(&a.g),
            lam_norm: state.lambda.norm(),
            step_norm: info.step_norm,
            inner_iters: info.inner_iters,
            cpu_s: elapsed,
            moreau_sq,
            r_alpha: residual_norm_cached(set, &state.x, a, &state.lambda, sched.alpha),
        });
        lambdas.push(next.lambda.iter().copied().collect());
        state = next;
        if config.budget_s.is_some_and(|b| wall >= b) {
            break;
        }
    }
    let sigmas = vec![sched.sigma; rows.len()];
    Ok(RunTrace {
        solver: "qpalm".into(),
        rows,
        lambdas,
        sigmas,
        alpha: sched.alpha,
        x_final: state.x.iter().copied().collect(),
        inner_failures,
    })
}
