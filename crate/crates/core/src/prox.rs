//! Proximal gradient engine for objectives of the form `g(a) + w·‖a‖₁`.
//!
//! The smooth part `g` is supplied through [`SmoothObjective`]. Iterates are
//! kept monotone: when a momentum step fails to decrease the objective the
//! momentum is reset and a plain step with a sufficient-decrease check is
//! taken from the last accepted point instead.

use ndarray::{Array1, ArrayView1, Zip};

use crate::linalg::norm1;

/// How the step length `1/L` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepRule {
    /// `L` fixed from a spectral bound of the smooth part.
    Fixed,
    /// `L` doubled until the quadratic upper model holds at every step.
    Backtracking,
}

impl std::str::FromStr for StepRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(StepRule::Fixed),
            "backtracking" => Ok(StepRule::Backtracking),
            other => Err(format!("expected `fixed` or `backtracking`, got `{other}`")),
        }
    }
}

impl std::fmt::Display for StepRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StepRule::Fixed => "fixed",
            StepRule::Backtracking => "backtracking",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Stop once the objective decrease of one iteration is at most
    /// `tolerance · |objective|`.
    pub tolerance: f64,
    pub acceleration: bool,
    pub step_rule: StepRule,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 5000,
            tolerance: 1e-10,
            acceleration: true,
            step_rule: StepRule::Fixed,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> crate::Result<()> {
        if self.max_iterations < 1 {
            return Err(crate::Error::invalid("max_iterations", "must be at least 1"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(crate::Error::invalid("tolerance", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Differentiable part of a composite objective.
pub trait SmoothObjective {
    fn value(&self, x: ArrayView1<'_, f64>) -> f64;
    fn value_and_gradient(&self, x: ArrayView1<'_, f64>) -> (f64, Array1<f64>);
}

#[derive(Clone, Debug)]
pub struct ProxOutcome {
    pub point: Array1<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the start point followed by one entry per accepted step.
    pub trace: Vec<f64>,
}

/// Componentwise `sign(v)·max(|v| − t, 0)`.
pub fn soft_threshold(v: ArrayView1<'_, f64>, t: f64) -> Array1<f64> {
    debug_assert!(t >= 0.0);
    v.mapv(|x| shrink(x, t))
}

#[inline]
pub(crate) fn shrink(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

const MAX_DOUBLINGS: usize = 80;

struct Step {
    point: Array1<f64>,
    objective: f64,
}

fn prox_step<S: SmoothObjective>(
    smooth: &S,
    l1: f64,
    base: ArrayView1<'_, f64>,
    lipschitz: &mut f64,
    check_model: bool,
) -> Step {
    let (f_base, grad) = smooth.value_and_gradient(base);
    let slack = 1e-13 * f_base.abs().max(1e-300);
    let mut doublings = 0;
    loop {
        let inv = 1.0 / *lipschitz;
        let mut z = Array1::zeros(base.len());
        Zip::from(&mut z)
            .and(&base)
            .and(&grad)
            .for_each(|z, &b, &g| *z = shrink(b - inv * g, l1 * inv));
        let f_z = smooth.value(z.view());
        let accept = !check_model || doublings >= MAX_DOUBLINGS || {
            let mut lin = 0.0;
            let mut quad = 0.0;
            Zip::from(&z).and(&base).and(&grad).for_each(|&z, &b, &g| {
                let d = z - b;
                lin += g * d;
                quad += d * d;
            });
            f_z <= f_base + lin + 0.5 * *lipschitz * quad + slack
        };
        if accept && f_z.is_finite() {
            return Step {
                objective: f_z + l1 * norm1(z.view()),
                point: z,
            };
        }
        if doublings >= MAX_DOUBLINGS {
            return Step {
                objective: f64::INFINITY,
                point: z,
            };
        }
        *lipschitz *= 2.0;
        doublings += 1;
    }
}

/// Minimizes `smooth(a) + l1·‖a‖₁` from `start`.
///
/// `lipschitz` is the initial curvature bound; with [`StepRule::Fixed`] it is
/// used as is unless a step fails to descend, in which case it is doubled
/// until descent is restored.
pub fn minimize<S: SmoothObjective>(
    smooth: &S,
    l1: f64,
    start: Array1<f64>,
    lipschitz: f64,
    opts: &SolverOptions,
) -> ProxOutcome {
    let mut lip = if lipschitz.is_finite() && lipschitz > 0.0 {
        lipschitz
    } else {
        1.0
    };
    let backtrack = opts.step_rule == StepRule::Backtracking;

    let mut x = start;
    let mut fx = smooth.value(x.view()) + l1 * norm1(x.view());
    let mut trace = vec![fx];
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=opts.max_iterations {
        iterations = it;
        let from_momentum = opts.acceleration && t > 1.0;
        let mut step = if from_momentum {
            prox_step(smooth, l1, y.view(), &mut lip, backtrack)
        } else {
            prox_step(smooth, l1, x.view(), &mut lip, backtrack)
        };
        if !(step.objective <= fx) {
            // Momentum overshoot or a too-long fixed step: fall back to a
            // checked plain step from the last accepted point.
            t = 1.0;
            step = prox_step(smooth, l1, x.view(), &mut lip, true);
            if !(step.objective <= fx) {
                converged = true;
                break;
            }
        }
        let decrease = fx - step.objective;
        let previous = fx;
        if opts.acceleration {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            y = &step.point + &((&step.point - &x) * beta);
            t = t_next;
        }
        x = step.point;
        fx = step.objective;
        trace.push(fx);
        if !opts.acceleration {
            y.assign(&x);
        }
        if decrease <= opts.tolerance * previous.abs() {
            converged = true;
            break;
        }
    }

    ProxOutcome {
        point: x,
        objective: fx,
        iterations,
        converged,
        trace,
    }
}
