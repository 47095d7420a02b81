//! Two-parameter Lindley lifetimes under two independent competing causes.
//!
//! Each cause `r` in group `i` has a Lindley lifetime with shape
//! `alpha_ir = exp(a_r * s_i)` and scale `theta_ir = exp(b_r * s_i)`. A device
//! inspected at `tau_i1 < ... < tau_iL` falls into one of `2L + 1` cells: failed
//! from cause 1 or 2 inside interval `l`, or still alive after `tau_iL`.
//!
//! Cells are addressed by a flat index: `0` is the survival cell and
//! `1 + 2 * l + r` is the failure cell of (0-based) interval `l` and cause `r`.

use nalgebra::{Matrix4xX, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{NosdError, Result};

pub type Vec4 = Vector4<f64>;

/// Lower bound applied to probabilities entering logarithms or negative powers.
pub const PROB_FLOOR: f64 = 1e-300;

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0)
}

/// Flat index of the failure cell for 0-based `interval` and 0-based `cause`.
#[inline]
pub fn failure_cell(interval: usize, cause: usize) -> usize {
    debug_assert!(cause < 2);
    1 + 2 * interval + cause
}

/// Log-linear link coefficients `(a1, b1, a2, b2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
}

impl ModelParams {
    pub const fn new(a1: f64, b1: f64, a2: f64, b2: f64) -> Self {
        Self { a1, b1, a2, b2 }
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.a1, self.b1, self.a2, self.b2]
    }

    pub fn to_vector(self) -> Vec4 {
        Vec4::new(self.a1, self.b1, self.a2, self.b2)
    }

    pub fn from_vector(v: &Vec4) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }

    pub fn get(&self, j: usize) -> f64 {
        self.to_array()[j]
    }

    pub fn with(mut self, j: usize, value: f64) -> Self {
        match j {
            0 => self.a1 = value,
            1 => self.b1 = value,
            2 => self.a2 = value,
            3 => self.b2 = value,
            _ => panic!("parameter index {j} out of range"),
        }
        self
    }
}

impl From<[f64; 4]> for ModelParams {
    fn from(v: [f64; 4]) -> Self {
        Self::from_array(v)
    }
}

/// One test group: `g` devices held at stress `s`, inspected at `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDesign {
    pub g: u32,
    pub s: f64,
    pub tau: Vec<f64>,
}

impl GroupDesign {
    pub fn new(g: u32, s: f64, tau: Vec<f64>) -> Result<Self> {
        let d = Self { g, s, tau };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.g == 0 {
            return Err(NosdError::InvalidPlan("group size must be at least 1".into()));
        }
        if !self.s.is_finite() {
            return Err(NosdError::InvalidPlan(format!("stress {} is not finite", self.s)));
        }
        if self.tau.is_empty() {
            return Err(NosdError::InvalidPlan("no inspection times".into()));
        }
        let mut prev = 0.0;
        for &t in &self.tau {
            if !t.is_finite() || t <= prev {
                return Err(NosdError::InvalidPlan(format!(
                    "inspection times must be finite, positive and strictly increasing: {:?}",
                    self.tau
                )));
            }
            prev = t;
        }
        Ok(())
    }

    pub fn n_intervals(&self) -> usize {
        self.tau.len()
    }

    pub fn n_cells(&self) -> usize {
        2 * self.tau.len() + 1
    }

    /// Lower end of (0-based) interval `l`.
    pub fn interval_start(&self, l: usize) -> f64 {
        if l == 0 {
            0.0
        } else {
            self.tau[l - 1]
        }
    }

    pub fn last_inspection(&self) -> f64 {
        *self.tau.last().expect("validated design has inspection times")
    }
}

/// Shape and scale of both causes at one stress level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StressLink {
    pub alpha: [f64; 2],
    pub theta: [f64; 2],
}

/// `alpha_r = exp(a_r s)`, `theta_r = exp(b_r s)`.
pub fn stress_link(params: &ModelParams, s: f64) -> Result<StressLink> {
    if !s.is_finite() {
        return Err(NosdError::Domain(format!("stress {s} is not finite")));
    }
    if !params.is_finite() {
        return Err(NosdError::Domain(format!("non-finite parameters {params:?}")));
    }
    let link = |c: f64| -> Result<f64> {
        let e = c * s;
        let v = e.exp();
        if !v.is_finite() {
            return Err(NosdError::LinkOverflow { exponent: e, stress: s });
        }
        Ok(v)
    };
    let out = StressLink {
        alpha: [link(params.a1)?, link(params.a2)?],
        theta: [link(params.b1)?, link(params.b2)?],
    };
    if out.theta.iter().any(|&t| t <= 0.0) {
        return Err(NosdError::Domain(format!(
            "scale underflowed to zero at stress {s} for {params:?}"
        )));
    }
    Ok(out)
}

fn check_lindley(alpha: f64, theta: f64) -> Result<()> {
    if !(theta > 0.0) || !(alpha + theta > 0.0) || !alpha.is_finite() || !theta.is_finite() {
        return Err(NosdError::Domain(format!(
            "Lindley requires theta > 0 and alpha + theta > 0 (alpha = {alpha}, theta = {theta})"
        )));
    }
    Ok(())
}

/// Lindley density `theta^2 (alpha + t) e^{-theta t} / (alpha theta + 1)`.
pub fn lindley_pdf(t: f64, alpha: f64, theta: f64) -> Result<f64> {
    check_lindley(alpha, theta)?;
    if t < 0.0 {
        return Ok(0.0);
    }
    Ok(theta * theta * (alpha + t) * (-theta * t).exp() / (alpha * theta + 1.0))
}

/// Lindley survival function `(1 + alpha theta + theta t) / (alpha theta + 1) e^{-theta t}`.
pub fn lindley_sf(t: f64, alpha: f64, theta: f64) -> Result<f64> {
    check_lindley(alpha, theta)?;
    if t <= 0.0 {
        return Ok(1.0);
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    let d = alpha * theta + 1.0;
    Ok((d + theta * t) / d * (-theta * t).exp())
}

pub fn lindley_cdf(t: f64, alpha: f64, theta: f64) -> Result<f64> {
    if t < 0.0 || t.is_nan() {
        return Err(NosdError::Domain(format!("lifetime argument {t} must be nonnegative")));
    }
    Ok(1.0 - lindley_sf(t, alpha, theta)?)
}

/// Cell probabilities of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct CellProbabilities {
    /// Survival past the last inspection.
    pub p0: f64,
    /// `p[l][r]`: failure from cause `r` inside interval `l`.
    pub p: Vec<[f64; 2]>,
}

impl CellProbabilities {
    pub fn n_cells(&self) -> usize {
        2 * self.p.len() + 1
    }

    pub fn total(&self) -> f64 {
        self.p0 + self.p.iter().map(|c| c[0] + c[1]).sum::<f64>()
    }

    pub fn cell(&self, c: usize) -> f64 {
        if c == 0 {
            self.p0
        } else {
            self.p[(c - 1) / 2][(c - 1) % 2]
        }
    }

    /// `[p0, p_11, p_12, p_21, p_22, ...]`.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_cells());
        v.push(self.p0);
        for c in &self.p {
            v.extend_from_slice(c);
        }
        v
    }
}

/// Sub-density of "cause `focal` fails after `t`, before the other cause",
/// i.e. `int_t^inf f_focal(u) S_other(u) du`, together with its partials
/// with respect to `(alpha_f, theta_f, alpha_o, theta_o)`.
fn crude_tail(t: f64, af: f64, tf: f64, ao: f64, to: f64) -> (f64, [f64; 4]) {
    let tt = tf + to;
    let as_ = af + ao;
    let df = af * tf + 1.0;
    let do_ = ao * to + 1.0;
    let e = (-tt * t).exp();
    let k = e * tf * tf / (tt * tt * tt * df * do_);

    let b = tt * t * (tt * (to * (as_ + t) + 1.0) + 2.0 * to)
        + tt * (tt * af * (1.0 + ao * to) + to * as_ + 1.0)
        + 2.0 * to;

    let db_daf = tt * tt * t * to + tt * tt * (1.0 + ao * to) + tt * to;
    let db_dao = tt * tt * t * to + tt * tt * af * to + tt * to;
    let db_dt = 2.0 * tt * t * to * (as_ + t)
        + 2.0 * tt * t
        + 2.0 * to * t
        + 2.0 * tt * af * (1.0 + ao * to)
        + to * as_
        + 1.0;
    let db_dto_explicit =
        tt * tt * t * (as_ + t) + 2.0 * tt * t + tt * tt * af * ao + tt * as_ + 2.0;

    // log-derivatives of k
    let lk_af = -tf / df;
    let lk_tf = -t + 2.0 / tf - 3.0 / tt - af / df;
    let lk_ao = -to / do_;
    let lk_to = -t - 3.0 / tt - ao / do_;

    let value = k * b;
    let grad = [
        k * (b * lk_af + db_daf),
        k * (b * lk_tf + db_dt),
        k * (b * lk_ao + db_dao),
        k * (b * lk_to + db_dt + db_dto_explicit),
    ];
    (value, grad)
}

/// Survival function of one cause and its partials in `(alpha, theta)`.
fn survival_with_grad(t: f64, alpha: f64, theta: f64) -> (f64, [f64; 2]) {
    let d = alpha * theta + 1.0;
    let e = (-theta * t).exp();
    let s = (d + theta * t) / d * e;
    let ds_da = -theta * theta * t * e / (d * d);
    let ds_dt = t * e / (d * d) - t * s;
    (s, [ds_da, ds_dt])
}

fn evaluate(
    params: &ModelParams,
    design: &GroupDesign,
    want_grad: bool,
) -> Result<(CellProbabilities, Option<Matrix4xX<f64>>)> {
    design.validate()?;
    let link = stress_link(params, design.s)?;
    let [a1, a2] = link.alpha;
    let [t1, t2] = link.theta;
    check_lindley(a1, t1)?;
    check_lindley(a2, t2)?;
    let s = design.s;
    // d(alpha_1, theta_1, alpha_2, theta_2) / d(a1, b1, a2, b2) is diagonal
    let chain = [s * a1, s * t1, s * a2, s * t2];

    let n = design.n_cells();
    let mut grad = want_grad.then(|| Matrix4xX::<f64>::zeros(n));
    let mut p = Vec::with_capacity(design.n_intervals());

    let mut prev = [crude_tail(0.0, a1, t1, a2, t2), crude_tail(0.0, a2, t2, a1, t1)];
    for (l, &tau) in design.tau.iter().enumerate() {
        let cur = [crude_tail(tau, a1, t1, a2, t2), crude_tail(tau, a2, t2, a1, t1)];
        let cell = [prev[0].0 - cur[0].0, prev[1].0 - cur[1].0];
        p.push(cell);
        if let Some(g) = grad.as_mut() {
            for r in 0..2 {
                let d = |k: usize| prev[r].1[k] - cur[r].1[k];
                // reorder (focal, other) partials into (alpha1, theta1, alpha2, theta2)
                let native = if r == 0 {
                    [d(0), d(1), d(2), d(3)]
                } else {
                    [d(2), d(3), d(0), d(1)]
                };
                let col = failure_cell(l, r);
                for k in 0..4 {
                    g[(k, col)] = native[k] * chain[k];
                }
            }
        }
        prev = cur;
    }

    let tl = design.last_inspection();
    let (s1, ds1) = survival_with_grad(tl, a1, t1);
    let (s2, ds2) = survival_with_grad(tl, a2, t2);
    let p0 = s1 * s2;
    if let Some(g) = grad.as_mut() {
        let native = [ds1[0] * s2, ds1[1] * s2, s1 * ds2[0], s1 * ds2[1]];
        for k in 0..4 {
            g[(k, 0)] = native[k] * chain[k];
        }
    }

    let probs = CellProbabilities { p0, p };
    if probs.flat().iter().any(|v| !v.is_finite()) {
        return Err(NosdError::Domain(format!(
            "non-finite cell probability at {params:?}, stress {s}"
        )));
    }
    Ok((probs, grad))
}

/// Closed-form cell probabilities of a group.
pub fn cell_probabilities(params: &ModelParams, design: &GroupDesign) -> Result<CellProbabilities> {
    evaluate(params, design, false).map(|(p, _)| p)
}

/// Gradient of every cell with respect to `(a1, b1, a2, b2)`; column `c`
/// corresponds to flat cell `c`.
pub fn cell_prob_gradient(params: &ModelParams, design: &GroupDesign) -> Result<Matrix4xX<f64>> {
    evaluate(params, design, true).map(|(_, g)| g.expect("gradient requested"))
}

/// Cell probabilities and their gradient in one pass.
pub fn cells_with_gradient(
    params: &ModelParams,
    design: &GroupDesign,
) -> Result<(CellProbabilities, Matrix4xX<f64>)> {
    evaluate(params, design, true).map(|(p, g)| (p, g.expect("gradient requested")))
}
