//! Executable calculator for the convergence-bound constants of the FedQS
//! convergence theorems: the momentum amplification factor R, the admissible
//! learning-rate interval, the contraction rate V, the heterogeneity floor
//! U, the gradient-variation floor W, and the resulting bound curves.
//!
//! The published learning-rate interval for the model-aggregation theorem
//! multiplies R by K while its V formula does not, so the two disagree;
//! validity here is always judged by directly checking V in (0, 1), and the
//! interval check is reported as a separate flag rather than silently
//! reconciled.

use crate::error::{Error, Result};

/// Which aggregation route's theorem to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundStrategy {
    /// Gradient aggregation.
    Sgd,
    /// Model aggregation.
    Avg,
}

/// Inputs to the bound formulas.
#[derive(Debug, Clone, Copy)]
pub struct BoundParams {
    /// Smoothness constant `L`.
    pub smoothness: f64,
    /// Heterogeneity bound `delta`.
    pub heterogeneity: f64,
    /// Gradient norm bound `G_c`.
    pub grad_bound: f64,
    /// Maximum local epochs `E`.
    pub local_epochs: u32,
    /// Maximum momentum rate `theta`.
    pub theta: f64,
    /// Aggregation batch size `K`.
    pub k: u32,
    /// Maximum learning rate `beta`.
    pub beta: f64,
    /// Upper aggregation-weight bound `p` (model-aggregation theorem).
    pub weight_upper: f64,
    /// Lower aggregation-weight bound `q`.
    pub weight_lower: f64,
    /// Maximum momentum-executing clients per round `Q(t)`.
    pub momentum_clients: u32,
    /// Initial squared distance to the optimum, `E[||w_g^0 - w*||^2]`.
    pub init_gap: f64,
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.smoothness > 0.0) {
            return Err(Error::InvalidArgument("smoothness must be positive".into()));
        }
        if !(self.heterogeneity >= 0.0) {
            return Err(Error::InvalidArgument("heterogeneity must be nonnegative".into()));
        }
        if !(self.grad_bound > 0.0) {
            return Err(Error::InvalidArgument("gradient bound must be positive".into()));
        }
        if self.local_epochs < 1 {
            return Err(Error::InvalidArgument("need at least one local epoch".into()));
        }
        if !(0.0..1.0).contains(&self.theta) {
            return Err(Error::InvalidArgument(format!(
                "theta must be in [0, 1), got {}",
                self.theta
            )));
        }
        if self.k < 1 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidArgument("beta must be positive".into()));
        }
        if !(0.0 <= self.weight_lower
            && self.weight_lower < self.weight_upper
            && self.weight_upper <= 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "weight bounds must satisfy 0 <= q < p <= 1, got q = {}, p = {}",
                self.weight_lower, self.weight_upper
            )));
        }
        if !(self.init_gap >= 0.0) {
            return Err(Error::InvalidArgument("initial gap must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Momentum amplification factor
/// `R = (E theta - E theta^2 - theta^2 + theta^(E+2)) / (1 - theta)^2`.
pub fn momentum_factor_r(theta: f64, local_epochs: u32) -> Result<f64> {
    if !(0.0..1.0).contains(&theta) {
        return Err(Error::InvalidArgument(format!(
            "theta must be in [0, 1), got {}",
            theta
        )));
    }
    if local_epochs < 1 {
        return Err(Error::InvalidArgument("need at least one local epoch".into()));
    }
    let e = local_epochs as f64;
    let numerator = e * theta - e * theta * theta - theta * theta + theta.powi(local_epochs as i32 + 2);
    Ok(numerator / ((1.0 - theta) * (1.0 - theta)))
}

/// Admissible learning-rate interval printed by the theorems, plus a flag
/// recording whether V at the interval midpoint actually lands in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaRange {
    /// `(lo, hi)`, or `None` when a denominator is nonpositive.
    pub interval: Option<(f64, f64)>,
    /// Whether the midpoint of the printed interval passes the direct
    /// `V in (0, 1)` check; `None` when the interval is empty.
    pub midpoint_v_valid: Option<bool>,
}

/// Evaluate the printed learning-rate interval for a theorem.
pub fn beta_range(k: u32, r: f64, local_epochs: u32, strategy: BoundStrategy) -> BetaRange {
    let kf = f64::from(k);
    let e2 = f64::from(local_epochs) * f64::from(local_epochs);
    let (lo_den, hi_den) = match strategy {
        BoundStrategy::Sgd => (r * kf - 1.0, 2.0 * r * kf - 3.0),
        BoundStrategy::Avg => (kf * r + e2 - 1.0, 2.0 * r * kf + 2.0 * e2 - 3.0),
    };
    if lo_den <= 0.0 || hi_den <= 0.0 {
        return BetaRange {
            interval: None,
            midpoint_v_valid: None,
        };
    }
    let lo = (1.0 / lo_den).sqrt();
    let hi = (3.0 / hi_den).sqrt();
    let mid = 0.5 * (lo + hi);
    let v_mid = contraction_rate(mid, kf, r, e2, strategy);
    BetaRange {
        interval: Some((lo, hi)),
        midpoint_v_valid: Some(v_mid > 0.0 && v_mid < 1.0),
    }
}

fn contraction_rate(beta: f64, k: f64, r: f64, e2: f64, strategy: BoundStrategy) -> f64 {
    let b2 = beta * beta;
    match strategy {
        BoundStrategy::Sgd => 3.0 - 2.0 * b2 * k * r / (b2 + 1.0),
        BoundStrategy::Avg => 3.0 - 2.0 * b2 * (r + e2) / (b2 + 1.0),
    }
}

/// The evaluated constants of one theorem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub r: f64,
    /// Contraction rate `V`.
    pub v: f64,
    /// Heterogeneity floor `U`.
    pub u: f64,
    /// Gradient-variation floor `W` (upper bound).
    pub w_bound: f64,
    /// Coefficient multiplying `V^t * init_gap` (L for the gradient route,
    /// `3 L p K^2 + L` for the model route).
    pub lead_coeff: f64,
    /// True when V lies in (0, 1): the bound contracts.
    pub v_in_unit: bool,
    /// True when the shared U/W denominator is nonzero.
    pub denominator_ok: bool,
}

/// Constants of the gradient-aggregation theorem.
pub fn constants_sgd(bp: &BoundParams) -> Result<BoundConstants> {
    bp.validate()?;
    let l = bp.smoothness;
    let b2 = bp.beta * bp.beta;
    let kf = f64::from(bp.k);
    let e = f64::from(bp.local_epochs);
    let e2 = e * e;
    let q_t = f64::from(bp.momentum_clients);
    let r = momentum_factor_r(bp.theta, bp.local_epochs)?;
    let v = contraction_rate(bp.beta, kf, r, e2, BoundStrategy::Sgd);
    let denom = 2.0 * b2 * r - 2.0 * b2 - 2.0;
    let u = (2.0 * l * b2 + 6.0 * b2 * (b2 * l + l) / denom)
        * e2
        * bp.heterogeneity
        * bp.heterogeneity;
    let w_bound = (4.0 * l * e2
        + 4.0 * l * r * q_t
        + (b2 * l + l) * (2.0 * r * q_t + 3.0 * e2) / denom)
        * b2
        * bp.grad_bound
        * bp.grad_bound;
    Ok(BoundConstants {
        r,
        v,
        u,
        w_bound,
        lead_coeff: l,
        v_in_unit: v > 0.0 && v < 1.0,
        denominator_ok: denom != 0.0,
    })
}

/// Constants of the model-aggregation theorem.
pub fn constants_avg(bp: &BoundParams) -> Result<BoundConstants> {
    bp.validate()?;
    let l = bp.smoothness;
    let b2 = bp.beta * bp.beta;
    let kf = f64::from(bp.k);
    let e = f64::from(bp.local_epochs);
    let e2 = e * e;
    let p = bp.weight_upper;
    let q_t = f64::from(bp.momentum_clients);
    let r = momentum_factor_r(bp.theta, bp.local_epochs)?;
    let v = contraction_rate(bp.beta, kf, r, e2, BoundStrategy::Avg);
    let denom = 2.0 * b2 * (r + e2) - 2.0 * b2 - 2.0;
    let u = (3.0 * p * p * kf * l + 8.0 * (3.0 * p * kf * kf + 1.0) * (b2 * l + l) / denom)
        * b2
        * e2
        * bp.heterogeneity
        * bp.heterogeneity;
    let w_bound = (p * p * kf * l * (2.0 * e2 + 3.0 * r * q_t)
        + (3.0 * p * p * kf + 1.0) * (b2 * l + l) * (e2 + r * q_t) / denom)
        * b2
        * bp.grad_bound
        * bp.grad_bound;
    Ok(BoundConstants {
        r,
        v,
        u,
        w_bound,
        lead_coeff: 3.0 * l * p * kf * kf + l,
        v_in_unit: v > 0.0 && v < 1.0,
        denominator_ok: denom != 0.0,
    })
}

pub fn constants(bp: &BoundParams, strategy: BoundStrategy) -> Result<BoundConstants> {
    match strategy {
        BoundStrategy::Sgd => constants_sgd(bp),
        BoundStrategy::Avg => constants_avg(bp),
    }
}

/// A bound curve `b(t) = lead * V^t * init_gap + U + W` for `t = 0..=t_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCurve {
    pub values: Vec<f64>,
    pub constants: BoundConstants,
    /// The asymptotic floor `U + W`.
    pub floor: f64,
}

/// Pure geometric-decay curve: `lead_gap * v^t + floor`.
pub fn geometric_curve(lead_gap: f64, v: f64, floor: f64, t_max: usize) -> Vec<f64> {
    let mut values = Vec::with_capacity(t_max + 1);
    let mut decay = 1.0;
    for _ in 0..=t_max {
        values.push(lead_gap * decay + floor);
        decay *= v;
    }
    values
}

/// Evaluate the bound curve of a theorem over rounds `0..=t_max`.
pub fn bound_curve(bp: &BoundParams, t_max: usize, strategy: BoundStrategy) -> Result<BoundCurve> {
    let constants = constants(bp, strategy)?;
    let floor = constants.u + constants.w_bound;
    let values = geometric_curve(constants.lead_coeff * bp.init_gap, constants.v, floor, t_max);
    Ok(BoundCurve {
        values,
        constants,
        floor,
    })
}
