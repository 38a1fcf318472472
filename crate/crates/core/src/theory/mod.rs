//! Structural model of the two-stage drafting game.
//!
//! With first-stage effort fixed at `effort_e`, an athlete at drafting
//! position `d` has disutility
//!
//! ```text
//! DIS(d) = alpha * cost_c * effort_e + (1 - alpha) * (mu - B(d))
//! B(d)   = 0                                   for d <= 3
//!        = gamma * (1 - exp(-lambda * (d - 3))) for d > 3
//! ```

pub mod dgp;
pub mod montecarlo;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dgp::{simulate_panel, DgpConfig, SimulatedPanel, Treatment, Truth};

/// Positions up to this depth receive no drafting benefit.
pub const FLAT_DEPTH: f64 = 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("invalid game parameter: {0}")]
    InvalidParams(String),
    #[error("drafting position must be >= 1, got {0}")]
    PositionBelowOne(f64),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("instrument undefined: every simulated group has a single member")]
    NoMultiMemberGroups,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct GameParams {
    gamma: f64,
    lambda: f64,
    alpha: f64,
    cost_c: f64,
    mu: f64,
    effort_e: f64,
}

#[derive(Deserialize)]
struct RawParams {
    gamma: f64,
    lambda: f64,
    alpha: f64,
    cost_c: f64,
    mu: f64,
    effort_e: f64,
}

impl TryFrom<RawParams> for GameParams {
    type Error = TheoryError;

    fn try_from(r: RawParams) -> Result<Self, Self::Error> {
        GameParams::new(r.gamma, r.lambda, r.alpha, r.cost_c, r.mu, r.effort_e)
    }
}

impl Default for GameParams {
    fn default() -> Self {
        GameParams {
            gamma: 1.0,
            lambda: 0.5,
            alpha: 0.5,
            cost_c: 1.0,
            mu: 1.0,
            effort_e: 1.0,
        }
    }
}

impl GameParams {
    pub fn new(
        gamma: f64,
        lambda: f64,
        alpha: f64,
        cost_c: f64,
        mu: f64,
        effort_e: f64,
    ) -> Result<Self, TheoryError> {
        let bad = |what: &str| Err(TheoryError::InvalidParams(what.to_string()));
        if !(gamma > 0.0 && gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if !(0.0..=1.0).contains(&alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(cost_c > 0.0 && cost_c.is_finite()) {
            return bad("cost_c must be positive");
        }
        if !mu.is_finite() {
            return bad("mu must be finite");
        }
        if !(effort_e >= 0.0 && effort_e.is_finite()) {
            return bad("effort_e must be non-negative");
        }
        Ok(GameParams {
            gamma,
            lambda,
            alpha,
            cost_c,
            mu,
            effort_e,
        })
    }

    /// Benefit curve only; the remaining parameters take their defaults.
    pub fn benefit_curve(gamma: f64, lambda: f64) -> Result<Self, TheoryError> {
        let d = GameParams::default();
        GameParams::new(gamma, lambda, d.alpha, d.cost_c, d.mu, d.effort_e)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn cost_c(&self) -> f64 {
        self.cost_c
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn effort_e(&self) -> f64 {
        self.effort_e
    }

    fn check(d: f64) -> Result<(), TheoryError> {
        if d >= 1.0 {
            Ok(())
        } else {
            Err(TheoryError::PositionBelowOne(d))
        }
    }

    /// Drafting benefit `B(d)`.
    pub fn benefit(&self, d: f64) -> Result<f64, TheoryError> {
        Self::check(d)?;
        Ok(benefit_transform(d, self.gamma, self.lambda))
    }

    /// `dB/dd`, zero on the flat region `d <= 3`.
    pub fn benefit_derivative(&self, d: f64) -> Result<f64, TheoryError> {
        Self::check(d)?;
        if d <= FLAT_DEPTH {
            return Ok(0.0);
        }
        Ok(self.gamma * self.lambda * (-self.lambda * (d - FLAT_DEPTH)).exp())
    }

    pub fn disutility(&self, d: f64) -> Result<f64, TheoryError> {
        let b = self.benefit(d)?;
        Ok(self.alpha * self.cost_c * self.effort_e + (1.0 - self.alpha) * (self.mu - b))
    }

    /// Limit of the disutility as `d` grows without bound.
    pub fn disutility_limit(&self) -> f64 {
        self.alpha * self.cost_c * self.effort_e + (1.0 - self.alpha) * (self.mu - self.gamma)
    }

    /// Discrete argmin of the disutility over `1..=d_max`, ties to the
    /// smaller position.
    ///
    /// The scan compares the log of the position-dependent part of the
    /// disutility, `ln((1 - alpha) * gamma) - lambda * max(d - 3, 0)`, which
    /// orders positions exactly like `DIS` but does not saturate when
    /// `exp(-lambda * (d - 3))` falls below the f64 resolution of `DIS`.
    pub fn optimal_position(&self, d_max: u32) -> u32 {
        if self.alpha >= 1.0 {
            return 1;
        }
        let key = |d: u32| -self.lambda * (f64::from(d) - FLAT_DEPTH).max(0.0);
        let mut best = 1;
        let mut best_key = key(1);
        for d in 2..=d_max.max(1) {
            let k = key(d);
            if k < best_key {
                best = d;
                best_key = k;
            }
        }
        best
    }
}

/// `B(d)` for any `d`, without the position check. Used for the structural
/// regressor built from observed positions.
pub fn benefit_transform(d: f64, gamma: f64, lambda: f64) -> f64 {
    if d <= FLAT_DEPTH {
        0.0
    } else {
        -gamma * (-lambda * (d - FLAT_DEPTH)).exp_m1()
    }
}
