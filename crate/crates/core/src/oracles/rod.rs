//! Closed-form temperature of a semi-infinite rod `x ≥ 0` heated through
//! its end `x = 0`, starting from a uniform temperature.

use std::f64::consts::PI;

use super::erfc::{erfc, erfcx};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RodParams {
    /// Initial uniform temperature.
    pub initial: f64,
    pub kappa: f64,
    pub alpha: f64,
}

impl RodParams {
    pub fn unit() -> Self {
        RodParams {
            initial: 0.0,
            kappa: 1.0,
            alpha: 1.0,
        }
    }
}

/// Constant inward flux `−κ ∂T/∂x(0, t) = q_s`.
pub fn rod_temperature_constant_flux(x: f64, t: f64, q_s: f64, p: &RodParams) -> f64 {
    if t <= 0.0 {
        return p.initial;
    }
    let s = (p.alpha * t).sqrt();
    let eta = x / (2.0 * s);
    p.initial + q_s / p.kappa * (2.0 * s / PI.sqrt() * (-eta * eta).exp() - x * erfc(eta))
}

/// Convective end `−κ ∂T/∂x(0, t) = γ (T_a − T(0, t))`.
pub fn rod_temperature_convective(x: f64, t: f64, ambient: f64, gamma: f64, p: &RodParams) -> f64 {
    if t <= 0.0 {
        return p.initial;
    }
    let s = (p.alpha * t).sqrt();
    let eta = x / (2.0 * s);
    let b = eta + gamma * s / p.kappa;
    let a = gamma * x / p.kappa + gamma * gamma * p.alpha * t / (p.kappa * p.kappa);
    // exp(a) erfc(b) = exp(a − b²) erfcx(b) = exp(−η²) erfcx(b)
    let tail = if b >= 0.0 {
        (-eta * eta).exp() * erfcx(b)
    } else {
        a.exp() * erfc(b)
    };
    p.initial + (ambient - p.initial) * (erfc(eta) - tail)
}
