//! Temperature dependence of steel and concrete stiffness.

use crate::error::{Error, Result};

/// Reference temperature of the material laws, °C.
pub const REFERENCE_TEMPERATURE: f64 = 20.0;

/// Steel elastic modulus in GPa at `tau` °C.
///
/// The cubic fit is meant for roughly −40 to 100 °C; outside that band a
/// warning is logged and the polynomial is still evaluated.
pub fn es_of_temp(tau: f64) -> f64 {
    if !(-40.0..=100.0).contains(&tau) {
        log::warn!("steel modulus evaluated at {tau} °C, outside its validity band [-40, 100]");
    }
    206.0 - 0.04326 * tau - 3.502e-5 * tau * tau - 6.592e-8 * tau * tau * tau
}

/// Concrete compressive strength at `tau` °C given `fc` at 20 °C.
pub fn fc_of_temp(fc: f64, tau: f64) -> Result<f64> {
    if !(tau < 100.0) {
        return Err(Error::OutOfValidity {
            quantity: "temperature",
            value: tau,
            range: "below 100 °C",
        });
    }
    Ok(fc * (1.0 - 0.003125 * (tau - REFERENCE_TEMPERATURE)))
}

/// Multiplier on story stiffness: `sqrt(fc(tau) / fc)`, since the concrete
/// modulus scales with the square root of its strength.
pub fn stiffness_scale(fc: f64, tau: f64) -> Result<f64> {
    Ok((fc_of_temp(fc, tau)? / fc).sqrt())
}
