//! Viscous Burgers solutions `u_t + u u_x = ν u_xx` on the real line via the
//! Cole–Hopf integral representation.

use super::quadrature::integrate_pair;
use crate::error::{Error, Result};

/// Decay (in e-folds) below the peak at which the Gaussian kernel is cut off.
const WINDOW_EFOLDS: f64 = 60.0;
const SCAN_POINTS: usize = 400;
const MAX_DEPTH: usize = 40;

/// Initial data `u0` with antiderivative `potential` (any constant offset)
/// whose global minimum is at least `potential_min`.
pub struct ColeHopf<F, G> {
    pub u0: F,
    pub potential: G,
    pub potential_min: f64,
    pub viscosity: f64,
    pub tol: f64,
}

impl<F: Fn(f64) -> f64, G: Fn(f64) -> f64> ColeHopf<F, G> {
    /// `u(x, t)` for `t > 0`; `u0(x)` at `t == 0`.
    pub fn eval(&self, x: f64, t: f64) -> Result<f64> {
        if t < 0.0 || !(self.viscosity > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cole-hopf needs t >= 0 and viscosity > 0 (t={t}, nu={})",
                self.viscosity
            )));
        }
        if t == 0.0 {
            return Ok((self.u0)(x));
        }
        let nu = self.viscosity;
        let exponent = |eta: f64| -(self.potential)(x - eta) / (2.0 * nu) - eta * eta / (4.0 * nu * t);
        let excess = ((self.potential)(x) - self.potential_min).max(0.0) / (2.0 * nu);
        let half = (4.0 * nu * t * (WINDOW_EFOLDS + excess)).sqrt();

        let mut shift = f64::NEG_INFINITY;
        let mut mass = 0.0;
        for i in 0..=SCAN_POINTS {
            let eta = -half + 2.0 * half * i as f64 / SCAN_POINTS as f64;
            shift = shift.max(exponent(eta));
        }
        for i in 0..=SCAN_POINTS {
            let eta = -half + 2.0 * half * i as f64 / SCAN_POINTS as f64;
            mass += (exponent(eta) - shift).exp();
        }
        mass *= 2.0 * half / SCAN_POINTS as f64;

        let abs_tol = self.tol * 1e-2 * mass;
        let sums = integrate_pair(
            |eta| {
                let k = (exponent(eta) - shift).exp();
                [(self.u0)(x - eta) * k, k]
            },
            -half,
            half,
            64,
            abs_tol,
            MAX_DEPTH,
        )
        .ok_or(Error::QuadratureNonConvergent { x, t, tol: self.tol })?;
        let u = sums[0] / sums[1];
        if !u.is_finite() {
            return Err(Error::QuadratureNonConvergent { x, t, tol: self.tol });
        }
        Ok(u)
    }
}

/// `u0(x) = -a sin(k π x)` with its antiderivative and potential minimum.
pub fn sine_initial(
    amplitude: f64,
    wavenumber: f64,
    viscosity: f64,
    tol: f64,
) -> ColeHopf<impl Fn(f64) -> f64, impl Fn(f64) -> f64> {
    let k = wavenumber * std::f64::consts::PI;
    ColeHopf {
        u0: move |x: f64| -amplitude * (k * x).sin(),
        potential: move |x: f64| amplitude * ((k * x).cos() - 1.0) / k,
        potential_min: -2.0 * amplitude.abs() / k,
        viscosity,
        tol,
    }
}
