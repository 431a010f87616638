//! Physics of the vacancy modified phase field crystal model.
//!
//! Free energy
//! `E(phi) = int 1/2 |(Delta + 1) phi|^2 + F(phi) + F_vac(phi)`, with the
//! double well `F = phi^4/4 - eps phi^2/2` and the vacancy penalty
//! `F_vac = h_vac/3 (|phi|^3 - phi^3)`. The pseudo energy adds the kinetic
//! part `alpha/(2M) ||psi||_{-1}^2` with `psi = phi_t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{hm1_norm, to_spectral, RealField, SpectralField};

/// Largest exponent that `exp` can take without overflowing an `f64`.
pub const EXP_LIMIT: f64 = 709.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub beta: f64,
    pub mobility: f64,
    pub epsilon: f64,
    pub h_vac: f64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.alpha) || !ok(self.beta) || !ok(self.h_vac) {
            return Err(Error::Config(format!(
                "alpha, beta and h_vac must be finite and >= 0 (got {}, {}, {})",
                self.alpha, self.beta, self.h_vac
            )));
        }
        if !(self.mobility.is_finite() && self.mobility > 0.0) {
            return Err(Error::Config(format!(
                "mobility must be > 0 (got {})",
                self.mobility
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1] (got {})",
                self.epsilon
            )));
        }
        if self.epsilon >= 1.0 {
            log::warn!("epsilon = 1 sits on the boundary of the double-well range");
        }
        Ok(())
    }
}

/// Constants of the time integrators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeParams {
    /// Stabilization `S`.
    pub stab_s: f64,
    /// Shift `b` under the SAV square root.
    pub sav_b: f64,
    /// Energy shift `c0` of the GPAV variable.
    pub gpav_c0: f64,
    /// Damping constant `C` of the exponential variable.
    pub esav_c: f64,
    pub dt: f64,
}

impl SchemeParams {
    pub const DEFAULT_SAV_B: f64 = 1e4;
    pub const DEFAULT_GPAV_C0: f64 = 1e3;
    pub const DEFAULT_ESAV_C: f64 = 1e8;

    /// Default shifts with the given step and stabilization.
    pub fn new(dt: f64, stab_s: f64) -> Self {
        SchemeParams {
            stab_s,
            sav_b: Self::DEFAULT_SAV_B,
            gpav_c0: Self::DEFAULT_GPAV_C0,
            esav_c: Self::DEFAULT_ESAV_C,
            dt,
        }
    }

    pub fn with_dt(self, dt: f64) -> Self {
        SchemeParams { dt, ..self }
    }

    pub fn with_stab(self, stab_s: f64) -> Self {
        SchemeParams { stab_s, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stab_s.is_finite() && self.stab_s >= 0.0) {
            return Err(Error::Config(format!(
                "S must be >= 0 (got {})",
                self.stab_s
            )));
        }
        if !(self.sav_b.is_finite() && self.sav_b > 0.0) {
            return Err(Error::Config(format!("b must be > 0 (got {})", self.sav_b)));
        }
        if !self.gpav_c0.is_finite() {
            return Err(Error::Config("c0 must be finite".into()));
        }
        if !(self.esav_c.is_finite() && self.esav_c > 0.0) {
            return Err(Error::Config(format!(
                "C must be > 0 (got {})",
                self.esav_c
            )));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be > 0 (got {})", self.dt)));
        }
        Ok(())
    }
}

#[inline]
pub fn double_well_f_at(v: f64, p: &ModelParams) -> f64 {
    v * v * v - p.epsilon * v
}

#[inline]
pub fn double_well_potential_at(v: f64, p: &ModelParams) -> f64 {
    let v2 = v * v;
    0.25 * v2 * v2 - 0.5 * p.epsilon * v2
}

#[inline]
pub fn vacancy_f_at(v: f64, p: &ModelParams) -> f64 {
    p.h_vac * (v.abs() - v) * v
}

#[inline]
pub fn vacancy_potential_at(v: f64, p: &ModelParams) -> f64 {
    p.h_vac / 3.0 * (v.abs() - v) * v * v
}

pub fn double_well_f(phi: &RealField, p: &ModelParams) -> RealField {
    phi.map(|v| double_well_f_at(v, p))
}

pub fn double_well_potential(phi: &RealField, p: &ModelParams) -> RealField {
    phi.map(|v| double_well_potential_at(v, p))
}

pub fn vacancy_f(phi: &RealField, p: &ModelParams) -> RealField {
    phi.map(|v| vacancy_f_at(v, p))
}

pub fn vacancy_potential(phi: &RealField, p: &ModelParams) -> RealField {
    phi.map(|v| vacancy_potential_at(v, p))
}

/// `f(phi) + f_vac(phi)` pointwise.
pub fn nonlinear_force(phi: &RealField, p: &ModelParams) -> RealField {
    phi.map(|v| double_well_f_at(v, p) + vacancy_f_at(v, p))
}

/// `int F(phi) + F_vac(phi) dx` by the cell-volume-weighted sum.
pub fn nonlinear_integral(phi: &RealField, p: &ModelParams) -> f64 {
    let s: f64 = phi
        .values()
        .iter()
        .map(|&v| double_well_potential_at(v, p) + vacancy_potential_at(v, p))
        .sum();
    s * phi.grid().cell_volume()
}

/// `1/2 ||(Delta + 1) phi||^2` from coefficients.
pub(crate) fn quadratic_energy_hat(phi_hat: &SpectralField) -> f64 {
    0.5 * phi_hat.weighted_norm_sq(|k2| 1.0 - k2)
}

/// Free energy in the factored form `1/2 ||(Delta+1) phi||^2 + int F + F_vac`.
pub fn original_energy(phi: &RealField, p: &ModelParams) -> f64 {
    quadratic_energy_hat(&to_spectral(phi)) + nonlinear_integral(phi, p)
}

/// Free energy in the expanded form
/// `1/2 ||Delta phi||^2 - ||grad phi||^2 + 1/2 ||phi||^2 + int F + F_vac`.
pub fn original_energy_expanded(phi: &RealField, p: &ModelParams) -> f64 {
    let hat = to_spectral(phi);
    let lap = hat.weighted_norm_sq(|k2| k2);
    let grad = hat.weighted_norm_sq(|k2| k2.sqrt());
    let mass = hat.weighted_norm_sq(|_| 1.0);
    0.5 * lap - grad + 0.5 * mass + nonlinear_integral(phi, p)
}

/// `E(phi) + alpha/(2M) ||psi||_{-1}^2`.
pub fn pseudo_energy(phi: &RealField, psi: &RealField, p: &ModelParams) -> Result<f64> {
    let h = hm1_norm(psi)?;
    Ok(original_energy(phi, p) + p.alpha / (2.0 * p.mobility) * h * h)
}

/// Shifted energy `E1 = pseudo + c0 |Omega|`; must be positive.
pub fn gpav_e1(
    phi: &RealField,
    psi: &RealField,
    p: &ModelParams,
    sp: &SchemeParams,
) -> Result<f64> {
    let e = pseudo_energy(phi, psi, p)?;
    checked_e1(e + sp.gpav_c0 * phi.grid().volume())
}

pub(crate) fn checked_e1(e1: f64) -> Result<f64> {
    if e1 > 0.0 && e1.is_finite() {
        Ok(e1)
    } else {
        Err(Error::ShiftTooSmall {
            quantity: "shifted energy E1",
            value: e1,
            remedy: "the energy shift c0",
        })
    }
}

pub(crate) fn checked_radicand(r: f64) -> Result<f64> {
    if r > 0.0 && r.is_finite() {
        Ok(r)
    } else {
        Err(Error::ShiftTooSmall {
            quantity: "SAV radicand int(F + F_vac) + b",
            value: r,
            remedy: "the radicand shift b",
        })
    }
}

/// `u0 = sqrt(int F(phi0) + F_vac(phi0) + b)`.
pub fn sav_u_init(phi0: &RealField, p: &ModelParams, sp: &SchemeParams) -> Result<f64> {
    Ok(checked_radicand(nonlinear_integral(phi0, p) + sp.sav_b)?.sqrt())
}

/// `H(phi) = (f + f_vac) / sqrt(int F + F_vac + b)`.
pub fn sav_h(phi: &RealField, p: &ModelParams, sp: &SchemeParams) -> Result<RealField> {
    let root = sav_u_init(phi, p, sp)?;
    Ok(nonlinear_force(phi, p).scaled(1.0 / root))
}

/// `R0 = sqrt(E1[phi0, psi0])`.
pub fn gpav_r_init(
    phi0: &RealField,
    psi0: &RealField,
    p: &ModelParams,
    sp: &SchemeParams,
) -> Result<f64> {
    Ok(gpav_e1(phi0, psi0, p, sp)?.sqrt())
}

pub(crate) fn checked_exponent(x: f64) -> Result<f64> {
    if x.is_finite() && x <= EXP_LIMIT {
        Ok(x)
    } else {
        Err(Error::Scaling(format!(
            "pseudo energy / C = {x:e} exceeds the representable exponent {EXP_LIMIT}"
        )))
    }
}

/// `B0 = exp(pseudo(phi0, psi0) / C)`.
pub fn esav_b_init(
    phi0: &RealField,
    psi0: &RealField,
    p: &ModelParams,
    sp: &SchemeParams,
) -> Result<f64> {
    let e = pseudo_energy(phi0, psi0, p)?;
    Ok(checked_exponent(e / sp.esav_c)?.exp())
}
