//! Smooth exact solution `phi_e = sin(8 pi x / Lx) cos(8 pi y / Ly) cos t`
//! and the source term that makes it solve the forced equation.

use std::f64::consts::PI;

use super::Forcing;
use crate::model::{nonlinear_force, ModelParams};
use crate::spectral::{apply_symbol, laplacian, FourierSymbol, Grid, RealField};

fn profile(grid: &Grid) -> RealField {
    let l = grid.lengths().to_vec();
    RealField::from_fn(grid, |x| {
        let mut v = (8.0 * PI * x[0] / l[0]).sin();
        if l.len() > 1 {
            v *= (8.0 * PI * x[1] / l[1]).cos();
        }
        v
    })
}

/// `(phi_e, psi_e)` at time `t`.
pub fn manufactured_exact(grid: &Grid, t: f64) -> (RealField, RealField) {
    let s = profile(grid);
    (s.scaled(t.cos()), s.scaled(-t.sin()))
}

/// `g = alpha psi_e,t + beta psi_e - M Delta[(Delta+1)^2 phi_e + f(phi_e) + f_vac(phi_e)]`,
/// evaluated with the discrete spectral operators.
pub fn manufactured_forcing(p: &ModelParams) -> Forcing {
    let p = *p;
    Forcing::new(move |grid, t| {
        let s = profile(grid);
        let phi = s.scaled(t.cos());
        let mu = apply_symbol(&phi, &FourierSymbol::shifted_bilaplacian()).lin_comb(
            1.0,
            &nonlinear_force(&phi, &p),
            1.0,
        );
        let rate = -p.alpha * t.cos() - p.beta * t.sin();
        s.lin_comb(rate, &laplacian(&mu), -p.mobility)
    })
}
