//! Stabilized SAV step: two solves with the same symbol and a rank-one
//! correction for the implicit scalar `(H, phi^{n+1})`.

use super::{
    energies, forcing_hat, new_psi, predictor, stab_reference, Aux, Forcing, Level, LinearPart,
    SchemeState, StepOrder, StepReport,
};
use crate::error::{Error, Result};
use crate::model::{
    checked_radicand, nonlinear_force, nonlinear_integral, ModelParams, SchemeParams,
};
use crate::spectral::{RealField, SpectralField};

/// `H(phi) = (f + f_vac) / sqrt(int F + F_vac + b)` in both representations.
pub(crate) fn h_of(phi: &RealField, p: &ModelParams, sp: &SchemeParams) -> Result<Level> {
    let root = checked_radicand(nonlinear_integral(phi, p) + sp.sav_b)?.sqrt();
    Ok(Level::new(nonlinear_force(phi, p).scaled(1.0 / root)))
}

/// Weight of `(H, phi^{n+1})` inside the implicit `u` average:
/// `u^{n+1/2} = u^n + 1/4 (H, phi^{n+1} - phi^n)` (CN) and
/// `u^1 = u^0 + 1/2 (H, phi^1 - phi^0)` (BE).
pub(crate) fn gamma(order: StepOrder) -> f64 {
    match order {
        StepOrder::First => 0.5,
        StepOrder::Second => 0.25,
    }
}

pub(super) fn step(
    state: &SchemeState,
    order: StepOrder,
    p: &ModelParams,
    sp: &SchemeParams,
    forcing: Option<&Forcing>,
) -> Result<StepReport> {
    let u_n = match state.aux {
        Aux::Sav { u } => u,
        _ => unreachable!("dispatch guarantees a SAV state"),
    };
    let dt = sp.dt;
    let lin = LinearPart::new(order, p, sp);
    let g = gamma(order);

    let (phi_dag, _) = predictor(state, order, dt);
    let h = h_of(&phi_dag.phys, p, sp)?;
    let h_dot_phi_n = h.hat.inner(&state.phi.hat);

    let phi_s = stab_reference(state, order);
    let mut rhs = lin.rhs(&state.phi.hat, &state.psi.hat, &phi_s);
    let coef = u_n - g * h_dot_phi_n;
    add_neg_laplacian_term(&mut rhs, &h.hat, coef);
    let g_hat = forcing_hat(state, order, dt, forcing);
    if let Some(f) = &g_hat {
        let inv_m = 1.0 / p.mobility;
        for (r, c) in rhs.coeffs_mut().iter_mut().zip(f.coeffs()) {
            *r += c * inv_m;
        }
    }

    let mut psi1 = lin.solve(&rhs);
    lin.set_zero_mode(
        &mut psi1,
        &state.phi.hat,
        &state.psi.hat,
        g_hat.as_ref(),
        p.mobility,
    );
    let psi2 = h.hat.mul_fn(|k2| -k2 / lin.symbol(k2));
    let denom = 1.0 - g * psi2.inner(&h.hat);
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::Solvability(denom));
    }
    let x = psi1.inner(&h.hat) / denom;
    let phi_hat = psi1.lin_comb(1.0, &psi2, g * x);

    let phi_new = Level::from_hat(phi_hat);
    let u_new = u_n + 0.5 * (x - h_dot_phi_n);
    let psi_new = new_psi(state, &phi_new, order, dt);

    let next = SchemeState {
        phi_prev: state.phi.clone(),
        psi_prev: state.psi.clone(),
        phi: phi_new,
        psi: psi_new,
        aux: Aux::Sav { u: u_new },
        t: state.t + dt,
        step_index: state.step_index + 1,
        current_s: sp.stab_s,
        dt_prev: dt,
    };
    let energies = energies(&next, p, sp);
    Ok(StepReport {
        state: next,
        energies,
        xi: 1.0,
        residual: None,
        dt_used: dt,
        order,
    })
}

/// `rhs += c * (-kappa) * h` (the spectral form of `c * Delta h`).
pub(crate) fn add_neg_laplacian_term(rhs: &mut SpectralField, h: &SpectralField, c: f64) {
    let grid = h.grid().clone();
    for ((r, v), &k2) in rhs.coeffs_mut().iter_mut().zip(h.coeffs()).zip(grid.k2()) {
        *r += v * (-k2 * c);
    }
}
