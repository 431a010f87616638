//! Stabilized GPAV and ESAV steps. The nonlinearity is explicit and scaled by
//! `xi`, so one solve gives `phi^{n+1}`; the scalar variable then follows in
//! closed form.

use super::sav::add_neg_laplacian_term;
use super::{
    e1_of, energies, forcing_hat, half_weights, new_psi, predictor, pseudo_of, stab_reference, Aux,
    Forcing, Level, LinearPart, SchemeState, StepOrder, StepReport,
};
use crate::error::{Error, Result};
use crate::model::{checked_exponent, nonlinear_force, ModelParams, SchemeParams};
use crate::spectral::{to_spectral, SpectralField};

/// `xi` and the explicit level it multiplies.
pub(crate) fn xi_of(
    state: &SchemeState,
    order: StepOrder,
    p: &ModelParams,
    sp: &SchemeParams,
) -> Result<(f64, Level)> {
    let dt = sp.dt;
    let (phi_dag, psi_dag) = predictor(state, order, dt);
    let xi = match (state.aux, order) {
        (Aux::Gpav { r, .. }, StepOrder::First) => r / e1_of(&phi_dag, &psi_dag, p, sp)?.sqrt(),
        (Aux::Gpav { r, r_prev }, StepOrder::Second) => {
            let (a, b) = half_weights(dt, state.dt_prev);
            (a * r + b * r_prev) / e1_of(&phi_dag, &psi_dag, p, sp)?.sqrt()
        }
        (Aux::Esav { log_b, .. }, StepOrder::First) => {
            let e = pseudo_of(&phi_dag, &psi_dag, p) / sp.esav_c;
            checked_exponent(log_b - e)?.exp()
        }
        (Aux::Esav { log_b, log_b_prev }, StepOrder::Second) => {
            let (a, b) = half_weights(dt, state.dt_prev);
            let e = pseudo_of(&phi_dag, &psi_dag, p) / sp.esav_c;
            let ratio = (log_b_prev - log_b).exp();
            checked_exponent(log_b - e)?.exp() * (a + b * ratio)
        }
        (Aux::Sav { .. }, _) => unreachable!("dispatch guarantees a GPAV/ESAV state"),
    };
    if !xi.is_finite() {
        return Err(Error::NonFinite("xi"));
    }
    Ok((xi, phi_dag))
}

pub(super) fn step(
    state: &SchemeState,
    order: StepOrder,
    p: &ModelParams,
    sp: &SchemeParams,
    forcing: Option<&Forcing>,
) -> Result<StepReport> {
    let dt = sp.dt;
    let lin = LinearPart::new(order, p, sp);
    let (xi, phi_dag) = xi_of(state, order, p, sp)?;
    let force = to_spectral(&nonlinear_force(&phi_dag.phys, p));

    let phi_s = stab_reference(state, order);
    let mut rhs = lin.rhs(&state.phi.hat, &state.psi.hat, &phi_s);
    add_neg_laplacian_term(&mut rhs, &force, xi);
    let g_hat = forcing_hat(state, order, dt, forcing);
    if let Some(f) = &g_hat {
        let inv_m = 1.0 / p.mobility;
        for (r, c) in rhs.coeffs_mut().iter_mut().zip(f.coeffs()) {
            *r += c * inv_m;
        }
    }
    let mut phi_hat = lin.solve(&rhs);
    lin.set_zero_mode(
        &mut phi_hat,
        &state.phi.hat,
        &state.psi.hat,
        g_hat.as_ref(),
        p.mobility,
    );
    let phi_new = Level::from_hat(phi_hat);
    let psi_new = new_psi(state, &phi_new, order, dt);
    let psi_mid = match order {
        StepOrder::First => psi_new.clone(),
        StepOrder::Second => psi_new.lin_comb(0.5, &state.psi, 0.5),
    };
    let dissipation = psi_mid.hat.hm1_norm_sq();
    let work = g_hat.map_or(0.0, |g| forcing_work(&g, &psi_mid, p));

    let aux = match state.aux {
        Aux::Gpav { r, .. } => {
            let e_full = e1_of(&phi_new, &psi_new, p, sp)?;
            // E1 at the level where the dissipation is sampled.
            let e_src = match order {
                StepOrder::First => e_full,
                StepOrder::Second => {
                    let phi_mid = phi_new.lin_comb(0.5, &state.phi, 0.5);
                    e1_of(&phi_mid, &psi_mid, p, sp)?
                }
            };
            let factor =
                1.0 + p.beta * dt / (2.0 * p.mobility * (e_src * e_full).sqrt()) * dissipation;
            let r_new = (r + dt * work / (2.0 * e_src.sqrt())) / factor;
            if !(r_new > 0.0) {
                return Err(Error::NonFinite("forced GPAV variable left (0, inf)"));
            }
            Aux::Gpav {
                r: r_new,
                r_prev: r,
            }
        }
        Aux::Esav { log_b, .. } => {
            let rate = (p.beta / p.mobility * dissipation - work) * dt / sp.esav_c;
            if !(rate > -1.0) {
                return Err(Error::Scaling(format!(
                    "forcing work drives the ESAV update factor to {}",
                    1.0 + rate
                )));
            }
            let decay = rate.ln_1p();
            Aux::Esav {
                log_b: log_b - decay,
                log_b_prev: log_b,
            }
        }
        Aux::Sav { .. } => unreachable!("dispatch guarantees a GPAV/ESAV state"),
    };

    let next = SchemeState {
        phi_prev: state.phi.clone(),
        psi_prev: state.psi.clone(),
        phi: phi_new,
        psi: psi_new,
        aux,
        t: state.t + dt,
        step_index: state.step_index + 1,
        current_s: sp.stab_s,
        dt_prev: dt,
    };
    let energies = energies(&next, p, sp);
    Ok(StepReport {
        state: next,
        energies,
        xi,
        residual: None,
        dt_used: dt,
        order,
    })
}

/// Power `(1/M) (g, psi)_{-1}` injected by the source term; the auxiliary
/// variables track it so that `xi` stays consistent under forcing.
pub(crate) fn forcing_work(g: &SpectralField, psi: &Level, p: &ModelParams) -> f64 {
    g.hm1_inner(&psi.hat) / p.mobility
}
