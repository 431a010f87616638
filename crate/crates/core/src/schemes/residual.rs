//! Residual of the defining scheme equations, evaluated in physical space
//! without reusing the Fourier-space solution procedure.

use super::positive::forcing_work;
use super::sav::h_of;
use super::{
    e1_of, half_weights, positive::xi_of, Aux, Forcing, Level, SchemeState, StepOrder, StepReport,
};
use crate::error::{Error, Result};
use crate::model::{nonlinear_force, ModelParams, SchemeParams};
use crate::spectral::{apply_symbol, laplacian, to_spectral, FourierSymbol, RealField};

fn rel(residual: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        residual / scale
    } else {
        residual
    }
}

/// Largest relative residual of the momentum, velocity and scalar equations
/// satisfied by the step `prev -> report.state` of size `sp.dt`.
pub fn step_residual(
    prev: &SchemeState,
    report: &StepReport,
    p: &ModelParams,
    sp: &SchemeParams,
    forcing: Option<&Forcing>,
) -> Result<f64> {
    let next = &report.state;
    if next.kind() != prev.kind() {
        return Err(Error::Contract("states of different schemes".into()));
    }
    let order = report.order;
    let dt = sp.dt;
    let grid = prev.grid().clone();
    let (phi0, phi1) = (&prev.phi.phys, &next.phi.phys);
    let (psi0, psi1) = (&prev.psi.phys, &next.psi.phys);

    // Time placement of each term.
    let (phi_lin, psi_mid, phi_dag, phi_stab, t_force) = match order {
        StepOrder::First => (
            phi1.clone(),
            psi1.clone(),
            phi0.clone(),
            phi0.clone(),
            prev.t + dt,
        ),
        StepOrder::Second => {
            let (ha, hb) = half_weights(dt, prev.dt_prev);
            (
                phi1.lin_comb(0.5, phi0, 0.5),
                psi1.lin_comb(0.5, psi0, 0.5),
                phi0.lin_comb(ha, &prev.phi_prev.phys, hb),
                phi0.lin_comb(2.0, &prev.phi_prev.phys, -1.0),
                prev.t + 0.5 * dt,
            )
        }
    };

    let term_g = match forcing {
        Some(f) => f.eval(&grid, t_force),
        None => RealField::zeros(&grid),
    };
    let psi_mid_level = Level::new(psi_mid.clone());
    let work = forcing_work(&to_spectral(&term_g), &psi_mid_level, p);
    let diss = psi_mid_level.hat.hm1_norm_sq();

    // Nonlinear part of the chemical potential and the scalar-equation residual.
    let (nonlinear, aux_res) = match (prev.aux, next.aux) {
        (Aux::Sav { u: u0 }, Aux::Sav { u: u1 }) => {
            let h = h_of(&phi_dag, p, sp)?;
            let u_impl = match order {
                StepOrder::First => u1,
                StepOrder::Second => 0.5 * (u0 + u1),
            };
            let jump = phi1.lin_comb(1.0, phi0, -1.0);
            let incr = 0.5 * h.phys.zip_map(&jump, |a, b| a * b).integral();
            let res = (u1 - u0 - incr).abs();
            (h.phys.scaled(u_impl), rel(res, u0.abs().max(incr.abs())))
        }
        (Aux::Gpav { r: r0, .. }, Aux::Gpav { r: r1, .. }) => {
            let (xi, _) = xi_of(prev, order, p, sp)?;
            let next_phi = Level::new(phi1.clone());
            let e_full = e1_of(&next_phi, &next.psi, p, sp)?;
            let e_src = match order {
                StepOrder::First => e_full,
                StepOrder::Second => e1_of(&Level::new(phi_lin.clone()), &psi_mid_level, p, sp)?,
            };
            let lhs = (r1 - r0) / dt;
            let rhs = -p.beta * r1 / (2.0 * p.mobility * (e_src * e_full).sqrt()) * diss
                + work / (2.0 * e_src.sqrt());
            let res = (lhs - rhs).abs();
            (
                nonlinear_force(&phi_dag, p).scaled(xi),
                rel(res, lhs.abs().max(rhs.abs()).max(r0.abs() / dt)),
            )
        }
        (Aux::Esav { log_b: l0, .. }, Aux::Esav { log_b: l1, .. }) => {
            let (xi, _) = xi_of(prev, order, p, sp)?;
            // (B1 - B0)/dt = B1 (W - beta/M ||psi||^2) / C, divided by B0.
            let d = l1 - l0;
            let lhs = d.exp_m1() / dt;
            let rhs = d.exp() * (work - p.beta / p.mobility * diss) / sp.esav_c;
            let res = (lhs - rhs).abs();
            (
                nonlinear_force(&phi_dag, p).scaled(xi),
                rel(res, lhs.abs().max(rhs.abs()).max(1.0 / dt)),
            )
        }
        _ => return Err(Error::Contract("states of different schemes".into())),
    };

    let s = sp.stab_s;
    let mu = apply_symbol(&phi_lin, &FourierSymbol::shifted_bilaplacian())
        .lin_comb(1.0, &nonlinear, 1.0)
        .lin_comb(1.0, &phi1.lin_comb(s, &phi_stab, -s), 1.0);
    let term_acc = psi1.lin_comb(p.alpha / dt, psi0, -p.alpha / dt);
    let term_damp = psi_mid.scaled(p.beta);
    let term_mu = laplacian(&mu).scaled(p.mobility);
    let mom = term_acc
        .lin_comb(1.0, &term_damp, 1.0)
        .lin_comb(1.0, &term_mu, -1.0)
        .lin_comb(1.0, &term_g, -1.0);
    let mom_scale = [&term_acc, &term_damp, &term_mu, &term_g]
        .iter()
        .map(|f| f.max_abs())
        .fold(0.0, f64::max);
    // Size of the explicit right side, (alpha/dt + beta) phi / dt, and the
    // round-off floor of the spectral Laplacian.
    let phi_size = phi1.max_abs().max(phi0.max_abs());
    let rhs_size = (p.alpha / dt + p.beta) / dt * phi_size;
    let k2_max = grid.k2().iter().fold(0.0, |m: f64, &v| m.max(v));
    let floor = 1e3 * f64::EPSILON * p.mobility * k2_max * mu.max_abs();
    let mom_res = rel(mom.max_abs(), mom_scale.max(rhs_size).max(floor));

    let vel_expect = phi1.lin_comb(1.0 / dt, phi0, -1.0 / dt);
    let vel = psi_mid.lin_comb(1.0, &vel_expect, -1.0);
    let vel_res = rel(vel.max_abs(), psi_mid.max_abs().max(phi_size / dt));

    Ok(mom_res.max(vel_res).max(aux_res))
}
