use super::*;
use crate::spectral::l2_norm;

fn params(eps: f64, h_vac: f64) -> ModelParams {
    ModelParams {
        alpha: 1.0,
        beta: 1.0,
        mobility: 1.0,
        epsilon: eps,
        h_vac,
    }
}

/// Smooth, non-symmetric field with mean `m`.
fn bumpy(grid: &Grid, m: f64, amp: f64) -> RealField {
    let l = grid.lengths().to_vec();
    RealField::from_fn(grid, |x| {
        let a = 2.0 * std::f64::consts::PI * x[0] / l[0];
        let b = 2.0 * std::f64::consts::PI * x[1] / l[1];
        m + amp * ((3.0 * a + 0.4).sin() * (2.0 * b).cos() + 0.5 * (a - 5.0 * b + 1.1).sin())
    })
}

fn grid() -> Grid {
    Grid::uniform(2, 32, 20.0).unwrap()
}

fn two_levels(kind: SchemeKind, p: &ModelParams, sp: &SchemeParams) -> SchemeState {
    let g = grid();
    let s0 =
        SchemeState::initialize(kind, &bumpy(&g, 0.1, 0.3), &RealField::zeros(&g), p, sp).unwrap();
    advance(&s0, StepOrder::First, p, sp, None).unwrap().state
}

#[test]
fn uniform_equilibrium_is_a_fixed_point() {
    let g = grid();
    let p = params(0.5, 500.0);
    let sp = SchemeParams::new(0.1, 2.0);
    for kind in SchemeKind::ALL {
        for c in [0.3, -0.2] {
            let s0 = SchemeState::initialize(
                kind,
                &RealField::constant(&g, c),
                &RealField::zeros(&g),
                &p,
                &sp,
            )
            .unwrap();
            let r1 = advance_checked(&s0, StepOrder::First, &p, &sp, None).unwrap();
            let r2 = advance_checked(&r1.state, StepOrder::Second, &p, &sp, None).unwrap();
            for r in [&r1, &r2] {
                let d = r
                    .state
                    .phi_n()
                    .lin_comb(1.0, &RealField::constant(&g, c), -1.0);
                assert!(d.max_abs() < 1e-14, "{kind} {c}: {}", d.max_abs());
                assert!(r.state.psi_n().max_abs() < 1e-13);
                assert!((r.state.aux_value() - s0.aux_value()).abs() <= 1e-14 * s0.aux_value());
                assert!(
                    r.residual.unwrap() < 1e-9,
                    "{kind} {c}: {:e}",
                    r.residual.unwrap()
                );
            }
        }
    }
}

#[test]
fn mass_is_conserved_and_psi_stays_mean_zero() {
    let p = params(0.5, 800.0);
    let sp = SchemeParams::new(0.2, 400.0);
    for kind in SchemeKind::ALL {
        let mut st = two_levels(kind, &p, &sp);
        let m0 = mean(st.phi_n());
        for _ in 0..10 {
            st = advance(&st, StepOrder::Second, &p, &sp, None)
                .unwrap()
                .state;
        }
        assert!(
            (mean(st.phi_n()) - m0).abs() <= 1e-12 * m0.abs(),
            "{kind}: {} vs {m0} max {}",
            mean(st.phi_n()),
            st.phi_n().max_abs()
        );
        assert!(
            mean(st.psi_n()).abs() <= mean_tolerance(st.psi_n()),
            "{kind}"
        );
    }
}

#[test]
fn residual_of_scheme_equations_vanishes() {
    let p = params(0.5, 800.0);
    let forcing = manufactured_forcing(&p);
    for kind in SchemeKind::ALL {
        for f in [None, Some(&forcing)] {
            let sp = SchemeParams::new(0.05, 3.0);
            let g = grid();
            let s0 =
                SchemeState::initialize(kind, &bumpy(&g, 0.1, 0.3), &RealField::zeros(&g), &p, &sp)
                    .unwrap();
            let r1 = advance_checked(&s0, StepOrder::First, &p, &sp, f).unwrap();
            assert!(
                r1.residual.unwrap() < 1e-9,
                "{kind} bootstrap {:e}",
                r1.residual.unwrap()
            );
            // Changing the step exercises the variable-step weights.
            let sp2 = sp.with_dt(0.08);
            let r2 = advance_checked(&r1.state, StepOrder::Second, &p, &sp2, f).unwrap();
            assert!(
                r2.residual.unwrap() < 1e-9,
                "{kind} cn {:e}",
                r2.residual.unwrap()
            );
            let r3 =
                advance_checked(&r2.state, StepOrder::Second, &p, &sp2.with_dt(0.03), f).unwrap();
            assert!(
                r3.residual.unwrap() < 1e-9,
                "{kind} cn {:e}",
                r3.residual.unwrap()
            );
        }
    }
}

#[test]
fn residual_detects_a_perturbed_solution() {
    let p = params(0.5, 800.0);
    let sp = SchemeParams::new(0.05, 3.0);
    for kind in SchemeKind::ALL {
        let st = two_levels(kind, &p, &sp);
        let mut r = advance(&st, StepOrder::Second, &p, &sp, None).unwrap();
        let mut phi = r.state.phi.phys.clone();
        phi.values_mut()[7] += 1e-6;
        r.state.phi = Level::new(phi);
        assert!(
            step_residual(&st, &r, &p, &sp, None).unwrap() > 1e-8,
            "{kind}"
        );
    }
}

#[test]
fn sav_discrete_energy_law_holds_each_step() {
    let p = ModelParams {
        alpha: 0.01,
        beta: 1.0,
        mobility: 1.0,
        epsilon: 0.9,
        h_vac: 5000.0,
    };
    let g = grid();
    for dt in [1.0, 0.1] {
        let sp = SchemeParams::new(dt, 100.0);
        let s0 = SchemeState::initialize(
            SchemeKind::Ssav,
            &bumpy(&g, 0.06, 0.05),
            &RealField::zeros(&g),
            &p,
            &sp,
        )
        .unwrap();
        let mut st = advance(&s0, StepOrder::First, &p, &sp, None).unwrap().state;
        for _ in 0..30 {
            let before = discrete_energy_cn(&st, &p, &sp).unwrap();
            let r = advance(&st, StepOrder::Second, &p, &sp, None).unwrap();
            let after = r.energies.discrete;
            let psi_mid = r.state.psi.lin_comb(0.5, &st.psi, 0.5);
            let diss = dt * p.beta / p.mobility * psi_mid.hat.hm1_norm_sq();
            assert!(
                after <= before - diss + 1e-9 * before.abs(),
                "dt={dt}: {after} > {before} - {diss}"
            );
            st = r.state;
        }
    }
}

#[test]
fn positive_variables_decrease_and_stay_positive() {
    let p = params(0.5, 3000.0);
    for kind in [SchemeKind::Sgpav, SchemeKind::Sesav] {
        for dt in [2.0, 0.1] {
            let sp = SchemeParams::new(dt, 20.0);
            let mut st = two_levels(kind, &p, &sp);
            let mut prev = st.aux_value();
            let mut e_prev = modified_energy(&st, &p, &sp);
            for _ in 0..20 {
                let r = advance(&st, StepOrder::Second, &p, &sp, None).unwrap();
                let v = r.state.aux_value();
                assert!(v > 0.0 && v <= prev, "{kind}: {v} > {prev}");
                assert!(r.energies.modified <= e_prev);
                prev = v;
                e_prev = r.energies.modified;
                st = r.state;
            }
        }
    }
}

#[test]
fn modified_energies_reproduce_pseudo_energy_at_start() {
    let g = grid();
    let p = params(0.5, 300.0);
    let sp = SchemeParams::new(0.1, 0.0);
    let phi = bumpy(&g, 0.1, 0.3);
    let psi = bumpy(&g, 0.0, 0.01);
    let e = crate::model::pseudo_energy(&phi, &psi, &p).unwrap();
    for kind in SchemeKind::ALL {
        let st = SchemeState::initialize(kind, &phi, &psi, &p, &sp).unwrap();
        let m = modified_energy(&st, &p, &sp);
        assert!(
            (m - e).abs() <= 1e-9 * e.abs().max(1.0),
            "{kind}: {m} vs {e}"
        );
    }
}

#[test]
fn discrete_energy_examples() {
    let g = grid();
    let z = RealField::zeros(&g);
    let st = SchemeState::from_parts(
        z.clone(),
        z.clone(),
        z.clone(),
        z.clone(),
        Aux::Sav { u: 100.0 },
        0.0,
        0,
        0.0,
    )
    .unwrap();
    let p = params(0.5, 0.0);
    let sp = SchemeParams::new(0.1, 7.0);
    assert_eq!(discrete_energy_cn(&st, &p, &sp).unwrap(), 1e4);
    assert_eq!(modified_energy(&st, &p, &sp), 0.0);

    let a = bumpy(&g, 0.0, 0.2);
    let st = SchemeState::from_parts(
        a.clone(),
        z.clone(),
        z.clone(),
        z.clone(),
        Aux::Sav { u: 0.0 },
        0.0,
        1,
        0.1,
    )
    .unwrap();
    let quad = quadratic_energy_hat(&to_spectral(&a));
    let jump = l2_norm(&a).powi(2);
    let e0 = discrete_energy_cn(&st, &p, &sp.with_stab(0.0)).unwrap();
    let e7 = discrete_energy_cn(&st, &p, &sp).unwrap();
    assert!((e0 - quad).abs() < 1e-12 * quad);
    assert!((e7 - quad - 3.5 * jump).abs() < 1e-12 * e7);

    let gp = SchemeState::from_parts(
        a.clone(),
        a.clone(),
        z.clone(),
        z.clone(),
        Aux::Gpav {
            r: 1.0,
            r_prev: 1.0,
        },
        0.0,
        1,
        0.1,
    )
    .unwrap();
    assert!(discrete_energy_cn(&gp, &p, &sp).is_err());
}

#[test]
fn esav_initial_xi_is_one_for_zero_energy() {
    let g = grid();
    let p = params(0.5, 0.0);
    let sp = SchemeParams::new(0.1, 0.0);
    let z = RealField::zeros(&g);
    let st = SchemeState::initialize(SchemeKind::Sesav, &z, &z, &p, &sp).unwrap();
    assert_eq!(st.aux_value(), 1.0);
    let r = advance(&st, StepOrder::First, &p, &sp, None).unwrap();
    assert_eq!(r.xi, 1.0);
}

#[test]
fn contract_errors() {
    let g = grid();
    let p = params(0.5, 0.0);
    let sp = SchemeParams::new(0.1, 0.0);
    let phi = bumpy(&g, 0.1, 0.2);
    let st =
        SchemeState::initialize(SchemeKind::Ssav, &phi, &RealField::zeros(&g), &p, &sp).unwrap();
    assert!(matches!(
        advance(&st, StepOrder::Second, &p, &sp, None),
        Err(Error::Contract(_))
    ));
    assert!(sgpav_bootstrap(&st, &p, &sp, None).is_err());
    assert!(ssav_bootstrap(&st, &p, &sp, None).is_ok());
    let bad_psi = RealField::constant(&g, 0.1);
    assert!(matches!(
        SchemeState::initialize(SchemeKind::Ssav, &phi, &bad_psi, &p, &sp),
        Err(Error::MeanViolation { .. })
    ));
    let huge = SchemeParams { esav_c: 1e-3, ..sp };
    assert!(matches!(
        SchemeState::initialize(
            SchemeKind::Sesav,
            &phi.scaled(30.0),
            &RealField::zeros(&g),
            &p,
            &huge
        ),
        Err(Error::Scaling(_))
    ));
    let tiny_b = SchemeParams { sav_b: 1e-9, ..sp };
    assert!(matches!(
        SchemeState::initialize(SchemeKind::Ssav, &phi, &RealField::zeros(&g), &p, &tiny_b),
        Err(Error::ShiftTooSmall { .. })
    ));
}

#[test]
fn manufactured_exact_values() {
    let g = Grid::uniform(2, 16, 128.0).unwrap();
    let (phi, psi) = manufactured_exact(&g, std::f64::consts::FRAC_PI_2);
    assert!(phi.max_abs() < 1e-15);
    let expect = RealField::from_fn(&g, |x| {
        -(std::f64::consts::PI * x[0] / 16.0).sin() * (std::f64::consts::PI * x[1] / 16.0).cos()
    });
    assert!(psi.lin_comb(1.0, &expect, -1.0).max_abs() < 1e-14);
}

#[test]
fn manufactured_forcing_matches_analytic_form_without_vacancy_term() {
    // For h_vac = 0 every term has a closed form; Delta(phi^3) uses
    // phi^3 = s^3 c^3 with s = sin(a x), c = cos(b y):
    // Delta(s^3) = 6 s a^2 cos^2(a x) - 3 a^2 s^3.
    let l = 128.0;
    let g = Grid::uniform(2, 64, l).unwrap();
    let p = ModelParams {
        alpha: 0.7,
        beta: 1.3,
        mobility: 0.9,
        epsilon: 0.25,
        h_vac: 0.0,
    };
    let t: f64 = 0.4;
    let k = 8.0 * std::f64::consts::PI / l;
    let lam = 2.0 * k * k;
    let ct = t.cos();
    let g_num = manufactured_forcing(&p).eval(&g, t);
    let g_ref = RealField::from_fn(&g, |x| {
        let (s, cs) = ((k * x[0]).sin(), (k * x[0]).cos());
        let (c, sn) = ((k * x[1]).cos(), (k * x[1]).sin());
        let phi = s * c * ct;
        let lin = (1.0 - lam).powi(2) * phi - p.epsilon * phi;
        let lap_lin = -lam * lin;
        let d2s3 = 6.0 * s * k * k * cs * cs - 3.0 * k * k * s * s * s;
        let d2c3 = 6.0 * c * k * k * sn * sn - 3.0 * k * k * c * c * c;
        let lap_cube = ct.powi(3) * (d2s3 * c * c * c + s * s * s * d2c3);
        let prof = s * c;
        -p.alpha * prof * t.cos() - p.beta * prof * t.sin() - p.mobility * (lap_lin + lap_cube)
    });
    let err = g_num.lin_comb(1.0, &g_ref, -1.0).max_abs();
    assert!(err < 1e-12 * g_ref.max_abs().max(1.0), "{err}");
}

fn manufactured_error(kind: SchemeKind, dt: f64, p: &ModelParams) -> (f64, f64) {
    let g = Grid::uniform(2, 32, 128.0).unwrap();
    let sp = SchemeParams::new(dt, 1.0);
    let forcing = manufactured_forcing(p);
    let (phi0, psi0) = manufactured_exact(&g, 0.0);
    let s0 = SchemeState::initialize(kind, &phi0, &psi0, p, &sp).unwrap();
    let mut r = advance(&s0, StepOrder::First, p, &sp, Some(&forcing)).unwrap();
    let mut xi_dev = (r.xi - 1.0).abs();
    let steps = (1.0 / dt).round() as usize;
    for _ in 1..steps {
        r = advance(&r.state, StepOrder::Second, p, &sp, Some(&forcing)).unwrap();
        xi_dev = xi_dev.max((r.xi - 1.0).abs());
    }
    let (exact, _) = manufactured_exact(&g, r.state.t());
    (
        l2_norm(&r.state.phi_n().lin_comb(1.0, &exact, -1.0)),
        xi_dev,
    )
}

#[test]
fn manufactured_solution_converges_at_second_order() {
    let p = params(0.025, 500.0);
    for kind in SchemeKind::ALL {
        let e: Vec<(f64, f64)> = [0.025, 0.0125, 0.00625]
            .iter()
            .map(|&dt| manufactured_error(kind, dt, &p))
            .collect();
        for w in e.windows(2) {
            let rate = (w[0].0 / w[1].0).log2();
            assert!((1.8..2.3).contains(&rate), "{kind}: rate {rate} from {e:?}");
        }
        if kind != SchemeKind::Ssav {
            let rate = (e[1].1 / e[2].1).log2();
            assert!(rate > 1.6, "{kind}: xi rate {rate} from {e:?}");
        }
    }
}
