//! Linear, energy-stable Crank-Nicolson integrators and their first-order
//! start-up steps.
//!
//! All three schemes advance `phi` together with `psi = phi_t` and one scalar
//! auxiliary variable:
//!
//! * [`SchemeKind::Ssav`]: `u = sqrt(int F + F_vac + b)`; two constant
//!   coefficient solves plus a rank-one (Sherman-Morrison) correction.
//! * [`SchemeKind::Sgpav`]: `R = sqrt(E1)`; one solve, `R` updated in closed form.
//! * [`SchemeKind::Sesav`]: `B = exp(pseudo energy / C)`; one solve, `B`
//!   updated in closed form. `B` is stored through its logarithm so that the
//!   modified energy `C ln B` keeps full precision for large `C`.
//!
//! Every linear solve is diagonal in Fourier space.

mod extrapolate;
mod manufactured;
mod positive;
mod residual;
mod sav;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    checked_e1, checked_exponent, checked_radicand, nonlinear_integral, quadratic_energy_hat,
    ModelParams, SchemeParams,
};
use crate::spectral::{
    mean, mean_tolerance, to_physical, to_spectral, Grid, RealField, SpectralField,
};

pub use extrapolate::{extrap_full, extrap_half, full_weights, half_weights};
pub use manufactured::{manufactured_exact, manufactured_forcing};
pub use residual::step_residual;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Ssav,
    Sgpav,
    Sesav,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 3] = [SchemeKind::Ssav, SchemeKind::Sgpav, SchemeKind::Sesav];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Ssav => "ssav",
            SchemeKind::Sgpav => "sgpav",
            SchemeKind::Sesav => "sesav",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssav" => Ok(SchemeKind::Ssav),
            "sgpav" => Ok(SchemeKind::Sgpav),
            "sesav" => Ok(SchemeKind::Sesav),
            other => Err(Error::Config(format!(
                "unknown scheme `{other}` (expected ssav, sgpav or sesav)"
            ))),
        }
    }
}

/// First-order (backward Euler) start-up step or second-order CN step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOrder {
    First,
    Second,
}

/// Scalar auxiliary variable with the history needed for extrapolation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Aux {
    Sav { u: f64 },
    Gpav { r: f64, r_prev: f64 },
    Esav { log_b: f64, log_b_prev: f64 },
}

impl Aux {
    /// `u`, `R` or `B`.
    pub fn value(&self) -> f64 {
        match *self {
            Aux::Sav { u } => u,
            Aux::Gpav { r, .. } => r,
            Aux::Esav { log_b, .. } => log_b.exp(),
        }
    }

    pub fn kind(&self) -> SchemeKind {
        match self {
            Aux::Sav { .. } => SchemeKind::Ssav,
            Aux::Gpav { .. } => SchemeKind::Sgpav,
            Aux::Esav { .. } => SchemeKind::Sesav,
        }
    }
}

/// One time level in both representations.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Level {
    pub phys: RealField,
    pub hat: SpectralField,
}

impl Level {
    pub fn new(phys: RealField) -> Self {
        let hat = to_spectral(&phys);
        Level { phys, hat }
    }

    pub fn from_hat(hat: SpectralField) -> Self {
        let phys = to_physical(&hat);
        Level { phys, hat }
    }

    pub fn lin_comb(&self, a: f64, other: &Level, b: f64) -> Level {
        Level {
            phys: self.phys.lin_comb(a, &other.phys, b),
            hat: self.hat.lin_comb(a, &other.hat, b),
        }
    }
}

/// Two levels of `phi` and `psi`, the auxiliary variable and the clock.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemeState {
    pub(crate) phi: Level,
    pub(crate) phi_prev: Level,
    pub(crate) psi: Level,
    pub(crate) psi_prev: Level,
    pub(crate) aux: Aux,
    pub(crate) t: f64,
    pub(crate) step_index: usize,
    pub(crate) current_s: f64,
    pub(crate) dt_prev: f64,
}

impl SchemeState {
    /// Initial state at `t = 0` with the auxiliary variable set from its
    /// definition. `psi0` must have zero mean.
    pub fn initialize(
        kind: SchemeKind,
        phi0: &RealField,
        psi0: &RealField,
        p: &ModelParams,
        sp: &SchemeParams,
    ) -> Result<SchemeState> {
        p.validate()?;
        sp.validate()?;
        if phi0.grid() != psi0.grid() {
            return Err(Error::Contract(
                "phi0 and psi0 live on different grids".into(),
            ));
        }
        let m = mean(psi0);
        let tol = mean_tolerance(psi0);
        if m.abs() > tol {
            return Err(Error::MeanViolation { mean: m, tol });
        }
        let phi = Level::new(phi0.clone());
        let psi = Level::new(psi0.clone());
        let aux = initial_aux(kind, &phi, &psi, p, sp)?;
        Ok(SchemeState {
            phi_prev: phi.clone(),
            psi_prev: psi.clone(),
            phi,
            psi,
            aux,
            t: 0.0,
            step_index: 0,
            current_s: sp.stab_s,
            dt_prev: 0.0,
        })
    }

    /// Assembles a state from explicit levels, e.g. to test a single step from
    /// an arbitrary configuration. `dt_prev` must be positive when
    /// `step_index >= 1`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        phi_n: RealField,
        phi_nm1: RealField,
        psi_n: RealField,
        psi_nm1: RealField,
        aux: Aux,
        t: f64,
        step_index: usize,
        dt_prev: f64,
    ) -> Result<SchemeState> {
        let g = phi_n.grid().clone();
        if [&phi_nm1, &psi_n, &psi_nm1].iter().any(|f| f.grid() != &g) {
            return Err(Error::Contract("levels live on different grids".into()));
        }
        if step_index > 0 && !(dt_prev > 0.0) {
            return Err(Error::Contract(
                "previous step size must be positive after the first step".into(),
            ));
        }
        Ok(SchemeState {
            phi: Level::new(phi_n),
            phi_prev: Level::new(phi_nm1),
            psi: Level::new(psi_n),
            psi_prev: Level::new(psi_nm1),
            aux,
            t,
            step_index,
            current_s: 0.0,
            dt_prev,
        })
    }

    pub fn kind(&self) -> SchemeKind {
        self.aux.kind()
    }

    pub fn grid(&self) -> &Grid {
        self.phi.phys.grid()
    }

    pub fn phi_n(&self) -> &RealField {
        &self.phi.phys
    }

    pub fn phi_nm1(&self) -> &RealField {
        &self.phi_prev.phys
    }

    pub fn psi_n(&self) -> &RealField {
        &self.psi.phys
    }

    pub fn psi_nm1(&self) -> &RealField {
        &self.psi_prev.phys
    }

    pub fn aux(&self) -> Aux {
        self.aux
    }

    /// `u`, `R` or `B` at the current level.
    pub fn aux_value(&self) -> f64 {
        self.aux.value()
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    /// Stabilization used by the step that produced this level.
    pub fn current_s(&self) -> f64 {
        self.current_s
    }

    /// Size of the step that produced this level (0 before the first step).
    pub fn dt_prev(&self) -> f64 {
        self.dt_prev
    }
}

fn initial_aux(
    kind: SchemeKind,
    phi: &Level,
    psi: &Level,
    p: &ModelParams,
    sp: &SchemeParams,
) -> Result<Aux> {
    Ok(match kind {
        SchemeKind::Ssav => {
            let u = checked_radicand(nonlinear_integral(&phi.phys, p) + sp.sav_b)?.sqrt();
            Aux::Sav { u }
        }
        SchemeKind::Sgpav => {
            let r = e1_of(phi, psi, p, sp)?.sqrt();
            Aux::Gpav { r, r_prev: r }
        }
        SchemeKind::Sesav => {
            let e = pseudo_of(phi, psi, p);
            if sp.esav_c < e {
                return Err(Error::Scaling(format!(
                    "C = {:e} is below the initial pseudo energy {e:e}",
                    sp.esav_c
                )));
            }
            let log_b = checked_exponent(e / sp.esav_c)?;
            Aux::Esav {
                log_b,
                log_b_prev: log_b,
            }
        }
    })
}

pub(crate) fn original_of(phi: &Level, p: &ModelParams) -> f64 {
    quadratic_energy_hat(&phi.hat) + nonlinear_integral(&phi.phys, p)
}

pub(crate) fn kinetic_of(psi: &Level, p: &ModelParams) -> f64 {
    p.alpha / (2.0 * p.mobility) * psi.hat.hm1_norm_sq()
}

pub(crate) fn pseudo_of(phi: &Level, psi: &Level, p: &ModelParams) -> f64 {
    original_of(phi, p) + kinetic_of(psi, p)
}

pub(crate) fn e1_of(phi: &Level, psi: &Level, p: &ModelParams, sp: &SchemeParams) -> Result<f64> {
    checked_e1(pseudo_of(phi, psi, p) + sp.gpav_c0 * phi.phys.grid().volume())
}

/// Space-dependent source added to the right side of the momentum equation,
/// `alpha psi_t + beta psi = M Delta mu + g(x, t)`.
type ForcingFn = dyn Fn(&Grid, f64) -> RealField + Send + Sync;

#[derive(Clone)]
pub struct Forcing {
    eval: Arc<ForcingFn>,
}

impl fmt::Debug for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Forcing")
    }
}

impl Forcing {
    pub fn new(f: impl Fn(&Grid, f64) -> RealField + Send + Sync + 'static) -> Self {
        Forcing { eval: Arc::new(f) }
    }

    pub fn eval(&self, grid: &Grid, t: f64) -> RealField {
        (self.eval)(grid, t)
    }
}

/// Energies of one state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Energies {
    /// Free energy `E(phi)`.
    pub original: f64,
    /// `E(phi) + alpha/(2M) ||psi||_{-1}^2`.
    pub pseudo: f64,
    /// Scheme-specific reformulated energy.
    pub modified: f64,
    /// Discrete CN energy of the SAV scheme; NaN for the other schemes.
    pub discrete: f64,
}

#[derive(Clone, Debug)]
pub struct StepReport {
    pub state: SchemeState,
    pub energies: Energies,
    /// `xi` of the GPAV/ESAV schemes (1 in exact arithmetic); 1.0 for SAV.
    pub xi: f64,
    /// Relative residual of the scheme equations, when requested.
    pub residual: Option<f64>,
    pub dt_used: f64,
    pub order: StepOrder,
}

impl StepReport {
    /// The quantity the scheme guarantees to be nonincreasing: `E_CN` (SAV),
    /// `R^2 - c0 |Omega|` (GPAV) or `C ln B` (ESAV).
    pub fn guaranteed_energy(&self) -> f64 {
        match self.state.kind() {
            SchemeKind::Ssav => self.energies.discrete,
            _ => self.energies.modified,
        }
    }
}

/// Advances `state` by one step of size `sp.dt` with stabilization `sp.stab_s`.
///
/// `StepOrder::Second` requires two time levels (`step_index >= 1`).
pub fn advance(
    state: &SchemeState,
    order: StepOrder,
    p: &ModelParams,
    sp: &SchemeParams,
    forcing: Option<&Forcing>,
) -> Result<StepReport> {
    if !(sp.dt > 0.0 && sp.dt.is_finite()) {
        return Err(Error::Contract(format!(
            "step size {} must be positive",
            sp.dt
        )));
    }
    if order == StepOrder::Second && state.step_index == 0 {
        return Err(Error::Contract(
            "a Crank-Nicolson step needs two time levels; take a first-order step first".into(),
        ));
    }
    let report = match state.kind() {
        SchemeKind::Ssav => sav::step(state, order, p, sp, forcing)?,
        SchemeKind::Sgpav | SchemeKind::Sesav => positive::step(state, order, p, sp, forcing)?,
    };
    if report
        .state
        .phi
        .phys
        .values()
        .iter()
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("updated phase field"));
    }
    Ok(report)
}

/// [`advance`] followed by [`step_residual`]; the residual is stored in the report.
pub fn advance_checked(
    state: &SchemeState,
    order: StepOrder,
    p: &ModelParams,
    sp: &SchemeParams,
    forcing: Option<&Forcing>,
) -> Result<StepReport> {
    let mut report = advance(state, order, p, sp, forcing)?;
    report.residual = Some(step_residual(state, &report, p, sp, forcing)?);
    Ok(report)
}

/// First step of the S-SAV-CN scheme (backward Euler with stabilization).
pub fn ssav_bootstrap(
    state0: &SchemeState,
    p: &ModelParams,
    sp: &SchemeParams,
    forcing: Option<&Forcing>,
) -> Result<StepReport> {
    expect_kind(state0, SchemeKind::Ssav)?;
    advance(state0, StepOrder::First, p, sp, forcing)
}

pub fn ssav_cn_step(
    state: &SchemeState,
    p: &ModelParams,
    sp: &SchemeParams,
    forcing: Option<&Forcing>,
) -> Result<StepReport> {
    expect_kind(state, SchemeKind::Ssav)?;
    advance(state, StepOrder::Second, p, sp, forcing)
}

pub fn sgpav_bootstrap(
    state0: &SchemeState,
    p: &ModelParams,
    sp: &SchemeParams,
    forcing: Option<&Forcing>,
) -> Result<StepReport> {
    expect_kind(state0, SchemeKind::Sgpav)?;
    advance(state0, StepOrder::First, p, sp, forcing)
}

pub fn sgpav_cn_step(
    state: &SchemeState,
    p: &ModelParams,
    sp: &SchemeParams,
    forcing: Option<&Forcing>,
) -> Result<StepReport> {
    expect_kind(state, SchemeKind::Sgpav)?;
    advance(state, StepOrder::Second, p, sp, forcing)
}

pub fn sesav_bootstrap(
    state0: &SchemeState,
    p: &ModelParams,
    sp: &SchemeParams,
    forcing: Option<&Forcing>,
) -> Result<StepReport> {
    expect_kind(state0, SchemeKind::Sesav)?;
    advance(state0, StepOrder::First, p, sp, forcing)
}

pub fn sesav_cn_step(
    state: &SchemeState,
    p: &ModelParams,
    sp: &SchemeParams,
    forcing: Option<&Forcing>,
) -> Result<StepReport> {
    expect_kind(state, SchemeKind::Sesav)?;
    advance(state, StepOrder::Second, p, sp, forcing)
}

fn expect_kind(state: &SchemeState, kind: SchemeKind) -> Result<()> {
    if state.kind() == kind {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "state carries {} variables, expected {kind}",
            state.kind()
        )))
    }
}

/// `1/2 ||(Delta+1) phi^n||^2 + S/2 ||phi^n - phi^{n-1}||^2 + (u^n)^2 + alpha/(2M) ||psi^n||_{-1}^2`.
///
/// `S` is taken from `sp`. Defined for SAV states only.
pub fn discrete_energy_cn(state: &SchemeState, p: &ModelParams, sp: &SchemeParams) -> Result<f64> {
    let u = match state.aux {
        Aux::Sav { u } => u,
        _ => {
            return Err(Error::Contract(
                "the discrete CN energy is defined for SAV states".into(),
            ))
        }
    };
    Ok(discrete_energy_of(state, u, sp.stab_s, p))
}

pub(crate) fn discrete_energy_of(state: &SchemeState, u: f64, s: f64, p: &ModelParams) -> f64 {
    let jump = state.phi.hat.lin_comb(1.0, &state.phi_prev.hat, -1.0);
    quadratic_energy_hat(&state.phi.hat)
        + 0.5 * s * jump.weighted_norm_sq(|_| 1.0)
        + u * u
        + kinetic_of(&state.psi, p)
}

/// The reformulated energy of each scheme: `1/2||(Delta+1)phi||^2 +
/// alpha/(2M)||psi||_{-1}^2 + u^2 - b` (SAV), `R^2 - c0 |Omega|` (GPAV),
/// `C ln B` (ESAV).
pub fn modified_energy(state: &SchemeState, p: &ModelParams, sp: &SchemeParams) -> f64 {
    match state.aux {
        Aux::Sav { u } => {
            quadratic_energy_hat(&state.phi.hat) + kinetic_of(&state.psi, p) + u * u - sp.sav_b
        }
        Aux::Gpav { r, .. } => r * r - sp.gpav_c0 * state.grid().volume(),
        Aux::Esav { log_b, .. } => sp.esav_c * log_b,
    }
}

/// All energies of a state; `discrete` uses the stabilization recorded in the state.
pub fn energies(state: &SchemeState, p: &ModelParams, sp: &SchemeParams) -> Energies {
    let original = original_of(&state.phi, p);
    let pseudo = original + kinetic_of(&state.psi, p);
    let discrete = match state.aux {
        Aux::Sav { u } => discrete_energy_of(state, u, state.current_s, p),
        _ => f64::NAN,
    };
    Energies {
        original,
        pseudo,
        modified: modified_energy(state, p, sp),
        discrete,
    }
}

/// Smallest value of the linear-system symbol over the modes of `grid`,
/// with the multi-index of the mode where it occurs.
pub fn symbol_minimum(
    grid: &Grid,
    order: StepOrder,
    p: &ModelParams,
    sp: &SchemeParams,
) -> (f64, Vec<i64>) {
    let lin = LinearPart::new(order, p, sp);
    let (i, v) = grid.k2().iter().map(|&k2| lin.symbol(k2)).enumerate().fold(
        (0, f64::INFINITY),
        |acc, (i, v)| if v < acc.1 { (i, v) } else { acc },
    );
    (v, grid.mode_index(i))
}

/// Linear part shared by every scheme, written in the form
/// `P phi^{n+1} = a0 phi^n + c_psi psi^n - theta kappa L phi^n + S kappa phi_s + (...)`
/// with symbol `P(kappa) = a0 + (1 - theta) kappa L(kappa) + S kappa`,
/// `kappa = |k|^2` and `L = (1 - kappa)^2`.
///
/// Crank-Nicolson: `a0 = 2/(M dt) (alpha/dt + beta/2)`, `c_psi = 2 alpha/(M dt)`,
/// `theta = 1/2`. Backward Euler: `a0 = (alpha/dt + beta)/(M dt)`,
/// `c_psi = alpha/(M dt)`, `theta = 0`. Multiplying by `M dt` recovers the
/// operator written for the GPAV/ESAV schemes.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LinearPart {
    pub a0: f64,
    pub c_psi: f64,
    pub theta: f64,
    pub s: f64,
}

impl LinearPart {
    pub fn new(order: StepOrder, p: &ModelParams, sp: &SchemeParams) -> Self {
        let (m, dt, a) = (p.mobility, sp.dt, p.alpha);
        match order {
            StepOrder::Second => LinearPart {
                a0: 2.0 / (m * dt) * (a / dt + 0.5 * p.beta),
                c_psi: 2.0 * a / (m * dt),
                theta: 0.5,
                s: sp.stab_s,
            },
            StepOrder::First => LinearPart {
                a0: (a / dt + p.beta) / (m * dt),
                c_psi: a / (m * dt),
                theta: 0.0,
                s: sp.stab_s,
            },
        }
    }

    #[inline]
    pub fn symbol(&self, k2: f64) -> f64 {
        let l = (1.0 - k2) * (1.0 - k2);
        self.a0 + (1.0 - self.theta) * k2 * l + self.s * k2
    }

    /// Explicit right side without the nonlinear and forcing contributions.
    pub fn rhs(
        &self,
        phi: &SpectralField,
        psi: &SpectralField,
        phi_stab: &SpectralField,
    ) -> SpectralField {
        let grid = phi.grid();
        let mut out = SpectralField::zeros(grid);
        for (i, (o, &k2)) in out.coeffs_mut().iter_mut().zip(grid.k2()).enumerate() {
            let l = (1.0 - k2) * (1.0 - k2);
            *o = phi.coeffs()[i] * (self.a0 - self.theta * k2 * l)
                + psi.coeffs()[i] * self.c_psi
                + phi_stab.coeffs()[i] * (self.s * k2);
        }
        out
    }

    pub fn solve(&self, rhs: &SpectralField) -> SpectralField {
        rhs.mul_fn(|k2| 1.0 / self.symbol(k2))
    }

    /// Overwrites the zero mode of a solution with its closed form
    /// `phi_0 + (c_psi psi_0 + g_0 / M) / a0`. Dividing the assembled right
    /// side by `a0` instead rounds the mean on every step, and the error
    /// accumulates over long runs.
    pub fn set_zero_mode(
        &self,
        out: &mut SpectralField,
        phi: &SpectralField,
        psi: &SpectralField,
        g: Option<&SpectralField>,
        mobility: f64,
    ) {
        let mut src = psi.coeffs()[0] * self.c_psi;
        if let Some(g) = g {
            src += g.coeffs()[0] / mobility;
        }
        out.coeffs_mut()[0] = phi.coeffs()[0] + src / self.a0;
    }
}

/// Stabilization reference `phi_s`: `phi^n` for a first-order step,
/// `2 phi^n - phi^{n-1}` for a CN step.
///
/// The CN reference is the plain second difference for every step ratio, so
/// `S/2 ||phi^{n+1} - phi^n||^2` telescopes in the discrete energy law even
/// when the step size changes.
pub(crate) fn stab_reference(state: &SchemeState, order: StepOrder) -> SpectralField {
    match order {
        StepOrder::First => state.phi.hat.clone(),
        StepOrder::Second => state.phi.hat.lin_comb(2.0, &state.phi_prev.hat, -1.0),
    }
}

/// `phi^{dagger}` (or `phi^n` for a first-order step).
pub(crate) fn predictor(state: &SchemeState, order: StepOrder, dt: f64) -> (Level, Level) {
    match order {
        StepOrder::First => (state.phi.clone(), state.psi.clone()),
        StepOrder::Second => {
            let (a, b) = half_weights(dt, state.dt_prev);
            (
                state.phi.lin_comb(a, &state.phi_prev, b),
                state.psi.lin_comb(a, &state.psi_prev, b),
            )
        }
    }
}

/// Forcing coefficients at the time where the scheme samples the source.
pub(crate) fn forcing_hat(
    state: &SchemeState,
    order: StepOrder,
    dt: f64,
    forcing: Option<&Forcing>,
) -> Option<SpectralField> {
    forcing.map(|f| {
        let t = match order {
            StepOrder::First => state.t + dt,
            StepOrder::Second => state.t + 0.5 * dt,
        };
        to_spectral(&f.eval(state.grid(), t))
    })
}

/// `psi^{n+1}` from the new and old `phi`.
pub(crate) fn new_psi(state: &SchemeState, phi_new: &Level, order: StepOrder, dt: f64) -> Level {
    let diff = phi_new.lin_comb(1.0, &state.phi, -1.0);
    match order {
        StepOrder::First => diff.lin_comb(1.0 / dt, &state.psi, 0.0),
        StepOrder::Second => diff.lin_comb(2.0 / dt, &state.psi, -1.0),
    }
}

#[cfg(test)]
mod tests;
