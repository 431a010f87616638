//! Experiment drivers: initial data, fixed-step and adaptive loops,
//! convergence studies and controller comparisons.

use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{run_adaptive, stabilization_select, AdaptiveParams, ControllerKind};
use crate::error::{Error, Result};
use crate::io::read_snapshot;
use crate::model::{ModelParams, SchemeParams};
use crate::schemes::{
    advance, advance_checked, discrete_energy_of, manufactured_exact, manufactured_forcing,
    modified_energy, pseudo_of, Aux, Forcing, SchemeKind, SchemeState, StepOrder, StepReport,
};
use crate::spectral::{l2_norm, mean, Grid, RealField};

/// Relative slack allowed in per-step energy-decay checks.
pub const ENERGY_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Patch {
    pub center: Vec<f64>,
    pub half_width: f64,
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// `mean + amplitude * r(x)` with `r` uniform on `[-1, 1]`.
    Random {
        mean: f64,
        amplitude: f64,
        seed: u64,
    },
    Constant {
        value: f64,
    },
    /// Uniform `mean` with rotated one-mode lattices in square patches.
    Crystallites {
        mean: f64,
        amplitude: f64,
        q: f64,
        patches: Vec<Patch>,
    },
    Manufactured,
    FromFile {
        path: PathBuf,
    },
}

/// Uniform `[0, 1)` doubles from a SplitMix64 stream: the top 53 bits of each
/// output scaled by `2^-53`. The sequence is the same on every platform.
pub fn uniform_stream(seed: u64) -> impl Iterator<Item = f64> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    std::iter::repeat_with(move || (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64))
}

/// `(phi0, psi0)`; `psi0` is always zero.
pub fn build_initial(ic: &InitialCondition, grid: &Grid) -> Result<(RealField, RealField)> {
    let psi0 = RealField::zeros(grid);
    let phi0 = match ic {
        InitialCondition::Random {
            mean,
            amplitude,
            seed,
        } => {
            let vals = uniform_stream(*seed)
                .take(grid.len())
                .map(|u| mean + amplitude * (2.0 * u - 1.0))
                .collect();
            RealField::new(grid, vals)?
        }
        InitialCondition::Crystallites {
            mean,
            amplitude,
            q,
            patches,
        } => crystallites(grid, *mean, *amplitude, *q, patches)?,
        InitialCondition::Constant { value } => RealField::constant(grid, *value),
        InitialCondition::Manufactured => manufactured_exact(grid, 0.0).0,
        InitialCondition::FromFile { path } => {
            let (field, meta) = read_snapshot(path)?;
            if field.grid() != grid {
                return Err(Error::Config(format!(
                    "snapshot {} has grid n={:?} L={:?}, run uses n={:?} L={:?}",
                    path.display(),
                    meta.n,
                    meta.lengths,
                    grid.n(),
                    grid.lengths()
                )));
            }
            field
        }
    };
    Ok((phi0, psi0))
}

fn crystallites(
    grid: &Grid,
    mean: f64,
    amplitude: f64,
    q: f64,
    patches: &[Patch],
) -> Result<RealField> {
    if grid.dim() != 2 {
        return Err(Error::Config(
            "crystallite initial data is two-dimensional".into(),
        ));
    }
    let l = grid.lengths();
    for (i, p) in patches.iter().enumerate() {
        if p.center.len() != 2 || !(p.half_width > 0.0) {
            return Err(Error::Config(format!(
                "patch {i}: center needs two coordinates and half_width must be > 0"
            )));
        }
        for (c, len) in p.center.iter().zip(l) {
            if c - p.half_width < 0.0 || c + p.half_width > *len {
                return Err(Error::Config(format!(
                    "patch {i} extends outside the domain"
                )));
            }
        }
        for (j, o) in patches.iter().enumerate().take(i) {
            let reach = p.half_width + o.half_width;
            if (p.center[0] - o.center[0]).abs() < reach
                && (p.center[1] - o.center[1]).abs() < reach
            {
                return Err(Error::Config(format!("patches {j} and {i} overlap")));
            }
        }
    }
    let s3 = 3f64.sqrt();
    Ok(RealField::from_fn(grid, |x| {
        for p in patches {
            let xt = x[0] - p.center[0];
            let yt = x[1] - p.center[1];
            if xt.abs() <= p.half_width && yt.abs() <= p.half_width {
                let (s, c) = p.theta.sin_cos();
                let xl = xt * s + yt * c;
                let yl = -xt * c + yt * s;
                return mean
                    + amplitude
                        * ((q / s3 * yl).cos() * (q * xl).cos() - 0.5 * (2.0 * q / s3 * yl).cos());
            }
        }
        mean
    }))
}

/// One row of the diagnostic time series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesRecord {
    pub t: f64,
    /// Step that produced this row (0 for the initial row).
    pub dt: f64,
    /// `mean(phi) * |Omega|`.
    pub mass: f64,
    pub e_original: f64,
    pub e_pseudo: f64,
    pub e_modified: f64,
    /// Discrete CN energy (SAV); NaN for the other schemes.
    pub e_discrete: f64,
    /// `u`, `R` or `B`.
    pub aux: f64,
    pub s_active: f64,
}

impl TimeSeriesRecord {
    pub fn from_state(state: &SchemeState, dt: f64, p: &ModelParams, sp: &SchemeParams) -> Self {
        let e = crate::schemes::energies(state, p, sp);
        TimeSeriesRecord {
            t: state.t(),
            dt,
            mass: state.phi_n().integral(),
            e_original: e.original,
            e_pseudo: e.pseudo,
            e_modified: e.modified,
            e_discrete: e.discrete,
            aux: state.aux_value(),
            s_active: state.current_s(),
        }
    }

    fn from_report(r: &StepReport) -> Self {
        TimeSeriesRecord {
            t: r.state.t(),
            dt: r.dt_used,
            mass: r.state.phi_n().integral(),
            e_original: r.energies.original,
            e_pseudo: r.energies.pseudo,
            e_modified: r.energies.modified,
            e_discrete: r.energies.discrete,
            aux: r.state.aux_value(),
            s_active: r.state.current_s(),
        }
    }

    /// The quantity the producing scheme guarantees to decay.
    pub fn guaranteed(&self) -> f64 {
        if self.e_discrete.is_nan() {
            self.e_modified
        } else {
            self.e_discrete
        }
    }
}

/// Energy fed to step-size controllers and per-step decay checks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MonitoredEnergy {
    /// `E_CN` (SAV), `R^2 - c0 |Omega|` (GPAV), `C ln B` (ESAV).
    #[default]
    Guaranteed,
    Pseudo,
}

impl MonitoredEnergy {
    /// Energy of `state` with the jump term of `E_CN` weighted by `s`.
    pub fn eval(self, state: &SchemeState, s: f64, p: &ModelParams, sp: &SchemeParams) -> f64 {
        match self {
            MonitoredEnergy::Pseudo => pseudo_of(&state.phi, &state.psi, p),
            MonitoredEnergy::Guaranteed => match state.aux() {
                Aux::Sav { u } => discrete_energy_of(state, u, s, p),
                _ => modified_energy(state, p, sp),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    /// Keep every `record_every`-th step (the last step is always kept).
    pub record_every: usize,
    /// Evaluate the scheme-equation residual after every step.
    pub check_residual: bool,
    /// Abort when the guaranteed energy rises by more than [`ENERGY_SLACK`].
    pub assert_energy: bool,
    pub monitored: MonitoredEnergy,
    /// Use the first-order step for every step.
    pub first_order_only: bool,
    /// Times at which to keep a copy of `phi` (first step reaching each time).
    pub snapshot_times: Vec<f64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            record_every: 10,
            check_residual: false,
            assert_energy: false,
            monitored: MonitoredEnergy::Guaranteed,
            first_order_only: false,
            snapshot_times: Vec::new(),
        }
    }
}

/// Per-run extrema of the invariants, measured on every step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub steps: usize,
    /// `max |mean(phi^n) - mean(phi^0)| / max(1, |mean(phi^0)|)`.
    pub max_mass_drift: f64,
    pub max_psi_mean: f64,
    /// Largest relative one-step increase of the guaranteed energy (same `S`
    /// on both sides); negative when every step decreased it.
    pub max_energy_rise: f64,
    /// Largest relative one-step increase of the pseudo energy.
    pub max_pseudo_rise: f64,
    pub max_residual: f64,
    pub max_xi_deviation: f64,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub requested: f64,
    pub t: f64,
    pub phi: RealField,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub state: SchemeState,
    pub records: Vec<TimeSeriesRecord>,
    pub diagnostics: RunDiagnostics,
    pub snapshots: Vec<Snapshot>,
    /// Time spent in the stepping loop.
    pub wall_seconds: f64,
}

/// A run aborted by an error, with everything recorded up to that point.
#[derive(Clone, Debug)]
pub struct RunFailure {
    pub error: Error,
    pub records: Vec<TimeSeriesRecord>,
    pub diagnostics: RunDiagnostics,
    pub snapshots: Vec<Snapshot>,
    pub last_state: Option<SchemeState>,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (after {} steps, {} records kept)",
            self.error,
            self.diagnostics.steps,
            self.records.len()
        )
    }
}

impl std::error::Error for RunFailure {}

/// Shared stepping machinery: applies a step, updates diagnostics, records.
pub(crate) struct Driver<'a> {
    p: &'a ModelParams,
    sp: &'a SchemeParams,
    forcing: Option<&'a Forcing>,
    opts: &'a RunOptions,
    mean0: f64,
    records: Vec<TimeSeriesRecord>,
    last_recorded: bool,
    last_report: Option<TimeSeriesRecord>,
    snapshots: Vec<Snapshot>,
    pending: Vec<f64>,
    diag: RunDiagnostics,
}

impl<'a> Driver<'a> {
    pub(crate) fn new(
        state0: &SchemeState,
        p: &'a ModelParams,
        sp: &'a SchemeParams,
        forcing: Option<&'a Forcing>,
        opts: &'a RunOptions,
    ) -> Self {
        let mut pending: Vec<f64> = opts.snapshot_times.clone();
        pending.sort_by(|a, b| a.total_cmp(b));
        let mut d = Driver {
            p,
            sp,
            forcing,
            opts,
            mean0: mean(state0.phi_n()),
            records: vec![TimeSeriesRecord::from_state(state0, 0.0, p, sp)],
            last_recorded: true,
            last_report: None,
            snapshots: Vec::new(),
            pending,
            diag: RunDiagnostics {
                max_energy_rise: f64::NEG_INFINITY,
                max_pseudo_rise: f64::NEG_INFINITY,
                ..Default::default()
            },
        };
        d.take_snapshots(state0);
        d
    }

    fn take_snapshots(&mut self, state: &SchemeState) {
        let t = state.t();
        while let Some(&req) = self.pending.first() {
            if t >= req - 1e-9 * req.abs().max(1.0) {
                self.snapshots.push(Snapshot {
                    requested: req,
                    t,
                    phi: state.phi_n().clone(),
                });
                self.pending.remove(0);
            } else {
                break;
            }
        }
    }

    pub(crate) fn step(
        &mut self,
        state: &SchemeState,
        order: StepOrder,
        dt: f64,
        s: f64,
    ) -> Result<StepReport> {
        let sp = self.sp.with_dt(dt).with_stab(s);
        let (p, forcing) = (self.p, self.forcing);
        let before = MonitoredEnergy::Guaranteed.eval(state, s, p, &sp);
        let pseudo_before = pseudo_of(&state.phi, &state.psi, p);
        let report = if self.opts.check_residual {
            advance_checked(state, order, p, &sp, forcing)?
        } else {
            advance(state, order, p, &sp, forcing)?
        };
        let d = &mut self.diag;
        d.steps += 1;
        let m = mean(report.state.phi_n());
        d.max_mass_drift = d
            .max_mass_drift
            .max((m - self.mean0).abs() / self.mean0.abs().max(1.0));
        d.max_psi_mean = d.max_psi_mean.max(mean(report.state.psi_n()).abs());
        if let Some(r) = report.residual {
            d.max_residual = d.max_residual.max(r);
        }
        d.max_xi_deviation = d.max_xi_deviation.max((report.xi - 1.0).abs());
        let after = report.guaranteed_energy();
        let rise = (after - before) / before.abs().max(f64::MIN_POSITIVE);
        d.max_energy_rise = d.max_energy_rise.max(rise);
        let pseudo_rise =
            (report.energies.pseudo - pseudo_before) / pseudo_before.abs().max(f64::MIN_POSITIVE);
        d.max_pseudo_rise = d.max_pseudo_rise.max(pseudo_rise);
        if self.opts.assert_energy && forcing.is_none() && rise > ENERGY_SLACK {
            return Err(Error::EnergyIncrease {
                step: report.state.step_index(),
                before,
                after,
            });
        }

        let row = TimeSeriesRecord::from_report(&report);
        if report.state.step_index() % self.opts.record_every.max(1) == 0 {
            self.records.push(row);
            self.last_recorded = true;
        } else {
            self.last_recorded = false;
        }
        self.last_report = Some(row);
        self.take_snapshots(&report.state);
        Ok(report)
    }

    fn close_records(&mut self) {
        if !self.last_recorded {
            if let Some(r) = self.last_report {
                self.records.push(r);
            }
            self.last_recorded = true;
        }
    }

    pub(crate) fn finish(mut self, state: SchemeState, started: Instant) -> RunOutput {
        self.close_records();
        RunOutput {
            state,
            records: self.records,
            diagnostics: self.diag,
            snapshots: self.snapshots,
            wall_seconds: started.elapsed().as_secs_f64(),
        }
    }

    pub(crate) fn fail(mut self, error: Error, _started: Instant) -> RunFailure {
        self.close_records();
        RunFailure {
            error,
            records: self.records,
            diagnostics: self.diag,
            snapshots: self.snapshots,
            last_state: None,
        }
    }

    pub(crate) fn fail_at(self, error: Error, state: &SchemeState, started: Instant) -> RunFailure {
        let mut f = self.fail(error, started);
        f.last_state = Some(state.clone());
        f
    }
}

fn early_failure(error: Error) -> RunFailure {
    RunFailure {
        error,
        records: Vec::new(),
        diagnostics: RunDiagnostics::default(),
        snapshots: Vec::new(),
        last_state: None,
    }
}

/// Fixed-step run to `t_end`: a first-order start, then CN steps of size
/// `sp.dt`; the last step is shortened to land on `t_end`.
#[allow(clippy::too_many_arguments)]
pub fn run_fixed(
    phi0: &RealField,
    psi0: &RealField,
    kind: SchemeKind,
    p: &ModelParams,
    sp: &SchemeParams,
    t_end: f64,
    forcing: Option<&Forcing>,
    opts: &RunOptions,
) -> std::result::Result<RunOutput, RunFailure> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(early_failure(Error::Config(format!(
            "horizon T must be >= 0 (got {t_end})"
        ))));
    }
    let state0 = SchemeState::initialize(kind, phi0, psi0, p, sp).map_err(early_failure)?;
    let started = Instant::now();
    let mut driver = Driver::new(&state0, p, sp, forcing, opts);
    let mut state = state0;
    let tol = 1e-12 * t_end.max(sp.dt);
    while state.t() < t_end - tol {
        let dt = sp.dt.min(t_end - state.t());
        let order = if state.step_index() == 0 || opts.first_order_only {
            StepOrder::First
        } else {
            StepOrder::Second
        };
        match driver.step(&state, order, dt, sp.stab_s) {
            Ok(r) => state = r.state,
            Err(e) => return Err(driver.fail_at(e, &state, started)),
        }
    }
    Ok(driver.finish(state, started))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub dt: f64,
    pub error: f64,
    /// Observed order between this row and the previous one.
    pub rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log error` against `log dt`.
    pub fitted_rate: f64,
    /// Number of leading (largest-step) rows left out of the fit because
    /// their error exceeds 1. At least two rows are always fitted.
    pub excluded: usize,
    /// Whether the error decreases with every refinement.
    pub monotone: bool,
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Temporal convergence against the manufactured solution on `grid`.
/// Runs for different `dt` execute in parallel.
pub fn convergence_study(
    grid: &Grid,
    kind: SchemeKind,
    p: &ModelParams,
    sp_base: &SchemeParams,
    dt_list: &[f64],
    t_end: f64,
    first_order_only: bool,
) -> Result<ConvergenceTable> {
    if dt_list.len() < 3 {
        return Err(Error::Config(
            "a convergence study needs at least three step sizes".into(),
        ));
    }
    if dt_list.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::Config(
            "step sizes must be strictly decreasing".into(),
        ));
    }
    let forcing = manufactured_forcing(p);
    let (phi0, psi0) = manufactured_exact(grid, 0.0);
    let opts = RunOptions {
        record_every: usize::MAX,
        first_order_only,
        ..Default::default()
    };
    let errors: Vec<Result<f64>> = dt_list
        .par_iter()
        .map(|&dt| {
            let sp = sp_base.with_dt(dt);
            match run_fixed(&phi0, &psi0, kind, p, &sp, t_end, Some(&forcing), &opts) {
                Ok(out) => {
                    let (exact, _) = manufactured_exact(grid, out.state.t());
                    Ok(l2_norm(&out.state.phi_n().lin_comb(1.0, &exact, -1.0)))
                }
                // A step size that breaks down counts as an unbounded error.
                Err(f) => match f.error {
                    Error::Config(_) | Error::Contract(_) => Err(f.error),
                    e => {
                        log::warn!("{kind} at dt = {dt}: {e}");
                        Ok(f64::INFINITY)
                    }
                },
            }
        })
        .collect();
    let errors = errors.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(convergence_table(dt_list, &errors))
}

/// Builds the table from `(dt, error)` pairs ordered by decreasing `dt`.
///
/// Leading rows whose error exceeds 1 (or is not finite) are left out of the
/// fit as pre-asymptotic; at least two rows are always fitted.
pub fn convergence_table(dt_list: &[f64], errors: &[f64]) -> ConvergenceTable {
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(dt_list.len());
    for (i, (&dt, &error)) in dt_list.iter().zip(errors).enumerate() {
        let rate = (i > 0).then(|| {
            let prev = &rows[i - 1];
            (prev.error / error).ln() / (prev.dt / dt).ln()
        });
        rows.push(ConvergenceRow { dt, error, rate });
    }
    let excluded = rows
        .iter()
        .take_while(|r| !(r.error <= 1.0))
        .count()
        .min(rows.len().saturating_sub(2));
    let fit: Vec<&ConvergenceRow> = rows.iter().skip(excluded).collect();
    let x: Vec<f64> = fit.iter().map(|r| r.dt.ln()).collect();
    let y: Vec<f64> = fit.iter().map(|r| r.error.ln()).collect();
    let monotone = rows.windows(2).all(|w| w[1].error < w[0].error);
    ConvergenceTable {
        fitted_rate: fit_slope(&x, &y),
        rows,
        excluded,
        monotone,
    }
}

/// Shared setup of a controller comparison.
#[derive(Clone, Debug)]
pub struct CompareSetup {
    pub phi0: RealField,
    pub psi0: RealField,
    pub kind: SchemeKind,
    pub model: ModelParams,
    pub scheme: SchemeParams,
    pub adaptive: AdaptiveParams,
    /// Parameters of the legacy controller (defaults to `adaptive`).
    pub legacy: Option<AdaptiveParams>,
    pub t_end: f64,
    /// Fixed-step reference run; its stabilization follows the `dt_cr` rule.
    pub fixed_dt: Option<f64>,
    pub opts: RunOptions,
}

#[derive(Debug)]
pub struct CompareRun {
    pub label: String,
    pub result: std::result::Result<RunOutput, RunFailure>,
}

impl CompareRun {
    pub fn steps(&self) -> usize {
        match &self.result {
            Ok(o) => o.diagnostics.steps,
            Err(f) => f.diagnostics.steps,
        }
    }
}

/// Runs each controller (and the optional fixed-step reference) from the
/// same initial state, in parallel.
pub fn adapt_compare(
    setup: &CompareSetup,
    controllers: &[ControllerKind],
) -> Result<Vec<CompareRun>> {
    if controllers.is_empty() {
        return Err(Error::Config("at least one controller is required".into()));
    }
    let state0 = SchemeState::initialize(
        setup.kind,
        &setup.phi0,
        &setup.psi0,
        &setup.model,
        &setup.scheme,
    )?;
    let mut jobs: Vec<Option<ControllerKind>> = controllers.iter().copied().map(Some).collect();
    if setup.fixed_dt.is_some() {
        jobs.push(None);
    }
    Ok(jobs
        .par_iter()
        .map(|job| match job {
            Some(c) => {
                let ap = match c {
                    ControllerKind::Legacy => setup.legacy.unwrap_or(setup.adaptive),
                    ControllerKind::Evma => setup.adaptive,
                };
                CompareRun {
                    label: c.name().to_string(),
                    result: run_adaptive(
                        &state0,
                        &setup.model,
                        &setup.scheme,
                        &ap,
                        *c,
                        setup.t_end,
                        &setup.opts,
                    ),
                }
            }
            None => {
                let dt = setup.fixed_dt.unwrap_or(setup.adaptive.dt_min);
                let sp = setup
                    .scheme
                    .with_dt(dt)
                    .with_stab(stabilization_select(dt, &setup.adaptive));
                CompareRun {
                    label: "fixed".to_string(),
                    result: run_fixed(
                        &setup.phi0,
                        &setup.psi0,
                        setup.kind,
                        &setup.model,
                        &sp,
                        setup.t_end,
                        None,
                        &setup.opts,
                    ),
                }
            }
        })
        .collect())
}

/// Indices `i` where the step sequence turns around at `dts[i]`, i.e. the
/// changes `dts[i] - dts[i-1]` and `dts[i+1] - dts[i]` have opposite signs
/// and both exceed `rel_tol * dts[i]` in magnitude.
pub fn oscillation_events(dts: &[f64], rel_tol: f64) -> Vec<usize> {
    (1..dts.len().saturating_sub(1))
        .filter(|&i| {
            let a = dts[i] - dts[i - 1];
            let b = dts[i + 1] - dts[i];
            let thr = rel_tol * dts[i];
            a.abs() > thr && b.abs() > thr && a.signum() != b.signum()
        })
        .collect()
}

/// Checks a recorded series against the invariants every run satisfies:
/// increasing time, positive steps, conserved mass and (optionally) a
/// bounded ratio between consecutive steps. Returns one message per violation.
pub fn verify_series(records: &[TimeSeriesRecord], ratio_max: Option<f64>) -> Vec<String> {
    let mut out = Vec::new();
    let Some(first) = records.first() else {
        out.push("series is empty".to_string());
        return out;
    };
    let mass_tol = 1e-12 * first.mass.abs().max(1.0) * 10.0;
    for (i, w) in records.windows(2).enumerate() {
        let (a, b) = (&w[0], &w[1]);
        if !(b.t > a.t) {
            out.push(format!(
                "row {}: time {} does not increase past {}",
                i + 1,
                b.t,
                a.t
            ));
        }
        if !(b.dt > 0.0) {
            out.push(format!("row {}: step {} is not positive", i + 1, b.dt));
        }
        if (b.mass - first.mass).abs() > mass_tol {
            out.push(format!(
                "row {}: mass {} differs from {}",
                i + 1,
                b.mass,
                first.mass
            ));
        }
    }
    if let Some(rm) = ratio_max {
        // The final row may be a shortened step that lands on the horizon.
        let dts: Vec<f64> = records.iter().skip(1).map(|r| r.dt).collect();
        let n = dts.len();
        for i in 1..n.saturating_sub(1) {
            let r = dts[i] / dts[i - 1];
            if r > rm * (1.0 + 1e-12) || r < (1.0 - 1e-12) / rm {
                out.push(format!(
                    "row {}: step ratio {r} outside [1/{rm}, {rm}]",
                    i + 2
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p0() -> ModelParams {
        ModelParams {
            alpha: 1.0,
            beta: 1.0,
            mobility: 1.0,
            epsilon: 0.5,
            h_vac: 0.0,
        }
    }

    #[test]
    fn uniform_stream_is_reproducible_and_in_range() {
        let a: Vec<f64> = uniform_stream(42).take(1000).collect();
        let b: Vec<f64> = uniform_stream(42).take(1000).collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|&u| (0.0..1.0).contains(&u)));
        let m = a.iter().sum::<f64>() / 1000.0;
        assert!((m - 0.5).abs() < 0.05);
        // SplitMix64 reference output for seed 0 (first value 0xe220a8397b1dcdaf).
        let first = uniform_stream(0).next().unwrap();
        assert_eq!(
            first,
            (0xe220a8397b1dcdafu64 >> 11) as f64 / (1u64 << 53) as f64
        );
    }

    #[test]
    fn random_initial_data() {
        let g = Grid::uniform(2, 16, 10.0).unwrap();
        let ic = InitialCondition::Random {
            mean: 0.06,
            amplitude: 0.001,
            seed: 7,
        };
        let (phi, psi) = build_initial(&ic, &g).unwrap();
        assert!((mean(&phi) - 0.06).abs() <= 0.001);
        assert!(phi.values().iter().all(|v| (v - 0.06).abs() <= 0.001));
        assert_eq!(psi.max_abs(), 0.0);
        let flat = InitialCondition::Random {
            mean: 0.2,
            amplitude: 0.0,
            seed: 1,
        };
        let (phi, _) = build_initial(&flat, &g).unwrap();
        assert!(phi.values().iter().all(|&v| v == 0.2));
    }

    #[test]
    fn crystallite_patches() {
        let g = Grid::uniform(2, 64, 100.0).unwrap();
        let patch = |cx: f64, th: f64| Patch {
            center: vec![cx, 50.0],
            half_width: 10.0,
            theta: th,
        };
        let ic = InitialCondition::Crystallites {
            mean: 0.285,
            amplitude: 0.446,
            q: 0.66,
            patches: vec![
                patch(20.0, 0.0),
                patch(50.0, -std::f64::consts::FRAC_PI_4),
                patch(80.0, std::f64::consts::FRAC_PI_4),
            ],
        };
        let (phi, _) = build_initial(&ic, &g).unwrap();
        assert!(phi
            .values()
            .iter()
            .all(|v| (v - 0.285).abs() <= 0.446 * 1.5 + 1e-12));
        // Outside the patches the field keeps the mean.
        assert_eq!(phi.values()[0], 0.285);
        // theta = 0 maps (x~, y~) to (y~, -x~): the value at the patch center is the lattice peak.
        let idx = g.n()[1] * (20.0 / 100.0 * 64.0) as usize + 32;
        let x = g.point(idx);
        let (xt, yt) = (x[0] - 20.0, x[1] - 50.0);
        let (xl, yl) = (yt, -xt);
        let s3 = 3f64.sqrt();
        let expect = 0.285
            + 0.446
                * ((0.66 / s3 * yl).cos() * (0.66 * xl).cos() - 0.5 * (2.0 * 0.66 / s3 * yl).cos());
        assert!((phi.values()[idx] - expect).abs() < 1e-14);

        let overlapping = InitialCondition::Crystallites {
            mean: 0.0,
            amplitude: 0.1,
            q: 0.66,
            patches: vec![patch(20.0, 0.0), patch(35.0, 0.0)],
        };
        assert!(matches!(
            build_initial(&overlapping, &g),
            Err(Error::Config(_))
        ));
        let outside = InitialCondition::Crystallites {
            mean: 0.0,
            amplitude: 0.1,
            q: 0.66,
            patches: vec![patch(95.0, 0.0)],
        };
        assert!(build_initial(&outside, &g).is_err());
    }

    #[test]
    fn fixed_run_records_and_horizon() {
        let g = Grid::uniform(2, 16, 20.0).unwrap();
        let (phi0, psi0) = build_initial(
            &InitialCondition::Random {
                mean: 0.1,
                amplitude: 0.05,
                seed: 3,
            },
            &g,
        )
        .unwrap();
        let sp = SchemeParams::new(0.1, 0.0);
        let opts = RunOptions {
            record_every: 3,
            snapshot_times: vec![0.0, 0.25],
            ..Default::default()
        };
        let out = run_fixed(&phi0, &psi0, SchemeKind::Ssav, &p0(), &sp, 0.1, None, &opts).unwrap();
        assert_eq!(out.records.len(), 2);
        let out = run_fixed(&phi0, &psi0, SchemeKind::Ssav, &p0(), &sp, 0.0, None, &opts).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].dt, 0.0);

        let out = run_fixed(
            &phi0,
            &psi0,
            SchemeKind::Sgpav,
            &p0(),
            &sp,
            1.05,
            None,
            &opts,
        )
        .unwrap();
        assert_eq!(out.diagnostics.steps, 11);
        let last = out.records.last().unwrap();
        assert!((last.t - 1.05).abs() < 1e-12);
        assert!((last.dt - 0.05).abs() < 1e-12);
        let ts: Vec<f64> = out.records.iter().map(|r| r.t).collect();
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(out.records.len(), 1 + 3 + 1);
        assert_eq!(out.snapshots.len(), 2);
        assert_eq!(out.snapshots[0].t, 0.0);
        assert!((out.snapshots[1].t - 0.3).abs() < 1e-12);
        assert!(verify_series(&out.records, None).is_empty());
        assert!(out.diagnostics.max_energy_rise < 0.0);
    }

    #[test]
    fn failures_keep_partial_records() {
        let g = Grid::uniform(2, 16, 20.0).unwrap();
        let (phi0, psi0) = build_initial(
            &InitialCondition::Random {
                mean: 0.1,
                amplitude: 0.5,
                seed: 3,
            },
            &g,
        )
        .unwrap();
        // C barely above the initial energy: the ESAV exponent check trips once
        // the predicted energy exceeds C * 709; use a vanishing C with huge data.
        let sp = SchemeParams {
            esav_c: 1e-12,
            ..SchemeParams::new(0.1, 0.0)
        };
        let err = run_fixed(
            &phi0,
            &psi0,
            SchemeKind::Sesav,
            &p0(),
            &sp,
            1.0,
            None,
            &RunOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err.error, Error::Scaling(_)));
        assert!(err.records.is_empty());
    }

    #[test]
    fn fit_slope_of_exact_power_law() {
        let x: Vec<f64> = [0.1f64, 0.05, 0.025].iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = [0.1f64, 0.05, 0.025]
            .iter()
            .map(|v| (3.0 * v * v).ln())
            .collect();
        assert!((fit_slope(&x, &y) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pre_asymptotic_rows_are_left_out_of_the_fit() {
        let dts = [0.4, 0.2, 0.1, 0.05, 0.025];
        let errs = [f64::INFINITY, 3.0, 0.01, 0.0025, 0.000625];
        let t = convergence_table(&dts, &errs);
        assert_eq!(t.excluded, 2);
        assert!((t.fitted_rate - 2.0).abs() < 1e-12);
        assert!(t.monotone);
        let t = convergence_table(&dts, &[5.0, 4.0, 3.0, 2.0, 0.5]);
        assert_eq!(t.excluded, 3);
        let t = convergence_table(&dts[..3], &[0.1, 0.2, 0.05]);
        assert_eq!(t.excluded, 0);
        assert!(!t.monotone);
        assert!((t.rows[1].rate.unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn convergence_table_shape() {
        let g = Grid::uniform(2, 16, 128.0).unwrap();
        let sp = SchemeParams::new(0.1, 1.0);
        let t = convergence_study(
            &g,
            SchemeKind::Ssav,
            &p0(),
            &sp,
            &[0.1, 0.05, 0.025],
            0.5,
            false,
        )
        .unwrap();
        assert_eq!(t.rows.len(), 3);
        assert!(t.rows[0].rate.is_none());
        assert!(t.rows[1..].iter().all(|r| r.rate.unwrap().is_finite()));
        assert!((t.fitted_rate - 2.0).abs() < 0.2, "{t:?}");
        assert!(t.monotone);
        assert!(
            convergence_study(&g, SchemeKind::Ssav, &p0(), &sp, &[0.1, 0.05], 0.5, false).is_err()
        );
    }

    #[test]
    fn oscillation_event_detection() {
        assert!(oscillation_events(&[1.0, 1.5, 2.25, 3.0, 3.0], 1e-3).is_empty());
        assert_eq!(
            oscillation_events(&[1.0, 2.0, 1.0, 2.0, 1.0], 1e-3),
            vec![1, 2, 3]
        );
        assert!(oscillation_events(&[1.0, 1.0 + 1e-9, 1.0], 1e-3).is_empty());
    }

    #[test]
    fn verify_series_flags_violations() {
        let row = |t: f64, dt: f64, mass: f64| TimeSeriesRecord {
            t,
            dt,
            mass,
            e_original: 0.0,
            e_pseudo: 0.0,
            e_modified: 0.0,
            e_discrete: f64::NAN,
            aux: 1.0,
            s_active: 0.0,
        };
        let good = [
            row(0.0, 0.0, 1.0),
            row(0.1, 0.1, 1.0),
            row(0.25, 0.15, 1.0),
            row(0.3, 0.05, 1.0),
        ];
        assert!(verify_series(&good, Some(1.5)).is_empty());
        let bad = [
            row(0.0, 0.0, 1.0),
            row(0.1, 0.1, 1.0),
            row(0.4, 0.3, 1.1),
            row(0.3, 0.3, 1.0),
            row(0.5, 0.2, 1.0),
        ];
        let v = verify_series(&bad, Some(1.5));
        assert!(v.iter().any(|m| m.contains("ratio")));
        assert!(v.iter().any(|m| m.contains("mass")));
        assert!(v.iter().any(|m| m.contains("time")));
    }
}
