//! Time-step controllers.
//!
//! [`ControllerKind::Evma`] smooths the step selection with a moving average
//! of recent energy variations and limits the ratio of consecutive steps.
//! [`ControllerKind::Legacy`] maps the instantaneous energy derivative to a
//! step directly, without averaging or clamping.
//!
//! Both switch the stabilization on (`S = s_cr`) for steps larger than `dt_cr`.

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, SchemeParams};
use crate::schemes::{SchemeState, StepOrder};
use crate::sim::{Driver, RunFailure, RunOptions, RunOutput};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveParams {
    pub w_size: usize,
    pub ratio_max: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub dt_cr: f64,
    pub alpha1: f64,
    pub s_cr: f64,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        AdaptiveParams {
            w_size: 7,
            ratio_max: 1.5,
            dt_min: 1e-4,
            dt_max: 2.0,
            dt_cr: 0.014,
            alpha1: 1e4,
            s_cr: 100.0,
        }
    }
}

impl AdaptiveParams {
    pub fn validate(&self) -> Result<()> {
        if self.w_size == 0 {
            return Err(Error::Config("adaptive.w_size must be >= 1".into()));
        }
        if !(self.ratio_max > 1.0) {
            return Err(Error::Config(format!(
                "adaptive.ratio_max must be > 1 (got {})",
                self.ratio_max
            )));
        }
        if !(self.dt_min > 0.0 && self.dt_min.is_finite()) {
            return Err(Error::Config(format!(
                "adaptive.dt_min must be > 0 (got {})",
                self.dt_min
            )));
        }
        if !(self.dt_max >= self.dt_min && self.dt_max.is_finite()) {
            return Err(Error::Config(format!(
                "adaptive.dt_min ({}) must not exceed adaptive.dt_max ({})",
                self.dt_min, self.dt_max
            )));
        }
        if !(self.dt_cr > 0.0) {
            return Err(Error::Config(format!(
                "adaptive.dt_cr must be > 0 (got {})",
                self.dt_cr
            )));
        }
        if !(self.alpha1 > 0.0 && self.alpha1.is_finite()) {
            return Err(Error::Config(format!(
                "adaptive.alpha1 must be > 0 (got {})",
                self.alpha1
            )));
        }
        if !(self.s_cr > 0.0 && self.s_cr.is_finite()) {
            return Err(Error::Config(format!(
                "adaptive.s_cr must be > 0 (got {})",
                self.s_cr
            )));
        }
        Ok(())
    }
}

/// Window of the most recent `|Delta E|` values.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyHistory {
    buf: VecDeque<f64>,
    cap: usize,
}

impl EnergyHistory {
    pub fn new(w_size: usize) -> Self {
        EnergyHistory {
            buf: VecDeque::with_capacity(w_size + 1),
            cap: w_size.max(1),
        }
    }

    pub fn push(&mut self, e_new: f64, e_old: f64) {
        self.buf.push_back((e_new - e_old).abs());
        while self.buf.len() > self.cap {
            self.buf.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.buf.iter().copied()
    }

    pub fn mean(&self) -> Option<f64> {
        if self.buf.is_empty() {
            None
        } else {
            Some(self.buf.iter().sum::<f64>() / self.buf.len() as f64)
        }
    }
}

pub fn history_push(h: &EnergyHistory, e_new: f64, e_old: f64) -> EnergyHistory {
    let mut out = h.clone();
    out.push(e_new, e_old);
    out
}

/// `max(dt_min, dt_max / sqrt(1 + alpha1 * mean(history)))`.
pub fn evma_propose(h: &EnergyHistory, params: &AdaptiveParams) -> Result<f64> {
    let mean = h.mean().ok_or_else(|| {
        Error::Contract("energy history is empty; push a variation before proposing".into())
    })?;
    Ok(params
        .dt_min
        .max(params.dt_max / (1.0 + params.alpha1 * mean).sqrt()))
}

pub fn ratio_clamp(dt_proposed: f64, dt_old: f64, params: &AdaptiveParams) -> f64 {
    let rho = dt_proposed / dt_old;
    if rho > params.ratio_max {
        dt_old * params.ratio_max
    } else if rho < 1.0 / params.ratio_max {
        dt_old / params.ratio_max
    } else {
        dt_proposed
    }
}

/// `s_cr` for steps strictly larger than `dt_cr`, otherwise 0.
pub fn stabilization_select(dt: f64, params: &AdaptiveParams) -> f64 {
    if dt > params.dt_cr {
        params.s_cr
    } else {
        0.0
    }
}

/// Energy-derivative rule with `E' = (e_new - e_old) / dt_old`.
pub fn legacy_propose(e_new: f64, e_old: f64, dt_old: f64, params: &AdaptiveParams) -> f64 {
    let de = (e_new - e_old) / dt_old;
    params
        .dt_min
        .max(params.dt_max / (1.0 + params.alpha1 * de * de).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Evma,
    Legacy,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Evma => "evma",
            ControllerKind::Legacy => "legacy",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "evma" => Ok(ControllerKind::Evma),
            "legacy" => Ok(ControllerKind::Legacy),
            other => Err(Error::Config(format!(
                "unknown controller `{other}` (expected evma or legacy)"
            ))),
        }
    }
}

/// Runs the adaptive loop from `state0` (step 0) to `t_end`.
///
/// The first step is a first-order step at `dt_min` without stabilization.
/// Every later step is a CN step whose stabilization is chosen from its own
/// size. The energy difference that drives the controller compares the
/// monitored energy before and after each step evaluated with the same
/// stabilization, so switching `S` does not register as an energy jump.
/// A step that would pass `t_end` is shortened to land on it.
#[allow(clippy::too_many_arguments)]
pub fn run_adaptive(
    state0: &SchemeState,
    p: &ModelParams,
    sp: &SchemeParams,
    ap: &AdaptiveParams,
    controller: ControllerKind,
    t_end: f64,
    opts: &RunOptions,
) -> std::result::Result<RunOutput, RunFailure> {
    let started = Instant::now();
    let mut driver = Driver::new(state0, p, sp, None, opts);
    if let Err(error) = ap.validate().and_then(|_| {
        if t_end > 0.0 && t_end.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "horizon T must be > 0 (got {t_end})"
            )))
        }
    }) {
        return Err(driver.fail(error, started));
    }
    let monitored = opts.monitored;
    let mut state = state0.clone();
    let mut history = EnergyHistory::new(ap.w_size);

    let dt0 = ap.dt_min.min(t_end);
    let report = match driver.step(&state, StepOrder::First, dt0, 0.0) {
        Ok(r) => r,
        Err(e) => return Err(driver.fail(e, started)),
    };
    state = report.state;
    let mut dt_new = ap.dt_min;

    while state.t() < t_end - 1e-12 * t_end {
        let remaining = t_end - state.t();
        let dt = if dt_new >= remaining {
            remaining
        } else {
            dt_new
        };
        let s = stabilization_select(dt, ap);
        // Energy of the current level measured with the upcoming stabilization.
        let e_before = monitored.eval(&state, s, p, sp);
        let report = match driver.step(&state, StepOrder::Second, dt, s) {
            Ok(r) => r,
            Err(e) => return Err(driver.fail_at(e, &state, started)),
        };
        state = report.state;
        let e_new = monitored.eval(&state, s, p, sp);
        let proposed = match controller {
            ControllerKind::Evma => {
                history.push(e_new, e_before);
                match evma_propose(&history, ap) {
                    Ok(v) => ratio_clamp(v, dt, ap),
                    Err(e) => return Err(driver.fail_at(e, &state, started)),
                }
            }
            ControllerKind::Legacy => legacy_propose(e_new, e_before, dt, ap),
        };
        dt_new = proposed;
    }
    Ok(driver.finish(state, started))
}
