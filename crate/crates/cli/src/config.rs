//! Run configuration: sectioned TOML plus `--set section.key=value` overrides.
//!
//! Every section rejects unknown keys. Errors name the offending key path.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};
use vmpfc::sim::{InitialCondition, MonitoredEnergy, RunOptions};
use vmpfc::{AdaptiveParams, ControllerKind, Grid, ModelParams, SchemeKind, SchemeParams};

use crate::failure::Failure;

/// A scalar applied to every axis or one value per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerAxis<T> {
    One(T),
    Each(Vec<T>),
}

impl<T: Copy> PerAxis<T> {
    fn expand(&self, dim: usize, key: &str) -> Result<Vec<T>, Failure> {
        match self {
            PerAxis::One(v) => Ok(vec![*v; dim]),
            PerAxis::Each(v) if v.len() == dim => Ok(v.clone()),
            PerAxis::Each(v) => Err(Failure::Config(format!(
                "{key}: {} entries given, grid.dim = {dim}",
                v.len()
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub n: PerAxis<usize>,
    #[serde(rename = "L")]
    pub lengths: PerAxis<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "one")]
    pub mobility: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub h_vac: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeSection {
    pub kind: SchemeKind,
    #[serde(rename = "S")]
    pub stab_s: f64,
    pub b: f64,
    pub c0: f64,
    #[serde(rename = "C")]
    pub esav_c: f64,
}

impl Default for SchemeSection {
    fn default() -> Self {
        SchemeSection {
            kind: SchemeKind::Ssav,
            stab_s: 0.0,
            b: SchemeParams::DEFAULT_SAV_B,
            c0: SchemeParams::DEFAULT_GPAV_C0,
            esav_c: SchemeParams::DEFAULT_ESAV_C,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    /// Fixed step. Mutually exclusive with `controller`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerKind>,
}

/// Overrides applied on top of `[adaptive]` for the legacy controller.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LegacySection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha1: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Defaults to 1 for adaptive runs and 10 for fixed-step runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,
    pub snapshot_times: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    pub check_residual: bool,
    pub assert_energy: bool,
    pub monitored: MonitoredEnergy,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeSection {
    pub dt_list: Vec<f64>,
    /// Horizon of the study; falls back to `time.T`.
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    pub first_order_only: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub controllers: Vec<ControllerKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_dt: Option<f64>,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection {
            controllers: vec![ControllerKind::Evma, ControllerKind::Legacy],
            fixed_dt: None,
        }
    }
}

fn default_initial() -> InitialCondition {
    InitialCondition::Constant { value: 0.0 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub model: ModelSection,
    #[serde(default)]
    pub scheme: SchemeSection,
    #[serde(default = "default_initial")]
    pub initial: InitialCondition,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub adaptive: AdaptiveParams,
    #[serde(default)]
    pub legacy: LegacySection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub converge: ConvergeSection,
    #[serde(default)]
    pub compare: CompareSection,
}

/// Parses `value` as a TOML value; anything that does not parse is a string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies one `key.path=value` override to `table`.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), Failure> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Failure::Config(format!("--set `{assignment}`: expected key=value")))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').map(str::trim).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Failure::Config(format!(
            "--set `{assignment}`: malformed key `{key}`"
        )));
    }
    let (last, sections) = parts.split_last().expect("split yields at least one part");
    let mut t = table;
    for s in sections {
        t = t
            .entry(s.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| Failure::Config(format!("--set {key}: `{s}` is not a section")))?;
    }
    t.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Reads `path` (if any), applies the overrides in order and validates.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, Failure> {
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            toml::from_str::<Table>(&text)
                .map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    from_table(table)
}

pub fn from_table(table: Table) -> Result<RunConfig, Failure> {
    let cfg: RunConfig = serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        // The TOML error repeats the key on a second line.
        let msg = e.inner().to_string();
        let msg = msg.lines().next().unwrap_or_default().to_string();
        if path == "." {
            Failure::Config(msg)
        } else {
            Failure::Config(format!("{path}: {msg}"))
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn named(section: &str, e: vmpfc::Error) -> Failure {
    match e {
        vmpfc::Error::Config(m) if m.starts_with(&format!("{section}.")) => Failure::Config(m),
        vmpfc::Error::Config(m) => Failure::Config(format!("[{section}] {m}")),
        other => Failure::Config(format!("[{section}] {other}")),
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), Failure> {
        self.grid()?;
        self.model().validate().map_err(|e| named("model", e))?;
        self.scheme_params(self.time.dt.unwrap_or(1.0))
            .validate()
            .map_err(|e| named("scheme", e))?;
        self.adaptive.validate().map_err(|e| named("adaptive", e))?;
        self.legacy_params()
            .validate()
            .map_err(|e| named("legacy", e))?;
        if let Some(t) = self.time.t_end {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Failure::Config(format!("time.T must be >= 0 (got {t})")));
            }
        }
        if let Some(dt) = self.time.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Failure::Config(format!("time.dt must be > 0 (got {dt})")));
            }
            if self.time.controller.is_some() {
                return Err(Failure::Config(
                    "time.dt and time.controller are mutually exclusive".into(),
                ));
            }
        }
        if self.output.record_every == Some(0) {
            return Err(Failure::Config("output.record_every must be >= 1".into()));
        }
        if let Some(t) = self
            .output
            .snapshot_times
            .iter()
            .find(|t| !(**t >= 0.0 && t.is_finite()))
        {
            return Err(Failure::Config(format!(
                "output.snapshot_times: {t} is not a time >= 0"
            )));
        }
        if let Some(dt) = self.compare.fixed_dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Failure::Config(format!(
                    "compare.fixed_dt must be > 0 (got {dt})"
                )));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid, Failure> {
        let dim = self.grid.dim;
        if !(1..=3).contains(&dim) {
            return Err(Failure::Config(format!(
                "grid.dim must be 1, 2 or 3 (got {dim})"
            )));
        }
        let n = self.grid.n.expand(dim, "grid.n")?;
        let l = self.grid.lengths.expand(dim, "grid.L")?;
        Grid::new(&n, &l).map_err(|e| named("grid", e))
    }

    pub fn model(&self) -> ModelParams {
        let m = &self.model;
        ModelParams {
            alpha: m.alpha,
            beta: m.beta,
            mobility: m.mobility,
            epsilon: m.epsilon,
            h_vac: m.h_vac,
        }
    }

    pub fn scheme_params(&self, dt: f64) -> SchemeParams {
        SchemeParams {
            stab_s: self.scheme.stab_s,
            sav_b: self.scheme.b,
            gpav_c0: self.scheme.c0,
            esav_c: self.scheme.esav_c,
            dt,
        }
    }

    pub fn legacy_params(&self) -> AdaptiveParams {
        let l = &self.legacy;
        AdaptiveParams {
            dt_min: l.dt_min.unwrap_or(self.adaptive.dt_min),
            dt_max: l.dt_max.unwrap_or(self.adaptive.dt_max),
            alpha1: l.alpha1.unwrap_or(self.adaptive.alpha1),
            ..self.adaptive
        }
    }

    pub fn t_end(&self) -> Result<f64, Failure> {
        self.time
            .t_end
            .ok_or_else(|| Failure::Config("time.T is required for this command".into()))
    }

    pub fn run_options(&self, adaptive: bool) -> RunOptions {
        RunOptions {
            record_every: self
                .output
                .record_every
                .unwrap_or(if adaptive { 1 } else { 10 }),
            check_residual: self.diagnostics.check_residual,
            assert_energy: self.diagnostics.assert_energy,
            monitored: self.diagnostics.monitored,
            first_order_only: false,
            snapshot_times: self.output.snapshot_times.clone(),
        }
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    /// The configuration with every default filled in, as TOML.
    pub fn resolved(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("# cannot render configuration: {e}\n"))
    }
}
