use std::fmt::Write as _;
use std::path::Path;

use vmpfc::adaptive::{run_adaptive, stabilization_select};
use vmpfc::io::{format_f64, read_series_file};
use vmpfc::model::{nonlinear_integral, original_energy, pseudo_energy};
use vmpfc::schemes::symbol_minimum;
use vmpfc::sim::{
    adapt_compare, build_initial, convergence_study, oscillation_events, run_fixed, verify_series,
    CompareSetup, InitialCondition, RunFailure, RunOutput, TimeSeriesRecord,
};
use vmpfc::spectral::mean;
use vmpfc::{ControllerKind, SchemeState, StepOrder};

use crate::config::RunConfig;
use crate::failure::Failure;
use crate::output::OutputDir;

/// Relative step change counted by the oscillation report.
const OSCILLATION_TOL: f64 = 0.1;

pub fn run(cfg: &RunConfig, out_flag: Option<&Path>) -> Result<(), Failure> {
    let grid = cfg.grid()?;
    let t_end = cfg.t_end()?;
    let p = cfg.model();
    let kind = cfg.scheme.kind;
    if cfg.time.controller.is_none() && cfg.time.dt.is_none() {
        return Err(Failure::Config("set time.dt or time.controller".into()));
    }
    let (phi0, psi0) = build_initial(&cfg.initial, &grid)?;
    let out = OutputDir::acquire(&cfg.out_dir(out_flag))?;
    out.write_text("config.toml", &cfg.resolved())?;
    let opts = cfg.run_options(cfg.time.controller.is_some());
    let result = match (cfg.time.controller, cfg.time.dt) {
        (Some(c), _) => {
            let ap = match c {
                ControllerKind::Evma => cfg.adaptive,
                ControllerKind::Legacy => cfg.legacy_params(),
            };
            let sp = cfg.scheme_params(ap.dt_min);
            match SchemeState::initialize(kind, &phi0, &psi0, &p, &sp) {
                Ok(st) => run_adaptive(&st, &p, &sp, &ap, c, t_end, &opts),
                Err(e) => {
                    out.write_series("series.csv", &[])?;
                    out.append_error(&e.to_string())?;
                    return Err(e.into());
                }
            }
        }
        (None, Some(dt)) => run_fixed(
            &phi0,
            &psi0,
            kind,
            &p,
            &cfg.scheme_params(dt),
            t_end,
            None,
            &opts,
        ),
        (None, None) => unreachable!("checked above"),
    };
    match result {
        Ok(o) => {
            out.write_series("series.csv", &o.records)?;
            out.write_snapshots(&o.snapshots, kind.name())?;
            println!("{}", run_summary(kind.name(), &o));
            Ok(())
        }
        Err(f) => {
            out.write_series("series.csv", &f.records)?;
            out.write_snapshots(&f.snapshots, kind.name())?;
            out.append_error(&failure_text(&f))?;
            Err(f.error.into())
        }
    }
}

fn run_summary(label: &str, o: &RunOutput) -> String {
    let d = &o.diagnostics;
    let (first, last) = (o.records.first(), o.records.last());
    let mut s = format!(
        "{label}: {} steps to t = {}, wall {:.3} s",
        d.steps,
        o.state.t(),
        o.wall_seconds
    );
    if let (Some(a), Some(b)) = (first, last) {
        let _ = write!(s, ", E {:.6e} -> {:.6e}", a.e_original, b.e_original);
    }
    let _ = write!(s, ", mass drift {:.2e}", d.max_mass_drift);
    s
}

fn failure_text(f: &RunFailure) -> String {
    let mut s = f.to_string();
    if let Some(st) = &f.last_state {
        let _ = write!(
            s,
            "\nlast completed step {} at t = {}",
            st.step_index(),
            st.t()
        );
    }
    s
}

pub fn converge(cfg: &RunConfig, out_flag: Option<&Path>) -> Result<(), Failure> {
    let grid = cfg.grid()?;
    let c = &cfg.converge;
    let t_end = match c.t_end {
        Some(t) => t,
        None => cfg
            .time
            .t_end
            .ok_or_else(|| Failure::Config("set converge.T or time.T".into()))?,
    };
    let first_dt = *c
        .dt_list
        .first()
        .ok_or_else(|| Failure::Config("converge.dt_list is empty".into()))?;
    let sp = cfg.scheme_params(first_dt);
    let table = convergence_study(
        &grid,
        cfg.scheme.kind,
        &cfg.model(),
        &sp,
        &c.dt_list,
        t_end,
        c.first_order_only,
    )?;
    let out = OutputDir::acquire(&cfg.out_dir(out_flag))?;
    out.write_text("config.toml", &cfg.resolved())?;
    let mut csv = String::from("dt,error,rate\n");
    for r in &table.rows {
        let rate = r.rate.map(format_f64).unwrap_or_else(|| "nan".into());
        let _ = writeln!(csv, "{},{},{rate}", format_f64(r.dt), format_f64(r.error));
    }
    out.write_text("convergence.csv", &csv)?;

    println!("{:>12} {:>14} {:>8}", "dt", "error", "rate");
    for r in &table.rows {
        let rate = r.rate.map(|v| format!("{v:.3}")).unwrap_or_default();
        println!("{:>12.4e} {:>14.6e} {rate:>8}", r.dt, r.error);
    }
    let (lo, hi) = match (c.first_order_only, c.rate_min, c.rate_max) {
        (_, Some(a), Some(b)) => (a, b),
        (true, a, b) => (a.unwrap_or(0.8), b.unwrap_or(1.2)),
        (false, a, b) => (a.unwrap_or(1.8), b.unwrap_or(2.2)),
    };
    println!(
        "fitted rate {:.4} over {} rows ({} leading rows with error > 1 left out)",
        table.fitted_rate,
        table.rows.len() - table.excluded,
        table.excluded
    );
    if !table.monotone {
        println!("errors are not monotone in dt");
    }
    if (lo..=hi).contains(&table.fitted_rate) {
        Ok(())
    } else {
        Err(Failure::Verification(format!(
            "fitted rate {:.4} outside [{lo}, {hi}]",
            table.fitted_rate
        )))
    }
}

pub fn adapt_compare_cmd(cfg: &RunConfig, out_flag: Option<&Path>) -> Result<(), Failure> {
    let grid = cfg.grid()?;
    let t_end = cfg.t_end()?;
    let (phi0, psi0) = build_initial(&cfg.initial, &grid)?;
    let setup = CompareSetup {
        phi0,
        psi0,
        kind: cfg.scheme.kind,
        model: cfg.model(),
        scheme: cfg.scheme_params(cfg.adaptive.dt_min),
        adaptive: cfg.adaptive,
        legacy: Some(cfg.legacy_params()),
        t_end,
        fixed_dt: cfg.compare.fixed_dt,
        opts: cfg.run_options(true),
    };
    let out = OutputDir::acquire(&cfg.out_dir(out_flag))?;
    out.write_text("config.toml", &cfg.resolved())?;
    let runs = adapt_compare(&setup, &cfg.compare.controllers)?;

    let mut summary = String::from("controller,steps,wall_seconds\n");
    let mut failed = Vec::new();
    println!(
        "{:<8} {:>8} {:>10} {:>12}  status",
        "run", "steps", "wall [s]", "oscillations"
    );
    for r in &runs {
        let name = format!("series_{}.csv", r.label);
        let (records, wall, status) = match &r.result {
            Ok(o) => (
                &o.records,
                format!("{:.3}", o.wall_seconds),
                "ok".to_string(),
            ),
            Err(f) => {
                out.append_error(&format!("{}: {}", r.label, failure_text(f)))?;
                failed.push(format!("{}: {}", r.label, f.error));
                (
                    &f.records,
                    "nan".to_string(),
                    format!("failed: {}", f.error),
                )
            }
        };
        out.write_series(&name, records)?;
        let _ = writeln!(summary, "{},{},{wall}", r.label, r.steps());
        let events = oscillation_events(&step_sizes(records), OSCILLATION_TOL).len();
        println!(
            "{:<8} {:>8} {wall:>10} {events:>12}  {status}",
            r.label,
            r.steps()
        );
    }
    out.write_text("summary.csv", &summary)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numerical(failed.join("; ")))
    }
}

fn step_sizes(records: &[TimeSeriesRecord]) -> Vec<f64> {
    records.iter().skip(1).map(|r| r.dt).collect()
}

pub fn info(cfg: &RunConfig) -> Result<(), Failure> {
    let grid = cfg.grid()?;
    let p = cfg.model();
    println!("# resolved configuration");
    print!("{}", cfg.resolved());
    println!();

    let dx: Vec<f64> = grid
        .lengths()
        .iter()
        .zip(grid.n())
        .map(|(l, n)| l / *n as f64)
        .collect();
    println!(
        "grid: n {:?}, L {:?}, dx {:?}, {} points",
        grid.n(),
        grid.lengths(),
        dx,
        grid.len()
    );

    let mut steps: Vec<(f64, f64)> = Vec::new();
    match (cfg.time.controller, cfg.time.dt) {
        (Some(c), _) => {
            let ap = match c {
                ControllerKind::Evma => cfg.adaptive,
                ControllerKind::Legacy => cfg.legacy_params(),
            };
            for dt in [ap.dt_min, ap.dt_max] {
                steps.push((dt, stabilization_select(dt, &ap)));
            }
        }
        (None, Some(dt)) => steps.push((dt, cfg.scheme.stab_s)),
        (None, None) => println!("symbol check skipped: no step size configured"),
    }
    for (dt, s) in steps {
        let sp = cfg.scheme_params(dt).with_stab(s);
        for (order, label) in [(StepOrder::First, "first-order"), (StepOrder::Second, "CN")] {
            let (v, mode) = symbol_minimum(&grid, order, &p, &sp);
            let verdict = if v > 0.0 && v.is_finite() {
                "positive"
            } else {
                "NOT positive"
            };
            println!(
                "{label} symbol at dt = {dt}, S = {s}: minimum {v:.6e} at mode {mode:?}, {verdict}"
            );
        }
    }

    let (phi0, psi0) = build_initial(&cfg.initial, &grid)?;
    let vals = phi0.values();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("initial phi: mean {}, min {lo}, max {hi}", mean(&phi0));
    if let InitialCondition::Crystallites { patches, .. } = &cfg.initial {
        for (i, pa) in patches.iter().enumerate() {
            println!(
                "patch {}: center {:?}, half width {}, theta {} rad ({:.1} deg)",
                i + 1,
                pa.center,
                pa.half_width,
                pa.theta,
                pa.theta.to_degrees()
            );
        }
    }

    let e = original_energy(&phi0, &p);
    let pe = pseudo_energy(&phi0, &psi0, &p)?;
    let nl = nonlinear_integral(&phi0, &p);
    let vol = grid.volume();
    println!("initial energy E = {e:.10e}, pseudo energy = {pe:.10e}");

    let sc = &cfg.scheme;
    let rad = nl + sc.b;
    if rad > 0.0 {
        println!("u0 = {}", rad.sqrt());
    } else {
        println!(
            "u0 undefined: int(F + F_vac) + b = {rad:e} <= 0; suggested b > {:e}",
            -nl
        );
    }
    let e1 = pe + sc.c0 * vol;
    if e1 > 0.0 {
        println!("R0 = {}", e1.sqrt());
    } else {
        println!(
            "R0 undefined: pseudo energy + c0 |Omega| = {e1:e} <= 0; suggested c0 > {:e}",
            -pe / vol
        );
    }
    let x = pe / sc.esav_c;
    if x <= vmpfc::model::EXP_LIMIT {
        println!("B0 = {}", x.exp());
    } else {
        println!("B0 overflows: pseudo energy / C = {x:e}");
    }
    if sc.esav_c < pe {
        println!(
            "C = {} is below the initial pseudo energy; suggested C >= {pe:e}",
            sc.esav_c
        );
    }
    Ok(())
}

pub fn verify(path: &Path, ratio_max: Option<f64>, energy: bool) -> Result<(), Failure> {
    let records = read_series_file(path)?;
    let mut problems = verify_series(&records, ratio_max);
    if energy {
        for (i, w) in records.windows(2).enumerate() {
            let (a, b) = (&w[0], &w[1]);
            // Only rows with the same stabilization measure the same energy.
            if a.s_active != b.s_active {
                continue;
            }
            let (ea, eb) = (a.guaranteed(), b.guaranteed());
            if eb - ea > 1e-9 * ea.abs() {
                problems.push(format!(
                    "row {}: guaranteed energy rises {ea} -> {eb}",
                    i + 2
                ));
            }
        }
    }
    let events = oscillation_events(&step_sizes(&records), OSCILLATION_TOL).len();
    println!(
        "{}: {} rows, {events} step oscillation events",
        path.display(),
        records.len()
    );
    if problems.is_empty() {
        println!("ok");
        Ok(())
    } else {
        for p in &problems {
            println!("{p}");
        }
        Err(Failure::Verification(format!(
            "{} violation(s) in {}",
            problems.len(),
            path.display()
        )))
    }
}
