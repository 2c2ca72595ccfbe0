//! Desk-scale versions of the scaling figures.

use anyhow::{bail, Result};
use openrabi::correlators::{structure_factor_dynamic, structure_factor_stationary, CorrelatorStart};
use openrabi::evolution::{log_grid, SolverOptions};
use openrabi::model::{g_critical, params_at};
use openrabi::scaling::{collapse_quality, collapse_svg, Quantity, Regime, Rescaling, ScalingDataset, ScalingPoint};
use serde_json::json;

use crate::commands::{fi_points, fi_rows, gap_cmd, qfi_points, solver, steady_state_cmd, write_collapse, QFI_HEADER};
use crate::config::{GridSpec, RunConfig, Spacing, TimeUnits};
use crate::output::{num, Run};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Figure {
    Fig2,
    Fig3,
    Fig5,
    Fig8,
}

/// Preset configuration of a figure; used when no config file is given.
pub fn preset(fig: Figure) -> RunConfig {
    let base = RunConfig { omega: 1.0, kappa: 0.1, ..RunConfig::default() };
    match fig {
        Figure::Fig2 | Figure::Fig3 => RunConfig {
            etas: vec![5.0, 10.0, 20.0],
            n_traj: 10_000,
            ..base
        },
        Figure::Fig5 => RunConfig { etas: vec![5.0, 10.0, 20.0, 40.0], ..base },
        Figure::Fig8 => RunConfig { etas: vec![10.0, 20.0, 40.0], ..base },
    }
}

fn split(ds: &ScalingDataset, regime: Regime, keep: impl Fn(&ScalingPoint) -> bool) -> Result<ScalingDataset> {
    Ok(ScalingDataset::new(
        ds.points.iter().copied().filter(|p| keep(p)).collect(),
        ds.quantity.clone(),
        regime,
    )?)
}

/// κt grid per η reaching the long-time regime.
fn grid_for(eta: f64) -> GridSpec {
    GridSpec { spacing: Spacing::Log, min: 0.1, max: 8.0 * eta, n: 40, units: TimeUnits::Kappa }
}

fn information_figure(cfg: &RunConfig, run: &mut Run, quantity: Quantity) -> Result<()> {
    let points = cfg.points()?;
    let mut rows = Vec::new();
    let mut ds_points = Vec::new();
    for p in &points {
        let times = grid_for(p.eta()).times(cfg.kappa, cfg.omega)?;
        let one = [*p];
        let part = match quantity {
            Quantity::GlobalQfi => {
                let r = qfi_points(cfg, &one, &times)?.remove(0);
                let delta = r.delta_theta;
                r.t_grid
                    .iter()
                    .zip(&r.qfi)
                    .map(|(t, v)| (*t, *v, 0.0, r.method.label().to_string(), 0, delta.unwrap_or(0.0)))
                    .collect::<Vec<_>>()
            }
            Quantity::PhotonCountingFi => {
                let e = fi_points(cfg, &one, &times)?.remove(0);
                rows.extend(fi_rows(p, &e));
                (0..e.t_grid.len())
                    .map(|k| (e.t_grid[k], e.fi[k], e.stderr[k], String::new(), e.n_traj, e.delta_omega))
                    .collect()
            }
        };
        for (t, v, se, method, n, delta) in part {
            if quantity == Quantity::GlobalQfi {
                rows.push(vec![num(p.eta()), num(p.g()), num(p.kappa), num(t), num(v), num(se), method, n.to_string(), num(delta)]);
            }
            if t > 0.0 && v > 0.0 {
                ds_points.push(ScalingPoint { size: p.eta(), t: t * p.kappa, value: v, stderr: se });
            }
        }
    }
    let stem = if quantity == Quantity::GlobalQfi { "qfi" } else { "fi" };
    run.csv(&format!("{stem}.csv"), &QFI_HEADER, &rows)?;
    let all = ScalingDataset::new(ds_points, stem, Regime::Transient)?;
    let transient = split(&all, Regime::Transient, |p| p.t >= 0.5 && p.t <= p.size)?;
    let long = split(&all, Regime::LongTime, |p| p.t >= 3.0 * p.size)?;
    let qa = write_collapse(run, &format!("{stem}_transient"), &transient, quantity)?;
    let qb = write_collapse(run, &format!("{stem}_long_time"), &long, quantity)?;
    run.set_summary(json!({"collapse_quality": {"transient": qa, "long_time": qb}}));
    Ok(())
}

fn fig8(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let opts = solver(cfg);
    let gcp = g_critical(cfg.omega, cfg.kappa)?;
    let hs = log_grid(0.01, 0.8, 12);
    let ks = [0.0, 1.0];
    let mut rows = Vec::new();
    let mut pts = vec![Vec::new(); ks.len()];
    for &eta in &cfg.etas {
        for &h in &hs {
            let p = params_at(gcp - h, eta, cfg.omega, cfg.kappa)?;
            let s: Vec<f64> = ks.iter().map(|k| k / cfg.kappa).collect();
            let st = structure_factor_stationary(&p, &s, &opts)?;
            for (j, v) in st.values.iter().enumerate() {
                rows.push(vec![num(eta), num(p.g()), "inf".into(), num(s[j]), num(*v), "0".into()]);
                pts[j].push(ScalingPoint { size: eta, t: h, value: *v, stderr: 0.0 });
            }
        }
    }
    run.csv("fig8a_stationary.csv", &["eta", "g", "tau", "s", "re_value", "im_value"], &rows)?;
    // S_st/η against |h|·η^{1/ν}
    let r_a = Rescaling { x_t: 1.0, x_size: 0.5, y_t: 0.0, y_size: 1.0 };
    let mut qa = Vec::new();
    for (j, p) in pts.into_iter().enumerate() {
        let ds = ScalingDataset::new(p, "S_st", Regime::LongTime)?;
        qa.push(collapse_quality(&ds, &r_a)?);
        run.svg(&format!("fig8a_ks{}.svg", ks[j]), &collapse_svg(&ds, &r_a, "|h| η^(1/2)", "S_st / η")?)?;
    }

    let mut rows = Vec::new();
    let mut pts = vec![Vec::new(); ks.len()];
    for &eta in &cfg.etas {
        let p = params_at(gcp, eta, cfg.omega, cfg.kappa)?;
        let tau: Vec<f64> = log_grid(0.5, 5.0 * eta, 16).iter().map(|k| k / cfg.kappa).collect();
        let s: Vec<f64> = ks.iter().map(|k| k / cfg.kappa).collect();
        let g = structure_factor_dynamic(&p, &CorrelatorStart::default(), &tau, &s, &SolverOptions { check_invariants: false, ..opts })?;
        for (k, t) in g.tau_grid.iter().enumerate() {
            for (j, sv) in g.s_grid.iter().enumerate() {
                let v = g.values[k][j];
                rows.push(vec![num(eta), num(p.g()), num(*t), num(*sv), num(v.re), num(v.im)]);
                pts[j].push(ScalingPoint { size: eta, t: t * cfg.kappa, value: v.re, stderr: 0.0 });
            }
        }
    }
    run.csv("fig8b_dynamic.csv", &["eta", "g", "tau", "s", "re_value", "im_value"], &rows)?;
    let r_b = Rescaling { x_t: 1.0, x_size: -1.0, y_t: 1.0, y_size: 0.0 };
    let mut qb = Vec::new();
    for (j, p) in pts.into_iter().enumerate() {
        let ds = ScalingDataset::new(p, "S", Regime::Transient)?;
        qb.push(collapse_quality(&ds, &r_b)?);
        run.svg(&format!("fig8b_ks{}.svg", ks[j]), &collapse_svg(&ds, &r_b, "κτ/η", "S / κτ")?)?;
    }
    run.set_summary(json!({"kappa_s": ks, "stationary_quality": qa, "dynamic_quality": qb}));
    Ok(())
}

pub fn reproduce(fig: Figure, cfg: &RunConfig, run: &mut Run) -> Result<()> {
    run.note("reference parameters kappa = 0.1, omega = 1; sizes eta and trajectory counts reduced to desk scale");
    match fig {
        Figure::Fig2 => information_figure(cfg, run, Quantity::GlobalQfi),
        Figure::Fig3 => {
            if cfg.n_traj < 100 {
                bail!("n_traj: must be at least 100, got {}", cfg.n_traj);
            }
            information_figure(cfg, run, Quantity::PhotonCountingFi)
        }
        Figure::Fig5 => {
            gap_cmd(cfg, run)?;
            let gap_summary = run_summary_take(run);
            let off = RunConfig { g_over_gcp: 0.3, ..cfg.clone() };
            let mut sub = Run::new(&run.dir().join("off_critical"), "gap", &off)?;
            gap_cmd(&off, &mut sub)?;
            sub.finish()?;
            let ss_cfg = RunConfig { etas: cfg.etas.iter().map(|e| e * 2.0).collect(), ..cfg.clone() };
            let mut sub = Run::new(&run.dir().join("steady_state"), "steady-state", &ss_cfg)?;
            steady_state_cmd(&ss_cfg, &mut sub)?;
            sub.finish()?;
            let qfi_cfg = RunConfig { g_over_gcp: 0.8, etas: vec![5.0, 10.0, 20.0], ..cfg.clone() };
            let mut sub = Run::new(&run.dir().join("qfi_off_critical"), "qfi", &qfi_cfg)?;
            information_figure(&qfi_cfg, &mut sub, Quantity::GlobalQfi)?;
            sub.finish()?;
            run.set_summary(gap_summary);
            Ok(())
        }
        Figure::Fig8 => fig8(cfg, run),
    }
}

fn run_summary_take(run: &mut Run) -> serde_json::Value {
    let v = run.summary().clone();
    run.set_summary(serde_json::Value::Null);
    v
}
