//! Subcommand implementations.

use anyhow::{bail, Result};
use openrabi::correlators::{structure_factor_dynamic, CorrelatorStart};
use openrabi::evolution::{liouvillian_gap, propagate, steady_state, GapOptions, SolverOptions};
use openrabi::information::{
    fi_photon_counting, global_qfi_correlator, global_qfi_generalized_me, FIEstimate, FiOptions, QFIResult, QfiOptions,
};
use openrabi::model::{ModelOperators, ModelParams};
use openrabi::scaling::{collapse_quality, collapse_svg, fit_power_law, Quantity, Rescaling, ScalingDataset, ScalingExponents, ScalingPoint};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{QfiMethodArg, RunConfig, StartKind};
use crate::output::{num, read_csv, Run};

pub const QFI_HEADER: [&str; 9] = ["eta", "g", "kappa", "t", "value", "stderr", "method", "n_traj", "delta"];

fn label<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

pub fn solver(cfg: &RunConfig) -> SolverOptions {
    SolverOptions {
        dt: cfg.dt,
        max_n_cutoff: cfg.max_n_cutoff,
        ..SolverOptions::default()
    }
}

fn start(cfg: &RunConfig) -> CorrelatorStart {
    match cfg.start {
        StartKind::Vacuum => CorrelatorStart::default(),
        StartKind::Stationary => CorrelatorStart::Stationary,
    }
}

/// Fit y ∝ η^k when the sweep allows it.
fn size_fit(etas: &[f64], ys: &[f64]) -> serde_json::Value {
    match fit_power_law(etas, ys, None) {
        Ok(f) => json!({"exponent": f.exponent, "stderr": f.stderr, "r_squared": f.r_squared}),
        Err(e) => json!({"skipped": e.to_string()}),
    }
}

pub fn steady_state_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let points = cfg.points()?;
    let opts = solver(cfg);
    let results = points
        .par_iter()
        .map(|p| steady_state(p, &opts))
        .collect::<openrabi::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (p, ss) in points.iter().zip(&results) {
        rows.push(vec![
            num(p.eta()),
            num(p.g()),
            num(p.kappa),
            "photon_number".into(),
            num(ss.photon_number()),
            num(ss.residual),
            ss.params.n_cutoff.to_string(),
            label(&ss.method),
            num(ss.state.purity()),
        ]);
    }
    run.csv(
        "steady_state.csv",
        &["eta", "g", "kappa", "quantity", "value", "residual", "n_cutoff", "method", "purity"],
        &rows,
    )?;
    let ns: Vec<f64> = results.iter().map(|s| s.photon_number()).collect();
    run.set_summary(json!({"photon_number_vs_eta": size_fit(&cfg.etas, &ns)}));
    Ok(())
}

pub fn gap_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let points = cfg.points()?;
    let opts = GapOptions {
        solver: solver(cfg),
        ..GapOptions::default()
    };
    let results = points
        .par_iter()
        .map(|p| liouvillian_gap(p, &opts))
        .collect::<openrabi::Result<Vec<_>>>()?;
    let rows: Vec<Vec<String>> = points
        .iter()
        .zip(&results)
        .map(|(p, g)| {
            vec![
                num(p.eta()),
                num(p.g()),
                num(p.kappa),
                "gap".into(),
                num(g.gap),
                num(g.residual),
                g.n_cutoff.to_string(),
                label(&g.method),
            ]
        })
        .collect();
    run.csv("gap.csv", &["eta", "g", "kappa", "quantity", "value", "residual", "n_cutoff", "method"], &rows)?;
    let gaps: Vec<f64> = results.iter().map(|g| g.gap).collect();
    let fit = size_fit(&cfg.etas, &gaps);
    let z = fit.get("exponent").and_then(|e| e.as_f64()).map(|e| -e);
    run.set_summary(json!({"gap_vs_eta": fit, "z": z}));
    Ok(())
}

pub fn propagate_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let points = cfg.points()?;
    let times = cfg.grid(&cfg.times, "times")?.times(cfg.kappa, cfg.omega)?;
    let opts = solver(cfg);
    let init = cfg.initial_state();
    let results = points
        .par_iter()
        .map(|p| propagate(&init, p, &times, &opts))
        .collect::<openrabi::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (p, res) in points.iter().zip(&results) {
        let sz = ModelOperators::new(res.params.n_cutoff)?.sigma_z;
        let ns = res.photon_number();
        for (k, st) in res.states.iter().enumerate() {
            let szv = (sz.matrix() * st.matrix()).trace().re;
            rows.push(vec![
                num(p.eta()),
                num(p.g()),
                num(p.kappa),
                num(times[k]),
                num(ns[k]),
                num(szv),
                num(st.purity()),
                res.params.n_cutoff.to_string(),
            ]);
        }
    }
    run.csv(
        "propagate.csv",
        &["eta", "g", "kappa", "t", "photon_number", "sigma_z", "purity", "n_cutoff"],
        &rows,
    )?;
    Ok(())
}

fn qfi_rows(p: &ModelParams, r: &QFIResult, delta: Option<f64>) -> Vec<Vec<String>> {
    r.t_grid
        .iter()
        .zip(&r.qfi)
        .map(|(t, v)| {
            vec![
                num(p.eta()),
                num(p.g()),
                num(p.kappa),
                num(*t),
                num(*v),
                "0".into(),
                r.method.label().into(),
                "0".into(),
                delta.map(num).unwrap_or_default(),
            ]
        })
        .collect()
}

pub fn qfi_points(cfg: &RunConfig, points: &[ModelParams], times: &[f64]) -> Result<Vec<QFIResult>> {
    let opts = QfiOptions {
        delta_rel: cfg.delta_rel.unwrap_or(QfiOptions::default().delta_rel),
        refine: cfg.refine,
        solver: solver(cfg),
        ..QfiOptions::default()
    };
    let st = start(cfg);
    Ok(points
        .par_iter()
        .map(|p| match cfg.method {
            QfiMethodArg::GeneralizedMe => global_qfi_generalized_me(p, times, &opts),
            QfiMethodArg::Correlator => global_qfi_correlator(p, &st, times, &opts),
        })
        .collect::<openrabi::Result<Vec<_>>>()?)
}

pub fn qfi_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let points = cfg.points()?;
    let times = cfg.grid(&cfg.times, "times")?.times(cfg.kappa, cfg.omega)?;
    let results = qfi_points(cfg, &points, &times)?;
    let mut rows = Vec::new();
    for (p, r) in points.iter().zip(&results) {
        rows.extend(qfi_rows(p, r, r.delta_theta));
    }
    run.csv("qfi.csv", &QFI_HEADER, &rows)?;
    run.set_summary(json!({"n_cutoff": results.iter().map(|r| r.n_cutoff).collect::<Vec<_>>()}));
    Ok(())
}

pub fn fi_points(cfg: &RunConfig, points: &[ModelParams], times: &[f64]) -> Result<Vec<FIEstimate>> {
    let opts = FiOptions {
        n_traj: cfg.n_traj,
        delta_rel: cfg.delta_rel.unwrap_or(FiOptions::default().delta_rel),
        master_seed: cfg.seed,
        dt: None,
        solver: solver(cfg),
    };
    points
        .iter()
        .map(|p| fi_photon_counting(p, times, &opts).map_err(Into::into))
        .collect()
}

pub fn fi_rows(p: &ModelParams, e: &FIEstimate) -> Vec<Vec<String>> {
    (0..e.t_grid.len())
        .map(|k| {
            vec![
                num(p.eta()),
                num(p.g()),
                num(p.kappa),
                num(e.t_grid[k]),
                num(e.fi[k]),
                num(e.stderr[k]),
                "photon-counting".into(),
                e.n_traj.to_string(),
                num(e.delta_omega),
            ]
        })
        .collect()
}

pub fn fi_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    if cfg.n_traj < 100 {
        bail!("n_traj: must be at least 100, got {}", cfg.n_traj);
    }
    let points = cfg.points()?;
    let times = cfg.grid(&cfg.times, "times")?.times(cfg.kappa, cfg.omega)?;
    let results = fi_points(cfg, &points, &times)?;
    let mut rows = Vec::new();
    for (p, e) in points.iter().zip(&results) {
        rows.extend(fi_rows(p, e));
    }
    run.csv("fi.csv", &QFI_HEADER, &rows)?;
    run.set_summary(json!({
        "richardson_ok": results.iter().map(|e| e.richardson_ok).collect::<Vec<_>>(),
        "negative_flags": results.iter().map(|e| e.negative_flags.len()).collect::<Vec<_>>(),
        "n_cutoff": results.iter().map(|e| e.n_cutoff).collect::<Vec<_>>(),
        "dt": results.iter().map(|e| e.dt).collect::<Vec<_>>(),
    }));
    Ok(())
}

pub fn correlator_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let points = cfg.points()?;
    let tau = match &cfg.tau {
        Some(g) => g.times(cfg.kappa, cfg.omega)?,
        None => vec![0.0],
    };
    let s = cfg.grid(&cfg.s, "s")?.times(cfg.kappa, cfg.omega)?;
    let st = start(cfg);
    let opts = solver(cfg);
    let grids = points
        .iter()
        .map(|p| structure_factor_dynamic(p, &st, &tau, &s, &opts))
        .collect::<openrabi::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (p, g) in points.iter().zip(&grids) {
        for (k, t) in g.tau_grid.iter().enumerate() {
            for (j, sv) in g.s_grid.iter().enumerate() {
                let v = g.values[k][j];
                rows.push(vec![num(p.eta()), num(p.g()), num(*t), num(*sv), num(v.re), num(v.im)]);
            }
        }
    }
    run.csv("correlator.csv", &["eta", "g", "tau", "s", "re_value", "im_value"], &rows)?;
    Ok(())
}

/// Points (η, κt, value, stderr) from a qfi/fi CSV.
pub fn dataset_from_csv(path: &std::path::Path, quantity: &str, regime: openrabi::scaling::Regime) -> Result<ScalingDataset> {
    let (header, rows) = read_csv(path)?;
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow::anyhow!("{}: missing column {name}", path.display()))
    };
    let (ie, ik, it, iv) = (col("eta")?, col("kappa")?, col("t")?, col("value")?);
    let is = col("stderr").ok();
    let mut points = Vec::new();
    for r in &rows {
        let f = |i: usize| -> Result<f64> { Ok(r[i].parse::<f64>()?) };
        let t = f(it)? * f(ik)?;
        if t <= 0.0 {
            continue;
        }
        points.push(ScalingPoint {
            size: f(ie)?,
            t,
            value: f(iv)?,
            stderr: match is {
                Some(i) => f(i).unwrap_or(0.0),
                None => 0.0,
            },
        });
    }
    Ok(ScalingDataset::new(points, quantity, regime)?)
}

pub fn quantity_of(name: &str) -> Result<Quantity> {
    match name {
        "qfi" => Ok(Quantity::GlobalQfi),
        "fi" => Ok(Quantity::PhotonCountingFi),
        other => bail!("collapse.quantity: expected \"qfi\" or \"fi\", got {other:?}"),
    }
}

/// Rescaled CSV, quality report and SVG for one dataset.
pub fn write_collapse(run: &mut Run, stem: &str, ds: &ScalingDataset, quantity: Quantity) -> Result<f64> {
    let exps = ScalingExponents::default();
    let r = Rescaling::predicted(quantity, &exps, ds.regime)?;
    let quality = collapse_quality(ds, &r)?;
    let perturbed: Vec<(f64, f64)> = [-0.5, 0.5]
        .iter()
        .map(|&d| {
            let q = collapse_quality(ds, &Rescaling { y_size: r.y_size + d, ..r }).unwrap_or(f64::NAN);
            (d, q)
        })
        .collect();
    let mut rows = Vec::new();
    for p in &ds.points {
        let (x, y) = r.apply(p);
        rows.push(vec![num(p.size), num(p.t), num(p.value), num(x), num(y)]);
    }
    run.csv(&format!("{stem}_rescaled.csv"), &["eta", "kappa_t", "value", "x", "y"], &rows)?;
    let y_label = format!("value / ((κt)^{} η^{})", r.y_t, r.y_size);
    run.svg(&format!("{stem}.svg"), &collapse_svg(ds, &r, "κt/η", &y_label)?)?;
    run.json(
        &format!("{stem}_report.json"),
        &json!({
            "quantity": ds.quantity,
            "regime": ds.regime,
            "rescaling": r,
            "collapse_quality": quality,
            "eta_exponent_perturbations": perturbed,
        }),
    )?;
    Ok(quality)
}

pub fn collapse_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let Some(spec) = &cfg.collapse else {
        bail!("collapse: required by this subcommand");
    };
    let quantity = quantity_of(&spec.quantity)?;
    let ds = dataset_from_csv(&spec.input, &spec.quantity, spec.regime)?;
    let q = write_collapse(run, "collapse", &ds, quantity)?;
    run.set_summary(json!({"collapse_quality": q}));
    Ok(())
}
